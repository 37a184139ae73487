"""Independent brute-force law of the blockwise Picard SDE sampler.

Standard Gaussian target in d=1, so the score is s(x) = -x at every time and
every node state is affine in (y0, xi_0, ..., xi_{M-1}). The Picard iteration
is carried out on explicit coefficient vectors with the prefix-sum form of
the update (not the per-step recurrence used by the Rust code). Output:
mean/variance of the final sample and KL(N(0,1) || output law).

Usage: python3 sde_block_law.py T eta N eps K [verbatim]
"""
import math
import sys

import numpy as np


def grid(T, eta, N, eps):
    h = T / N
    blocks = []
    for n in range(N - 1):
        M = round(h / eps)
        blocks.append([m * eps for m in range(M + 1)])
    end = h - eta
    tau = [0.0]
    while tau[-1] < end:
        cur = tau[-1]
        step = min(eps, eps * (h - cur) / (1.0 + eps))
        nxt = cur + step
        if nxt >= end or end - nxt < 1e-12 * h:
            nxt = end
        assert (nxt - cur) <= eps * (h - nxt) + 1e-15 or (nxt - cur) <= eps
        tau.append(nxt)
    blocks.append(tau)
    return blocks


def block_law(tau, K, mean, var, verbatim):
    M = len(tau) - 1
    eps = np.diff(tau)
    dim = 1 + M  # coefficients on (y0, xi_0..xi_{M-1}); constant term is 0
    unit = np.zeros(dim)
    unit[0] = 1.0
    prev = [unit.copy() for _ in range(M + 1)]
    for _ in range(K):
        nxt = []
        for m in range(M + 1):
            c = math.exp(tau[m] / 2) * unit
            for j in range(m):
                w = math.exp((tau[m] - tau[j + 1]) / 2)
                sw = 2 * (math.exp(eps[j]) - 1) if verbatim else 2 * (math.exp(eps[j] / 2) - 1)
                c = c + w * sw * (-prev[j])
                e = np.zeros(dim)
                e[1 + j] = math.sqrt(math.exp(eps[j]) - 1)
                c = c + w * e
            nxt.append(c)
        prev = nxt
    end = prev[M]
    return end[0] * mean, end[0] ** 2 * var + float(np.sum(end[1:] ** 2))


def main():
    T, eta, N, eps, K = float(sys.argv[1]), float(sys.argv[2]), int(sys.argv[3]), float(sys.argv[4]), int(sys.argv[5])
    verbatim = len(sys.argv) > 6 and sys.argv[6] == "verbatim"
    mean, var = 0.0, 1.0
    for tau in grid(T, eta, N, eps):
        mean, var = block_law(tau, K, mean, var, verbatim)
    kl = 0.5 * (1.0 / var + mean * mean / var - 1.0 + math.log(var))
    print(f"mean={mean!r} var={var!r} kl_per_dim={kl!r}")


if __name__ == "__main__":
    main()
