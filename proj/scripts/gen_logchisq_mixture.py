#!/usr/bin/env python3
"""Fits the 10-component Gaussian mixture approximation of log(chi^2_1).

Runs EM on simulated draws, then applies an affine moment correction so the
mixture's first two moments match the analytic values exactly:
    E[log chi^2_1]   = digamma(1/2) + log 2
    Var[log chi^2_1] = pi^2 / 2
Emits the C++ table consumed by src/log_chisq_mixture.cpp.

Usage: python3 scripts/gen_logchisq_mixture.py > table.inc
"""

import sys

import numpy as np
from scipy.special import digamma

N_DRAWS = 10_000_000
N_COMP = 10
N_ITER = 100
CHUNK = 1_000_000
SEED = 20240101


def em_fit(x):
    n = x.size
    # Quantile-spread initialization.
    qs = np.quantile(x, (np.arange(N_COMP) + 0.5) / N_COMP)
    means = qs.copy()
    variances = np.full(N_COMP, x.var() / N_COMP)
    weights = np.full(N_COMP, 1.0 / N_COMP)

    for it in range(N_ITER):
        nk = np.zeros(N_COMP)
        sk = np.zeros(N_COMP)
        qk = np.zeros(N_COMP)
        ll = 0.0
        for lo in range(0, n, CHUNK):
            xc = x[lo:lo + CHUNK, None]
            logp = (np.log(weights) - 0.5 * np.log(2.0 * np.pi * variances)
                    - (xc - means) ** 2 / (2.0 * variances))
            amax = logp.max(axis=1, keepdims=True)
            p = np.exp(logp - amax)
            norm = p.sum(axis=1, keepdims=True)
            ll += float((amax + np.log(norm)).sum())
            r = p / norm
            nk += r.sum(axis=0)
            sk += (r * xc).sum(axis=0)
            qk += (r * xc * xc).sum(axis=0)
        weights = nk / n
        means = sk / nk
        variances = np.maximum(qk / nk - means ** 2, 1e-6)
        if it % 10 == 0:
            print(f"iter {it:3d}  loglik/n = {ll / n:.8f}", file=sys.stderr)
    return weights, means, variances


def moment_correct(weights, means, variances):
    target_mean = digamma(0.5) + np.log(2.0)
    target_var = np.pi ** 2 / 2.0
    mix_mean = float(np.sum(weights * means))
    means = means + (target_mean - mix_mean)
    mix_var = float(np.sum(weights * (variances + (means - target_mean) ** 2)))
    s2 = target_var / mix_var
    means = target_mean + np.sqrt(s2) * (means - target_mean)
    variances = s2 * variances
    return weights, means, variances


def main():
    rng = np.random.default_rng(SEED)
    x = np.log(rng.standard_normal(N_DRAWS) ** 2)
    w, m, v = em_fit(x)
    w, m, v = moment_correct(w, m, v)
    order = np.argsort(-w)
    w, m, v = w[order], m[order], v[order]
    w = w / w.sum()

    print("// Generated by scripts/gen_logchisq_mixture.py "
          f"(EM on {N_DRAWS} draws, seed {SEED}, {N_ITER} iterations,")
    print("// affine-corrected to the analytic mean and variance). Do not edit.")
    print("constexpr MixtureComponent kLogChisqComponents[10] = {")
    for wi, mi, vi in zip(w, m, v):
        print(f"    {{{wi:.17g}, {mi:.17g}, {vi:.17g}}},")
    print("};")
    mean = float(np.sum(w * m))
    var = float(np.sum(w * (v + m ** 2)) - mean ** 2)
    print(f"// mixture mean = {mean:.10f}, variance = {var:.10f}", file=sys.stderr)


if __name__ == "__main__":
    main()
