"""Shared independent oracles for the test suite.

Everything here is deliberately naive (loops, 64-bit accumulation) and
stays independent of the library code paths it checks.
"""

import math

import numpy as np


def conv2d_loop(x, k, stride, padding):
    """Quadruple-nested-loop sliding-window convolution oracle."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for ni in range(n):
        for fi in range(f):
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (
                                    xp[ni, ci, yi * stride + i, xi * stride + j]
                                    * k[fi, ci, i, j]
                                )
                    out[ni, fi, yi, xi] = acc
    return out


def matmul_loop(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, kk = a.shape
    _, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            for k in range(kk):
                out[i, j] += a[i, k] * b[k, j]
    return out


def ntxent_brute(z, tau):
    """Naive 64-bit NT-Xent over pair layout (0,1), (2,3), ..."""
    z = np.asarray(z, dtype=np.float64)
    n2 = z.shape[0]
    s = z @ z.T

    def l(i, j):
        num = math.exp(s[i, j] / tau)
        den = sum(math.exp(s[i, k] / tau) for k in range(n2) if k != i)
        return -math.log(num / den)

    total = sum(l(2 * k, 2 * k + 1) + l(2 * k + 1, 2 * k) for k in range(n2 // 2))
    return total / n2


def mann_whitney_auc(scores, labels):
    """Pairwise-comparison AUC oracle; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def finite_diff(f, param, h=1e-5, entries=None):
    """Central finite differences of scalar f() w.r.t. selected entries.

    ``entries`` is a list of multi-indices; defaults to every entry.
    Returns a dict multi-index -> derivative.
    """
    if entries is None:
        entries = list(np.ndindex(*param.data.shape))
    out = {}
    for idx in entries:
        orig = param.data[idx]
        param.data[idx] = orig + h
        fp = f()
        param.data[idx] = orig - h
        fm = f()
        param.data[idx] = orig
        out[idx] = (fp - fm) / (2 * h)
    return out


def rel_err(a, b):
    return abs(a - b) / max(1e-8, abs(a) + abs(b))
