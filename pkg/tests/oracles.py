"""Independent reference implementations used to derive expected values.

Everything here is deliberately naive (loops, direct formulas, finite
differences) and shares no code with the library paths it checks.
"""

from __future__ import annotations

import math

import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def naive_conv2d(x: np.ndarray, k: np.ndarray, bias=None) -> np.ndarray:
    """Direct six-loop cross-correlation with zero same-padding."""
    C, H, W = x.shape
    F, C2, s, s2 = k.shape
    assert C == C2 and s == s2
    pt = (s - 1) // 2
    xp = np.zeros((C, H + s - 1, W + s - 1))
    xp[:, pt:pt + H, pt:pt + W] = x
    out = np.zeros((F, H, W))
    for f in range(F):
        for i in range(H):
            for j in range(W):
                acc = 0.0
                for c in range(C):
                    for di in range(s):
                        for dj in range(s):
                            acc += xp[c, i + di, j + dj] * k[f, c, di, dj]
                out[f, i, j] = acc
    if bias is not None:
        out += bias[:, None, None]
    return out


def finite_difference_grad(fn, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar-valued fn at x, elementwise."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def finite_difference_grad_sampled(fn, x: np.ndarray, idx: np.ndarray,
                                   h: float = 1e-5) -> np.ndarray:
    """Central differences at a subset of flat indices."""
    out = np.zeros(len(idx), dtype=np.float64)
    flat = x.reshape(-1)
    for pos, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn()
        flat[i] = orig - h
        fm = fn()
        flat[i] = orig
        out[pos] = (fp - fm) / (2.0 * h)
    return out


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if n == 1:
        return a.reshape(1).copy()
    scale = np.max(np.abs(a)) or 1.0
    for _ in range(max_sweeps):
        off = math.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot_p = c * a[p, :] - s * a[q, :]
                rot_q = s * a[p, :] + c * a[q, :]
                a[p, :], a[q, :] = rot_p, rot_q
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p], a[:, q] = rot_p, rot_q
    return np.sort(np.diag(a))[::-1]


def jacobi_singular_values(w: np.ndarray) -> np.ndarray:
    """Singular values of w via Jacobi eigensolve of the smaller Gram matrix."""
    if w.shape[0] <= w.shape[1]:
        gram = w @ w.T
    else:
        gram = w.T @ w
    eig = jacobi_eigh(gram)
    return np.sqrt(np.clip(eig, 0.0, None))


def svd_spectral_norm(w: np.ndarray) -> float:
    return float(jacobi_singular_values(w)[0])


def svd_stable_rank(w: np.ndarray) -> float:
    sv = jacobi_singular_values(w)
    return float(np.sum(sv ** 2) / sv[0] ** 2)


def dnc_allocation_oracle(usage: np.ndarray) -> np.ndarray:
    """Direct formula: a[phi_j] = (1 - u[phi_j]) * prod_{i<j} u[phi_i]."""
    order = np.argsort(usage, kind="stable")
    a = np.zeros_like(usage)
    running = 1.0
    for j in order:
        a[j] = (1.0 - usage[j]) * running
        running *= usage[j]
    return a


def bernstein_direct(f, n: int, t: float) -> float:
    """B_n(f; t) by direct summation with exact binomials."""
    total = 0.0
    for k in range(n + 1):
        total += f(k / n) * math.comb(n, k) * (t ** k) * ((1.0 - t) ** (n - k))
    return total


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.abs(analytic - numeric)
    den = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(num / den))
