"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and the environment variable
``MAXMIN_AIRCOMP_NUMBA`` is not set to ``0``/``false``/``off``. Both paths
are always importable as ``*_numba`` / ``*_numpy`` so tests and the
benchmark can compare them; the unsuffixed names dispatch.

Subproblem layout shared by the barrier kernels. Decision vector
``z = [b (K*Mloc, row-major), S (E), T (only if has_t)]``. Constraints,
all written ``g(z) <= 0`` and normalized, in this order:

* per-slot cap      ``(b_km^2 - cap1_k) / cap1_k``            K*Mloc rows
* total cap         ``(sum_m b_km^2 - cap2_k) / cap2_k``      K rows if use_total
* epigraph          ``T - sum_{e in pair p} S_e``             npairs rows if has_t
* slack floor       ``eps_t - S_e``                           E rows
* linearized d.c.   ``(sig2_m s^2 + sum_k h_k^2 dl2_km b_km^2 + n0
                      - a_s_e s + a_t_e S_e) / scale_e``       E rows

where ``s = sum_k h_k b_km`` for the entry's element m.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_flag = os.environ.get("MAXMIN_AIRCOMP_NUMBA", "1").strip().lower()
USE_NUMBA = numba is not None and _flag not in ("0", "false", "off", "no")


def _njit(fn):
    if numba is None:  # pragma: no cover
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"


# --- MAP classification ---------------------------------------------------

def map_classify_batch_numpy(X, means, var):
    """Nearest class mean under shared per-element variances; ties -> lowest index."""
    w = 1.0 / var
    d = np.einsum("nlm,m->nl", (X[:, None, :] - means[None, :, :]) ** 2, w)
    return np.argmin(d, axis=1)


@_njit
def map_classify_batch_numba(X, means, var):
    n, M = X.shape
    L = means.shape[0]
    out = np.empty(n, dtype=np.int64)
    w = 1.0 / var
    for i in range(n):
        best = np.inf
        arg = 0
        for l in range(L):
            d = 0.0
            for m in range(M):
                r = X[i, m] - means[l, m]
                d += r * r * w[m]
            if d < best:
                best = d
                arg = l
        out[i] = arg
    return out


# --- barrier oracle -------------------------------------------------------

def subproblem_constraints_numpy(z, K, Ml, h, sig2, dl2, n0, cap1, cap2, use_total,
                                 e_pair, e_elem, e_as, e_at, e_scale, npairs, eps_t, has_t):
    """Constraint values g (mc,) and dense Jacobian J (mc, n)."""
    n = z.size
    KM = K * Ml
    E = e_pair.size
    b = z[:KM].reshape(K, Ml)
    S = z[KM:KM + E]
    rows_g = []
    rows_j = []

    g1 = (b**2 - cap1[:, None]) / cap1[:, None]
    J1 = np.zeros((KM, n))
    J1[np.arange(KM), np.arange(KM)] = (2.0 * b / cap1[:, None]).ravel()
    rows_g.append(g1.ravel())
    rows_j.append(J1)

    if use_total:
        g2 = (np.sum(b**2, axis=1) - cap2) / cap2
        J2 = np.zeros((K, n))
        for k in range(K):
            J2[k, k * Ml:(k + 1) * Ml] = 2.0 * b[k] / cap2[k]
        rows_g.append(g2)
        rows_j.append(J2)

    if has_t:
        T = z[n - 1]
        pair_sum = np.bincount(e_pair, weights=S, minlength=npairs)
        J3 = np.zeros((npairs, n))
        J3[:, n - 1] = 1.0
        J3[e_pair, KM + np.arange(E)] = -1.0
        rows_g.append(T - pair_sum)
        rows_j.append(J3)

    J4 = np.zeros((E, n))
    J4[np.arange(E), KM + np.arange(E)] = -1.0
    rows_g.append(eps_t - S)
    rows_j.append(J4)

    s = h @ b  # (Ml,)
    se = s[e_elem]
    quad = sig2[e_elem] * se**2 + np.sum((h[:, None] ** 2) * dl2[:, e_elem] * b[:, e_elem] ** 2, axis=0) + n0
    g5 = (quad - e_as * se + e_at * S) / e_scale
    J5 = np.zeros((E, n))
    for e in range(E):
        m = e_elem[e]
        db = (2.0 * sig2[m] * se[e] * h + 2.0 * h**2 * dl2[:, m] * b[:, m] - e_as[e] * h) / e_scale[e]
        J5[e, np.arange(K) * Ml + m] = db
        J5[e, KM + e] = e_at[e] / e_scale[e]
    rows_g.append(g5)
    rows_j.append(J5)
    return np.concatenate(rows_g), np.vstack(rows_j)


def _constraint_hessian_numpy(w, K, Ml, h, sig2, dl2, cap1, cap2, use_total, e_elem, e_scale, n):
    """sum_i w_i * Hess(g_i); only the b block is nonzero."""
    KM = K * Ml
    H = np.zeros((n, n))
    w1 = w[:KM].reshape(K, Ml)
    diag = (2.0 * w1 / cap1[:, None]).ravel()
    off = KM
    if use_total:
        diag = diag + np.repeat(2.0 * w[off:off + K] / cap2, Ml)
        off += K
    H[np.arange(KM), np.arange(KM)] += diag
    E = e_elem.size
    w5 = w[w.size - E:]
    for e in range(E):
        m = e_elem[e]
        idx = np.arange(K) * Ml + m
        blk = 2.0 * sig2[m] * np.outer(h, h) + np.diag(2.0 * h**2 * dl2[:, m])
        H[np.ix_(idx, idx)] += (w5[e] / e_scale[e]) * blk
    return H


def barrier_oracle_numpy(z, t, want_derivs, K, Ml, h, sig2, dl2, n0, cap1, cap2, use_total,
                         e_pair, e_elem, e_as, e_at, e_scale, npairs, eps_t, has_t):
    """Value, gradient and Hessian of ``t * f0(z) - sum_i log(-g_i(z))``.

    Returns ``(inf, None, None)`` when z is not strictly feasible.
    """
    n = z.size
    KM = K * Ml
    E = e_pair.size
    g, J = subproblem_constraints_numpy(z, K, Ml, h, sig2, dl2, n0, cap1, cap2, use_total,
                                        e_pair, e_elem, e_as, e_at, e_scale, npairs, eps_t, has_t)
    if np.any(g >= 0.0):
        return np.inf, None, None
    c = np.zeros(n)
    if has_t:
        c[n - 1] = -1.0
    else:
        c[KM:KM + E] = -1.0
    val = t * (c @ z) - np.sum(np.log(-g))
    if not want_derivs:
        return val, None, None
    w = -1.0 / g
    grad = t * c + J.T @ w
    H = (J * (w**2)[:, None]).T @ J
    H += _constraint_hessian_numpy(w, K, Ml, h, sig2, dl2, cap1, cap2, use_total, e_elem, e_scale, n)
    return val, grad, H


@_njit
def barrier_oracle_numba(z, t, want_derivs, K, Ml, h, sig2, dl2, n0, cap1, cap2, use_total,
                         e_pair, e_elem, e_as, e_at, e_scale, npairs, eps_t, has_t):
    n = z.size
    KM = K * Ml
    E = e_pair.size
    grad = np.zeros(n)
    H = np.zeros((n, n))
    val = 0.0
    if has_t:
        val -= t * z[n - 1]
        grad[n - 1] -= t
    else:
        for e in range(E):
            val -= t * z[KM + e]
            grad[KM + e] -= t

    # per-slot caps
    for k in range(K):
        for m in range(Ml):
            i = k * Ml + m
            bi = z[i]
            g = (bi * bi - cap1[k]) / cap1[k]
            if g >= 0.0:
                return np.inf, grad, H
            w = -1.0 / g
            val -= np.log(-g)
            if want_derivs:
                dg = 2.0 * bi / cap1[k]
                grad[i] += w * dg
                H[i, i] += w * w * dg * dg + w * 2.0 / cap1[k]

    if use_total:
        for k in range(K):
            ss = 0.0
            for m in range(Ml):
                ss += z[k * Ml + m] ** 2
            g = (ss - cap2[k]) / cap2[k]
            if g >= 0.0:
                return np.inf, grad, H
            w = -1.0 / g
            val -= np.log(-g)
            if want_derivs:
                for m in range(Ml):
                    i = k * Ml + m
                    di = 2.0 * z[i] / cap2[k]
                    grad[i] += w * di
                    H[i, i] += w * 2.0 / cap2[k]
                    for mm in range(Ml):
                        j = k * Ml + mm
                        H[i, j] += w * w * di * 2.0 * z[j] / cap2[k]

    if has_t:
        T = z[n - 1]
        psum = np.zeros(npairs)
        for e in range(E):
            psum[e_pair[e]] += z[KM + e]
        for p in range(npairs):
            g = T - psum[p]
            if g >= 0.0:
                return np.inf, grad, H
            w = -1.0 / g
            val -= np.log(-g)
            if want_derivs:
                w2 = w * w
                grad[n - 1] += w
                H[n - 1, n - 1] += w2
                for e in range(E):
                    if e_pair[e] != p:
                        continue
                    i = KM + e
                    grad[i] -= w
                    H[i, n - 1] -= w2
                    H[n - 1, i] -= w2
                    for e2 in range(E):
                        if e_pair[e2] == p:
                            H[i, KM + e2] += w2

    for e in range(E):
        g = eps_t - z[KM + e]
        if g >= 0.0:
            return np.inf, grad, H
        w = -1.0 / g
        val -= np.log(-g)
        if want_derivs:
            grad[KM + e] -= w
            H[KM + e, KM + e] += w * w

    s = np.zeros(Ml)
    for k in range(K):
        for m in range(Ml):
            s[m] += h[k] * z[k * Ml + m]
    db = np.empty(K)
    for e in range(E):
        m = e_elem[e]
        sc = e_scale[e]
        quad = sig2[m] * s[m] * s[m] + n0
        for k in range(K):
            bk = z[k * Ml + m]
            quad += h[k] * h[k] * dl2[k, m] * bk * bk
        g = (quad - e_as[e] * s[m] + e_at[e] * z[KM + e]) / sc
        if g >= 0.0:
            return np.inf, grad, H
        w = -1.0 / g
        val -= np.log(-g)
        if want_derivs:
            w2 = w * w
            ds = e_at[e] / sc
            for k in range(K):
                db[k] = (2.0 * sig2[m] * s[m] * h[k] + 2.0 * h[k] * h[k] * dl2[k, m] * z[k * Ml + m]
                         - e_as[e] * h[k]) / sc
            iS = KM + e
            grad[iS] += w * ds
            H[iS, iS] += w2 * ds * ds
            for k in range(K):
                i = k * Ml + m
                grad[i] += w * db[k]
                H[i, iS] += w2 * db[k] * ds
                H[iS, i] += w2 * db[k] * ds
                for kk in range(K):
                    j = kk * Ml + m
                    H[i, j] += w2 * db[k] * db[kk] + w * 2.0 * sig2[m] * h[k] * h[kk] / sc
                H[i, i] += w * 2.0 * h[k] * h[k] * dl2[k, m] / sc
    return val, grad, H


if USE_NUMBA:
    map_classify_batch = map_classify_batch_numba
    barrier_oracle = barrier_oracle_numba
else:
    map_classify_batch = map_classify_batch_numpy
    barrier_oracle = barrier_oracle_numpy
