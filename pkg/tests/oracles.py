"""Independent slow-but-exact reference solvers used only by the tests.

Everything here is deliberately written from first principles so it shares
no code path with the library: coordinate descent on the dual box QP for
separable-edge problems, brute-force partition enumeration for isotonic
projections, and cvxpy for the joint component subproblem.
"""

import numpy as np


def dual_cd_prox(v, terms, n_sweeps=200000, tol=1e-14):
    """Solve min_z 0.5*||z - v||^2 + sum_t phi_t(a_t . z) to high precision.

    Each term is (a, lo, hi): a sparse-ish constraint vector given densely,
    and the conjugate interval of phi, i.e. phi(t) = sup_{u in [lo, hi]} u*t.
      lam*|t|          -> [-lam, lam]
      lam*max(-t, 0)   -> [-lam, 0]
      lam*max(t, 0)    -> [0, lam]
      indicator(t>=0)  -> [-inf, 0]  (pass lo=-np.inf)
      linear c*t       -> [c, c]
    The primal solution is z = v - sum_t u_t a_t with u the dual box-QP
    minimizer, found by cyclic coordinate descent.
    """
    v = np.asarray(v, dtype=float)
    A = np.array([t[0] for t in terms], dtype=float)
    lo = np.array([t[1] for t in terms], dtype=float)
    hi = np.array([t[2] for t in terms], dtype=float)
    m = A.shape[0]
    if m == 0:
        return v.copy()
    G = A @ A.T
    diag = np.diag(G).copy()
    diag[diag == 0] = 1.0
    b = A @ v
    u = np.zeros(m)
    for _ in range(n_sweeps):
        max_step = 0.0
        for t in range(m):
            g = G[t] @ u - b[t]
            new = u[t] - g / diag[t]
            new = min(max(new, lo[t]), hi[t])
            step = abs(new - u[t])
            if step > max_step:
                max_step = step
            u[t] = new
        if max_step < tol:
            break
    return v - A.T @ u


def tv_terms(n, lam):
    """Edge terms for lam * sum |z_{i+1} - z_i|."""
    terms = []
    for i in range(n - 1):
        a = np.zeros(n)
        a[i + 1] = 1.0
        a[i] = -1.0
        terms.append((a, -lam, lam))
    return terms


def oneside_tv_terms(n, lam):
    """Edge terms for lam * sum max(z_i - z_{i+1}, 0)."""
    terms = []
    for i in range(n - 1):
        a = np.zeros(n)
        a[i + 1] = 1.0
        a[i] = -1.0
        terms.append((a, -lam, 0.0))
    return terms


def isotonic_terms(n, nonneg=False):
    """Cone terms for z_1 <= ... <= z_n (optionally 0 <= z_1)."""
    terms = []
    for i in range(n - 1):
        a = np.zeros(n)
        a[i + 1] = 1.0
        a[i] = -1.0
        terms.append((a, -np.inf, 0.0))
    if nonneg:
        a = np.zeros(n)
        a[0] = 1.0
        terms.append((a, -np.inf, 0.0))
    return terms


def curvature_vectors(gaps):
    """Rows mapping a sorted fit to consecutive slope differences."""
    m = len(gaps) + 1
    rows = []
    for i in range(m - 2):
        a = np.zeros(m)
        a[i] = 1.0 / gaps[i]
        a[i + 1] = -1.0 / gaps[i] - 1.0 / gaps[i + 1]
        a[i + 2] = 1.0 / gaps[i + 1]
        rows.append(a)
    return rows


def tv_prox_oracle(v, lam):
    return dual_cd_prox(v, tv_terms(len(v), lam))

def oneside_tv_prox_oracle(v, lam):
    return dual_cd_prox(v, oneside_tv_terms(len(v), lam))

def isotonic_oracle(v, nonneg=False):
    return dual_cd_prox(v, isotonic_terms(len(v), nonneg=nonneg))

def convex_projection_oracle(v, gaps):
    # indicator(a.z >= 0) on each consecutive slope difference
    terms = [(a, -np.inf, 0.0) for a in curvature_vectors(gaps)]
    return dual_cd_prox(v, terms)

def dc_inner_oracle(v, gaps, lam):
    terms = [(a, -lam, lam) for a in curvature_vectors(gaps)]
    return dual_cd_prox(v, terms)

def ac_inner_oracle(v, gaps, lam):
    # penalty lam * max(slope_i - slope_{i+1}, 0) = lam * max(-(a.z), 0)
    terms = [(a, -lam, 0.0) for a in curvature_vectors(gaps)]
    return dual_cd_prox(v, terms)


def pav_bruteforce(v):
    """Exact isotonic projection by enumerating block partitions.

    The projection is piecewise constant with block means and nondecreasing
    block values; among all partitions whose block means are feasible, the
    closest candidate is the projection.
    """
    v = np.asarray(v, dtype=float)
    n = len(v)
    best, bestd = None, np.inf
    for mask in range(1 << (n - 1)) if n > 1 else [0]:
        out = np.empty(n)
        start = 0
        prev = -np.inf
        ok = True
        for i in range(n):
            if i == n - 1 or (mask >> i) & 1:
                mean = v[start:i + 1].mean()
                if mean < prev:
                    ok = False
                    break
                out[start:i + 1] = mean
                prev = mean
                start = i + 1
        if ok:
            d = np.sum((out - v) ** 2)
            if d < bestd:
                bestd, best = d, out.copy()
    return best
