"""Per-component subproblem solver.

A component update is the proximal map of (shape penalty) + (centering) +
(group norm) applied to the partial residual.  That map decomposes exactly
into three stages: an inner prox in the sorted domain, mean removal, and
block soft thresholding.  The inner prox is computed either directly in fit
space (isotonic and tv modes, one exact shot) or by an accelerated proximal
gradient loop after reparameterizing the sorted fit by its first value and
the divided-difference slopes (dc, approximately-convex, and convex modes).
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .prox import block_soft_threshold

__all__ = [
    "MODES",
    "ShapeSpec",
    "SortedCovariate",
    "SlopeParam",
    "InnerResult",
    "dc_seminorm",
    "ac_seminorm",
    "apply_A",
    "apply_A_transpose",
    "slope_param_of",
    "operator_norm_sq",
    "inner_prox_solve",
    "solve_subproblem",
]

MODES = (
    "unconstrained",
    "isotonic",
    "convex",
    "convex_increasing",
    "dc",
    "approx_convex",
    "tv",
)

# Modes solved in slope space via the inner accelerated loop.
_SLOPE_MODES = {
    "dc": _kernels.MODE_DC,
    "approx_convex": _kernels.MODE_AC,
    "convex": _kernels.MODE_CONVEX,
    "convex_increasing": _kernels.MODE_CONVEX_INC,
}
# Modes solved directly in fit space.
_DIRECT_MODES = {
    "isotonic": _kernels.MODE_ISOTONIC,
    "tv": _kernels.MODE_TV,
}


@dataclass(frozen=True)
class ShapeSpec:
    """Shape mode plus penalty weights for one component.

    lambda_d drives the slope-variation (curvature) penalties of the dc and
    approx_convex modes, lambda_t the total-variation penalty of the tv and
    isotonic (LISO-style) modes, and lambda_s the group-sparsity penalty.
    Constraint modes ignore lambda_d; tv ignores lambda_d as well.
    """

    mode: str = "dc"
    lambda_d: float = 0.0
    lambda_t: float = 0.0
    lambda_s: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown shape mode {self.mode!r}; expected one of {MODES}")
        for name in ("lambda_d", "lambda_t", "lambda_s"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be a finite nonnegative real, got {val}")
            object.__setattr__(self, name, val)


@dataclass(frozen=True)
class SortedCovariate:
    """One covariate column, pre-sorted, with strictly positive gaps.

    ``perm`` sorts the raw column; ``sorted_x`` holds the design points the
    component function is actually fit on and ``gaps`` their consecutive
    differences.  Tied observations are either pooled onto one design point
    (``counts`` > 1, the fit is constrained equal within the tie group) or
    split by a deterministic jitter, so gaps are always > 0.

    ``expand`` maps each sorted sample position to its design point.
    """

    perm: np.ndarray
    sorted_x: np.ndarray
    gaps: np.ndarray
    counts: np.ndarray
    expand: np.ndarray

    @classmethod
    def from_column(cls, x, tie_policy="group"):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("covariate column must be a non-empty 1-D vector")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariate column contains NaN or Inf")
        n = x.size
        perm = np.argsort(x, kind="stable")
        xs = x[perm]
        if tie_policy == "jitter":
            span = xs[-1] - xs[0]
            eps = 1e-9 * (span if span > 0 else 1.0)
            # Bump each repeat of a value by multiples of eps.
            occ = np.zeros(n)
            for i in range(1, n):
                if xs[i] == xs[i - 1]:
                    occ[i] = occ[i - 1] + 1.0
            xs = xs + eps * occ
            counts = np.ones(n)
            expand = np.arange(n)
        elif tie_policy == "group":
            uniq, expand, cnt = np.unique(xs, return_inverse=True, return_counts=True)
            xs = uniq
            counts = cnt.astype(np.float64)
        else:
            raise ValueError(f"unknown tie_policy {tie_policy!r}")
        gaps = np.diff(xs)
        if xs.size > 1 and not np.all(gaps > 0):
            raise ValueError("design points are not strictly increasing after tie handling")
        return cls(perm=perm, sorted_x=xs, gaps=gaps, counts=counts,
                   expand=np.ascontiguousarray(expand, dtype=np.int64))

    @property
    def n_samples(self):
        return self.perm.size

    @property
    def n_points(self):
        return self.sorted_x.size

    def group_means(self, r):
        """Means of a sample-ordered vector over the tie groups (sorted order)."""
        rs = r[self.perm]
        if self.n_points == self.n_samples:
            return rs
        return np.bincount(self.expand, weights=rs, minlength=self.n_points) / self.counts

    def scatter(self, values):
        """Design-point values back to a full-length vector in original order."""
        full = values[self.expand]
        out = np.empty(self.n_samples)
        out[self.perm] = full
        return out


@dataclass
class SlopeParam:
    """Reparameterization of a sorted fit by its first value and slopes."""

    intercept: float
    slopes: np.ndarray


def _check_sorted_args(z_sorted, gaps):
    z = np.ascontiguousarray(z_sorted, dtype=np.float64)
    g = np.ascontiguousarray(gaps, dtype=np.float64)
    if z.ndim != 1 or g.ndim != 1 or z.size != g.size + 1:
        raise ValueError("need len(z_sorted) == len(gaps) + 1")
    if g.size and not np.all(g > 0):
        raise ValueError("all gaps must be strictly positive")
    return z, g


def dc_seminorm(z_sorted, gaps):
    """Total variation of the divided-difference slope sequence.

    Zero exactly on affine fits; for a convex fit it equals the last slope
    minus the first.  Returns 0 for n <= 2.
    """
    z, g = _check_sorted_args(z_sorted, gaps)
    if z.size <= 2:
        return 0.0
    slopes = np.diff(z) / g
    return float(np.abs(np.diff(slopes)).sum())


def ac_seminorm(z_sorted, gaps):
    """One-sided slope-decrease penalty; zero iff the slopes are nondecreasing."""
    z, g = _check_sorted_args(z_sorted, gaps)
    if z.size <= 2:
        return 0.0
    slopes = np.diff(z) / g
    return float(np.maximum(-np.diff(slopes), 0.0).sum())


def apply_A(param, gaps):
    """Sorted fit from a slope parameterization: z_1 = s, z_i = s + sum w_k*gaps_k.

    O(n), matrix-free (cumulative sums).
    """
    g = np.ascontiguousarray(gaps, dtype=np.float64)
    w = np.ascontiguousarray(param.slopes, dtype=np.float64)
    if w.size != g.size:
        raise ValueError("need len(slopes) == len(gaps)")
    z = np.empty(g.size + 1)
    z[0] = param.intercept
    if g.size:
        np.cumsum(w * g, out=z[1:])
        z[1:] += param.intercept
    return z


def apply_A_transpose(v, gaps):
    """Adjoint of apply_A: (sum(v), (gaps_k * sum_{i>k} v_i)_k), in O(n)."""
    v = np.ascontiguousarray(v, dtype=np.float64)
    g = np.ascontiguousarray(gaps, dtype=np.float64)
    if v.size != g.size + 1:
        raise ValueError("need len(v) == len(gaps) + 1")
    tails = np.cumsum(v[:0:-1])[::-1]
    return SlopeParam(intercept=float(v.sum()), slopes=g * tails)


def slope_param_of(z_sorted, gaps):
    """Inverse of apply_A: intercept z_1 and slopes (z_{i+1}-z_i)/gaps_i."""
    z, g = _check_sorted_args(z_sorted, gaps)
    return SlopeParam(intercept=float(z[0]), slopes=np.diff(z) / g)


def _power_iteration(matvec, dim, tol=1e-10, max_iter=2000):
    # Deterministic start with a mild tilt so we never sit in an invariant
    # subspace orthogonal to the top eigenvector.
    v = np.ones(dim) + 1e-3 * np.arange(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = matvec(v)
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        v_new = u / nrm
        lam_new = float(v_new @ matvec(v_new))
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
        v = v_new
    return lam


def operator_norm_sq(gaps, counts=None):
    """Largest eigenvalue of A^T C A via matrix-free power iteration.

    C is the diagonal of tie-group counts (identity when ``counts`` is
    omitted).  This is the Lipschitz constant of the smooth part of the
    slope-space objective and hence sets the inner step size.
    """
    g = np.ascontiguousarray(gaps, dtype=np.float64)
    m = g.size + 1
    if counts is None:
        c = np.ones(m)
    else:
        c = np.ascontiguousarray(counts, dtype=np.float64)
        if c.size != m:
            raise ValueError("need len(counts) == len(gaps) + 1")
    if m == 1:
        return float(c[0])

    def matvec(theta):
        z = apply_A(SlopeParam(theta[0], theta[1:]), g)
        back = apply_A_transpose(c * z, g)
        return np.concatenate(([back.intercept], back.slopes))

    return _power_iteration(matvec, m)


@dataclass
class InnerResult:
    """Inner prox solution with convergence status and warm-start state."""

    z: np.ndarray
    converged: bool
    iterations: int
    state: SlopeParam | None = None
    objective_trace: np.ndarray = field(default_factory=lambda: np.empty(0))


def _mode_lambda(spec):
    if spec.mode in ("dc", "approx_convex"):
        return spec.lambda_d
    if spec.mode in ("isotonic", "tv"):
        return spec.lambda_t
    return 0.0


def _penalty_of(w, mode):
    if w.size < 2:
        return 0.0
    if mode == "dc":
        return float(np.abs(np.diff(w)).sum())
    if mode == "approx_convex":
        return float(np.maximum(-np.diff(w), 0.0).sum())
    return 0.0


def inner_prox_solve(r_sorted, gaps, spec, tol=1e-8, max_iter=2000,
                     counts=None, warm=None, lipschitz=None):
    """Prox of the shape penalty/constraint at the sorted partial residual.

    Minimizes 0.5*sum_i c_i*(z_i - r_i)^2 + penalty(z) over design-point
    fits z, where the penalty is selected by ``spec.mode``: slope modes go
    through the slope reparameterization and an accelerated proximal
    gradient loop, isotonic and tv prox directly in fit space.  Tie weights
    ``c`` default to ones.

    Non-convergence is reported through the returned flag, never raised.
    ``warm`` may carry the SlopeParam from a previous outer sweep.
    """
    r = np.ascontiguousarray(r_sorted, dtype=np.float64)
    g = np.ascontiguousarray(gaps, dtype=np.float64)
    m = r.size
    if m != g.size + 1:
        raise ValueError("need len(r_sorted) == len(gaps) + 1")
    if g.size and not np.all(g > 0):
        raise ValueError("all gaps must be strictly positive")
    if counts is None:
        c = np.ones(m)
    else:
        c = np.ascontiguousarray(counts, dtype=np.float64)
    lam = _mode_lambda(spec)

    if spec.mode == "unconstrained" or m == 1 or (lam == 0.0 and spec.mode in ("dc", "approx_convex", "tv")):
        # Identity prox: the quadratic alone is minimized by r itself.
        return InnerResult(z=r.copy(), converged=True, iterations=0,
                           state=slope_param_of(r, g) if m > 1 else SlopeParam(float(r[0]), np.empty(0)))

    if spec.mode in _DIRECT_MODES:
        z, iters, converged, trace = _kernels.prox_grad_direct(
            r, c, lam, _DIRECT_MODES[spec.mode], tol, max_iter)
        return InnerResult(z=z, converged=converged, iterations=iters,
                           state=slope_param_of(z, g), objective_trace=trace)

    # Slope-space modes: start from the best of the warm state, the exact
    # representation of r, and the flat fit (whose penalty is zero).  The
    # exact-fit slopes are a terrible start at large penalty weights.
    mode_code = _SLOPE_MODES[spec.mode]
    candidates = []
    if warm is not None and warm.slopes.size == g.size:
        candidates.append((float(warm.intercept),
                           np.ascontiguousarray(warm.slopes, dtype=np.float64)))
    p0 = slope_param_of(r, g)
    candidates.append((p0.intercept, p0.slopes))
    candidates.append((float((c * r).sum() / c.sum()), np.zeros(g.size)))
    s0, w0, best_obj = 0.0, None, np.inf
    for s_c, w_c in candidates:
        w_c = _kernels._slope_prox(w_c, 0.0, mode_code) \
            if mode_code in (_kernels.MODE_CONVEX, _kernels.MODE_CONVEX_INC) else w_c
        z_c = apply_A(SlopeParam(s_c, w_c), g)
        obj = 0.5 * float(c @ (z_c - r) ** 2) + lam * _penalty_of(w_c, spec.mode)
        if obj < best_obj:
            s0, w0, best_obj = s_c, w_c, obj
    lip = lipschitz if lipschitz is not None else operator_norm_sq(g, c)
    z, s, w, iters, converged, trace = _kernels.fista_slope(
        r, c, g, lam, _SLOPE_MODES[spec.mode], 1.02 * lip, s0, w0, tol, max_iter)
    return InnerResult(z=z, converged=converged, iterations=iters,
                       state=SlopeParam(float(s), w), objective_trace=trace)


@dataclass
class SubproblemResult:
    """Component update in original sample order, plus solver status."""

    z: np.ndarray
    converged: bool
    iterations: int
    state: SlopeParam | None


def solve_subproblem(r, cov, spec, tol=1e-8, max_iter=2000, warm=None, lipschitz=None):
    """Exact component update for the partial residual ``r``.

    Computes the proximal map of
    penalty + centering-constraint + lambda_s*||.||_2 at ``r`` by the exact
    three-stage composition: inner prox in the sorted domain, then mean
    removal, then block soft thresholding; the result is mapped back to the
    original sample order.
    """
    r = np.ascontiguousarray(r, dtype=np.float64)
    if r.size != cov.n_samples:
        raise ValueError("residual length does not match the covariate")
    rbar = cov.group_means(r)
    inner = inner_prox_solve(rbar, cov.gaps, spec, tol=tol, max_iter=max_iter,
                             counts=cov.counts, warm=warm, lipschitz=lipschitz)
    z = cov.scatter(inner.z)
    z -= z.mean()
    z = block_soft_threshold(z, spec.lambda_s)
    return SubproblemResult(z=z, converged=inner.converged,
                            iterations=inner.iterations, state=inner.state)
