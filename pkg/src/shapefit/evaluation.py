"""Model selection and the simulation/real-data evaluation protocols.

Grid search fits the whole (lambda_s x lambda_d-or-t) product on the
training set, warm-starting down the descending lambda_s ladder, and picks
the validation-MSE minimizer with ties broken toward the sparser model.
K-fold cross-validation averages the same per-grid-point losses over folds
and refits on all samples at the winner.
"""

import os
from dataclasses import dataclass, replace

import numpy as np
from joblib import Parallel, delayed

from .backfit import Dataset, FitConfig, fit, predict
from .component import ShapeSpec, SortedCovariate, inner_prox_solve

__all__ = [
    "MetricsReport",
    "LambdaGrid",
    "GridSearchResult",
    "CVResult",
    "support_of",
    "metrics_report",
    "lambda_s_max",
    "default_grid",
    "grid_select",
    "kfold_cv",
    "spurious_elimination_rate",
    "n_jobs_from_env",
]


def n_jobs_from_env(default=1):
    """Evaluation parallelism cap from SHAPEFIT_THREADS (default 1)."""
    raw = os.environ.get("SHAPEFIT_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return default


def support_of(fit_result, eps=1e-8):
    """Indices of components with column norm above eps (exact zeros otherwise)."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    norms = np.linalg.norm(fit_result.Z, axis=0)
    return set(np.flatnonzero(norms > eps).tolist())


@dataclass(frozen=True)
class MetricsReport:
    """Sparsity-recovery and prediction metrics for one fitted model.

    precision is NaN when the estimated support is empty but the true one
    is not (undefined ratio, reported as missing).
    """

    precision: float
    recall: float
    model_size: float
    test_mse: float


def metrics_report(fit_result, true_support, test_data=None, eps=1e-8):
    est = support_of(fit_result, eps)
    true = set(true_support)
    hits = len(est & true)
    if est:
        precision = hits / len(est)
    else:
        precision = 1.0 if not true else float("nan")
    recall = hits / len(true) if true else 1.0
    mse = float("nan")
    if test_data is not None:
        resid = test_data.y - predict(fit_result, test_data.X)
        mse = float(resid @ resid / test_data.n)
    return MetricsReport(precision=precision, recall=recall,
                         model_size=float(len(est)), test_mse=mse)


@dataclass(frozen=True)
class LambdaGrid:
    """Descending penalty ladders paired as a full Cartesian product.

    ``lambda_other`` is lambda_d for the dc/approx_convex modes and
    lambda_t for tv/isotonic; pure-constraint modes use a single 0.
    """

    lambda_s: tuple
    lambda_other: tuple = (0.0,)

    def __post_init__(self):
        for name in ("lambda_s", "lambda_other"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"{name} must be nonempty")
            if any(v < 0 for v in vals):
                raise ValueError(f"{name} values must be nonnegative")
            if list(vals) != sorted(vals, reverse=True):
                raise ValueError(f"{name} values must be sorted descending")
            object.__setattr__(self, name, vals)

    def points(self):
        """(lambda_other, lambda_s) pairs, path order: other outer, s descending."""
        return [(lo, ls) for lo in self.lambda_other for ls in self.lambda_s]


def _spec_with(base, lambda_other, lambda_s):
    if base.mode in ("dc", "approx_convex"):
        return replace(base, lambda_d=lambda_other, lambda_s=lambda_s)
    if base.mode in ("tv", "isotonic"):
        return replace(base, lambda_t=lambda_other, lambda_s=lambda_s)
    return replace(base, lambda_s=lambda_s)


def lambda_s_max(data, base_spec, lambda_other=0.0, config=None):
    """Smallest lambda_s that kills every component at the zero start.

    At Z = 0 the first block update thresholds the centered inner prox of
    the centered response; the recorded objective carries no 1/2 on the
    quadratic, hence the factor 2 relative to the prox-level threshold.
    """
    data = data if isinstance(data, Dataset) else Dataset(*data)
    config = config or FitConfig()
    r = data.y - data.y.mean()
    spec = _spec_with(base_spec, lambda_other, 0.0)
    half = replace(spec, lambda_d=spec.lambda_d / 2, lambda_t=spec.lambda_t / 2)
    best = 0.0
    for j in range(data.p):
        cov = SortedCovariate.from_column(data.X[:, j], config.tie_policy)
        res = inner_prox_solve(cov.group_means(r), cov.gaps, half,
                               tol=config.inner_tol, max_iter=config.inner_max_iter,
                               counts=cov.counts)
        z = cov.scatter(res.z)
        best = max(best, float(np.linalg.norm(z - z.mean())))
    return 2.0 * best


def default_grid(data, base_spec, n_s=30, n_other=5, s_ratio=1e-3,
                 other_max=None, other_ratio=1e-2, config=None):
    """Data-driven default grid: log-spaced lambda_s from its killing value
    down to s_ratio times it, crossed with log-spaced lambda_d (or t)."""
    if base_spec.mode in ("dc", "approx_convex", "tv", "isotonic"):
        if other_max is None:
            data = data if isinstance(data, Dataset) else Dataset(*data)
            # Scale-free reference: penalty weight at which curvature/variation
            # costs as much as the full residual sum of squares.
            y0 = data.y - data.y.mean()
            span = np.median(np.ptp(data.X, axis=0))
            other_max = float(y0 @ y0) / max(data.n, 1) * span
        others = np.geomspace(other_max, other_max * other_ratio, n_other)
    else:
        others = np.array([0.0])
    smax = max(lambda_s_max(data, base_spec, float(others[0]), config=config),
               1e-12)
    ladder = np.geomspace(smax, smax * s_ratio, n_s)
    return LambdaGrid(lambda_s=tuple(ladder), lambda_other=tuple(others))


@dataclass
class GridSearchResult:
    best_lambdas: tuple  # (lambda_other, lambda_s)
    best_fit: object
    val_mse: np.ndarray  # per grid point, in points() order
    grid: LambdaGrid
    any_nonconverged: bool


def _fit_ladder(train, base_spec, grid, config, lambda_other):
    """Fit one descending-lambda_s ladder with warm starts; returns fit list."""
    fits = []
    warm = None
    for ls in grid.lambda_s:
        spec = _spec_with(base_spec, lambda_other, ls)
        cfg = replace(config, shape=spec)
        f = fit(train, cfg, warm_start=warm)
        warm = f
        fits.append(f)
    return fits


def grid_select(train, validation, grid, base_spec, config=None, n_jobs=None):
    """Fit every grid point on train, return the validation-MSE minimizer.

    Ladders over lambda_s are warm-started; distinct lambda_other ladders
    are independent and may run in parallel.  Ties prefer larger lambda_s
    (the sparser model), then larger lambda_other.
    """
    train = train if isinstance(train, Dataset) else Dataset(*train)
    validation = validation if isinstance(validation, Dataset) else Dataset(*validation)
    config = config or FitConfig()
    n_jobs = n_jobs or n_jobs_from_env()

    if n_jobs > 1 and len(grid.lambda_other) > 1:
        ladders = Parallel(n_jobs=n_jobs)(
            delayed(_fit_ladder)(train, base_spec, grid, config, lo)
            for lo in grid.lambda_other)
    else:
        ladders = [_fit_ladder(train, base_spec, grid, config, lo)
                   for lo in grid.lambda_other]

    mses = []
    best = None  # (mse, lambda_s, lambda_other, fit)
    any_bad = False
    for lo, fits in zip(grid.lambda_other, ladders):
        for ls, f in zip(grid.lambda_s, fits):
            resid = validation.y - predict(f, validation.X)
            mse = float(resid @ resid / validation.n)
            mses.append(mse)
            any_bad = any_bad or not f.converged
            key = (mse, -ls, -lo)
            if best is None or key < best[0]:
                best = (key, (lo, ls), f)
    return GridSearchResult(best_lambdas=best[1], best_fit=best[2],
                            val_mse=np.asarray(mses), grid=grid,
                            any_nonconverged=any_bad)


@dataclass
class CVResult:
    best_lambdas: tuple
    cv_curve: np.ndarray  # mean validation MSE per grid point, points() order
    grid: LambdaGrid
    fit: object  # refit on all samples at the winner
    any_nonconverged: bool


def _fold_curve(data, train_idx, val_idx, grid, base_spec, config):
    train = Dataset(data.X[train_idx], data.y[train_idx])
    val = Dataset(data.X[val_idx], data.y[val_idx])
    res = grid_select(train, val, grid, base_spec, config, n_jobs=1)
    return res.val_mse, res.any_nonconverged


def kfold_cv(data, K, grid, base_spec, config=None, seed=0, n_jobs=None):
    """K-fold CV over the grid; refits on all samples at the winner.

    Folds come from one seeded shuffle and differ in size by at most one.
    """
    data = data if isinstance(data, Dataset) else Dataset(*data)
    if K < 2 or K > data.n:
        raise ValueError("need 2 <= K <= n")
    config = config or FitConfig()
    n_jobs = n_jobs or n_jobs_from_env()

    rng = np.random.default_rng(seed)
    order = rng.permutation(data.n)
    folds = np.array_split(order, K)

    jobs = []
    for k in range(K):
        val_idx = folds[k]
        train_idx = np.concatenate([folds[i] for i in range(K) if i != k])
        jobs.append((train_idx, val_idx))
    if n_jobs > 1:
        curves = Parallel(n_jobs=n_jobs)(
            delayed(_fold_curve)(data, tr, va, grid, base_spec, config)
            for tr, va in jobs)
    else:
        curves = [_fold_curve(data, tr, va, grid, base_spec, config)
                  for tr, va in jobs]
    cv_curve = np.mean([c[0] for c in curves], axis=0)
    any_bad = any(c[1] for c in curves)

    points = grid.points()
    order_keys = [(cv_curve[i], -points[i][1], -points[i][0]) for i in range(len(points))]
    best_i = min(range(len(points)), key=lambda i: order_keys[i])
    lo, ls = points[best_i]
    final = fit(data, replace(config, shape=_spec_with(base_spec, lo, ls)))
    return CVResult(best_lambdas=(lo, ls), cv_curve=cv_curve, grid=grid,
                    fit=final, any_nonconverged=any_bad)


def spurious_elimination_rate(runs):
    """Fraction of (fit, spurious index set) runs whose support avoids all
    spurious indices."""
    if not runs:
        raise ValueError("need at least one run")
    clean = 0
    for fit_result, spurious in runs:
        sup = fit_result if isinstance(fit_result, set) else support_of(fit_result)
        if not (sup & set(spurious)):
            clean += 1
    return clean / len(runs)


# Desk-scale study defaults: a light grid and capped solver work per fit keep
# a full 20-replicate, 2-SNR, 3-scenario comparison within a coffee break.
STUDY_GRID = dict(n_s=8, n_other=3, s_ratio=0.2, other_ratio=0.01)
STUDY_CONFIG = dict(inner_tol=1e-7, inner_max_iter=500, outer_tol=1e-6,
                    max_sweeps=60)


def _one_replicate(scen_id, snr, rep, modes, n, p, grid_kw, config_kw):
    from .datagen import SimConfig, generate, scenario as make_scenario

    scen = make_scenario(scen_id)
    seed0 = 10_000 * scen_id + 100 * rep
    train, support, sigma = generate(scen, SimConfig(n=n, p=p, snr=snr, seed=seed0 + 1))
    val, _, _ = generate(scen, SimConfig(n=n, p=p, snr=snr, seed=seed0 + 2))
    test, _, _ = generate(scen, SimConfig(n=n, p=p, snr=snr, seed=seed0 + 3))
    config = FitConfig(**config_kw)
    rows = []
    for mode in modes:
        base = ShapeSpec(mode=mode)
        grid = default_grid(train, base, config=config, **grid_kw)
        res = grid_select(train, val, grid, base, config, n_jobs=1)
        m = metrics_report(res.best_fit, support, test)
        rows.append({"scenario": scen_id, "snr": snr, "replicate": rep,
                     "method": mode, "precision": m.precision, "recall": m.recall,
                     "model_size": m.model_size, "test_mse": m.test_mse,
                     "lambda_other": res.best_lambdas[0],
                     "lambda_s": res.best_lambdas[1], "sigma": sigma})
    return rows


def scenario_study(scenario_ids=(1, 2, 3), snrs=(3, 5), replicates=20,
                   modes=("dc", "tv"), n=100, p=200, grid_kw=None,
                   config_kw=None, n_jobs=None):
    """Replicated scenario comparison: per-replicate metrics rows.

    Draws fresh train/validation/test triplets per replicate, tunes each
    method by validation MSE on its grid, and reports test metrics.
    Replicates are independent and run in parallel when allowed.
    """
    grid_kw = dict(STUDY_GRID, **(grid_kw or {}))
    config_kw = dict(STUDY_CONFIG, **(config_kw or {}))
    n_jobs = n_jobs or n_jobs_from_env()
    tasks = [(s, q, r) for s in scenario_ids for q in snrs for r in range(replicates)]
    if n_jobs > 1:
        chunks = Parallel(n_jobs=n_jobs)(
            delayed(_one_replicate)(s, q, r, modes, n, p, grid_kw, config_kw)
            for s, q, r in tasks)
    else:
        chunks = [_one_replicate(s, q, r, modes, n, p, grid_kw, config_kw)
                  for s, q, r in tasks]
    return [row for chunk in chunks for row in chunk]


def summarize_study(rows):
    """Mean and standard error per (scenario, snr, method) cell."""
    keys = sorted({(r["scenario"], r["snr"], r["method"]) for r in rows})
    out = []
    for scen, snr, method in keys:
        sel = [r for r in rows if (r["scenario"], r["snr"], r["method"]) == (scen, snr, method)]
        cell = {"scenario": scen, "snr": snr, "method": method, "replicates": len(sel)}
        for metric in ("precision", "recall", "model_size", "test_mse"):
            vals = np.array([r[metric] for r in sel], dtype=float)
            vals = vals[~np.isnan(vals)]
            cell[f"{metric}_mean"] = float(vals.mean()) if vals.size else float("nan")
            cell[f"{metric}_se"] = float(vals.std(ddof=1) / np.sqrt(vals.size)) \
                if vals.size > 1 else 0.0
        out.append(cell)
    return out
