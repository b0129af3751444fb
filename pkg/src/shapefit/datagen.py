"""Synthetic scenario generators and the spurious-variable protocol.

Three scenario families, each with exactly four nonzero component
functions on Uniform(-2.5, 2.5) covariates: piecewise-constant steps,
smooth curves, and piecewise-linear shapes (with one smooth sinusoid).
The noise scale is calibrated so sd(signal)/sigma equals the requested
signal-to-noise ratio, with sd(signal) estimated once per scenario from a
fixed 1e5-point Monte Carlo draw.
"""

from dataclasses import dataclass, field

import numpy as np

from .backfit import Dataset

__all__ = ["ComponentFunction", "Scenario", "SimConfig", "scenario",
           "generate", "augment_spurious"]

_LOW, _HIGH = -2.5, 2.5
_MC_POINTS = 100_000
_MC_SEED = 178_243_091


@dataclass(frozen=True)
class ComponentFunction:
    """A univariate truth component: callable plus a structural descriptor."""

    name: str
    kind: str  # piecewise_constant | smooth | piecewise_linear
    fn: callable
    offset: float = 0.0  # subtracted so the function is centered on the covariate law

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=np.float64)) - self.offset

    def describe(self):
        return {"name": self.name, "kind": self.kind, "offset": self.offset}


def _centered(name, kind, fn, amplitude=1.0):
    """Center fn over the covariate law and normalize it to unit signal sd,
    then scale by ``amplitude`` (quadrature constants, computed once)."""
    grid = np.linspace(_LOW, _HIGH, 200_001)
    vals = fn(grid)
    mean = float(np.trapezoid(vals, grid) / (_HIGH - _LOW))
    var = float(np.trapezoid((vals - mean) ** 2, grid) / (_HIGH - _LOW))
    scale = amplitude / np.sqrt(var) if var > 0 else 1.0

    def scaled(x, _fn=fn, _scale=scale):
        return _scale * _fn(x)

    return ComponentFunction(name=name, kind=kind, fn=scaled, offset=scale * mean)


def _step(breaks, levels):
    breaks = np.asarray(breaks, dtype=np.float64)
    levels = np.asarray(levels, dtype=np.float64)

    def fn(x):
        return levels[np.searchsorted(breaks, x, side="right")]

    return fn


@dataclass(frozen=True)
class Scenario:
    """Four nonzero truth components; all other covariates are irrelevant."""

    id: int
    component_functions: tuple
    support: tuple = (0, 1, 2, 3)
    _signal_sd_cache: list = field(default_factory=list, repr=False, compare=False)

    def signal(self, X):
        s = np.zeros(X.shape[0])
        for j, f in zip(self.support, self.component_functions):
            s += f(X[:, j])
        return s

    def signal_sd(self):
        """Empirical sd of the noiseless signal under the covariate law (cached)."""
        if not self._signal_sd_cache:
            rng = np.random.default_rng(_MC_SEED + self.id)
            X = rng.uniform(_LOW, _HIGH, (_MC_POINTS, 4))
            total = np.zeros(_MC_POINTS)
            for j, f in enumerate(self.component_functions):
                total += f(X[:, j])
            self._signal_sd_cache.append(float(total.std()))
        return self._signal_sd_cache[0]

    def describe(self):
        return {"id": self.id,
                "components": [f.describe() for f in self.component_functions]}


def scenario(scenario_id):
    """Build one of the three standard scenarios by id."""
    if scenario_id == 1:
        funcs = (
            _centered("steps_down_up", "piecewise_constant",
                      _step([-1.0, 0.5, 1.5], [-1.6, 0.4, 1.4, -0.6])),
            _centered("steps_up", "piecewise_constant",
                      _step([-0.8, 1.0], [-1.2, 0.3, 1.5])),
            _centered("steps_mid_bump", "piecewise_constant",
                      _step([-1.5, 0.0, 1.2], [0.8, -1.2, 1.0, -0.8])),
            _centered("steps_two_level", "piecewise_constant",
                      _step([0.2], [-1.0, 1.0])),
        )
    elif scenario_id == 2:
        funcs = (
            _centered("sine", "smooth", lambda x: np.sin(0.9 * x)),
            _centered("cosine", "smooth", lambda x: np.cos(0.6 * x)),
            _centered("cubic", "smooth", lambda x: (x / 2.5) ** 3),
            _centered("gauss_bump", "smooth", lambda x: np.exp(-x ** 2 / 3.0)),
        )
    elif scenario_id == 3:
        funcs = (
            _centered("vee", "piecewise_linear", lambda x: np.abs(x)),
            _centered("sine", "smooth", lambda x: np.sin(0.9 * x)),
            _centered("hinge", "piecewise_linear", lambda x: np.maximum(x, 0.0)),
            _centered("tent", "piecewise_linear", lambda x: -np.abs(x - 0.75)),
        )
    else:
        raise ValueError("scenario id must be 1, 2, or 3")
    return Scenario(id=scenario_id, component_functions=funcs)


@dataclass(frozen=True)
class SimConfig:
    n: int
    p: int
    snr: float
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need n >= 2")
        if self.p < 4:
            raise ValueError("need p >= 4 (the four truth components)")
        if not self.snr > 0:
            raise ValueError("snr must be positive")


def generate(scen, cfg):
    """Draw one dataset: X iid Uniform(-2.5, 2.5), y = signal + N(0, sigma^2).

    sigma is sd(signal)/snr (0 when snr is infinite).  Deterministic under
    cfg.seed.  Returns (Dataset, true_support, sigma).
    """
    if isinstance(scen, int):
        scen = scenario(scen)
    rng = np.random.default_rng(cfg.seed)
    X = rng.uniform(_LOW, _HIGH, (cfg.n, cfg.p))
    sigma = 0.0 if np.isinf(cfg.snr) else scen.signal_sd() / cfg.snr
    y = scen.signal(X)
    if sigma > 0:
        y = y + rng.normal(0.0, sigma, cfg.n)
    return Dataset(X, y), set(scen.support), sigma


def augment_spurious(data, p_total, seed=0):
    """Rescale every column to [0, 1], then append Uniform(0, 1) noise columns.

    Reproduces the real-data protocol: the final design has ``p_total``
    columns of which the last ``p_total - p`` are pure noise.
    """
    if p_total < data.p:
        raise ValueError(f"p_total={p_total} is smaller than current p={data.p}")
    X = data.X
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span[span == 0] = 1.0
    Xs = (X - lo) / span
    if p_total > data.p:
        rng = np.random.default_rng(seed)
        Xs = np.hstack([Xs, rng.uniform(0.0, 1.0, (data.n, p_total - data.p))])
    return Dataset(Xs, data.y.copy())
