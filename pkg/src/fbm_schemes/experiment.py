"""Monte-Carlo error experiments: reference run, coarse scheme runs, predicted limits.

Each path i is driven by the stream ``SeedSpec(seed, i)``, so results do not
depend on how paths are grouped into batches or spread over workers.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .calculus import SdeModel, SmoothFunction
from .grid_fbm import DyadicGrid, SeedSpec, iter_batches, restrict_path, sample_fbm
from .limits import RegimeUndetermined, coefficient_function
from .reference import JacobianError, reference_order
from .schemes import RegimeReport, SchemeSpec, classify_regime, milstein_step, run_scheme
from .variations import c_l_constant

__all__ = [
    "ExperimentSetup",
    "ExperimentResult",
    "stream_reference",
    "run_experiment",
    "fit_slope",
]


@dataclass(frozen=True)
class ExperimentSetup:
    model: SdeModel
    spec: SchemeSpec
    h: float
    m_levels: tuple[int, ...]
    m_ref: int
    n_paths: int
    seed: int = 0
    horizon_T: int = 1
    batch_size: int = 100
    order_margin: int = 1
    workers: int = 1

    def __post_init__(self):
        if not self.m_levels:
            raise ValueError("m_levels must not be empty")
        if max(self.m_levels) >= self.m_ref:
            raise ValueError("every level in m_levels must be below m_ref")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")

    @property
    def regime(self) -> RegimeReport:
        return classify_regime(self.spec, self.h, self.model.b_vanishes)


@dataclass
class ExperimentResult:
    setup: ExperimentSetup
    regime: RegimeReport
    B_T: np.ndarray            # (n_paths,)
    Y_T: np.ndarray            # reference terminal values
    J_T: np.ndarray
    err_T: np.ndarray          # (n_levels, n_paths): Y_hat_T - Y_T
    err_max: np.ndarray        # (n_levels, n_paths): max over level grid |Y_hat - Y|
    prediction: np.ndarray | None = None   # a.s. limit at T, or conditional variance
    constants: list = field(default_factory=list)

    @property
    def levels(self) -> np.ndarray:
        return np.asarray(self.setup.m_levels)

    def normalized(self) -> np.ndarray | None:
        rho = self.regime.rate_exponent
        if rho is None:
            return None
        return 2.0 ** (rho * self.levels)[:, None] * self.err_T

    def ratios(self) -> np.ndarray | None:
        """Normalized error over the a.s. prediction, per level and path."""
        z = self.normalized()
        if z is None or self.prediction is None or self.regime.limit_kind != "almost_sure_drift_integral":
            return None
        return z / self.prediction[None, :]

    def standardized(self) -> np.ndarray | None:
        """Normalized error over the conditional standard deviation (mixed-normal regime)."""
        z = self.normalized()
        if z is None or self.prediction is None or self.regime.limit_kind != "mixed_normal":
            return None
        return z / np.sqrt(self.prediction)[None, :]

    def slope(self, which: str = "terminal") -> tuple[float, float]:
        e = np.abs(self.err_T if which == "terminal" else self.err_max)
        return fit_slope(self.levels, np.mean(e, axis=1))


def fit_slope(levels, values) -> tuple[float, float]:
    """Least-squares slope of log2(values) against levels, with its standard error."""
    x = np.asarray(levels, dtype=float)
    y = np.log2(np.asarray(values, dtype=float))
    if len(x) < 2:
        raise ValueError("need at least two levels to fit a slope")
    res = stats.linregress(x, y)
    return float(res.slope), float(res.stderr if len(x) > 2 else 0.0)


def stream_reference(model: SdeModel, dB: np.ndarray, dt: float, k: int, record_every: int,
                     integrands: list[tuple[SmoothFunction, int]] = (), chunk: int = 4096):
    """k-Milstein reference run with its Jacobian, keeping only what the limits need.

    Returns (Y, J, I) at every ``record_every``-th fine point, where
    I[i] = sum_{s<t} (J_s^{-1} g_i(Y_s))^{p_i} dt for integrands (g_i, p_i).
    Integrands are evaluated in vectorized chunks of fine steps.
    """
    n = dB.shape[-1]
    if n % record_every:
        raise ValueError("record_every must divide the number of fine steps")
    chunk = max(record_every, (chunk // record_every) * record_every)
    batch = dB.shape[:-1]
    n_rec = n // record_every + 1
    Y = np.empty(batch + (n_rec,))
    J = np.empty(batch + (n_rec,))
    I = np.zeros((len(integrands),) + batch + (n_rec,))
    y = np.full(batch, float(model.y0))
    jac = np.ones(batch)
    acc = np.zeros((len(integrands),) + batch)
    Y[..., 0], J[..., 0] = y, jac
    for c0 in range(0, n, chunk):
        c1 = min(n, c0 + chunk)
        ys = np.empty(batch + (c1 - c0,))
        js = np.empty_like(ys)
        for r in range(c0, c1):
            ys[..., r - c0], js[..., r - c0] = y, jac
            y, d = milstein_step(model, k, y, dB[..., r], dt, with_derivative=True)
            jac = jac * d
        ys_next = np.concatenate([ys[..., 1:], y[..., None]], axis=-1)
        js_next = np.concatenate([js[..., 1:], jac[..., None]], axis=-1)
        rec = slice(record_every - 1, c1 - c0, record_every)
        idx = slice((c0 + record_every) // record_every, c1 // record_every + 1)
        Y[..., idx], J[..., idx] = ys_next[..., rec], js_next[..., rec]
        for i, (g, p) in enumerate(integrands):
            run = acc[i][..., None] + np.cumsum((g(ys) / js) ** p, axis=-1) * dt
            I[i][..., idx] = run[..., rec]
            acc[i] = run[..., -1]
    if not np.all(J > 0):
        raise JacobianError("non-positive Jacobian in the reference run; increase m_ref")
    return Y, J, I


def _closed_form_reference(model: SdeModel, values: np.ndarray, dt: float, record_every: int,
                           integrands: list[tuple[SmoothFunction, int]], chunk: int = 2**14):
    # left-point Riemann sums in time chunks, so no full-resolution temporaries beyond the path
    n = values.shape[-1] - 1
    rec = values[..., ::record_every]
    Y, J = model.closed_form(rec)
    I = np.zeros((len(integrands),) + rec.shape)
    run = np.zeros((len(integrands),) + values.shape[:-1])
    chunk = max(record_every, chunk - chunk % record_every)
    for a in range(0, n, chunk):
        b = min(a + chunk, n)
        y, jac = model.closed_form(values[..., a:b])
        for j, (g, p) in enumerate(integrands):
            f = (g(y) / jac) ** p * dt
            c = run[j][..., None] + np.cumsum(f, axis=-1)
            run[j] = c[..., -1]
            # record point r*every sums f over indices < r*every
            idx = np.arange(a // record_every + 1, b // record_every + 1)
            I[j][..., idx] = c[..., idx * record_every - a - 1]
    return Y, J, I


def _limit_integrands(setup: ExperimentSetup, regime: RegimeReport):
    """Integrands for the regime's limit and how to combine them at T."""
    if not regime.determined:
        return [], []
    model, h = setup.model, setup.h
    if regime.limit_kind == "mixed_normal":
        g = coefficient_function(model, regime.coefficients[0].g_key, h)
        return [(g, 2)], [1.0]
    ints, weights = [], []
    for term in regime.coefficients:
        ints.append((coefficient_function(model, term.g_key, h), 1))
        weights.append(term.weight)
    return ints, weights


def _run_batch(setup: ExperimentSetup, start: int, stop: int) -> dict:
    regime = setup.regime
    grid = DyadicGrid(setup.m_ref, setup.horizon_T)
    seeds = [SeedSpec(setup.seed, i) for i in range(start, stop)]
    path = sample_fbm(grid, setup.h, seeds, n_paths=len(seeds))
    m_top = max(setup.m_levels)
    every = 2 ** (setup.m_ref - m_top)
    integrands, weights = _limit_integrands(setup, regime)
    if setup.model.closed_form(np.zeros(1)) is not None:
        Y, J, I = _closed_form_reference(setup.model, path.values, grid.step, every, integrands)
    else:
        k = reference_order(setup.h, setup.order_margin)
        Y, J, I = stream_reference(setup.model, np.diff(path.values, axis=-1), grid.step, k,
                                   every, integrands)
    n_lev = len(setup.m_levels)
    err_T = np.empty((n_lev, len(seeds)))
    err_max = np.empty((n_lev, len(seeds)))
    for i, m in enumerate(setup.m_levels):
        coarse = restrict_path(path, m)
        yhat = run_scheme(setup.spec, setup.model, coarse).values
        yref = Y[..., :: 2 ** (m_top - m)]
        err_T[i] = yhat[..., -1] - yref[..., -1]
        err_max[i] = np.max(np.abs(yhat - yref), axis=-1)
    out = {"B_T": path.values[..., -1], "Y_T": Y[..., -1], "J_T": J[..., -1],
           "err_T": err_T, "err_max": err_max, "pred": None}
    if integrands:
        if regime.limit_kind == "mixed_normal":
            out["pred"] = J[..., -1] ** 2 * I[0, ..., -1]
        else:
            out["pred"] = J[..., -1] * sum(w * I[i, ..., -1] for i, w in enumerate(weights))
    return out


_WORKER_SETUP: ExperimentSetup | None = None


def _init_worker(setup: ExperimentSetup) -> None:
    global _WORKER_SETUP
    _WORKER_SETUP = setup


def _run_worker_batch(span: tuple[int, int]) -> dict:
    return _run_batch(_WORKER_SETUP, *span)


def run_experiment(setup: ExperimentSetup) -> ExperimentResult:
    regime = setup.regime
    batches = list(iter_batches(setup.n_paths, setup.batch_size))
    # fixtures are closures, so workers inherit the setup through fork instead of pickling it
    if setup.workers > 1 and len(batches) > 1 and "fork" in mp.get_all_start_methods():
        with ProcessPoolExecutor(setup.workers, mp_context=mp.get_context("fork"),
                                 initializer=_init_worker, initargs=(setup,)) as pool:
            parts = list(pool.map(_run_worker_batch, batches))
    else:
        parts = [_run_batch(setup, a, b) for a, b in batches]

    def cat(key, axis=-1):
        return np.concatenate([p[key] for p in parts], axis=axis)

    pred = None
    constants = []
    if parts[0]["pred"] is not None:
        pred = cat("pred")
        if regime.limit_kind == "mixed_normal":
            c3 = c_l_constant(3, setup.h, 1e-8).value
            pred = c3**2 * pred
            constants.append(("C_(3)", c3))
        else:
            constants = [(t.weight_name, t.weight) for t in regime.coefficients]
    return ExperimentResult(setup, regime, cat("B_T"), cat("Y_T"), cat("J_T"),
                            cat("err_T"), cat("err_max"), pred, constants)


def ks_standard_normal(z) -> tuple[float, float]:
    res = stats.kstest(np.asarray(z, dtype=float), "norm")
    return float(res.statistic), float(res.pvalue)


def correlation_with_se(x, y) -> tuple[float, float]:
    r = float(np.corrcoef(x, y)[0, 1])
    return r, (1 - r * r) / math.sqrt(len(x) - 1)


def require_determined(setup: ExperimentSetup) -> RegimeReport:
    rep = setup.regime
    if not rep.determined:
        raise RegimeUndetermined(rep, f"{setup.spec} at H={setup.h:g}")
    return rep
