"""One-step schemes, their formal step expansions and the regime classifier.

All steppers are vectorized: ``y``, ``dB`` may be arrays of matching shape
(one entry per path), ``dt`` is a scalar.
"""

from __future__ import annotations

import functools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .calculus import (
    JetOrderError,
    SdeModel,
    SmoothFunction,
    d_tower,
    gaussian_moment_kappa,
    iterate_D,
    jet_mul,
    logistic,
    sin_offset,
    zero,
)
from .grid_fbm import FbmPath, as_hurst, hurst_q

__all__ = [
    "SchemeSpec",
    "StepExpansion",
    "CoefficientTerm",
    "RegimeReport",
    "CNConvergenceError",
    "SchemeStepError",
    "parse_scheme",
    "em_step",
    "milstein_step",
    "cn_step",
    "run_scheme",
    "expansion_of",
    "fbar",
    "classify_regime",
]

CN_TOL = 1e-13
CN_MAX_ITER = 50


class CNConvergenceError(ArithmeticError):
    """Fixed-point iteration for the implicit step did not converge."""

    def __init__(self, y, dB, dt, residual):
        self.y, self.dB, self.dt, self.residual = y, dB, dt, residual
        super().__init__(
            f"Crank-Nicolson iteration did not converge (y={y!r}, dB={dB!r}, dt={dt!r}, "
            f"residual={residual:.3e}); the implicit step is not well defined here"
        )


class SchemeStepError(ArithmeticError):
    def __init__(self, step_index: int, cause: Exception):
        self.step_index = step_index
        self.cause = cause
        super().__init__(f"step {step_index} failed: {cause}")


@dataclass(frozen=True)
class StepExpansion:
    """Formal expansion y+ - y = sum f_(i,j)(y) dB^i dt^j.

    ``omitted`` lists the lowest-order multi-indices not carried by ``terms``;
    an empty tuple means the expansion is the step itself.
    """

    terms: Mapping[tuple[int, int], SmoothFunction]
    omitted: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if (1, 0) not in self.terms:
            raise ValueError("a step expansion must contain the sigma dB term (1, 0)")

    @staticmethod
    def size(gamma: tuple[int, int], h) -> float:
        return gamma[0] * float(as_hurst(h).h) + gamma[1]

    def remainder_exponent(self, h) -> float:
        if not self.omitted:
            return math.inf
        return min(self.size(g, h) for g in self.omitted)

    def term(self, gamma: tuple[int, int]) -> SmoothFunction:
        return self.terms.get(gamma) or zero()

    def evaluate(self, y, dB, dt):
        """Truncated step increment sum f(y) dB^i dt^j."""
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast_shapes(y.shape, np.shape(dB)))
        for (i, j), f in self.terms.items():
            if f.is_zero:
                continue
            out = out + f(y) * np.asarray(dB) ** i * dt**j
        return out


@dataclass(frozen=True)
class SchemeSpec:
    kind: str
    k: int = 0
    expansion: StepExpansion | None = None
    exact_step: Callable | None = field(default=None, compare=False)
    cn_tol: float = CN_TOL
    cn_max_iter: int = CN_MAX_ITER

    def __post_init__(self):
        if self.kind not in ("em", "milstein", "cn", "custom"):
            raise ValueError(f"unknown scheme kind {self.kind!r}")
        if self.kind == "milstein" and self.k < 2:
            raise ValueError(f"Milstein order must be >= 2, got {self.k}")
        if self.kind == "custom" and self.expansion is None:
            raise ValueError("custom schemes need a StepExpansion")

    def __str__(self) -> str:
        return f"milstein:{self.k}" if self.kind == "milstein" else self.kind

    @classmethod
    def em(cls) -> "SchemeSpec":
        return cls("em")

    @classmethod
    def milstein(cls, k: int) -> "SchemeSpec":
        return cls("milstein", int(k))

    @classmethod
    def cn(cls, tol: float = CN_TOL, max_iter: int = CN_MAX_ITER) -> "SchemeSpec":
        return cls("cn", cn_tol=tol, cn_max_iter=max_iter)


_SCHEME_RE = re.compile(r"^\s*(em|cn|milstein)\s*(?::\s*(\d+))?\s*$", re.IGNORECASE)


def parse_scheme(text: str, cn_tol: float = CN_TOL, cn_max_iter: int = CN_MAX_ITER) -> SchemeSpec:
    mt = _SCHEME_RE.match(text)
    if not mt:
        raise ValueError(f"bad scheme spec {text!r}; expected 'em', 'cn' or 'milstein:k'")
    kind, k = mt.group(1).lower(), mt.group(2)
    if kind == "milstein":
        if k is None:
            raise ValueError("milstein needs an order, e.g. 'milstein:2'")
        return SchemeSpec.milstein(int(k))
    if k is not None:
        raise ValueError(f"scheme {kind!r} takes no order")
    return SchemeSpec.cn(cn_tol, cn_max_iter) if kind == "cn" else SchemeSpec.em()


# -- steppers ---------------------------------------------------------------

def em_step(model: SdeModel, y, dB, dt):
    return y + model.sigma(y) * dB + model.b(y) * dt


@functools.lru_cache(maxsize=None)
def _inv_factorials(k: int) -> np.ndarray:
    return np.array([1.0 / math.factorial(l) for l in range(1, k + 1)])


def _power_weights(dB, k: int) -> np.ndarray:
    """Rows dB^l / l! for l = 1..k."""
    dB = np.asarray(dB, dtype=float)
    pw = np.empty((k,) + dB.shape)
    pw[0] = dB
    for l in range(1, k):
        pw[l] = pw[l - 1] * dB
    pw *= _inv_factorials(k).reshape((-1,) + (1,) * dB.ndim)
    return pw


def milstein_step(model: SdeModel, k: int, y, dB, dt, with_derivative: bool = False):
    """One k-Milstein step; optionally also returns d(step)/dy."""
    extra = 1 if with_derivative else 0
    y = np.asarray(y, dtype=float)
    sj = model.sigma.jet(y, max(k - 1, 1) + extra)
    tower = d_tower(sj, k - 1)
    bj = model.b.jet(y, 1 + extra)
    pw = _power_weights(dB, k)
    rows = np.stack([t[: 1 + extra] for t in tower])  # (k, 1+extra, ...)
    inc = np.einsum("l...,le...->e...", pw, rows)
    out = y + inc[0] + bj[0] * dt
    drift = not model.b.is_zero
    if drift:
        out = out + 0.5 * bj[0] * bj[1] * dt * dt + 0.5 * (sj[1] * bj[0] + bj[1] * sj[0]) * dt * dB
    if not with_derivative:
        return out
    der = 1.0 + inc[1] + bj[1] * dt
    if drift:
        bb1 = bj[1] * bj[1] + bj[0] * bj[2]
        cross = sj[2] * bj[0] + 2.0 * sj[1] * bj[1] + bj[2] * sj[0]
        der = der + 0.5 * bb1 * dt * dt + 0.5 * cross * dt * dB
    return out, der


def _cn_contraction_ok(model: SdeModel, dB, dt) -> bool:
    ls, lb = model.sigma.lipschitz, model.b.lipschitz
    if ls is None or lb is None:
        return True
    return bool(np.all(0.5 * (ls * np.abs(dB) + lb * dt) < 1.0))


def cn_step(model: SdeModel, y, dB, dt, tol: float = CN_TOL, max_iter: int = CN_MAX_ITER):
    """Implicit trapezoid step by fixed-point iteration from a 2-Milstein predictor."""
    if not _cn_contraction_ok(model, dB, dt):
        raise CNConvergenceError(y, dB, dt, math.inf)
    y = np.asarray(y, dtype=float)
    base = y + 0.5 * model.sigma(y) * dB + 0.5 * model.b(y) * dt
    half_dB, half_dt = 0.5 * dB, 0.5 * dt
    yp = milstein_step(model, 2, y, dB, dt)
    res = math.inf
    for _ in range(max_iter):
        new = base + model.sigma(yp) * half_dB + model.b(yp) * half_dt
        res = float(np.max(np.abs(new - yp))) if np.size(new) else 0.0
        yp = new
        if res < tol:
            return yp
    if not np.all(np.isfinite(yp)):
        res = math.inf
    raise CNConvergenceError(y, dB, dt, res)


def _stepper(spec: SchemeSpec, model: SdeModel) -> Callable:
    if spec.kind == "em":
        return lambda y, dB, dt: em_step(model, y, dB, dt)
    if spec.kind == "milstein":
        return lambda y, dB, dt: milstein_step(model, spec.k, y, dB, dt)
    if spec.kind == "cn":
        return lambda y, dB, dt: cn_step(model, y, dB, dt, spec.cn_tol, spec.cn_max_iter)
    if spec.exact_step is not None:
        return spec.exact_step
    return lambda y, dB, dt: y + spec.expansion.evaluate(y, dB, dt)


def run_scheme(spec: SchemeSpec, model: SdeModel, path: FbmPath | np.ndarray, dt: float | None = None):
    """Integrate the scheme along every path of ``path`` (batch axes allowed)."""
    from .reference import SolutionPath

    if isinstance(path, FbmPath):
        values, dt, grid = path.values, path.grid.step, path.grid
    else:
        values, grid = np.asarray(path, dtype=float), None
        if dt is None:
            raise ValueError("dt is required when integrating a bare increment array")
    dB = np.diff(values, axis=-1)
    step = _stepper(spec, model)
    out = np.empty(values.shape)
    y = np.full(values.shape[:-1], float(model.y0))
    out[..., 0] = y
    for r in range(dB.shape[-1]):
        try:
            y = step(y, dB[..., r], dt)
        except (CNConvergenceError, JetOrderError, FloatingPointError) as exc:
            raise SchemeStepError(r, exc) from exc
        out[..., r + 1] = y
    if not np.all(np.isfinite(out)):
        bad = int(np.argmax(~np.isfinite(out).reshape(-1, out.shape[-1]).all(axis=0)))
        raise SchemeStepError(bad - 1, FloatingPointError("non-finite value"))
    if grid is None:
        return out
    return SolutionPath(grid, out, meta={"scheme": str(spec), "model": model.name})


# -- expansions -------------------------------------------------------------

def _series_mul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    I, J = A.shape[0] - 1, A.shape[1] - 1
    C = np.zeros_like(A)
    for i1 in range(I + 1):
        for j1 in range(J + 1):
            if not A[i1, j1].any():
                continue
            for i2 in range(I + 1 - i1):
                for j2 in range(J + 1 - j1):
                    C[i1 + i2, j1 + j2] += jet_mul(A[i1, j1], B[i2, j2])
    return C


def _series_compose(fj: np.ndarray, u: np.ndarray, n: int) -> np.ndarray:
    """Series of f(x + u) when u has no constant term; fj is the jet of f at x."""
    K = u.shape[0] + u.shape[1] - 2
    out = np.zeros_like(u)
    power = np.zeros_like(u)
    power[0, 0, 0] = 1.0
    for k in range(K + 1):
        coef = fj[k:k + n + 1] / math.factorial(k)
        out += _scale_series(power, coef)
        power = _series_mul(power, u)
    return out


def _scale_series(S: np.ndarray, jet: np.ndarray) -> np.ndarray:
    out = np.empty_like(S)
    for i in range(S.shape[0]):
        for j in range(S.shape[1]):
            out[i, j] = jet_mul(S[i, j], jet)
    return out


def cn_series(model: SdeModel, x, n: int, I: int, J: int) -> np.ndarray:
    """Jets of the coefficients of dB^i dt^j (i <= I, j <= J) in the exact CN step.

    Solves u = (sigma(x) + sigma(x+u)) dB/2 + (b(x) + b(x+u)) dt/2 as a
    bivariate power series whose coefficients are jets in x.
    """
    x = np.asarray(x, dtype=float)
    K = I + J
    sj = model.sigma.jet(x, n + K)
    bj = model.b.jet(x, n + K)
    u = np.zeros((I + 1, J + 1, n + 1) + x.shape)
    for _ in range(K + 1):
        fs = _series_compose(sj, u, n)
        fb = _series_compose(bj, u, n)
        fs[0, 0] += sj[: n + 1]
        fb[0, 0] += bj[: n + 1]
        new = np.zeros_like(u)
        new[1:, :] += 0.5 * fs[:-1, :]
        new[:, 1:] += 0.5 * fb[:, :-1]
        u = new
    return u


_CN_TERMS = ((1, 0), (2, 0), (3, 0), (4, 0), (0, 1), (1, 1), (0, 2), (2, 1))
_CN_OMITTED = ((5, 0), (3, 1), (1, 2), (0, 3))


def _cn_term(model: SdeModel, i: int, j: int) -> SmoothFunction:
    order = min(model.sigma.max_order, model.b.max_order) - (4 + 2)

    def _jet(x, n):
        return cn_series(model, x, n, 4, 2)[i, j]
    return SmoothFunction(_jet, max(order, 0), f"cn[{i},{j}]")


def expansion_of(spec: SchemeSpec, model: SdeModel) -> StepExpansion:
    s, b = model.sigma, model.b
    if spec.kind == "custom":
        return spec.expansion
    if spec.kind == "em":
        return StepExpansion({(1, 0): s, (0, 1): b})
    if spec.kind == "milstein":
        terms = {(l, 0): iterate_D(s, l - 1) * (1.0 / math.factorial(l)) for l in range(1, spec.k + 1)}
        if not b.is_zero:
            s1, b1 = s.derivative(), b.derivative()
            terms[(0, 1)] = b
            terms[(0, 2)] = b * b1 * 0.5
            terms[(1, 1)] = (s1 * b + b1 * s) * 0.5
        return StepExpansion(terms)
    terms = {}
    for (i, j) in _CN_TERMS:
        if j > 0 and b.is_zero:
            continue
        terms[(i, j)] = _cn_term(model, i, j)
    return StepExpansion(terms, _CN_OMITTED)


def fbar(spec: SchemeSpec, model: SdeModel, l: int) -> SmoothFunction:
    """Pure-dB^l coefficient of the step minus that of the Taylor expansion."""
    if l < 1:
        raise ValueError("l must be >= 1")
    exp = expansion_of(spec, model)
    taylor = iterate_D(model.sigma, l - 1) * (1.0 / math.factorial(l))
    if spec.kind == "cn" and l > 4:
        raise JetOrderError("Crank-Nicolson expansion", l, 4)
    return exp.term((l, 0)) - taylor


# -- regime classification --------------------------------------------------

@dataclass(frozen=True)
class CoefficientTerm:
    """weight * g where g is named by ``g_key`` (see limits.coefficient_function)."""

    g_key: str
    weight: float = 1.0
    weight_name: str = "1"

    def __str__(self) -> str:
        return self.g_key if self.weight_name == "1" else f"{self.weight_name}*{self.g_key}"


@dataclass(frozen=True)
class RegimeReport:
    condition: str
    rate_exponent: float | None
    limit_kind: str
    coefficients: tuple[CoefficientTerm, ...] = ()
    note: str = ""

    @property
    def coefficient_descriptor(self) -> str:
        return " + ".join(str(c) for c in self.coefficients) or "-"

    @property
    def determined(self) -> bool:
        return self.limit_kind in ("almost_sure_drift_integral", "mixed_normal")

    def __str__(self) -> str:
        rho = "-" if self.rate_exponent is None else f"{self.rate_exponent:.6g}"
        return (f"condition={self.condition};rate={rho};limit={self.limit_kind};"
                f"coefficient={self.coefficient_descriptor}")


_PROBE_POINTS = np.linspace(-2.0, 2.0, 9)


def _probe_model(b_vanishes: bool) -> SdeModel:
    return SdeModel(sin_offset(2.0, max_order=12), zero() if b_vanishes else logistic(max_order=12), 1.0, "probe")


def _vanishes(f: SmoothFunction, scale: SmoothFunction) -> bool:
    if f.is_zero:
        return True
    return bool(np.all(np.abs(f(_PROBE_POINTS)) <= 1e-10 * (1.0 + np.abs(scale(_PROBE_POINTS)))))


def check_condition(spec: SchemeSpec, h, model: SdeModel | None = None) -> str:
    """'A' if fbar_l vanishes for l <= q, 'B' if q is odd and it does for l <= q-1."""
    model = model or _probe_model(False)
    q = hurst_q(float(as_hurst(h).h))
    top = 0
    for l in range(1, q + 1):
        if not _vanishes(fbar(spec, model, l), iterate_D(model.sigma, l - 1)):
            break
        top = l
    if top >= q:
        return "A"
    if q % 2 == 1 and top >= q - 1:
        return "B"
    return "neither"


def _eq(a: float, b: float) -> bool:
    return abs(a - b) < 1e-12


def _kappa(n: int) -> tuple[float, str]:
    return gaussian_moment_kappa(n), f"kappa_{n}"


def _as(rho: float, *terms: CoefficientTerm, cond: str) -> RegimeReport:
    return RegimeReport(cond, rho, "almost_sure_drift_integral", tuple(terms))


def _milstein_regime(k: int, h: float, b_vanishes: bool, cond: str) -> RegimeReport:
    div = RegimeReport(cond, None, "divergent", note=f"Milstein({k}) does not converge at H={h:g}")
    kap, kname = _kappa(k + 1)
    if k % 2 == 0:
        top = CoefficientTerm(f"gbar:{k + 1}", kap, kname)
    else:
        top = CoefficientTerm(f"g_k1:{k + 1}", kap, kname)
    low = 1.0 / (k + 2) if k % 2 == 0 else 1.0 / (k + 1)
    top_rate = ((k + 2) if k % 2 == 0 else (k + 1)) * h - 1.0
    if b_vanishes or k in (2, 3):
        if h > low and not _eq(h, low):
            return _as(top_rate, top, cond=cond)
        return div
    g12 = CoefficientTerm("g12")
    mid = 1.0 / k if k % 2 == 0 else 1.0 / (k - 1)
    if _eq(h, mid):
        return _as(2.0 * mid, g12, top, cond=cond)
    if h > mid:
        return _as(2.0 * h, g12, cond=cond)
    if h > low and not _eq(h, low):
        return _as(top_rate, top, cond=cond)
    return div


def classify_regime(spec: SchemeSpec, h, b_vanishes: bool, model: SdeModel | None = None) -> RegimeReport:
    """Rate exponent rho (normalizer 2^{-rho m}) and limit descriptor for a scheme."""
    h = float(as_hurst(h).h)
    if spec.kind == "custom":
        if model is None:
            raise ValueError("custom schemes are classified against the model they were expanded for")
        return RegimeReport(check_condition(spec, h, model), None, "open",
                            note="custom scheme: condition check only")
    cond = check_condition(spec, h, model)
    if h > 0.5 - 1e-12:
        return RegimeReport(cond, None, "open", note="H >= 1/2 is outside the implemented case table")
    if spec.kind == "em":
        if h > 0.25 and not _eq(h, 0.25):
            return RegimeReport(cond, 2.0 * h - 1.0, "almost_sure_drift_integral",
                                (CoefficientTerm("em", 0.5, "1/2"),))
        return RegimeReport(cond, None, "open", note="Euler-Maruyama below H=1/4 is not tabulated")
    if spec.kind == "cn":
        if h < 1.0 / 6 or _eq(h, 1.0 / 6):
            return RegimeReport(cond, None, "divergent", note="Crank-Nicolson diverges for H <= 1/6")
        if h < 0.25 or _eq(h, 0.25):
            return RegimeReport(cond, None, "open", note="Crank-Nicolson for 1/6 < H <= 1/4 is unresolved")
        return RegimeReport(cond, 3.0 * h - 0.5, "mixed_normal",
                            (CoefficientTerm("cn_g3", 1.0, "C_(3)"),))
    return _milstein_regime(spec.k, h, b_vanishes, cond)
