"""Theoretical limit objects: drift integrals J int J^{-1} g(Y) dt and the
conditional variance of the mixed-normal Crank-Nicolson limit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .calculus import (
    SdeModel,
    SmoothFunction,
    cn_g3,
    iterate_D,
    milstein_g12,
    milstein_g_k1,
    milstein_gbar,
)
from .reference import SolutionPath
from .schemes import RegimeReport, SchemeSpec, classify_regime
from .variations import c_l_constant

__all__ = [
    "LimitPrediction",
    "RegimeUndetermined",
    "coefficient_function",
    "as_limit",
    "em_limit",
    "cn_limit_variance",
    "predicted_normalized_error",
]


class RegimeUndetermined(ValueError):
    """The case table gives no limit (divergent or open regime)."""

    def __init__(self, report: RegimeReport, what: str):
        self.report = report
        super().__init__(f"{what}: regime is {report.limit_kind} ({report.note or report})")


@dataclass
class LimitPrediction:
    kind: str
    values: np.ndarray
    constants: list[tuple[str, float]] = field(default_factory=list)
    regime: RegimeReport | None = None

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1]


def coefficient_function(model: SdeModel, key: str, h) -> SmoothFunction:
    """Resolve a coefficient key from the regime table to a SmoothFunction."""
    name, _, arg = key.partition(":")
    if name == "gbar":
        return milstein_gbar(model, int(arg))
    if name == "g_k1":
        return milstein_g_k1(model, int(arg))
    if name == "g12":
        return milstein_g12(model, h)
    if name == "cn_g3":
        return cn_g3(model)
    if name == "em":
        return iterate_D(model.sigma, 1)
    raise KeyError(f"unknown coefficient key {key!r}")


def _require_jacobian(y_ref: SolutionPath) -> np.ndarray:
    if y_ref.jacobian is None:
        raise ValueError("the reference solution carries no Jacobian")
    return y_ref.jacobian


def _left_cumsum(f: np.ndarray, dt: float) -> np.ndarray:
    out = np.zeros_like(f)
    out[..., 1:] = np.cumsum(f[..., :-1], axis=-1) * dt
    return out


def as_limit(g: SmoothFunction, y_ref: SolutionPath) -> LimitPrediction:
    """t -> J_t sum_{s<t} J_s^{-1} g(Y_s) ds (left-point rule on the reference grid)."""
    J = _require_jacobian(y_ref)
    if g.is_zero:
        return LimitPrediction("almost_sure", np.zeros_like(J))
    integrand = g(y_ref.values) / J
    return LimitPrediction("almost_sure", J * _left_cumsum(integrand, y_ref.grid.step))


def em_limit(model: SdeModel, y_ref: SolutionPath) -> LimitPrediction:
    """(1/2) J int J^{-1} sigma' sigma(Y) dt."""
    out = as_limit(iterate_D(model.sigma, 1) * 0.5, y_ref)
    out.constants = [("1/2", 0.5)]
    return out


def cn_limit_variance(model: SdeModel, y_ref: SolutionPath, h, tol: float = 1e-8) -> LimitPrediction:
    """Conditional variance C_(3)^2 J_t^2 int_0^t (J^{-1} g3(Y))^2 ds given the driving path."""
    J = _require_jacobian(y_ref)
    c3 = c_l_constant(3, h, tol).value
    integrand = (cn_g3(model)(y_ref.values) / J) ** 2
    var = c3**2 * J**2 * _left_cumsum(integrand, y_ref.grid.step)
    return LimitPrediction("mixed_normal", var, [("C_(3)", c3)])


def predicted_normalized_error(spec: SchemeSpec, model: SdeModel, h, y_ref: SolutionPath,
                               b_vanishes: bool | None = None) -> LimitPrediction:
    """Assemble the limit of 2^{rho m}(Y_hat - Y) for the regime of (spec, H).

    Almost-sure regimes return the limit path; the mixed-normal regime returns
    the conditional-variance path.
    """
    bv = model.b_vanishes if b_vanishes is None else b_vanishes
    report = classify_regime(spec, h, bv)
    if not report.determined:
        raise RegimeUndetermined(report, f"{spec} at H={float(h):g}")
    if report.limit_kind == "mixed_normal":
        out = cn_limit_variance(model, y_ref, h)
        out.regime = report
        return out
    total = np.zeros_like(y_ref.values)
    consts = []
    for term in report.coefficients:
        g = coefficient_function(model, term.g_key, h)
        total = total + term.weight * as_limit(g, y_ref).values
        consts.append((term.weight_name, term.weight))
    return LimitPrediction("almost_sure", total, consts, report)
