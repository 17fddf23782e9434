"""High-order proxies for the exact solution and its Jacobian process."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calculus import SdeModel, d_tower
from .grid_fbm import DyadicGrid, FbmPath, hurst_q
from .schemes import SchemeSpec, milstein_step

__all__ = [
    "SolutionPath",
    "JacobianError",
    "reference_order",
    "reference_solution",
    "jacobian_path",
    "discrete_jacobian_product",
]


class JacobianError(ArithmeticError):
    """A Jacobian value or product factor became non-positive."""


@dataclass
class SolutionPath:
    grid: DyadicGrid
    values: np.ndarray
    jacobian: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-1] != self.grid.n_points:
            raise ValueError("solution length does not match the grid")
        if self.jacobian is not None:
            self.jacobian = np.asarray(self.jacobian, dtype=float)
            if self.jacobian.shape != self.values.shape:
                raise ValueError("jacobian shape must match values")
            if not np.all(self.jacobian > 0):
                raise JacobianError("jacobian must be strictly positive")

    @property
    def terminal(self) -> np.ndarray:
        return self.values[..., -1]

    def restrict(self, coarser_m: int) -> "SolutionPath":
        if coarser_m > self.grid.m:
            raise ValueError("cannot restrict to a finer grid")
        stride = 2 ** (self.grid.m - coarser_m)
        jac = None if self.jacobian is None else self.jacobian[..., ::stride]
        return SolutionPath(self.grid.coarsen(coarser_m), self.values[..., ::stride], jac, dict(self.meta))


def reference_order(h, order_margin: int = 1) -> int:
    return hurst_q(float(h)) + 1 + order_margin


def _milstein_run(model: SdeModel, k: int, dB: np.ndarray, dt: float, with_jacobian: bool):
    y = np.full(dB.shape[:-1], float(model.y0))
    vals = np.empty(dB.shape[:-1] + (dB.shape[-1] + 1,))
    vals[..., 0] = y
    jac = np.ones_like(vals) if with_jacobian else None
    J = np.ones_like(y)
    for r in range(dB.shape[-1]):
        if with_jacobian:
            y, d = milstein_step(model, k, y, dB[..., r], dt, with_derivative=True)
            J = J * d
            jac[..., r + 1] = J
        else:
            y = milstein_step(model, k, y, dB[..., r], dt)
        vals[..., r + 1] = y
    return vals, jac


def reference_solution(model: SdeModel, path: FbmPath, order_margin: int = 1,
                       with_jacobian: bool = True) -> SolutionPath:
    """(q+1+order_margin)-Milstein run on the fine path; the Jacobian comes along for free.

    The Jacobian is the second component of the same Milstein scheme applied to
    the augmented system (y, J); for that system the k-th iterated coefficient is
    ((D^{k-1}sigma)(y), (D^{k-1}sigma)'(y) J), so the J-update is J times the
    y-derivative of the scalar step.
    """
    k = reference_order(path.h.h, order_margin)
    model.require_orders(k + (1 if with_jacobian else 0), 2 if with_jacobian else 1)
    vals, jac = _milstein_run(model, k, np.diff(path.values, axis=-1), path.grid.step, with_jacobian)
    if jac is not None and not np.all(jac > 0):
        raise JacobianError("non-positive Jacobian along the reference run; refine the grid")
    return SolutionPath(path.grid, vals, jac, {"scheme": str(SchemeSpec.milstein(k)), "model": model.name})


def jacobian_path(model: SdeModel, path: FbmPath, y_ref: SolutionPath, order_margin: int = 1) -> np.ndarray:
    """J along ``y_ref`` (same grid), J_0 = 1."""
    if y_ref.grid != path.grid:
        raise ValueError("reference solution and path must share the grid")
    k = reference_order(path.h.h, order_margin)
    dB = np.diff(path.values, axis=-1)
    y = y_ref.values[..., :-1]
    _, d = milstein_step(model, k, y, dB, path.grid.step, with_derivative=True)
    jac = np.ones(y_ref.values.shape)
    jac[..., 1:] = np.cumprod(d, axis=-1)
    if not np.all(jac > 0):
        raise JacobianError("non-positive Jacobian; the grid is too coarse for this path")
    return jac


def discrete_jacobian_product(model: SdeModel, path: FbmPath, y_ref: SolutionPath) -> np.ndarray:
    """Running product of 1 + sum_{k<=q} (D^{k-1}sigma)'(Y) dB^k / k! + b'(Y) dt.

    ``y_ref`` may live on a finer grid; it is restricted to the path's grid.
    """
    if y_ref.grid.m != path.grid.m:
        y_ref = y_ref.restrict(path.grid.m)
    q = hurst_q(path.h.h)
    y = y_ref.values[..., :-1]
    dB = np.diff(path.values, axis=-1)
    tower = d_tower(model.sigma.jet(y, q), q - 1)
    factor = 1.0 + model.b.jet(y, 1)[1] * path.grid.step
    powc = dB
    for k in range(1, q + 1):
        factor = factor + tower[k - 1][1] * powc / math.factorial(k)
        powc = powc * dB
    if not np.all(factor > 0):
        raise JacobianError("non-positive factor in the discrete Jacobian product")
    out = np.ones(y_ref.values.shape)
    out[..., 1:] = np.cumprod(factor, axis=-1)
    return out
