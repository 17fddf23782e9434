"""Univariate smooth-function calculus on truncated Taylor jets.

A jet of order ``n`` at points ``x`` is an array of shape ``(n+1, *x.shape)``
holding ``[f(x), f'(x), ..., f^{(n)}(x)]`` (plain derivatives, not Taylor
coefficients).  Products follow the Leibniz rule and differentiation is a
shift, so every operator below is exact up to the requested order.

Conventions:
    D_g f = f' g,    D = D_sigma,    V f = sigma f' - sigma' f.

Coefficient functions are built lazily as ``SmoothFunction`` closures and
only ever evaluated pointwise (vectorized over arrays of points).
"""

from __future__ import annotations

import dataclasses
import functools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import comb

__all__ = [
    "JetOrderError",
    "SmoothFunction",
    "SdeModel",
    "jet_mul",
    "jet_shift",
    "constant",
    "zero",
    "affine",
    "polynomial",
    "sin_offset",
    "logistic",
    "tanh",
    "exponential",
    "FIXTURES",
    "make_fixture",
    "parse_fixture",
    "apply_D_g",
    "iterate_D",
    "d_tower",
    "apply_V",
    "taylor_coefficient_f_gamma",
    "hermite",
    "power_to_hermite",
    "gaussian_moment_kappa",
    "milstein_g_k1",
    "milstein_g_k2",
    "milstein_gbar",
    "milstein_g12",
    "cn_g3",
]

UNBOUNDED_ORDER = 10**6


class JetOrderError(ValueError):
    """A derivative beyond a function's available jet order was requested."""

    def __init__(self, name: str, requested: int, available: int):
        self.requested = requested
        self.available = available
        super().__init__(
            f"{name}: derivative of order {requested} requested but only "
            f"{available} available"
        )


# -- jet arithmetic ---------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _leibniz_plan(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # pairs (k, j) with j <= k <= n in row order, binomial weights, row starts
    ks, js = np.tril_indices(n + 1)
    starts = np.arange(n + 1) * (np.arange(n + 1) + 1) // 2
    return js, ks - js, comb(ks, js, exact=False), starts


def jet_mul(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Leibniz product of two jets; the result has the smaller of the two orders."""
    n = min(len(u), len(v)) - 1
    if n == 0:
        return u[:1] * v[:1]
    ju, jv, w, starts = _leibniz_plan(n)
    prod = u[ju] * v[jv]
    prod *= w.reshape((-1,) + (1,) * (prod.ndim - 1))
    return np.add.reduceat(prod, starts, axis=0)


def jet_shift(u: np.ndarray) -> np.ndarray:
    """Jet of the derivative: drops the value and lowers the order by one."""
    return u[1:]


# -- smooth functions -------------------------------------------------------

@dataclass(frozen=True)
class SmoothFunction:
    """A function known through its derivatives up to ``max_order``.

    ``_jet(x, n)`` must return an array of shape ``(n+1, *x.shape)``.
    ``lipschitz`` optionally records sup|f'| for well-posedness checks.
    """

    _jet: Callable[[np.ndarray, int], np.ndarray]
    max_order: int
    name: str = "f"
    is_zero: bool = False
    lipschitz: float | None = field(default=None, compare=False)
    # ("affine", slope, intercept) for affine fixtures; enables closed forms
    shape: tuple = field(default=(), compare=False)

    def jet(self, x, n: int = 0) -> np.ndarray:
        if n > self.max_order:
            raise JetOrderError(self.name, n, self.max_order)
        if n < 0:
            raise ValueError("jet order must be non-negative")
        x = np.asarray(x, dtype=float)
        return self._jet(x, n)

    def __call__(self, x):
        out = self.jet(x, 0)[0]
        return float(out) if out.ndim == 0 else out

    def deriv(self, x, k: int = 1):
        out = self.jet(x, k)[k]
        return float(out) if out.ndim == 0 else out

    def derivative(self) -> "SmoothFunction":
        if self.max_order < 1:
            raise JetOrderError(self.name, 1, self.max_order)
        base = self
        return SmoothFunction(lambda x, n: base.jet(x, n + 1)[1:], self.max_order - 1,
                              f"({self.name})'")

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        other = _lift(other)
        if other.is_zero:
            return self
        if self.is_zero:
            return other
        a, b = self, other
        return SmoothFunction(lambda x, n: a.jet(x, n) + b.jet(x, n),
                              min(a.max_order, b.max_order), f"({a.name}+{b.name})")

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            c = float(other)
            if c == 0.0 or self.is_zero:
                return zero()
            a = self
            return SmoothFunction(lambda x, n: c * a.jet(x, n), a.max_order,
                                  f"{c:g}*{a.name}")
        other = _lift(other)
        if self.is_zero or other.is_zero:
            return zero()
        a, b = self, other
        return SmoothFunction(lambda x, n: jet_mul(a.jet(x, n), b.jet(x, n)),
                              min(a.max_order, b.max_order), f"{a.name}*{b.name}")

    __rmul__ = __mul__


def _lift(f) -> SmoothFunction:
    if isinstance(f, SmoothFunction):
        return f
    return constant(float(f))


def _from_derivs(deriv: Callable[[np.ndarray, int], np.ndarray], max_order: int, name: str,
                 lipschitz: float | None = None) -> SmoothFunction:
    """Build a SmoothFunction from a callable returning the k-th derivative."""
    def _jet(x, n):
        return np.stack([np.broadcast_to(deriv(x, k), x.shape) for k in range(n + 1)])
    return SmoothFunction(_jet, max_order, name, lipschitz=lipschitz)


# -- fixtures ---------------------------------------------------------------
# Test models must use bounded coefficients with bounded derivatives (affine
# sigma is the usual exception, admitted for its closed-form solution).

def constant(c: float = 0.0, max_order: int = UNBOUNDED_ORDER) -> SmoothFunction:
    c = float(c)

    def _jet(x, n):
        out = np.zeros((n + 1,) + x.shape)
        out[0] = c
        return out
    return SmoothFunction(_jet, max_order, f"{c:g}", is_zero=(c == 0.0), lipschitz=0.0)


def zero(max_order: int = UNBOUNDED_ORDER) -> SmoothFunction:
    return constant(0.0, max_order)


def affine(slope: float = 1.0, intercept: float = 0.0, max_order: int = 8) -> SmoothFunction:
    f = polynomial([intercept, slope], max_order, name=f"affine({slope:g},{intercept:g})")
    return dataclasses.replace(f, shape=("affine", float(slope), float(intercept)))


def polynomial(coeffs: Sequence[float], max_order: int = 8, name: str | None = None) -> SmoothFunction:
    """Polynomial with ascending coefficients ``coeffs``."""
    coeffs = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if len(coeffs) == 0:
        return zero(max_order)
    ders = [coeffs]
    for _ in range(max_order):
        ders.append(P.polyder(ders[-1]) if len(ders[-1]) > 1 else np.zeros(1))
    lip = abs(coeffs[1]) if len(coeffs) == 2 else (0.0 if len(coeffs) == 1 else None)
    return _from_derivs(lambda x, k: P.polyval(x, ders[k]), max_order,
                        name or f"poly{tuple(coeffs.tolist())}", lipschitz=lip)


def sin_offset(offset: float = 2.0, amplitude: float = 1.0, frequency: float = 1.0,
               max_order: int = 8) -> SmoothFunction:
    """amplitude * sin(frequency * x) + offset."""
    scales = amplitude * frequency ** np.arange(max_order + 1.0)
    signs = np.array([1.0, 1.0, -1.0, -1.0])

    def _jet(x, n):
        u = frequency * x
        sc = np.stack([np.sin(u), np.cos(u)])
        k = np.arange(n + 1)
        w = (scales[: n + 1] * signs[k % 4]).reshape((-1,) + (1,) * x.ndim)
        out = w * sc[k % 2]
        out[0] += offset
        return out
    return SmoothFunction(_jet, max_order, f"sin_offset({offset:g},{amplitude:g},{frequency:g})",
                          lipschitz=abs(amplitude * frequency))


@functools.lru_cache(maxsize=None)
def _sigmoid_matrix(kind: str, order: int) -> np.ndarray:
    """Row k holds d^k s / du^k as ascending coefficients in s, for
    s' = s(1-s) (logistic) or s' = 1-s^2 (tanh)."""
    gen = np.array([0.0, 1.0, -1.0]) if kind == "logistic" else np.array([1.0, 0.0, -1.0])
    polys = [np.array([0.0, 1.0])]
    for _ in range(order):
        polys.append(P.polymul(P.polyder(polys[-1]), gen))
    mat = np.zeros((order + 1, order + 2))
    for k, c in enumerate(polys):
        mat[k, : len(c)] = c
    return mat


def _sigmoid_jet(kind, s, n, scale, rate, shift):
    mat = _sigmoid_matrix(kind, n)
    powers = s[None] ** np.arange(n + 2).reshape((-1,) + (1,) * s.ndim)
    out = np.tensordot(mat * (scale * rate ** np.arange(n + 1.0))[:, None], powers, axes=1)
    out[0] += shift
    return out


def logistic(scale: float = 1.0, rate: float = 1.0, shift: float = 0.0,
             max_order: int = 8) -> SmoothFunction:
    """scale / (1 + exp(-rate * x)) + shift."""
    def _jet(x, n):
        s = 0.5 * (1.0 + np.tanh(0.5 * rate * x))
        return _sigmoid_jet("logistic", s, n, scale, rate, shift)
    return SmoothFunction(_jet, max_order, f"logistic({scale:g},{rate:g},{shift:g})",
                          lipschitz=abs(scale * rate) / 4)


def tanh(scale: float = 1.0, rate: float = 1.0, shift: float = 0.0,
         max_order: int = 8) -> SmoothFunction:
    """scale * tanh(rate * x) + shift."""
    def _jet(x, n):
        return _sigmoid_jet("tanh", np.tanh(rate * x), n, scale, rate, shift)
    return SmoothFunction(_jet, max_order, f"tanh({scale:g},{rate:g},{shift:g})",
                          lipschitz=abs(scale * rate))


def exponential(scale: float = 1.0, rate: float = 1.0, max_order: int = 8) -> SmoothFunction:
    """scale * exp(rate * x); unbounded, for algebraic checks only."""
    return _from_derivs(lambda x, k: scale * rate**k * np.exp(rate * x), max_order,
                        f"exp({scale:g},{rate:g})")


FIXTURES: dict[str, Callable[..., SmoothFunction]] = {
    "zero": lambda max_order=8: zero(max_order),
    "const": lambda c=1.0, max_order=8: constant(c, max_order),
    "affine": affine,
    "sin-offset": sin_offset,
    "logistic": logistic,
    "tanh": tanh,
    "exp": exponential,
}


def make_fixture(key: str, **params) -> SmoothFunction:
    try:
        factory = FIXTURES[key]
    except KeyError:
        raise KeyError(f"unknown fixture {key!r}; choose from {sorted(FIXTURES)}") from None
    return factory(**params)


_FIXTURE_RE = re.compile(r"^\s*([A-Za-z][\w-]*)\s*(?:\((.*)\))?\s*$")


def parse_fixture(text: str) -> SmoothFunction:
    """Parse ``"name"`` or ``"name(k=v, ...)"`` into a registered fixture."""
    mt = _FIXTURE_RE.match(text)
    if not mt:
        raise ValueError(f"malformed fixture spec {text!r}")
    key, args = mt.group(1), mt.group(2)
    params = {}
    if args and args.strip():
        for item in args.split(","):
            if "=" not in item:
                raise ValueError(f"fixture parameter {item.strip()!r} must be key=value")
            k, v = (s.strip() for s in item.split("=", 1))
            params[k] = int(v) if k == "max_order" else float(v)
    try:
        return make_fixture(key, **params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for fixture {key!r}: {exc}") from None


@dataclass(frozen=True)
class SdeModel:
    """dY = sigma(Y) dB + b(Y) dt, Y_0 = y0."""

    sigma: SmoothFunction
    b: SmoothFunction
    y0: float = 1.0
    name: str = ""

    @property
    def b_vanishes(self) -> bool:
        return self.b.is_zero

    def closed_form(self, B: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
        """(Y, J) along a driving path when the model is explicitly solvable.

        Covers b = 0 with sigma(x) = a x (Y = y0 exp(aB)) or sigma constant
        (Y = y0 + cB); returns None otherwise.
        """
        if not self.b.is_zero:
            return None
        sh = self.sigma.shape
        B = np.asarray(B, dtype=float)
        if sh and sh[0] == "affine" and sh[2] == 0.0:
            J = np.exp(sh[1] * B)
            return self.y0 * J, J
        if sh and sh[0] == "affine" and sh[1] == 0.0:
            return self.y0 + sh[2] * B, np.ones_like(B)
        return None

    def require_orders(self, sigma_order: int, b_order: int = 0) -> None:
        if self.sigma.max_order < sigma_order:
            raise JetOrderError(f"sigma={self.sigma.name}", sigma_order, self.sigma.max_order)
        if self.b.max_order < b_order:
            raise JetOrderError(f"b={self.b.name}", b_order, self.b.max_order)


# -- operators --------------------------------------------------------------

def apply_D_g(f: SmoothFunction, g: SmoothFunction) -> SmoothFunction:
    """D_g f = f' g."""
    if f.max_order < 1:
        raise JetOrderError(f.name, 1, f.max_order)
    if f.is_zero or g.is_zero:
        return zero(min(f.max_order - 1, g.max_order))

    def _jet(x, n):
        return jet_mul(f.jet(x, n + 1)[1:], g.jet(x, n))
    return SmoothFunction(_jet, min(f.max_order - 1, g.max_order), f"D[{g.name}]{f.name}")


def d_tower(sigma_jet: np.ndarray, k: int) -> list[np.ndarray]:
    """Jets of D^0 sigma, ..., D^k sigma from a single jet of sigma.

    With sigma known to order N the jet of D^j sigma has order N - j.
    """
    if k > len(sigma_jet) - 1:
        raise JetOrderError("sigma", k, len(sigma_jet) - 1)
    out = [sigma_jet]
    for _ in range(k):
        prev = out[-1]
        out.append(jet_mul(prev[1:], sigma_jet[: len(prev) - 1]))
    return out


def iterate_D(sigma: SmoothFunction, k: int) -> SmoothFunction:
    """D^k sigma, with D^0 sigma = sigma."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return sigma
    if sigma.max_order < k:
        raise JetOrderError(f"D^{k} of {sigma.name}", k, sigma.max_order)
    if sigma.is_zero:
        return zero(sigma.max_order - k)

    def _jet(x, n):
        return d_tower(sigma.jet(x, n + k), k)[-1]
    return SmoothFunction(_jet, sigma.max_order - k, f"D^{k}{sigma.name}")


def apply_V(f: SmoothFunction, sigma: SmoothFunction) -> SmoothFunction:
    """V f = sigma f' - sigma' f."""
    if f.max_order < 1:
        raise JetOrderError(f.name, 1, f.max_order)
    if sigma.max_order < 1:
        raise JetOrderError(sigma.name, 1, sigma.max_order)

    def _jet(x, n):
        fj = f.jet(x, n + 1)
        sj = sigma.jet(x, n + 1)
        return jet_mul(sj, fj[1:]) - jet_mul(sj[1:], fj)
    return SmoothFunction(_jet, min(f.max_order, sigma.max_order) - 1, f"V[{f.name}]")


def taylor_coefficient_f_gamma(model: SdeModel, gamma: Sequence[int]) -> SmoothFunction:
    """D^Gamma(Id); the first letter is applied first (1 -> D_sigma, 0 -> D_b).

    Gamma=(1,) gives sigma, (0,) gives b, (1, 0) gives D_b sigma = sigma' b.
    """
    gamma = tuple(int(g) for g in gamma)
    if not gamma or any(g not in (0, 1) for g in gamma):
        raise ValueError(f"gamma must be a non-empty word over {{0,1}}, got {gamma}")
    f = model.sigma if gamma[0] == 1 else model.b
    for letter in gamma[1:]:
        f = apply_D_g(f, model.sigma if letter == 1 else model.b)
    return f


# -- Hermite polynomials and Gaussian moments ------------------------------

def hermite(l: int, x):
    """Probabilists' Hermite polynomial H_l(x)."""
    if l < 0:
        raise ValueError("Hermite degree must be non-negative")
    x = np.asarray(x, dtype=float)
    h0, h1 = np.ones_like(x), x.copy()
    if l == 0:
        out = h0
    else:
        for j in range(1, l):
            h0, h1 = h1, x * h1 - j * h0
        out = h1
    return float(out) if out.ndim == 0 else out


def power_to_hermite(l: int) -> dict[int, float]:
    """Coefficients c_d with x^l = sum_d c_d H_d(x)."""
    return {l - 2 * j: math.factorial(l) / (2**j * math.factorial(l - 2 * j) * math.factorial(j))
            for j in range(l // 2 + 1)}


def gaussian_moment_kappa(l: int) -> float:
    """kappa_l = l! / (2^{floor(l/2)} floor(l/2)!)."""
    if l < 0:
        raise ValueError("l must be non-negative")
    h = l // 2
    return math.factorial(l) / (2**h * math.factorial(h))


# -- limit-theorem coefficient functions ------------------------------------

def milstein_g_k1(model: SdeModel, k: int) -> SmoothFunction:
    """-(1/k!) D^{k-1} sigma: the first Taylor term the k-Milstein scheme drops is -g."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return iterate_D(model.sigma, k - 1) * (-1.0 / math.factorial(k))


def milstein_g_k2(model: SdeModel, k: int) -> SmoothFunction:
    if k < 2:
        raise ValueError("k must be >= 2")
    return milstein_g_k1(model, k) - model.sigma.derivative() * milstein_g_k1(model, k - 1)


def milstein_gbar(model: SdeModel, n: int) -> SmoothFunction:
    """gbar_{n,1} for odd n = 2l+1: g_{n+1,2} - V g_{n,1} / 2."""
    if n < 3 or n % 2 == 0:
        raise ValueError(f"gbar is defined for odd n >= 3, got {n}")
    return milstein_g_k2(model, n + 1) - apply_V(milstein_g_k1(model, n), model.sigma) * 0.5


def milstein_g12(model: SdeModel, h) -> SmoothFunction:
    """Compound drift coefficient of the rate-2H limit."""
    h = float(h)
    s, b = model.sigma, model.b
    if b.is_zero:
        return zero()
    s1, s2 = s.derivative(), s.derivative().derivative()
    b1, b2 = b.derivative(), b.derivative().derivative()
    a1 = -(6 * h - 1) / (4 * (1 + 2 * h))
    a2 = -(3 - 2 * h) / (4 * (1 + 2 * h))
    return (s * s2 * b + s * s1 * b1) * a1 + (s1 * s1 * b + s * s * b2) * a2


def cn_g3(model: SdeModel) -> SmoothFunction:
    """(1/12) D^2 sigma."""
    return iterate_D(model.sigma, 2) * (1.0 / 12.0)
