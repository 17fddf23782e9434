"""Discrete Stieltjes sums, Hermite variations, iterated integrals and the
universal constants of the variation limit theorems."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .calculus import gaussian_moment_kappa, hermite
from .grid_fbm import DyadicGrid, FbmPath, as_hurst

__all__ = [
    "TwoVariableKernel",
    "VariationConstant",
    "increment_kernel",
    "time_kernel",
    "power_kernel",
    "centered_power_kernel",
    "hermite_variation_kernel",
    "iterated_integral_kernels",
    "stieltjes_sum",
    "fgn_correlation",
    "b10star_covariance",
    "c_l_constant",
    "c_10star_constant",
]

DEFAULT_REFINEMENT_GAP = 6


@dataclass(frozen=True)
class TwoVariableKernel:
    """Values x_{tau_r, tau_{r+1}} of a two-parameter process on a dyadic grid.

    ``values`` has shape ``(..., n_steps)``; leading axes are path batches.
    """

    name: str
    grid: DyadicGrid
    values: np.ndarray

    def __post_init__(self):
        if np.shape(self.values)[-1] != self.grid.n_steps:
            raise ValueError(f"kernel {self.name}: expected {self.grid.n_steps} interval values")

    def eval(self, r: int):
        return self.values[..., r]


@dataclass(frozen=True)
class VariationConstant:
    name: str
    h: float
    value: float
    truncation_terms: int
    truncation_error_bound: float


# -- kernels ---------------------------------------------------------------

def increment_kernel(path: FbmPath) -> TwoVariableKernel:
    return TwoVariableKernel("dB", path.grid, np.diff(path.values, axis=-1))


def time_kernel(grid: DyadicGrid) -> TwoVariableKernel:
    return TwoVariableKernel("dt", grid, np.full(grid.n_steps, grid.step))


def power_kernel(k: int, path: FbmPath) -> TwoVariableKernel:
    return TwoVariableKernel(f"dB^{k}", path.grid, np.diff(path.values, axis=-1) ** k)


def centered_power_kernel(k: int, path: FbmPath) -> TwoVariableKernel:
    """dB^k - kappa_k dt^{kH} for even k; plain dB^k for odd k."""
    dB = np.diff(path.values, axis=-1)
    vals = dB**k
    if k % 2 == 0:
        vals = vals - gaussian_moment_kappa(k) * path.grid.step ** (k * path.h.h)
    return TwoVariableKernel(f"Btilde^({k})", path.grid, vals)


def hermite_variation_kernel(l: int, path: FbmPath, h=None) -> TwoVariableKernel:
    """V^{(l)}_{s,t} = (t-s)^{1/2} H_l((t-s)^{-H} dB_{s,t})."""
    if l < 1:
        raise ValueError("l must be >= 1")
    H = path.h.h if h is None else float(as_hurst(h).h)
    dt = path.grid.step
    x = np.diff(path.values, axis=-1) * dt ** (-H)
    return TwoVariableKernel(f"V^({l})", path.grid, math.sqrt(dt) * hermite(l, x))


def iterated_integral_kernels(path_fine: FbmPath, target_m: int,
                              gap: int = DEFAULT_REFINEMENT_GAP) -> dict[str, TwoVariableKernel]:
    """Quadrature proxies for B^{10}, B^{01}, B^{10*}, B^{110*}, B^{101*}, B^{011*}.

    The path must be sampled at least ``gap`` binary levels finer than
    ``target_m``.  Time integrals use the trapezoid rule, the dB-integral of
    B^{10} uses the trapezoid (Young) rule, and B^{011} follows from the shuffle
    identity dB * B^{01} = 2 B^{011} + B^{101}.
    """
    m = path_fine.grid.m
    if m - target_m < gap:
        raise ValueError(
            f"refinement gap {m - target_m} is below the required {gap} levels "
            f"(path level {m}, target level {target_m})"
        )
    H = path_fine.h.h
    sub = 2 ** (m - target_m)
    du = path_fine.grid.step
    n_coarse = path_fine.grid.horizon_T * 2**target_m
    vals = path_fine.values
    blocks = vals[..., : n_coarse * sub + 1]
    # (..., n_coarse, sub+1) windows sharing endpoints
    idx = np.arange(n_coarse)[:, None] * sub + np.arange(sub + 1)[None, :]
    W = blocks[..., idx]
    X = W - W[..., :1]  # B_u - B_s inside each coarse interval
    h = sub * du
    dB = X[..., -1]

    def trap(f):
        return du * (f[..., 1:-1].sum(axis=-1) + 0.5 * (f[..., 0] + f[..., -1]))

    def cumtrap(f):
        out = np.zeros_like(f)
        out[..., 1:] = np.cumsum(0.5 * du * (f[..., 1:] + f[..., :-1]), axis=-1)
        return out

    b10_run = cumtrap(X)
    b10 = b10_run[..., -1]
    b01 = h * dB - b10
    b110 = trap(0.5 * X**2)
    b101 = np.sum(0.5 * (b10_run[..., 1:] + b10_run[..., :-1]) * np.diff(X, axis=-1), axis=-1)
    b011 = 0.5 * (dB * b01 - b101)
    c = h ** (1 + 2 * H) / (2 * (1 + 2 * H))
    grid = DyadicGrid(target_m, path_fine.grid.horizon_T)
    raw = {
        "10": b10,
        "01": b01,
        "10*": b10 - 0.5 * dB * h,
        "110*": b110 - c,
        "101*": b101 + (1 - 2 * H) * c,
        "011*": b011 - c,
    }
    return {k: TwoVariableKernel(k, grid, v) for k, v in raw.items()}


def stieltjes_sum(weights, kernel: TwoVariableKernel, t: float | None = None,
                  backward: bool = False):
    """sum_{r < 2^m t} w_r K_r (forward) or w_{r+1} K_r (backward).

    ``weights`` are values at grid points, shape ``(..., n_points)``, or a scalar.
    """
    grid = kernel.grid
    n = grid.n_steps if t is None else grid.index_of(t)
    w = np.asarray(weights, dtype=float)
    if w.ndim == 0:
        wr = w
    else:
        if w.shape[-1] != grid.n_points:
            raise ValueError("weights must be given at every grid point")
        wr = w[..., 1: n + 1] if backward else w[..., :n]
    return np.sum(wr * kernel.values[..., :n], axis=-1)


# -- constants --------------------------------------------------------------

def _second_diff(p: float, r: np.ndarray) -> np.ndarray:
    """(r+1)^p - 2 r^p + (r-1)^p for r >= 1, without large-r cancellation.

    For r >= 8 the even binomial series 2 sum_j C(p, 2j) r^{-2j} is summed
    directly; 12 terms reach machine precision there.
    """
    r = np.asarray(r, dtype=float)
    out = np.empty_like(r)
    small = r < 8
    rs = r[small]
    a = np.expm1(p * np.log1p(1.0 / rs))
    with np.errstate(divide="ignore"):
        b = np.expm1(p * np.log1p(-1.0 / rs))
    out[small] = rs**p * (a + b)
    x2 = r[~small] ** -2.0
    acc = np.zeros_like(x2)
    coef, power = 1.0, np.ones_like(x2)
    for j in range(1, 13):
        coef *= (p - 2 * j + 2) * (p - 2 * j + 1) / ((2 * j - 1) * (2 * j))
        power = power * x2
        acc += coef * power
    out[~small] = 2.0 * r[~small] ** p * acc
    return out


def _first_diff(p: float, r: np.ndarray) -> np.ndarray:
    """(r+1)^p - (r-1)^p for r >= 1."""
    a = np.expm1(p * np.log1p(1.0 / r))
    with np.errstate(divide="ignore"):
        b = np.expm1(p * np.log1p(-1.0 / r))
    return r**p * (a - b)


def fgn_correlation(r, h) -> np.ndarray:
    """rho(r) = E[dB_{0,1} dB_{r,r+1}] for integer lags r >= 1."""
    r = np.asarray(r, dtype=float)
    return 0.5 * _second_diff(2 * float(as_hurst(h).h), r)


def b10star_covariance(r, h) -> np.ndarray:
    """E[B^{10*}_{0,1} B^{10*}_{r,r+1}] for integer r >= 0.

    With B^{10*}_{a,a+1} = int_a^{a+1} (1/2 - (s-a)) dB_s the covariance is
    -1/2 times the |x-y|^{2H} energy of the signed measure
    du - (delta_a + delta_{a+1})/2 paired across the two intervals.
    """
    H = float(as_hurst(h).h)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(r)
    zero = r == 0
    out[zero] = (1 - H) / (4 * (1 + H))
    rr = r[~zero]
    if rr.size:
        out[~zero] = (
            -_second_diff(2 * H + 2, rr) / (2 * (2 * H + 1) * (2 * H + 2))
            + _first_diff(2 * H + 1, rr) / (2 * (2 * H + 1))
            - (2 * rr ** (2 * H) + (rr + 1) ** (2 * H) + (rr - 1) ** (2 * H)) / 8
        )
    return out


def _chunked_sum(term, start: int, stop: int, chunk: int = 2**20) -> float:
    parts = []
    for a in range(stop - 1, start - 1, -chunk):  # smallest terms first
        lo = max(start, a - chunk + 1)
        parts.append(float(np.sum(term(np.arange(a, lo - 1, -1, dtype=float)))))
    return math.fsum(parts)


def c_l_constant(l: int, h, tol: float = 1e-12, terms: int | None = None,
                 max_terms: int = 10**8) -> VariationConstant:
    """C_(l) with C_(l)^2 = l! (1 + 2 sum_{r>=1} rho(r)^l), the long-run
    variance of the normalized Hermite variation.

    The lag sum is truncated where the integral tail bound
    |rho(r)| <= H|1-2H| (r-1)^{2H-2} guarantees ``tol`` on C_(l); ``terms``
    forces a fixed truncation instead.
    """
    if l < 2:
        raise ValueError("l must be >= 2")
    H = float(as_hurst(h).h)
    if H > 0.5:
        raise ValueError("C_(l) is implemented for 0 < H <= 1/2")
    fl = math.factorial(l)
    if H == 0.5:
        return VariationConstant(f"C_({l})", H, math.sqrt(fl), 0, 0.0)
    c = (H * (1 - 2 * H)) ** l
    decay = l * (2 - 2 * H) - 1

    def tail(R):  # bound on sum_{r>R} |rho|^l, R >= 2
        return c * (R - 1) ** (-decay) / decay

    if terms is None:
        # value = sqrt(S) so an error e in S moves it by at most e / (2 sqrt(l!))
        target = 0.5 * tol * math.sqrt(fl) / fl  # l! tail / C_(l) <= tol, with slack
        R = int(math.ceil(1 + (c / (decay * target)) ** (1 / decay)))
        R = max(R, 16)
        if R > max_terms:
            raise ValueError(f"C_({l}) at H={H}: tolerance {tol} needs {R} terms (cap {max_terms})")
    else:
        R = int(terms)
    s = _chunked_sum(lambda r: fgn_correlation(r, H) ** l, 1, R + 1)
    value = math.sqrt(fl * (1 + 2 * s))
    bound = fl * tail(max(R, 2)) / value
    return VariationConstant(f"C_({l})", H, value, R, bound)


def c_10star_constant(h, tol: float = 1e-10, terms: int | None = None,
                      max_terms: int = 10**8) -> VariationConstant:
    """C_10* = sqrt(Var B^{10*}_{0,1} + 2 sum_{r>=1} Cov(B^{10*}_{0,1}, B^{10*}_{r,r+1})).

    Lag covariances decay like r^{2H-4}; the tail bound uses twice the leading
    asymptotic constant |f''''| / 288 with f(x) = x^{2H}.
    """
    H = float(as_hurst(h).h)
    if not 0 < H <= 0.5:
        raise ValueError("C_10* is implemented for 0 < H <= 1/2")
    c4 = abs(2 * H * (2 * H - 1) * (2 * H - 2) * (2 * H - 3)) / 144.0
    decay = 3 - 2 * H

    def tail(R):
        return c4 * (R - 1) ** (-decay) / decay

    v0 = float(b10star_covariance(0, H)[0])
    if terms is None:
        target = tol * math.sqrt(max(v0, 1e-300))
        R = max(16, int(math.ceil(1 + (c4 / (decay * target)) ** (1 / decay))))
        if R > max_terms:
            raise ValueError(f"C_10* at H={H}: tolerance {tol} needs {R} terms")
    else:
        R = int(terms)
    s = _chunked_sum(lambda r: b10star_covariance(r, H), 1, R + 1)
    var = v0 + 2 * s
    value = math.sqrt(max(var, 0.0))
    bound = 2 * tail(max(R, 2)) / max(value, 1e-300)
    return VariationConstant("C_10*", H, value, R, bound)
