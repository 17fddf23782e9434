"""Dyadic time grids and exact sampling of one-dimensional fractional Brownian motion.

Two exact samplers are provided:

* ``sample_fbm_cholesky`` factorizes the covariance matrix of the path values
  (O(n^3) once per (grid, H), cached), suitable for small grids;
* ``sample_fbm_circulant`` embeds the stationary increment covariance in a
  circulant matrix and samples via FFT (Davies-Harte), O(n log n).

Every path is driven by its own counter-based random stream identified by
``SeedSpec(seed, stream_index)``, so ensembles are reproducible regardless of
the order in which paths are produced.  Paths may carry a leading batch axis:
``values`` has shape ``(..., n_points)``.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import linalg

__all__ = [
    "HurstParameter",
    "DyadicGrid",
    "SeedSpec",
    "FbmPath",
    "SamplerError",
    "fbm_covariance",
    "fgn_autocovariance",
    "sample_fbm_cholesky",
    "sample_fbm_circulant",
    "sample_fbm",
    "restrict_path",
    "increments",
    "write_path_csv",
    "read_path_csv",
    "write_path_binary",
    "read_path_binary",
]

CHOLESKY_MAX_POINTS = 2**14
_BOUNDARY_TOL = 1e-12


class SamplerError(RuntimeError):
    """Raised when a sampler cannot produce an exact draw."""


@dataclass(frozen=True)
class HurstParameter:
    h: float

    def __post_init__(self):
        if not (0.0 < float(self.h) < 1.0):
            raise ValueError(f"Hurst parameter must lie in (0, 1), got {self.h}")
        object.__setattr__(self, "h", float(self.h))

    @property
    def q(self) -> int:
        """Smallest integer q with 1/(q+1) < H <= 1/q."""
        return hurst_q(self.h)

    def __float__(self) -> float:
        return self.h


def hurst_q(h: float) -> int:
    h = float(h)
    q = math.floor(1.0 / h)
    # 1/q may be represented just below h in floating point
    if abs(h - 1.0 / (q + 1)) < _BOUNDARY_TOL:
        return q + 1
    if abs(h - 1.0 / q) < _BOUNDARY_TOL:
        return q
    return q


def as_hurst(h) -> HurstParameter:
    return h if isinstance(h, HurstParameter) else HurstParameter(h)


@dataclass(frozen=True)
class DyadicGrid:
    m: int
    horizon_T: int = 1

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 0:
            raise ValueError(f"grid level m must be a non-negative integer, got {self.m}")
        if int(self.horizon_T) != self.horizon_T or self.horizon_T < 1:
            raise ValueError(f"horizon T must be a positive integer, got {self.horizon_T}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "horizon_T", int(self.horizon_T))

    @property
    def step(self) -> float:
        return 2.0 ** (-self.m)

    @property
    def n_steps(self) -> int:
        return self.horizon_T * 2**self.m

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.n_points) * self.step

    def index_of(self, t: float) -> int:
        """Grid index of time ``t``; raises if ``t`` is not a grid point."""
        r = t * 2**self.m
        ri = int(round(r))
        if abs(r - ri) > 1e-9 or ri < 0 or ri > self.n_steps:
            raise ValueError(f"t={t} is not a point of the level-{self.m} grid on [0, {self.horizon_T}]")
        return ri

    def coarsen(self, coarser_m: int) -> "DyadicGrid":
        if not 0 <= coarser_m <= self.m:
            raise ValueError(f"cannot coarsen level {self.m} to level {coarser_m}")
        return DyadicGrid(coarser_m, self.horizon_T)


@dataclass(frozen=True)
class SeedSpec:
    seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & (2**64 - 1), spawn_key=(int(self.stream_index),))
        return np.random.Generator(np.random.Philox(ss))


@dataclass
class FbmPath:
    grid: DyadicGrid
    h: HurstParameter
    values: np.ndarray
    seeds: tuple[SeedSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.h = as_hurst(self.h)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[-1] != self.grid.n_points:
            raise ValueError(
                f"path has {self.values.shape[-1]} points, grid level {self.grid.m} needs {self.grid.n_points}"
            )

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.values.shape[:-1]

    def __len__(self) -> int:
        return self.values.shape[-1]

    def path(self, i: int) -> "FbmPath":
        """Single path ``i`` out of a batch."""
        seeds = (self.seeds[i],) if len(self.seeds) > i else ()
        return FbmPath(self.grid, self.h, self.values[i], seeds)


def fbm_covariance(s, t, h) -> np.ndarray | float:
    """E[B_s B_t] = (|s|^{2H} + |t|^{2H} - |t-s|^{2H}) / 2."""
    H2 = 2.0 * float(as_hurst(h).h)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    out = 0.5 * (np.abs(s) ** H2 + np.abs(t) ** H2 - np.abs(t - s) ** H2)
    return float(out) if out.ndim == 0 else out


def fgn_autocovariance(k, h) -> np.ndarray:
    """Autocovariance of unit-step fractional Gaussian noise at integer lags ``k``."""
    H2 = 2.0 * float(as_hurst(h).h)
    k = np.abs(np.asarray(k, dtype=float))
    return 0.5 * (np.abs(k + 1) ** H2 + np.abs(k - 1) ** H2 - 2.0 * k**H2)


def _seed_list(seed: SeedSpec | int | Sequence[SeedSpec], n_paths: int | None) -> list[SeedSpec]:
    if isinstance(seed, SeedSpec):
        if n_paths is None:
            return [seed]
        return [SeedSpec(seed.seed, seed.stream_index + i) for i in range(n_paths)]
    if isinstance(seed, (int, np.integer)):
        return [SeedSpec(int(seed), i) for i in range(1 if n_paths is None else n_paths)]
    return list(seed)


@functools.lru_cache(maxsize=16)
def _cholesky_factor(m: int, T: int, h: float) -> np.ndarray:
    grid = DyadicGrid(m, T)
    tt = grid.points[1:]
    cov = fbm_covariance(tt[:, None], tt[None, :], h)
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise SamplerError(
            f"fBm covariance not numerically positive definite at level m={m}, H={h}"
        ) from exc


def sample_fbm_cholesky(
    grid: DyadicGrid,
    h,
    seed: SeedSpec | int | Sequence[SeedSpec],
    n_paths: int | None = None,
    max_points: int = CHOLESKY_MAX_POINTS,
) -> FbmPath:
    """Exact fBm draw(s) on ``grid`` by Cholesky factorization of the covariance.

    With ``n_paths=None`` and a single ``SeedSpec`` a single path is returned;
    otherwise the batch uses consecutive stream indices starting at the given one.
    """
    h = as_hurst(h)
    if grid.n_steps > max_points:
        raise SamplerError(
            f"{grid.n_steps} grid points exceed the Cholesky guard ({max_points}); "
            "use sample_fbm_circulant for large grids"
        )
    L = _cholesky_factor(grid.m, grid.horizon_T, h.h)
    seeds = _seed_list(seed, n_paths)
    vals = np.zeros((len(seeds), grid.n_points))
    # one matrix-vector product per path keeps each path bitwise independent of the batch
    for i, s in enumerate(seeds):
        vals[i, 1:] = L @ s.generator().standard_normal(grid.n_steps)
    if n_paths is None and len(seeds) == 1:
        vals = vals[0]
    return FbmPath(grid, h, vals, tuple(seeds))


@functools.lru_cache(maxsize=16)
def _circulant_sqrt_eigs(n: int, h: float, max_doublings: int) -> np.ndarray:
    size = 1 << max(1, (n - 1).bit_length())  # half-size of the embedding, >= n
    for _ in range(max_doublings + 1):
        gamma = fgn_autocovariance(np.arange(size + 1), h)
        row = np.concatenate([gamma, gamma[-2:0:-1]])
        eig = np.fft.rfft(row).real
        if eig.min() >= -1e-10 * eig.max():
            return np.sqrt(np.clip(eig, 0.0, None) / (2 * size))
        size *= 2
    raise SamplerError(
        f"circulant embedding has negative eigenvalues for H={h} after {max_doublings} doublings"
    )


def _fgn_circulant(n: int, h: float, rng: np.random.Generator, max_doublings: int) -> np.ndarray:
    sq = _circulant_sqrt_eigs(n, h, max_doublings)
    M = 2 * (len(sq) - 1)
    # Hermitian-symmetric complex Gaussian weights; irfft gives a real stationary draw
    w = rng.standard_normal(len(sq)) + 1j * rng.standard_normal(len(sq))
    w[0] = math.sqrt(2.0) * w[0].real
    w[-1] = math.sqrt(2.0) * w[-1].real
    x = np.fft.irfft(sq * w, n=M) * M / math.sqrt(2.0)
    return x[:n]


def sample_fbm_circulant(
    grid: DyadicGrid,
    h,
    seed: SeedSpec | int | Sequence[SeedSpec],
    n_paths: int | None = None,
    max_doublings: int = 6,
) -> FbmPath:
    """Exact fBm draw(s) on ``grid`` via circulant embedding of the increments."""
    h = as_hurst(h)
    seeds = _seed_list(seed, n_paths)
    n = grid.n_steps
    scale = grid.step**h.h
    vals = np.zeros((len(seeds), grid.n_points))
    for i, s in enumerate(seeds):
        vals[i, 1:] = np.cumsum(_fgn_circulant(n, h.h, s.generator(), max_doublings)) * scale
    if n_paths is None and len(seeds) == 1:
        vals = vals[0]
    return FbmPath(grid, h, vals, tuple(seeds))


def sample_fbm(grid: DyadicGrid, h, seed, n_paths: int | None = None, method: str = "auto") -> FbmPath:
    """Dispatch to the Cholesky sampler for small grids and the circulant one otherwise."""
    if method == "auto":
        method = "cholesky" if grid.n_steps <= 256 else "circulant"
    if method == "cholesky":
        return sample_fbm_cholesky(grid, h, seed, n_paths)
    if method == "circulant":
        return sample_fbm_circulant(grid, h, seed, n_paths)
    raise ValueError(f"unknown sampler {method!r}")


def restrict_path(path: FbmPath, coarser_m: int) -> FbmPath:
    """Subsample ``path`` onto the level-``coarser_m`` grid (values copied unchanged)."""
    m = path.grid.m
    if coarser_m > m:
        raise ValueError(f"cannot restrict a level-{m} path to the finer level {coarser_m}")
    if coarser_m < 0:
        raise ValueError("coarser_m must be non-negative")
    stride = 2 ** (m - coarser_m)
    return FbmPath(path.grid.coarsen(coarser_m), path.h, path.values[..., ::stride].copy(), path.seeds)


def increments(path: FbmPath | np.ndarray) -> np.ndarray:
    vals = path.values if isinstance(path, FbmPath) else np.asarray(path)
    return np.diff(vals, axis=-1)


# -- serialization ----------------------------------------------------------

def _header_fields(path: FbmPath, i: int) -> dict:
    s = path.seeds[i] if len(path.seeds) > i else SeedSpec(-1, -1)
    return {"m": path.grid.m, "T": path.grid.horizon_T, "H": repr(path.h.h),
            "seed": s.seed, "stream": s.stream_index}


def write_path_csv(path: FbmPath, filename, extra_columns: dict | None = None) -> Path:
    """Write one path: a ``# key=value`` header, then ``t,value[,extra...]`` rows."""
    filename = Path(filename)
    if path.values.ndim != 1:
        raise ValueError("write_path_csv expects a single path; use FbmPath.path(i)")
    hdr = _header_fields(path, 0)
    cols = ["t", "value"] + list(extra_columns or {})
    extra = [np.asarray(v) for v in (extra_columns or {}).values()]
    with open(filename, "w") as fh:
        fh.write("# " + ",".join(f"{k}={v}" for k, v in hdr.items()) + "\n")
        fh.write(",".join(cols) + "\n")
        for r, (t, v) in enumerate(zip(path.grid.points, path.values)):
            row = [repr(float(t)), repr(float(v))] + [repr(float(e[r])) for e in extra]
            fh.write(",".join(row) + "\n")
    return filename


def _parse_header(line: str) -> dict:
    items = dict(kv.split("=", 1) for kv in line.lstrip("#").strip().split(","))
    return items


def read_path_csv(filename) -> FbmPath:
    with open(filename) as fh:
        hdr = _parse_header(fh.readline())
        fh.readline()
        vals = [float(line.split(",")[1]) for line in fh if line.strip()]
    grid = DyadicGrid(int(hdr["m"]), int(hdr["T"]))
    return FbmPath(grid, HurstParameter(float(hdr["H"])), np.array(vals),
                   (SeedSpec(int(hdr["seed"]), int(hdr["stream"])),))


_MAGIC = b"FBMP"
_HDR = struct.Struct("<4siidqq")


def write_path_binary(path: FbmPath, filename) -> Path:
    """Little-endian layout: magic, m, T, H, seed, stream, then float64 values."""
    filename = Path(filename)
    if path.values.ndim != 1:
        raise ValueError("write_path_binary expects a single path")
    s = path.seeds[0] if path.seeds else SeedSpec(-1, -1)
    with open(filename, "wb") as fh:
        fh.write(_HDR.pack(_MAGIC, path.grid.m, path.grid.horizon_T, path.h.h, s.seed, s.stream_index))
        fh.write(np.ascontiguousarray(path.values, dtype="<f8").tobytes())
    return filename


def read_path_binary(filename) -> FbmPath:
    raw = Path(filename).read_bytes()
    magic, m, T, h, seed, stream = _HDR.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{filename}: not an fBm path file")
    vals = np.frombuffer(raw, dtype="<f8", offset=_HDR.size).copy()
    return FbmPath(DyadicGrid(m, T), HurstParameter(h), vals, (SeedSpec(seed, stream),))


def iter_batches(n_paths: int, batch_size: int) -> Iterable[tuple[int, int]]:
    for start in range(0, n_paths, batch_size):
        yield start, min(n_paths, start + batch_size)
