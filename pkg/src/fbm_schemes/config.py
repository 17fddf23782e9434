"""Flat ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored.  Every key is documented in
``CONFIG_KEYS``; unknown keys are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .calculus import SdeModel, parse_fixture
from .schemes import CN_MAX_ITER, CN_TOL, SchemeSpec, parse_scheme

__all__ = ["ConfigError", "ExperimentConfig", "CONFIG_KEYS", "parse_config", "load_config"]


class ConfigError(ValueError):
    def __init__(self, key: str | None, message: str):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


CONFIG_KEYS = {
    "sigma": "diffusion fixture, e.g. 'sin-offset(offset=2)', 'affine(slope=1)', 'logistic'",
    "b": "drift fixture (same syntax; 'zero' for a driftless model)",
    "y0": "initial value (default 1.0)",
    "scheme": "'em', 'cn' or 'milstein:k'",
    "h": "Hurst parameter in (0, 1)",
    "T": "integer horizon (default 1)",
    "m_levels": "coarse levels, 'a..b' or comma list",
    "m_ref": "reference level (default max(m_levels) + 6)",
    "n_paths": "number of Monte-Carlo paths (default 100)",
    "seed": "master seed (default 0)",
    "batch_size": "paths integrated together (default 100)",
    "workers": "worker processes (default 1)",
    "order_margin": "reference Milstein order above q + 1 (default 1)",
    "cn_tol": f"Crank-Nicolson fixed-point tolerance (default {CN_TOL})",
    "cn_max_iter": f"Crank-Nicolson iteration cap (default {CN_MAX_ITER})",
    "output_dir": "directory for CSV/JSON/figure output (default 'out')",
    "path_format": "'csv' or 'binary' for sample-fbm (default csv)",
    "slope_tol": "allowed deviation of the fitted rate slope (default 0.08)",
    "ratio_low": "lower bound on the median ratio (default 0.8)",
    "ratio_high": "upper bound on the median ratio (default 1.2)",
    "ks_alpha": "KS p-value threshold (default 0.01)",
    "se_factor": "standard errors allowed for correlation checks (default 3)",
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: SdeModel
    scheme: SchemeSpec
    h: float
    m_levels: tuple[int, ...]
    m_ref: int
    horizon_T: int = 1
    n_paths: int = 100
    seed: int = 0
    batch_size: int = 100
    workers: int = 1
    order_margin: int = 1
    output_dir: Path = Path("out")
    path_format: str = "csv"
    slope_tol: float = 0.08
    ratio_low: float = 0.8
    ratio_high: float = 1.2
    ks_alpha: float = 0.01
    se_factor: float = 3.0
    raw: dict = field(default_factory=dict, compare=False)


_LINE = re.compile(r"^\s*([A-Za-z_]\w*)\s*[=:]\s*(.*?)\s*$")


def _levels(key: str, text: str) -> tuple[int, ...]:
    try:
        if ".." in text:
            a, b = text.split("..")
            out = tuple(range(int(a), int(b) + 1))
        else:
            out = tuple(int(v) for v in text.replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(key, f"cannot parse level list {text!r}") from None
    if not out or any(m < 0 for m in out):
        raise ConfigError(key, "levels must be a non-empty list of non-negative integers")
    return out


def _num(key: str, text: str, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(key, f"expected {kind.__name__}, got {text!r}") from None


def parse_config(text: str) -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        mt = _LINE.match(line)
        if not mt:
            raise ConfigError(None, f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = mt.group(1), mt.group(2)
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown configuration key")
        if key in raw:
            raise ConfigError(key, "duplicate key")
        raw[key] = value
    for key in ("sigma", "b", "scheme", "h", "m_levels"):
        if key not in raw:
            raise ConfigError(key, "required key is missing")

    h = _num("h", raw["h"])
    if not 0 < h < 1:
        raise ConfigError("h", f"Hurst parameter must lie in (0, 1), got {h}")
    try:
        sigma = parse_fixture(raw["sigma"])
    except (KeyError, ValueError) as exc:
        raise ConfigError("sigma", str(exc)) from None
    try:
        b = parse_fixture(raw["b"])
    except (KeyError, ValueError) as exc:
        raise ConfigError("b", str(exc)) from None
    cn_tol = _num("cn_tol", raw.get("cn_tol", str(CN_TOL)))
    cn_max_iter = _num("cn_max_iter", raw.get("cn_max_iter", str(CN_MAX_ITER)), int)
    try:
        scheme = parse_scheme(raw["scheme"], cn_tol, cn_max_iter)
    except ValueError as exc:
        raise ConfigError("scheme", str(exc)) from None
    levels = _levels("m_levels", raw["m_levels"])
    m_ref = _num("m_ref", raw.get("m_ref", str(max(levels) + 6)), int)
    if max(levels) >= m_ref:
        raise ConfigError("m_levels", f"all levels must be below m_ref={m_ref}")
    T = _num("T", raw.get("T", "1"), int)
    if T < 1:
        raise ConfigError("T", "horizon must be a positive integer")
    n_paths = _num("n_paths", raw.get("n_paths", "100"), int)
    if n_paths < 1:
        raise ConfigError("n_paths", "need at least one path")
    fmt = raw.get("path_format", "csv")
    if fmt not in ("csv", "binary"):
        raise ConfigError("path_format", "must be 'csv' or 'binary'")
    y0 = _num("y0", raw.get("y0", "1.0"))
    model = SdeModel(sigma, b, y0, f"sigma={raw['sigma']};b={raw['b']}")
    return ExperimentConfig(
        model=model,
        scheme=scheme,
        h=h,
        m_levels=levels,
        m_ref=m_ref,
        horizon_T=T,
        n_paths=n_paths,
        seed=_num("seed", raw.get("seed", "0"), int),
        batch_size=max(1, _num("batch_size", raw.get("batch_size", "100"), int)),
        workers=max(1, _num("workers", raw.get("workers", "1"), int)),
        order_margin=_num("order_margin", raw.get("order_margin", "1"), int),
        output_dir=Path(raw.get("output_dir", "out")),
        path_format=fmt,
        slope_tol=_num("slope_tol", raw.get("slope_tol", "0.08")),
        ratio_low=_num("ratio_low", raw.get("ratio_low", "0.8")),
        ratio_high=_num("ratio_high", raw.get("ratio_high", "1.2")),
        ks_alpha=_num("ks_alpha", raw.get("ks_alpha", "0.01")),
        se_factor=_num("se_factor", raw.get("se_factor", "3")),
        raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(None, f"cannot read config {path}: {exc}") from None
    return parse_config(text)
