from __future__ import annotations

import pytest

from fbm_schemes.config import CONFIG_KEYS, ConfigError, load_config, parse_config

BASE = """
# Milstein check
sigma = sin-offset(offset=2)
b = logistic
scheme = milstein:2
h = 0.3
m_levels = 4..6
"""


def test_defaults():
    cfg = parse_config(BASE)
    assert cfg.m_levels == (4, 5, 6)
    assert cfg.m_ref == 12
    assert str(cfg.scheme) == "milstein:2"
    assert cfg.n_paths == 100 and cfg.seed == 0 and cfg.horizon_T == 1
    assert not cfg.model.b_vanishes


def test_colon_syntax_and_lists():
    cfg = parse_config(BASE.replace("m_levels = 4..6", "m_levels: 3, 5,7") + "m_ref: 9  # trailing comment\n")
    assert cfg.m_levels == (3, 5, 7) and cfg.m_ref == 9


@pytest.mark.parametrize("extra, key", [
    ("colour = blue", "colour"),
    ("m_ref = 6", "m_levels"),
    ("h = 0.3", "h"),  # duplicate
    ("n_paths = 0", "n_paths"),
    ("path_format = hdf5", "path_format"),
    ("T = 0", "T"),
    ("seed = abc", "seed"),
])
def test_rejections_name_the_key(extra, key):
    with pytest.raises(ConfigError) as ei:
        parse_config(BASE + extra)
    assert ei.value.key == key
    assert key in str(ei.value)


@pytest.mark.parametrize("h", ["0", "1", "1.5", "-0.2"])
def test_hurst_range(h):
    with pytest.raises(ConfigError, match="h"):
        parse_config(BASE.replace("h = 0.3", f"h = {h}"))


@pytest.mark.parametrize("drop", ["sigma", "b", "scheme", "h", "m_levels"])
def test_required_keys(drop):
    text = "\n".join(line for line in BASE.splitlines() if not line.startswith(drop + " "))
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.key == drop


@pytest.mark.parametrize("key, value", [("sigma", "nope"), ("b", "logistic(3)"), ("scheme", "rk4")])
def test_bad_components(key, value):
    text = "\n".join(f"{key} = {value}" if line.startswith(key + " ") else line for line in BASE.splitlines())
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.key == key


def test_malformed_line():
    with pytest.raises(ConfigError, match="line"):
        parse_config(BASE + "just words\n")


def test_every_key_documented():
    assert all(CONFIG_KEYS[k] for k in CONFIG_KEYS)


def test_load_config(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text(BASE)
    assert load_config(f).h == 0.3
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
