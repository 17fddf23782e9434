from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbm_schemes.grid_fbm import (
    DyadicGrid,
    FbmPath,
    HurstParameter,
    SamplerError,
    SeedSpec,
    fbm_covariance,
    fgn_autocovariance,
    hurst_q,
    increments,
    iter_batches,
    read_path_binary,
    read_path_csv,
    restrict_path,
    sample_fbm,
    sample_fbm_cholesky,
    sample_fbm_circulant,
    write_path_binary,
    write_path_csv,
)


@pytest.mark.parametrize(
    "h, q",
    [(0.3, 3), (0.35, 2), (0.5, 2), (0.25, 4), (0.2, 5), (1 / 3, 3), (0.9, 1), (0.1, 10)],
)
def test_hurst_q(h, q):
    assert hurst_q(h) == q
    assert HurstParameter(h).q == q


@pytest.mark.parametrize("h", [0.0, 1.0, -0.1, 1.5])
def test_hurst_out_of_range(h):
    with pytest.raises(ValueError):
        HurstParameter(h)


def test_grid_basics():
    g = DyadicGrid(3, 2)
    assert g.step == 0.125
    assert g.n_steps == 16
    assert g.n_points == 17
    assert g.points[-1] == 2.0
    assert g.index_of(0.75) == 6
    with pytest.raises(ValueError):
        g.index_of(0.3)
    assert g.coarsen(1) == DyadicGrid(1, 2)
    with pytest.raises(ValueError):
        g.coarsen(4)


def test_covariance_at_half_is_min():
    s = np.array([0.1, 0.4, 0.9])
    t = np.array([0.3, 0.2, 0.9])
    np.testing.assert_allclose(fbm_covariance(s, t, 0.5), np.minimum(s, t), atol=1e-15)


@pytest.mark.parametrize("h", [0.2, 0.5, 0.7])
def test_fgn_autocovariance_from_covariance(h):
    k = np.arange(6)
    direct = fbm_covariance(k + 1.0, 1.0, h) - fbm_covariance(k + 0.0, 1.0, h) \
        - fbm_covariance(k + 1.0, 0.0, h) + fbm_covariance(k + 0.0, 0.0, h)
    np.testing.assert_allclose(fgn_autocovariance(k, h), direct, atol=1e-14)


def test_same_seed_same_path_across_methods_and_batches():
    grid = DyadicGrid(6)
    a = sample_fbm(grid, 0.3, SeedSpec(7, 2))
    b = sample_fbm(grid, 0.3, [SeedSpec(7, i) for i in range(4)], n_paths=4)
    np.testing.assert_array_equal(a.values, b.values[2])
    c = sample_fbm(grid, 0.3, SeedSpec(7, 3))
    assert not np.array_equal(a.values, c.values)


def test_path_starts_at_zero():
    p = sample_fbm_circulant(DyadicGrid(9), 0.25, 1, n_paths=3)
    assert np.all(p.values[:, 0] == 0.0)


@pytest.mark.parametrize("sampler", [sample_fbm_cholesky, sample_fbm_circulant])
@pytest.mark.parametrize("h", [0.25, 0.7])
def test_sampler_covariance(sampler, h):
    grid = DyadicGrid(4)
    n = 20000
    p = sampler(grid, h, 11, n_paths=n)
    x = p.values[:, 1:]
    emp = x.T @ x / n
    t = grid.points[1:]
    exact = fbm_covariance(t[:, None], t[None, :], h)
    se = np.sqrt((exact**2 + np.outer(np.diag(exact), np.diag(exact))) / n)
    assert np.all(np.abs(emp - exact) < 5 * se + 1e-12)


def test_cholesky_guard():
    with pytest.raises(SamplerError):
        sample_fbm_cholesky(DyadicGrid(5), 0.3, 0, max_points=16)


def test_restrict_and_increments():
    p = sample_fbm(DyadicGrid(8), 0.4, 3)
    r = restrict_path(p, 5)
    assert r.grid == DyadicGrid(5)
    np.testing.assert_array_equal(r.values, p.values[::8])
    np.testing.assert_allclose(increments(r).sum(), p.values[-1])
    with pytest.raises(ValueError):
        restrict_path(p, 9)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 7), st.integers(0, 7), st.integers(0, 2**31))
def test_restriction_compatibility(m_fine, m_coarse, seed):
    """Restricting in two hops equals restricting in one."""
    m_coarse = min(m_coarse, m_fine)
    mid = (m_fine + m_coarse) // 2
    p = sample_fbm(DyadicGrid(m_fine), 0.3, seed)
    np.testing.assert_array_equal(restrict_path(restrict_path(p, mid), m_coarse).values,
                                  restrict_path(p, m_coarse).values)


def test_csv_roundtrip(tmp_path):
    p = sample_fbm(DyadicGrid(5, 2), 0.35, SeedSpec(4, 9))
    f = write_path_csv(p, tmp_path / "p.csv")
    q = read_path_csv(f)
    assert q.grid == p.grid and q.h.h == p.h.h and q.seeds == p.seeds
    np.testing.assert_array_equal(q.values, p.values)


def test_binary_roundtrip(tmp_path):
    p = sample_fbm(DyadicGrid(7), 0.2, SeedSpec(1, 0))
    q = read_path_binary(write_path_binary(p, tmp_path / "p.bin"))
    assert q.grid == p.grid and q.seeds == p.seeds
    np.testing.assert_array_equal(q.values, p.values)


def test_binary_rejects_garbage(tmp_path):
    f = tmp_path / "bad.bin"
    f.write_bytes(b"nope" + bytes(64))
    with pytest.raises(ValueError):
        read_path_binary(f)


def test_path_length_checked():
    with pytest.raises(ValueError):
        FbmPath(DyadicGrid(3), 0.3, np.zeros(5))


@pytest.mark.parametrize("n, size", [(10, 3), (5, 5), (1, 100)])
def test_iter_batches_cover(n, size):
    spans = list(iter_batches(n, size))
    assert spans[0][0] == 0 and spans[-1][1] == n
    assert all(b - a <= size for a, b in spans)
    assert all(spans[i][1] == spans[i + 1][0] for i in range(len(spans) - 1))
