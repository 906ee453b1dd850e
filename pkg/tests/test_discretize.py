import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fworst import InvalidArgumentError, delta_partition, make_fourier_sine_basis, make_split, project_piecewise, truncate
from fworst.discretize import (
    Partition,
    default_delta,
    default_truncation_index,
    delta_partition_mask,
    project_masked,
)


def random_smooth_curves(n, m=400, seed=0, n_basis=8):
    rng = np.random.default_rng(seed)
    b = make_fourier_sine_basis(n_basis)
    t = np.linspace(0, 1, m)
    coef = rng.normal(size=(n, n_basis)) / np.arange(1, n_basis + 1)
    return t, coef @ b.values(t)


def test_constant_curves_give_endpoints_only():
    t = np.linspace(0, 1, 50)
    part = delta_partition(np.full((3, 50), 2.0), t, 0.1)
    np.testing.assert_array_equal(part.points, [0.0, 1.0])


def test_ramp_crossing_times():
    t = np.linspace(0, 1, 1000)
    part = delta_partition(t, t, 0.25)
    step = t[1] - t[0]
    np.testing.assert_allclose(part.points, [0, 0.25, 0.5, 0.75, 1.0], atol=step + 1e-12)


def test_tiny_delta_gives_full_grid():
    t = np.linspace(0, 1, 40)
    part = delta_partition(t, t, 1e-6)
    np.testing.assert_array_equal(part.points, t)


@pytest.mark.parametrize("delta", [0.0, -1.0])
def test_nonpositive_delta_rejected(delta):
    with pytest.raises(InvalidArgumentError):
        delta_partition(np.zeros(5), np.linspace(0, 1, 5), delta)


def test_full_grid_projection_is_identity():
    t, X = random_smooth_curves(1)
    part = Partition(t, np.arange(t.size))
    np.testing.assert_array_equal(project_piecewise(X[0], t, part), X[0])


def test_ramp_staircase():
    t = np.linspace(0, 1, 1001)
    part = delta_partition(t, t, 0.25)
    proj = project_piecewise(t, t, part)
    treads = np.unique(proj[:-1])
    np.testing.assert_allclose(treads, [0, 0.25, 0.5, 0.75], atol=1e-3)


def test_off_grid_partition_rejected():
    t = np.linspace(0, 1, 11)
    with pytest.raises(InvalidArgumentError):
        project_piecewise(t, t, Partition(np.array([0.0, 0.55, 1.0]), np.array([0, 5, 10])))


def test_projection_error_bounded_on_random_curves():
    t, X = random_smooth_curves(100, seed=3)
    for x in X:
        part = delta_partition(x, t, 0.1)
        assert np.abs(project_piecewise(x, t, part) - x).max() <= 0.1


def test_partition_invariant_between_points():
    t, X = random_smooth_curves(20, seed=5)
    mask = delta_partition_mask(X.reshape(4, 5, -1), 0.2)
    for i in range(4):
        idx = np.flatnonzero(mask[i])
        for a, b in zip(idx[:-1], idx[1:]):
            seg = X.reshape(4, 5, -1)[i][:, a + 1 : b]
            assert np.all(np.abs(seg - X.reshape(4, 5, -1)[i][:, [a]]) < 0.2)


def test_joint_monitoring_uses_any_coordinate():
    t = np.linspace(0, 1, 11)
    flat = np.zeros(11)
    jump = np.where(t >= 0.5, 1.0, 0.0)
    part = delta_partition(np.vstack([flat, jump]), t, 0.5)
    assert 0.5 in part.points


def test_batch_projection_matches_single():
    t, X = random_smooth_curves(6, seed=8)
    vals = X.reshape(3, 2, -1)
    mask = delta_partition_mask(vals, 0.15)
    batch = project_masked(vals, mask)
    for i in range(3):
        part = delta_partition(vals[i], t, 0.15)
        np.testing.assert_array_equal(batch[i], project_piecewise(vals[i], t, part))


def test_truncate_small_component_unchanged():
    t = np.linspace(0, 1, 501)
    f = 0.5 * np.ones((1, 501))
    np.testing.assert_array_equal(truncate(f, 2.0, grid=t), f)


def test_truncate_large_component_becomes_constant():
    b = make_fourier_sine_basis(4)
    t = np.linspace(0, 1, 501)
    f = np.vstack([10 * b.values(t)[0], 0.1 * b.values(t)[1]])
    out = truncate(f, 2.0, grid=t)
    np.testing.assert_array_equal(out[0], 2.0)
    np.testing.assert_array_equal(out[1], f[1])


def test_truncate_coefficients_project_constant():
    b = make_fourier_sine_basis(4)
    out = truncate(np.array([[10.0, 0, 0, 0]]), 2.0, basis=b)
    # sine functions have zero mean: projection of a constant vanishes
    np.testing.assert_allclose(out, 0.0, atol=1e-10)


def test_truncate_identity_when_all_small():
    rng = np.random.default_rng(0)
    f = rng.normal(size=(3, 5, 4)) * 0.1
    np.testing.assert_array_equal(truncate(f, 1.5, basis=make_fourier_sine_basis(4)), f)


@pytest.mark.parametrize("M", [1.0, 0.5])
def test_truncate_rejects_small_M(M):
    with pytest.raises(InvalidArgumentError):
        truncate(np.zeros((1, 3)), M, basis=make_fourier_sine_basis(3))


@pytest.mark.parametrize("n,sizes", [(1000, (500, 250, 250)), (4, (2, 1, 1))])
def test_split_sizes(n, sizes):
    plan = make_split(n, (0.5, 0.25, 0.25), 1)
    assert plan.sizes == sizes
    all_idx = np.concatenate([plan.main_indices, plan.denom_indices, plan.eigen_indices])
    assert len(set(all_idx.tolist())) == len(all_idx)


def test_split_deterministic():
    a, b = make_split(100, rng_seed=7), make_split(100, rng_seed=7)
    for x, y in zip((a.main_indices, a.denom_indices, a.eigen_indices), (b.main_indices, b.denom_indices, b.eigen_indices)):
        np.testing.assert_array_equal(x, y)


def test_split_empty_set_rejected():
    with pytest.raises(InvalidArgumentError):
        make_split(3, (0.5, 0.25, 0.25), 0)


def test_default_rates():
    assert default_delta(10_000) == pytest.approx(0.1)
    # ceil(n^(1/4)) = 10, capped by floor(n^(1/8)) = 3
    assert default_truncation_index(10_000, 10) == 3
    assert default_truncation_index(1, 10) == 1


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), delta=st.floats(0.01, 2.0))
def test_projection_bound_property(seed, delta):
    t, X = random_smooth_curves(3, m=150, seed=seed)
    part = delta_partition(X, t, delta)
    proj = project_piecewise(X, t, part)
    assert np.abs(proj - X).max() <= delta
    assert part.points[0] == t[0] and part.points[-1] == t[-1]
