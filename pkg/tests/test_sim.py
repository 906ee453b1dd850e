import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fworst import (
    InvalidArgumentError,
    NumericFailureError,
    SemSpec,
    make_rng,
    riemann_scores,
    second_moment,
    simulate_env,
    solve_scores,
    synthesize_curves,
)
from fworst.basis import EnvLabel, SampledCurve, ScoreTable
from fworst.sim import load_sem_spec, save_sem_spec


def per_dim(M, k=0, nb=10):
    idx = [k, nb + k, 2 * nb + k]
    return M[np.ix_(idx, idx)]


def test_example_spec_structure(example_spec):
    B = example_spec.B
    assert np.count_nonzero(B) == 20
    assert np.all(B[B != 0] == 1.0)
    assert np.all(example_spec.shift_mean[:10] == 0)
    np.testing.assert_array_equal(example_spec.sigma, np.eye(30))
    np.testing.assert_allclose(example_spec.shift_mean[10:], 0.1)
    np.testing.assert_allclose(np.diag(example_spec.shift_cov)[10:], 0.01)


def test_nilpotent_oracle_for_solution_operator(example_spec):
    B = example_spec.B
    np.testing.assert_allclose(example_spec.solution_operator, np.eye(30) + B + B @ B, atol=1e-14)


@pytest.mark.parametrize(
    "block,expected",
    [(1, (1.0, 1.0, 1.0)), (0, (1.0, 0.0, 1.0))],
)
def test_solve_scores_unit_noise_propagation(example_spec, block, expected):
    k = 3
    noise = np.zeros(30)
    noise[block * 10 + k] = 1.0
    s = solve_scores(example_spec, noise, np.zeros(30))
    assert (s[k], s[10 + k], s[20 + k]) == pytest.approx(expected, abs=1e-14)


def test_solve_scores_zero(example_spec):
    assert np.all(solve_scores(example_spec, np.zeros(30), np.zeros(30)) == 0)


def test_solve_scores_residual(example_spec):
    rng = np.random.default_rng(1)
    noise, shift = rng.normal(size=(2, 30))
    s = solve_scores(example_spec, noise, shift)
    res = (np.eye(30) - example_spec.B) @ s - (shift + noise)
    assert np.linalg.norm(res) <= 1e-10 * np.linalg.norm(s)


def test_singular_structure_rejected():
    B = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(NumericFailureError) as err:
        SemSpec(1, 1, B, np.eye(2), np.zeros(2), np.zeros((2, 2)))
    assert err.value.condition is not None


def test_non_psd_noise_rejected():
    with pytest.raises(InvalidArgumentError):
        SemSpec(1, 1, np.zeros((2, 2)), np.diag([1.0, -1.0]), np.zeros(2), np.zeros((2, 2)))


def test_observational_second_moment_per_dim(example_spec):
    sample = simulate_env(example_spec, "O", 100_000, 1.0, 11)
    s = sample.scores.scores
    M = s.T @ s / s.shape[0]
    np.testing.assert_allclose(per_dim(M, 4), [[2, 1, 2], [1, 1, 1], [2, 1, 3]], atol=0.05)


def test_shifted_second_moment_per_dim(example_spec):
    sample = simulate_env(example_spec, "A", 100_000, 1.0, 12)
    s = sample.scores.scores
    M = s.T @ s / s.shape[0]
    blk = per_dim(M, 2)
    assert blk[1, 1] == pytest.approx(1.02, abs=0.05)
    assert blk[2, 2] == pytest.approx(3.06, abs=0.05)
    assert blk[1, 2] == pytest.approx(1.03, abs=0.05)


def test_population_second_moment_matches_hand_values(example_spec):
    blk = per_dim(second_moment(example_spec, "A"), 7)
    np.testing.assert_allclose(blk[1:, 1:], [[1.02, 1.03], [1.03, 3.06]], atol=1e-14)


def test_scale_zero_reproduces_observational(example_spec):
    a = simulate_env(example_spec, "A", 100, 0.0, 5)
    o = simulate_env(example_spec, "O", 100, 1.0, 5)
    np.testing.assert_array_equal(a.scores.scores, o.scores.scores)


def test_determinism(example_spec):
    a = simulate_env(example_spec, "A", 50, 1.0, 99)
    b = simulate_env(example_spec, "A", 50, 1.0, 99)
    assert a.scores.scores.tobytes() == b.scores.scores.tobytes()


def test_zero_samples_rejected(example_spec):
    with pytest.raises(InvalidArgumentError):
        simulate_env(example_spec, "O", 0, 1.0, 0)


def test_shift_independent_of_noise(example_spec):
    n = 100_000
    sample = simulate_env(example_spec, "A", n, 1.0, 3)
    a = sample.shift - sample.shift.mean(axis=0)
    e = sample.noise - sample.noise.mean(axis=0)
    cov = a[:, 10:].T @ e / n
    se = a[:, 10:].std(axis=0)[:, None] * e.std(axis=0)[None, :] / np.sqrt(n)
    # allow a handful of 3-sigma exceedances among 600 pairs
    assert np.mean(np.abs(cov) > 3 * se) < 0.01
    assert np.all(np.abs(cov) < 5 * se)


def test_second_moment_convergence_rate(example_spec):
    M = second_moment(example_spec, "A")
    errs = []
    for n in (1000, 10_000, 100_000):
        s = simulate_env(example_spec, "A", n, 1.0, 21).scores.scores
        errs.append(np.linalg.norm(s.T @ s / n - M))
    slope = np.polyfit(np.log10([1e3, 1e4, 1e5]), np.log10(errs), 1)[0]
    assert -0.8 < slope < -0.3


def test_synthesize_unit_score(sine10):
    scores = np.zeros((1, 30))
    scores[0, 0] = 1.0
    grid = np.linspace(0, 1, 33)
    panel = synthesize_curves(ScoreTable(EnvLabel.O, 10, scores), sine10, grid)
    np.testing.assert_allclose(panel.Y[0], sine10.values(grid)[0], atol=1e-12)
    assert np.all(panel.X == 0)


def test_synthesize_zero(sine10, grid100):
    panel = synthesize_curves(ScoreTable(EnvLabel.A, 10, np.zeros((2, 30))), sine10, grid100)
    assert np.all(panel.Y == 0) and np.all(panel.X == 0)


def test_synthesize_empty_grid(sine10):
    with pytest.raises(InvalidArgumentError):
        synthesize_curves(ScoreTable(EnvLabel.A, 10, np.zeros((2, 30))), sine10, [])


def test_round_trip_scores(example_spec, sine10, grid100):
    sample = simulate_env(example_spec, "A", 20, 1.0, 4)
    panel = synthesize_curves(sample, sine10, grid100)
    est = np.array([riemann_scores(SampledCurve(grid100, panel.Y[i]), sine10) for i in range(20)])
    rms = np.sqrt(np.mean((est - sample.scores.target) ** 2))
    assert rms < 1e-2


def test_json_round_trip(tmp_path, example_spec):
    save_sem_spec(example_spec, tmp_path / "s.json")
    back = load_sem_spec(tmp_path / "s.json")
    assert back.digest() == example_spec.digest()
    data = json.loads((tmp_path / "s.json").read_text())
    assert set(data) >= {"p", "n_basis", "B", "sigma", "shift_mean", "shift_cov"}


def test_make_rng_is_counter_based():
    assert type(make_rng(0).bit_generator).__name__ == "Philox"


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(0.0, 3.0))
def test_solved_moment_formula_matches_sampled_operator(seed, scale):
    rng = np.random.default_rng(seed)
    d = 4
    B = np.triu(rng.normal(size=(d, d)), 1)
    L = rng.normal(size=(d, d))
    spec = SemSpec(1, 2, B, L @ L.T + np.eye(d), rng.normal(size=d), np.eye(d) * 0.3)
    S = np.linalg.inv(np.eye(d) - B)
    inner = spec.sigma + scale**2 * (spec.shift_cov + np.outer(spec.shift_mean, spec.shift_mean))
    np.testing.assert_allclose(second_moment(spec, "A", scale), S @ inner @ S.T, rtol=1e-10, atol=1e-10)
