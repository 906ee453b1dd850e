import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fworst import (
    InvalidArgumentError,
    SemSpec,
    check_decomposition,
    make_fourier_sine_basis,
    population_grammians,
    risk_closed_form,
    risk_continuity_probe,
    risk_mc,
    solve_grammian,
)
from fworst.risk import random_direction, risk_from_moment
from fworst.sim import second_moment
from fworst.solver import KernelCoeffs, PhiColumns


def half_half(basis, p=2):
    return KernelCoeffs(basis, PhiColumns(basis), np.stack([0.5 * np.eye(basis.n_basis)] * p), 0.5)


def causal(basis):
    return KernelCoeffs(basis, PhiColumns(basis), np.stack([np.eye(basis.n_basis), np.zeros((basis.n_basis,) * 2)]), np.inf)


def test_anchor_risks_closed_form(example_spec, sine10):
    b = half_half(sine10)
    assert risk_closed_form(example_spec, "O", 1.0, b).value == pytest.approx(5.0, rel=1e-12)
    assert risk_closed_form(example_spec, "A", 1.0, b).value == pytest.approx(5.05, rel=1e-12)


def test_anchor_risks_mc(example_spec, sine10):
    b = half_half(sine10)
    for env, target, seed in (("O", 5.0, 1), ("A", 5.05, 2)):
        r = risk_mc(example_spec, env, 1.0, b, 20_000, seed)
        assert abs(r.value - target) <= 3 * r.std_error
        assert r.method == "monte_carlo" and r.n_mc == 20_000


def test_causal_kernel_is_shift_invariant(example_spec, sine10):
    b = causal(sine10)
    r_O = risk_closed_form(example_spec, "O", 1.0, b).value
    r_A = risk_closed_form(example_spec, "A", 1.0, b).value
    assert r_O == pytest.approx(10.0) and r_A == pytest.approx(10.0)
    mc = risk_mc(example_spec, "A", 1.0, b, 20_000, 3)
    assert abs(mc.value - 10.0) <= 3 * mc.std_error


def test_zero_kernel_gives_target_moment(example_spec, sine10):
    b = KernelCoeffs(sine10, PhiColumns(sine10), np.zeros((2, 10, 10)), 1.0)
    M = second_moment(example_spec, "A")
    assert risk_closed_form(example_spec, "A", 1.0, b).value == pytest.approx(np.trace(M[:10, :10]))


def test_quadratic_shift_scaling(example_spec, sine10):
    rng = np.random.default_rng(0)
    b = KernelCoeffs(sine10, PhiColumns(sine10), rng.normal(size=(2, 10, 10)) * 0.2, 1.0)
    r = {s: risk_closed_form(example_spec, "A", s, b).value for s in (0.0, 1.0, 2.0)}
    assert r[2.0] - r[0.0] == pytest.approx(4 * (r[1.0] - r[0.0]), rel=1e-10)


def test_closed_form_std_error_zero(example_spec, sine10):
    r = risk_closed_form(example_spec, "O", 1.0, half_half(sine10))
    assert r.std_error == 0 and r.method == "closed_form"


def test_dimension_mismatch(example_spec):
    b = half_half(make_fourier_sine_basis(5))
    with pytest.raises(InvalidArgumentError):
        risk_closed_form(example_spec, "O", 1.0, b)


def test_mc_requires_two_draws(example_spec, sine10):
    with pytest.raises(InvalidArgumentError):
        risk_mc(example_spec, "O", 1.0, half_half(sine10), 1, 0)


def test_decomposition_anchor(example_spec, sine10):
    rep = check_decomposition(example_spec, half_half(sine10), 10.0)
    assert rep.rhs == pytest.approx(5.5, rel=1e-12)
    assert rep.lhs == pytest.approx(5.5, rel=1e-10)
    assert rep.passed
    assert set(rep.to_dict()) >= {"gamma", "lhs", "rhs", "diff", "std_error", "pass"}


def test_decomposition_gamma_one_is_shifted_risk(example_spec, sine10):
    rep = check_decomposition(example_spec, half_half(sine10), 1.0)
    assert rep.lhs == rep.risk_A


def test_decomposition_gamma_half_is_pooled(example_spec, sine10):
    rep = check_decomposition(example_spec, half_half(sine10), 0.5)
    assert rep.rhs == pytest.approx(0.5 * (rep.risk_A + rep.risk_O), rel=1e-14)


def test_decomposition_mc(example_spec, sine10):
    rep = check_decomposition(example_spec, half_half(sine10), 10.0, n_mc=20_000, rng_seed=4)
    assert rep.passed and rep.method == "monte_carlo" and rep.std_error > 0


def test_decomposition_detects_corruption(example_spec, sine10):
    assert not check_decomposition(example_spec, half_half(sine10), 2.0, rhs_offset=0.1).passed


def test_decomposition_rejects_nonpositive_gamma(example_spec, sine10):
    with pytest.raises(InvalidArgumentError):
        check_decomposition(example_spec, half_half(sine10), 0.0)


def random_spec(seed, p=1, nb=2):
    rng = np.random.default_rng(seed)
    d = (p + 1) * nb
    B = np.triu(rng.normal(size=(d, d)) * 0.5, 1)
    perm = rng.permutation(d)
    B = B[np.ix_(perm, perm)]
    L, La = rng.normal(size=(2, d, d))
    return SemSpec(p, nb, B, L @ L.T / d + 0.1 * np.eye(d), rng.normal(size=d) * 0.3, La @ La.T / d)


def random_beta(seed, spec):
    rng = np.random.default_rng(seed + 7)
    basis = make_fourier_sine_basis(spec.n_basis)
    return KernelCoeffs(basis, PhiColumns(basis), rng.normal(size=(spec.p, spec.n_basis, spec.n_basis)), 1.0)


def test_decomposition_identity_on_random_configurations():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        spec = random_spec(seed)
        rep = check_decomposition(spec, random_beta(seed, spec), rng.uniform(0.5, 50))
        assert rep.passed, rep


def test_mc_matches_closed_form_on_random_triples():
    for seed in range(20):
        spec = random_spec(seed)
        beta = random_beta(seed, spec)
        scale = np.random.default_rng(seed).uniform(0, 3)
        exact = risk_closed_form(spec, "A", scale, beta).value
        mc = risk_mc(spec, "A", scale, beta, 20_000, seed)
        assert abs(mc.value - exact) <= 4 * mc.std_error


def test_mc_consistency_rate():
    spec = random_spec(1)
    beta = random_beta(1, spec)
    exact = risk_closed_form(spec, "A", 1.0, beta).value
    hits = sum(
        abs((r := risk_mc(spec, "A", 1.0, beta, 2000, seed)).value - exact) <= 4 * r.std_error for seed in range(100)
    )
    assert hits >= 95


def test_minimizer_beats_perturbations(example_spec):
    rng = np.random.default_rng(0)
    pop = population_grammians(example_spec)
    for g in (0.5, 2.0, 10.0, 500.0):
        beta, _ = solve_grammian(pop, g)
        best = check_decomposition(example_spec, beta, g).lhs
        for _ in range(100):
            noise = rng.normal(size=beta.C.shape)
            noise *= 0.1 / np.linalg.norm(noise)
            other = KernelCoeffs(beta.basis, beta.columns, beta.C + noise, g)
            assert check_decomposition(example_spec, other, g).lhs >= best - 1e-12


def test_continuity_zero_perturbation(example_spec, sine10):
    probe = risk_continuity_probe(example_spec, half_half(sine10), [0.0], rng_seed=0)
    assert probe.differences[0] == 0.0


def test_continuity_decreasing_with_envelope(example_spec, sine10):
    probe = risk_continuity_probe(example_spec, half_half(sine10), [0.4, 0.2, 0.1], rng_seed=1)
    assert probe.monotone and probe.within_envelope
    assert np.all(np.diff(probe.differences) < 0)
    assert len(probe.rows()) == 3


def test_continuity_mean_shift_direction(example_spec, sine10):
    beta = half_half(sine10)
    m = np.zeros(30)
    m[10:] = 1.0
    probe = risk_continuity_probe(example_spec, beta, [0.3], direction_mean=m)
    base = example_spec.shift_second_moment()
    mu = example_spec.shift_mean
    moment = base + 0.3 * (np.outer(mu, m) + np.outer(m, mu)) + 0.09 * np.outer(m, m)
    expected = risk_from_moment(example_spec, beta, second_moment(example_spec, shift_moment=moment)) - risk_from_moment(
        example_spec, beta, second_moment(example_spec, "A")
    )
    assert probe.differences[0] == pytest.approx(abs(expected), rel=1e-12)


def test_random_direction_is_psd(example_spec):
    mean, cov = random_direction(example_spec, 3)
    assert np.all(mean == 0)
    assert np.linalg.eigvalsh(cov).min() > -1e-12
    assert np.all(cov[:10] == 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), gamma=st.floats(0.5, 50))
def test_decomposition_property(seed, gamma):
    spec = random_spec(seed, p=2, nb=2)
    assert check_decomposition(spec, random_beta(seed, spec), gamma).passed
