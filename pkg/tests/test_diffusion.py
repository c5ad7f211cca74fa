import numpy as np
import pytest

from frictionchan.channel import ChannelSpec, GridChannel
from frictionchan.core import HamiltonianSpec, gaussian_state, make_grid, trace_norm
from frictionchan.diffusion import (
    CaldeiraLeggettSpec,
    abc_generator,
    caldeira_leggett_lindblads,
    cl_generator,
    compare_full_vs_diffusion,
    diffusion_coefficients,
    evolve_CL,
)
from frictionchan.distributions import FeedbackLaw, gaussian_mixture_mu, gaussian_mu
from frictionchan.dynamics import evolve_master
from frictionchan.errors import PreconditionError

from conftest import random_mixed_state


def test_gaussian_linear_coefficients():
    for s, a in [(1.0, 0.5), (0.4, 1.3), (2.5, 0.05)]:
        c = diffusion_coefficients(gaussian_mu(s), FeedbackLaw.linear(a))
        assert c.F == 0.0
        assert c.A == pytest.approx(1 / (8 * s**2), rel=1e-8)
        assert c.B == pytest.approx(a / 2, rel=1e-12)
        assert c.C == pytest.approx(a**2 * s**2 / 2, rel=1e-12)


def test_biased_drift():
    c = diffusion_coefficients(gaussian_mu(1.0, 0.3), FeedbackLaw.linear(0.4), Gamma=2.0)
    assert c.F == pytest.approx(2.0 * 0.4 * 0.3, rel=1e-12)


def test_dual_A_formulas(mu_corpus):
    for name, mu in mu_corpus.items():
        c = diffusion_coefficients(mu, FeedbackLaw.linear(0.5))
        assert c.A_hess == pytest.approx(c.A_nu, rel=1e-6), name


def test_3d_gaussian_matrices():
    sig = np.array([0.6, 1.0, 1.7])
    c = diffusion_coefficients(gaussian_mu(tuple(sig), dims=3), FeedbackLaw.linear(0.3))
    Sigma = np.diag(sig**2)
    assert np.allclose(c.A, np.linalg.inv(Sigma) / 8, rtol=1e-8)
    assert np.allclose(c.B, 0.15 * np.eye(3))
    assert np.allclose(c.C, 0.3**2 / 2 * Sigma)
    for M in (c.A, c.C):
        assert np.allclose(M, M.T) and np.linalg.eigvalsh(M).min() >= 0


def test_nonlinear_coefficients_by_quadrature():
    from scipy import integrate, stats

    mu = gaussian_mu(0.8)
    for f in (FeedbackLaw.quadratic(0.2), FeedbackLaw.constant(0.3)):
        c = diffusion_coefficients(mu, f)
        ef2 = integrate.quad(lambda q: f.evaluate(q) ** 2 * stats.norm.pdf(q, 0, 0.8), -10, 10, points=[0])[0]
        assert c.C == pytest.approx(ef2 / 2, rel=1e-8)
    assert diffusion_coefficients(mu, FeedbackLaw.constant(0.3)).B == pytest.approx(
        0.3 * stats.norm.pdf(0, 0, 0.8), rel=1e-10
    )


def test_cl_lindblads_match_coefficients():
    cl = caldeira_leggett_lindblads(0.7, 0.4, 1.3)
    c = diffusion_coefficients(gaussian_mu(1.3), FeedbackLaw.linear(0.4))
    A, B, C = cl.abc()
    assert (A, B, C) == pytest.approx((c.A, c.B, c.C), rel=1e-8)
    assert cl.c == 0.0
    assert cl.hamiltonian_correction == pytest.approx(0.7 * 0.4 / 4)
    m = CaldeiraLeggettSpec.from_coefficients(c, 0.7)
    assert (m.a, m.b) == pytest.approx((cl.a, cl.b), rel=1e-8)
    with pytest.raises(PreconditionError):
        caldeira_leggett_lindblads(1.0, 0.0, 1.0)


@pytest.mark.parametrize(
    "mu",
    [gaussian_mu(1.3), gaussian_mu(0.9, 0.2), gaussian_mixture_mu([0.5, 0.5], [-0.8, 0.8], [0.5, 0.5])],
    ids=["gauss", "biased", "mixture"],
)
def test_lindblad_form_equals_double_commutators(grid128, rng, mu):
    co = diffusion_coefficients(mu, FeedbackLaw.linear(0.4), Gamma=0.7)
    cl = CaldeiraLeggettSpec.from_coefficients(co, 0.7)
    r = random_mixed_state(grid128, rng).dm
    a = cl_generator(cl, grid128)(r)
    b = abc_generator(co.A, co.B, co.C, co.F, 0.7, grid128)(r)
    assert trace_norm(a - b) < 1e-10 * trace_norm(b)
    assert abs(np.trace(a)) < 1e-12


def test_excess_C_violation_rejected():
    from frictionchan.diffusion import DiffusionCoefficients

    with pytest.raises(PreconditionError, match="A C"):
        CaldeiraLeggettSpec.from_coefficients(DiffusionCoefficients(0.0, 0.1, 1.0, 0.1), 1.0)


def test_expansion_residual_is_second_order(grid128):
    # Lambda - 1 is first order in (alpha, 1/sigma^2); the CL generator captures it to second order
    r = gaussian_state(grid128, 0, 0, 1.0).to_density().dm
    first, resid = [], []
    for al, sg in [(0.2, 2.0), (0.1, 2 * 2**0.5), (0.05, 4.0)]:
        spec = ChannelSpec(gaussian_mu(sg), FeedbackLaw.linear(al))
        d = GridChannel(spec, grid128).apply(r) - r
        co = diffusion_coefficients(spec.mu, spec.feedback)
        e = abc_generator(co.A, co.B, co.C, co.F, 1.0, grid128)(r)
        first.append(trace_norm(d))
        resid.append(trace_norm(d - e))
    assert first[0] / first[2] == pytest.approx(4, rel=0.1)
    assert resid[0] / resid[1] > 3.5 and resid[1] / resid[2] > 3.5


def test_cl_positivity_harmonic(grid64):
    H = HamiltonianSpec.harmonic(1.0)
    cl = caldeira_leggett_lindblads(0.5, 0.5, 1.0)
    res = evolve_CL(H, cl, gaussian_state(grid64, 0, 0, 2**-0.5), 20 * np.pi, 0.1, sample_every=60, store_states=True)
    assert min(s.min_eigenvalue() for s in res.states) >= -1e-7
    assert res.info["trace_drift"] < 1e-8
    assert all(s.hermiticity_error() == 0.0 for s in res.states)


def test_cl_position_diffusion_rate(grid64):
    # heavy particle: <x^2> grows at 2 Gamma hbar^2 A
    cl = caldeira_leggett_lindblads(0.8, 0.5, 1.0)
    A = cl.abc()[0]
    res = evolve_CL(HamiltonianSpec.free(mass=1e8), cl, gaussian_state(grid64, 0, 0, 1.0), 2.0, 0.1, sample_every=5)
    xx = np.array([m.xx for m in res.moments])
    slope = np.polyfit(res.times, xx, 1)[0]
    assert slope == pytest.approx(2 * 0.8 * A, rel=1e-6)


def test_cl_momentum_friction(grid64):
    Gamma, alpha = 0.8, 0.5
    cl = caldeira_leggett_lindblads(Gamma, alpha, 1.0)
    B = cl.abc()[1]
    res = evolve_CL(HamiltonianSpec.free(), cl, gaussian_state(grid64, 0, 1.0, 1.0), 2.0, 0.1, sample_every=5)
    p = np.array([m.p for m in res.moments])
    assert np.max(np.abs(p - np.exp(-2 * Gamma * B * res.times))) < 1e-8


def test_cl_no_rate_is_unitary(grid64):
    H = HamiltonianSpec.harmonic(1.0)
    psi = gaussian_state(grid64, 1.0, 0.0, 0.8)
    a = evolve_CL(H, CaldeiraLeggettSpec(0.0, 0.0, 0.0), psi, 3.0, 0.1, sample_every=5)
    b = evolve_master(H, ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(0.5), 0.0), psi, 3.0, 0.1, sample_every=5)
    assert np.max(np.abs(a.moment_array() - b.moment_array())) < 1e-12


def test_negative_control_large_alpha():
    g = make_grid(64, 12.0)
    spec = ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(0.8))
    # sigma / Delta p = 1
    cmp_ = compare_full_vs_diffusion(HamiltonianSpec.harmonic(1.0), spec, gaussian_state(g, 0, 0, 0.5), 1 / 0.96, 0.05, sample_every=5)
    assert cmp_.max_rel_error > 0.1


@pytest.mark.parametrize("family", ["gauss", "mixture"])
def test_error_shrinks_towards_diffusion_limit(family):
    g = make_grid(64, 8.0)
    errs = []
    for al, sg in [(0.4, 0.5), (0.2, 1.0), (0.1, 2.0)]:
        mu = gaussian_mu(sg) if family == "gauss" else gaussian_mixture_mu([0.5, 0.5], [-0.8 * sg, 0.8 * sg], [0.5 * sg, 0.5 * sg])
        spec = ChannelSpec(mu, FeedbackLaw.linear(al))
        c = compare_full_vs_diffusion(HamiltonianSpec.harmonic(1.0), spec, gaussian_state(g, 0.5, 0, 2**-0.5), 2.0, 0.05, sample_every=10)
        errs.append((c.max_rel_error, float(np.max(c.trace_distance))))
    assert errs[0][0] > errs[1][0] > errs[2][0]
    assert errs[0][1] > errs[1][1] > errs[2][1]


def test_comparison_report_shape():
    g = make_grid(64, 8.0)
    spec = ChannelSpec(gaussian_mu(2.0), FeedbackLaw.linear(0.1))
    c = compare_full_vs_diffusion(HamiltonianSpec.free(), spec, gaussian_state(g, 0, 0, 1.0), 1.0, 0.1, sample_every=5)
    d = c.as_dict()
    assert set(d) >= {"times", "trace_distance", "rel_error", "max_rel_error", "coefficients"}
    assert len(d["times"]) == len(d["trace_distance"]) == 3
    assert d["trace_distance"][0] == 0.0
