import numpy as np
import pytest
from scipy import stats

from frictionchan.channel import (
    ChannelSpec,
    GridChannel,
    adjoint_moment_map,
    adjoint_momentum_function,
    apply_channel,
    apply_channel_via_K,
    apply_L,
    parity,
    random_displacement_channel,
    sample_outcome,
    squeeze,
    translate,
)
from frictionchan.core import GridState, gaussian_state, make_grid, trace_norm
from frictionchan.distributions import FeedbackLaw, conjugate_nu, gaussian_mu
from frictionchan.errors import PreconditionError, UnsupportedClosureError
from frictionchan.moments import MomentState3D, moments_of

from conftest import random_mixed_state

FEEDBACK = [
    FeedbackLaw.linear(0.5),
    FeedbackLaw.linear(1.3),
    FeedbackLaw.constant(0.4),
    FeedbackLaw.quadratic(0.2),
]


def tr_dist(a, b):
    return trace_norm(a.dm - b.dm)


def test_povm_completeness(grid128, mu_corpus):
    psi = gaussian_state(grid128, 0.5, 0.7, 1.0)
    for mu in mu_corpus.values():
        ch = GridChannel(ChannelSpec(mu, FeedbackLaw.linear(0.5)), grid128)
        q, pq = ch.outcome_density(psi.vec)
        assert np.sum(pq) * grid128.dp == pytest.approx(1.0, abs=1e-8)
        # the same from explicit Kraus operators
        tot = sum(np.vdot(w, w).real for w in (ch.L_vec(qi, psi.vec) for qi in q))
        assert tot * grid128.dp == pytest.approx(1.0, abs=1e-8)


def test_alpha_zero_keeps_diagonal(grid64):
    spec = ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(0.0))
    pop = np.exp(-(grid64.p**2) / 2)
    r = np.diag(pop / pop.sum()).astype(complex)
    st = GridState.from_dm(grid64, r)
    out = apply_L(spec, 0.5, st)
    off = out.dm - np.diag(np.diag(out.dm))
    assert np.max(np.abs(off)) < 1e-14
    assert np.allclose(np.diag(out.dm).real, r.diagonal().real * gaussian_mu(1.0).pdf(grid64.p - 0.5))


def test_narrow_mu_kick():
    g = make_grid(256, 16.0)
    pbar, alpha = 2.0, 0.5
    psi = gaussian_state(g, 0.0, pbar, 4.0)
    spec = ChannelSpec(gaussian_mu(0.15), FeedbackLaw.linear(alpha))
    out = apply_L(spec, pbar, psi)
    m = moments_of(out.normalized())
    assert m.p == pytest.approx(pbar - alpha * pbar, abs=2e-3)


@pytest.mark.parametrize("fb", FEEDBACK, ids=lambda f: f"{f.kind}-{f.alpha}")
def test_channel_invariants(grid128, mu_corpus, rng, fb):
    st = random_mixed_state(grid128, rng, x_spread=1.0, p_spread=0.5)
    for name, mu in mu_corpus.items():
        out = apply_channel(ChannelSpec(mu, fb), st)
        assert out.trace() == pytest.approx(1.0, abs=1e-8), name
        assert out.hermiticity_error() < 1e-12
        assert out.min_eigenvalue() > -1e-8


def test_methods_agree(grid64, rng):
    st = random_mixed_state(grid64, rng)
    ch = GridChannel(ChannelSpec(gaussian_mu(0.8, 0.2), FeedbackLaw.linear(0.6)), grid64)
    lin = ch.apply(st.dm, method="linear")
    dense = ch.apply(st.dm, method="dense")
    low = ch.apply(st.dm, method="lowrank")
    assert trace_norm(lin - dense) < 1e-10
    assert trace_norm(low - dense) < 1e-10


def test_zero_feedback_is_random_displacement(grid128, rng, mu_corpus):
    st = random_mixed_state(grid128, rng)
    for mu in (mu_corpus["gauss"], mu_corpus["mixture"]):
        a = apply_channel(ChannelSpec(mu, FeedbackLaw.linear(0.0)), st)
        b = random_displacement_channel(mu, st)
        assert tr_dist(a, b) < 1e-8


@pytest.mark.parametrize("fb", FEEDBACK[:3], ids=lambda f: f"{f.kind}-{f.alpha}")
def test_translation_covariance(grid128, rng, fb):
    st = random_mixed_state(grid128, rng)
    spec = ChannelSpec(gaussian_mu(0.7), fb)
    z = 5 * grid128.dx
    a = apply_channel(spec, translate(st, z))
    b = translate(apply_channel(spec, st), z)
    assert tr_dist(a, b) < 1e-8


def test_linear_friction_mean_momentum(grid128):
    psi = gaussian_state(grid128, 0.3, 1.2, 1.0)
    for alpha in (0.3, 0.5, 1.5):
        out = apply_channel(ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(alpha)), psi)
        assert moments_of(out).p == pytest.approx((1 - alpha) * 1.2, abs=1e-8)


def test_insufficient_coverage_raises():
    g = make_grid(64, 4.0)
    psi = gaussian_state(g, 0.0, 1.0, 1.5)
    with pytest.raises(PreconditionError, match="coverage"):
        apply_channel(ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(1.9)), psi)


def test_sample_outcome_distribution():
    g = make_grid(256, 16.0)
    pbar, s = 1.5, 1.0
    psi = gaussian_state(g, 0.0, pbar, 4.0)  # momentum width 1/8
    spec = ChannelSpec(gaussian_mu(s), FeedbackLaw.linear(0.5))
    ch = GridChannel(spec, g)
    rng = np.random.default_rng(3)
    q = np.array([sample_outcome(spec, psi, rng, ch) for _ in range(100_000)])
    width = np.sqrt(s**2 + 1 / 8**2)
    p = stats.kstest(q, "norm", args=(pbar, width)).pvalue
    assert p > 0.01


def test_sample_outcome_seed_reproducible(grid64):
    psi = gaussian_state(grid64, 0.0, 0.5, 1.0)
    spec = ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(0.5))
    a = [sample_outcome(spec, psi, np.random.default_rng(9)) for _ in range(3)]
    r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
    s1 = [sample_outcome(spec, psi, r1) for _ in range(20)]
    s2 = [sample_outcome(spec, psi, r2) for _ in range(20)]
    assert s1 == s2 and len(set(a)) == 1


def test_sample_outcome_sharp_limit():
    # the narrowest mu the lattice resolves: outcomes follow |psi(p)|^2 smeared by dp
    g = make_grid(128, 8.0)
    psi = gaussian_state(g, 0.0, 0.5, 0.8)
    spec = ChannelSpec(gaussian_mu(g.dp), FeedbackLaw.linear(0.5))
    rng = np.random.default_rng(1)
    q = np.array([sample_outcome(spec, psi, rng) for _ in range(20_000)])
    width = np.sqrt(1 / (2 * 0.8) ** 2 + g.dp**2)
    assert stats.kstest(q, "norm", args=(0.5, width)).pvalue > 0.01


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.9, 1.5])
def test_kraus_equivalence(alpha, mu_corpus, rng):
    g = make_grid(128, 12.0)
    st = random_mixed_state(g, rng, x_spread=1.0, p_spread=0.5)
    for mu in (mu_corpus["gauss"], mu_corpus["gauss_biased"]):
        spec = ChannelSpec(mu, FeedbackLaw.linear(alpha))
        assert tr_dist(apply_channel(spec, st), apply_channel_via_K(spec, st)) <= 1e-6


def test_parity_ablation(rng):
    g = make_grid(128, 12.0)
    st = random_mixed_state(g, rng, x_spread=1.5, p_spread=1.0)
    spec = ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(1.5))
    ref = apply_channel(spec, st)
    assert tr_dist(ref, apply_channel_via_K(spec, st)) <= 1e-6
    assert tr_dist(ref, apply_channel_via_K(spec, st, with_parity=False)) > 1e-2


def test_sharp_position_measurement_alpha_one(rng):
    g = make_grid(128, 12.0)
    st = random_mixed_state(g, rng)
    spec = ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(1.0))
    assert tr_dist(apply_channel(spec, st), apply_channel_via_K(spec, st)) <= 1e-6


def test_K_rejects_nonpositive_alpha(grid64):
    st = gaussian_state(grid64, 0, 0, 1).to_density()
    with pytest.raises(PreconditionError):
        apply_channel_via_K(ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(0.0)), st)
    with pytest.raises(UnsupportedClosureError):
        apply_channel_via_K(ChannelSpec(gaussian_mu(1.0), FeedbackLaw.constant(0.3)), st)


def test_squeeze_scaling():
    g = make_grid(256, 16.0)
    w = 0.8
    psi = gaussian_state(g, 0.0, 0.0, w)
    out = squeeze(0.5, psi)
    m0, m1 = moments_of(psi), moments_of(out)
    assert abs(out.norm() - 1) < 1e-8
    assert m1.var_x == pytest.approx(m0.var_x / 0.25, rel=1e-8)
    assert m1.var_p == pytest.approx(0.25 * m0.var_p, rel=1e-8)
    # composition: |1 - a| |1 - a'| scaling
    two = squeeze(0.5, squeeze(0.2, psi))
    assert moments_of(two).var_x == pytest.approx(m0.var_x / (0.5 * 0.8) ** 2, rel=1e-8)
    back = squeeze(-1.0, out)  # |1 - (-1)| = 2 undoes |1 - 0.5| = 1/2
    assert np.max(np.abs(back.vec - psi.vec)) < 1e-8


def test_squeeze_outside_grid_raises():
    g = make_grid(64, 8.0)
    with pytest.raises(PreconditionError):
        squeeze(0.8, gaussian_state(g, 0.0, 0.0, 2.0))
    with pytest.raises(PreconditionError):
        squeeze(1.0, gaussian_state(g, 0.0, 0.0, 1.0))


def test_parity_and_translate(grid64):
    psi = gaussian_state(grid64, 1.0, 0.5, 1.0)
    m = moments_of(parity(psi))
    assert m.x == pytest.approx(-1.0, abs=1e-10) and m.p == pytest.approx(-0.5, abs=1e-10)
    assert moments_of(translate(psi, 0.7)).x == pytest.approx(1.7, abs=1e-10)


@pytest.mark.parametrize("alpha", [0.0, 0.4, 1.2])
def test_adjoint_moment_map_against_grid(grid128, rng, mu_corpus, alpha):
    st = random_mixed_state(grid128, rng, x_spread=0.8, p_spread=0.5)
    m0 = moments_of(st)
    for mu in mu_corpus.values():
        spec = ChannelSpec(mu, FeedbackLaw.linear(alpha))
        pred = adjoint_moment_map(spec, m0)
        got = moments_of(apply_channel(spec, st))
        assert np.max(np.abs(pred.as_vector() - got.as_vector())) < 1e-6


def test_adjoint_moment_map_alpha_zero(mu_corpus):
    from frictionchan.moments import MomentState

    m = MomentState(0.1, 0.4, 1.0, 0.2, 0.9)
    mu = mu_corpus["gauss"]
    out = adjoint_moment_map(ChannelSpec(mu, FeedbackLaw.linear(0.0)), m)
    assert out.p == m.p
    assert out.xx == pytest.approx(m.xx + conjugate_nu(mu).moment(2), abs=1e-10)


def test_adjoint_3d_offdiagonal():
    mu = gaussian_mu((0.7, 1.0, 1.3), dims=3)
    spec = ChannelSpec(mu, FeedbackLaw.linear(0.4))
    P = np.array([[1.0, 0.3, -0.2], [0.3, 1.5, 0.1], [-0.2, 0.1, 0.8]])
    m = MomentState3D(np.zeros(3), np.zeros(3), np.eye(3), np.zeros((3, 3)), P)
    out = adjoint_moment_map(spec, m)
    off = ~np.eye(3, dtype=bool)
    assert np.allclose(out.P[off], 0.36 * P[off], atol=1e-14)


def _mean_kick_closed_form(fb, weights, means, sigmas, p):
    """E[f(p - q)] for a Gaussian mixture mu, from the normal CDF."""
    out = np.zeros_like(p)
    for w, b, s in zip(weights, means, sigmas):
        m = p - b  # p - q ~ N(m, s^2)
        z = m / s
        if fb.kind == "constant":
            e = 2 * stats.norm.cdf(z) - 1
        else:  # E[z|z|]
            e = (m**2 + s**2) * (2 * stats.norm.cdf(z) - 1) + 2 * m * s * stats.norm.pdf(z)
        out += w * fb.alpha * e
    return out


def test_nonlinear_adjoint_momentum_smoke(grid128):
    from frictionchan.distributions import gaussian_mixture_mu

    psi = gaussian_state(grid128, 0.0, 0.8, 1.0)
    corpus = [([1.0], [0.0], [1.0]), ([1.0], [0.3], [0.8]), ([0.5, 0.5], [-0.8, 0.8], [0.5, 0.5])]
    p = np.linspace(-4, 4, 41)
    for fb in (FeedbackLaw.constant(0.4), FeedbackLaw.quadratic(0.2)):
        for w, b, s in corpus:
            mu = gaussian_mu(s[0], b[0]) if len(w) == 1 else gaussian_mixture_mu(w, b, s)
            spec = ChannelSpec(mu, fb)
            direct = p - _mean_kick_closed_form(fb, w, b, s, p)
            via = adjoint_momentum_function(spec, lambda z: z, p)
            assert np.max(np.abs(via - direct)) < 1e-6
    with pytest.raises(UnsupportedClosureError):
        adjoint_moment_map(ChannelSpec(gaussian_mu(1.0), FeedbackLaw.constant(0.4)), moments_of(psi))


@pytest.mark.parametrize("fb", [FeedbackLaw.constant(0.4), FeedbackLaw.quadratic(0.2)], ids=["constant", "quadratic"])
def test_nonsmooth_feedback_grid_channel_second_order(fb):
    # the outcome lattice straddles the kink of f at q = p: O(dp^2) quadrature error
    errs = []
    for n in (64, 128, 256):
        g = make_grid(n, 12.0)
        psi = gaussian_state(g, 0.0, 0.8, 1.0)
        pop = np.abs(psi.vec) ** 2
        spec = ChannelSpec(gaussian_mu(1.0), fb)
        pred = adjoint_moment_map(spec, moments_of(psi), p_marginal=(g.p, pop))["p"]
        errs.append(abs(moments_of(apply_channel(spec, psi)).p - pred))
    # at least second order in dp
    assert errs[1] < 0.3 * errs[0] and errs[2] < 0.3 * errs[1]
    assert errs[2] < 0.02 * (24.0 / 256) ** 2
