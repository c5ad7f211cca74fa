import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frictionchan.channel import ChannelSpec
from frictionchan.core import gaussian_state, make_grid
from frictionchan.dcsl import (
    DcslParams,
    ScaledParams,
    bystander_cross_term,
    com_reduction,
    critical_mass,
    dcsl_B_operator,
    k_r_scaling,
    map_params,
    scale_params,
    verify_identity,
)
from frictionchan.distributions import FeedbackLaw, gaussian_mu
from frictionchan.errors import PreconditionError, ValidityError


def _identity_grid(k, r, n=256):
    dp = 0.25 / ((1 + k) * r)
    return make_grid(n, dp * n / 2)


def test_map_params_examples():
    assert map_params(DcslParams(1.0, 1.0, 1.0)).alpha == 1.0
    mp = map_params(DcslParams(1.0, 1.0, 0.1))
    assert mp.sigma == pytest.approx(1 / (2 * math.sqrt(2) * 0.1), rel=1e-15)
    assert mp.sigma == pytest.approx(3.5355339, rel=1e-7)
    k, r, g = 0.3, 0.7, 2.0
    assert map_params(DcslParams(g, r, k, m=3.0)).Gamma == pytest.approx(
        9 * g / (2 * math.sqrt(math.pi) * (1 + k) * r) ** 3, rel=1e-14
    )


def test_frictionless_limit_recovers_csl_rate():
    lam, r = 1e-3, 0.8
    gamma = (4 * math.pi * r**2) ** 1.5 * lam
    mp = map_params(DcslParams(gamma, r, 0.0))
    assert mp.frictionless and mp.alpha == 0.0
    assert mp.Gamma == pytest.approx(lam, rel=1e-13)
    with pytest.raises(PreconditionError):
        mp.channel_spec()


def test_dcsl_params_validation():
    with pytest.raises(PreconditionError):
        DcslParams(-1.0, 1.0, 0.1)
    with pytest.raises(PreconditionError):
        DcslParams(1.0, 1.0, -0.1)


@pytest.mark.parametrize("k", [0.05, 0.2, 1.0])
@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_operator_identity_sweep(k, r):
    assert verify_identity(DcslParams(1.3, r, k), _identity_grid(k, r)) <= 1e-8


def test_identity_rejects_coarse_grid():
    with pytest.raises(PreconditionError, match="coarse"):
        verify_identity(DcslParams(1.0, 2.0, 1.0), make_grid(64, 16.0))
    with pytest.raises(PreconditionError):
        verify_identity(DcslParams(1.0, 1.0, 0.0), make_grid(64, 4.0))


def test_B_operator_self_adjoint_only_without_dissipation():
    g = _identity_grid(0.2, 1.0, n=128)
    b0 = dcsl_B_operator(DcslParams(1.0, 1.0, 0.0), 0.3, g)
    assert np.max(np.abs(b0 - b0.conj().T)) < 1e-15 * np.max(np.abs(b0))
    b1 = dcsl_B_operator(DcslParams(1.0, 1.0, 0.2), 0.3, g)
    assert np.max(np.abs(b1 - b1.conj().T)) > 1e-2 * np.max(np.abs(b1))


def test_mass_doubles_amplitude():
    a = map_params(DcslParams(1.0, 1.0, 0.2, m=1.0), dims=1)
    b = map_params(DcslParams(1.0, 1.0, 0.2, m=2.0), dims=1)
    assert math.sqrt(b.Gamma) == pytest.approx(2 * math.sqrt(a.Gamma), rel=1e-15)


@settings(max_examples=50, deadline=None)
@given(k0=st.floats(0.01, 5.0), r0=st.floats(0.1, 3.0), ratio=st.floats(0.6, 50.0))
def test_kr_round_trip(k0, r0, ratio):
    alpha0 = 2 * k0 / (1 + k0)
    if alpha0 / ratio >= 2:
        return
    k, r = k_r_scaling(k0, r0, 1.0, ratio)
    mp = map_params(DcslParams(1.0, r, k))
    sigma0 = 1 / (2 * math.sqrt(2) * k0 * r0)
    assert mp.alpha == pytest.approx(alpha0 / ratio, rel=1e-12)
    assert mp.sigma == pytest.approx(sigma0 * ratio, rel=1e-12)


def test_kr_scaling_limits():
    assert k_r_scaling(0.3, 1.2, 1.0, 1.0) == pytest.approx((0.3, 1.2))
    k, r = k_r_scaling(0.3, 1.2, 1.0, 1e9)
    assert k < 1e-9 and r == pytest.approx(1.3 * 1.2, rel=1e-8)
    k, r = k_r_scaling(0.01, 1.0, 1.0, 10.0)
    assert k == pytest.approx(0.001, rel=0.01) and r == pytest.approx(1.0, rel=0.01)
    # rational inputs stay exact
    k, r = k_r_scaling(Fraction(1, 5), Fraction(1), Fraction(1), Fraction(3))
    assert (k, r) == (Fraction(1, 15) / Fraction(17, 15), Fraction(17, 15))


def _ref(k="1/5"):
    return ScaledParams.from_dcsl(DcslParams(1.0, 1.0, float(Fraction(k))))


def test_scale_params_conservation_laws():
    ref = _ref()
    for m in (Fraction(1), Fraction(7, 3), Fraction(10), Fraction(1, 2)):
        s = scale_params(ref, m)
        assert s.alpha * s.mass == ref.alpha * ref.mass
        assert s.Gamma / s.mass**2 == ref.Gamma / ref.mass**2
        assert s.width * s.mass == ref.width * ref.mass
    assert scale_params(ref, 1) == ref


def test_validity_error_at_critical_mass():
    ref = ScaledParams.from_dcsl(DcslParams(1.0, 1.0, 1.0))  # alpha0 = 1
    mc = critical_mass(ref)
    assert mc == Fraction(1, 2)
    with pytest.raises(ValidityError) as info:
        scale_params(ref, mc)
    assert info.value.critical_mass == pytest.approx(0.5)
    with pytest.raises(ValidityError):
        scale_params(ref, Fraction(49, 100))
    assert scale_params(ref, Fraction(51, 100)).alpha < 2


def test_com_two_reference_particles():
    ref = _ref()
    assert com_reduction([1, 1], ref) == scale_params(ref, 2)
    assert com_reduction([1], ref) == ref


def test_com_random_partitions():
    rng = np.random.default_rng(8)
    ref = _ref()
    for _ in range(40):
        n = int(rng.integers(1, 9))
        parts = [Fraction(int(rng.integers(1, 30)), int(rng.integers(1, 6))) for _ in range(n)]
        M = sum(parts)
        assert com_reduction(parts, ref) == scale_params(ref, M)


def test_com_associativity():
    ref = _ref()
    masses = [Fraction(3, 2)] * 6
    whole = com_reduction(masses, ref)
    left = com_reduction(masses[:2], ref).mass
    right = com_reduction(masses[2:], ref).mass
    assert com_reduction([left, right], ref) == whole


def test_com_rejects_bad_masses():
    with pytest.raises(PreconditionError):
        com_reduction([1, -1], _ref())
    with pytest.raises(PreconditionError):
        com_reduction([], _ref())


def _bystander(alpha1, grid):
    spec1 = ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(alpha1))
    spec2 = ChannelSpec(gaussian_mu(1.0), FeedbackLaw.linear(0.5))
    return bystander_cross_term(spec1, spec2, gaussian_state(grid, 1.0, 0.0, 0.7), 0.0)


def test_bystander_cross_term_and_control():
    res = _bystander(0.5, make_grid(64, 8.0))
    assert res.cross_norm > 1e-4
    assert res.control_norm <= 1e-10


def test_bystander_vanishes_without_feedback():
    # the residual operator itself vanishes; its ratio to the commutator scale does not
    g = make_grid(64, 8.0)
    norms = [_bystander(a, g).raw_norm for a in (0.25, 0.125, 0.0625, 0.03125)]
    assert all(a > b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 0.1 * norms[0]
