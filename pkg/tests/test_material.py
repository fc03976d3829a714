import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from perimlmc.material import (
    FractureEnergyError,
    ProblemKind,
    SofteningLaw,
    bond_energy,
    bond_force_scalar,
    bond_stiffness,
    critical_stretch,
    damage,
    fracture_energy,
    make_law,
    softening_integral,
)

PS = ProblemKind("plane_stress", 0.05)
PE = ProblemKind("plane_strain", 0.05)
TD = ProblemKind("three_d")
DELTA = math.pi * 0.01

# 50-digit values for E = 30 GPa, dx = 10 mm, t = 50 mm
C_PS = 55436304175295410.021
C_PE = 59132057786981770.69
C_3D = 117639491149921877.01


def test_stiffness_matches_high_precision_oracle():
    assert bond_stiffness(30e9, DELTA, PS) == pytest.approx(C_PS, rel=1e-12)
    assert bond_stiffness(30e9, DELTA, PE) == pytest.approx(C_PE, rel=1e-12)
    assert bond_stiffness(30e9, DELTA, TD) == pytest.approx(C_3D, rel=1e-12)


@given(st.floats(1e9, 1e11), st.floats(1e-3, 1.0))
def test_plane_strain_over_plane_stress_is_16_15(E, delta):
    ratio = bond_stiffness(E, delta, PE) / bond_stiffness(E, delta, PS)
    assert ratio == pytest.approx(16 / 15, rel=1e-15)


def test_problem_kind_validation():
    with pytest.raises(ValueError):
        ProblemKind("plane_stress")
    with pytest.raises(ValueError):
        ProblemKind("axisymmetric", 1.0)
    assert ProblemKind("three_d").poisson_ratio == 0.25


LAW = SofteningLaw(c=1.0, s0=1e-4, sc=1e-3, k=25.0, alpha=0.25)


def test_damage_endpoints_and_reference_value():
    assert abs(damage(LAW.s0, LAW)) <= 1e-12
    assert abs(damage(LAW.sc, LAW) - 1.0) <= 1e-12
    assert damage(0.5 * LAW.s0, LAW) == 0.0
    assert damage(-1.0, LAW) == 0.0
    assert damage(2 * LAW.sc, LAW) == 1.0
    # mpmath at 50 digits
    assert float(damage(5.5e-4, LAW)) == pytest.approx(0.98181763976155866377, rel=1e-13)


@settings(max_examples=200)
@given(
    st.floats(1.0, 60.0),
    st.floats(0.0, 2.0),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
)
def test_damage_monotone_and_bounded(k, alpha, a, b):
    law = SofteningLaw(1.0, 1e-4, 2e-3, k, alpha)
    s1, s2 = sorted((law.s0 * 0.5 + a * 2.5e-3, law.s0 * 0.5 + b * 2.5e-3))
    d1, d2 = float(damage(s1, law)), float(damage(s2, law))
    assert 0.0 <= d1 <= d2 + 1e-15 <= 1.0 + 1e-15


@pytest.mark.parametrize("k", [1.0, 5.0, 25.0, 60.0])
@pytest.mark.parametrize("alpha", [0.0, 0.25, 1.0])
def test_bond_energy_matches_quadrature(k, alpha):
    law = SofteningLaw(c=3.0e16, s0=9.1e-5, sc=7.7e-3, k=k, alpha=alpha)
    xi = 0.017
    mp.mp.dps = 30
    s0, sc = mp.mpf(law.s0), mp.mpf(law.sc)

    def force(s):
        t = (s - s0) / (sc - s0)
        shape = 1 - (1 - mp.e ** (-k * t)) / (1 - mp.e ** (-k)) + alpha * (1 - t)
        return law.c * s0 * shape / (1 + alpha)

    oracle = float(mp.quad(force, [s0, sc]) * xi)
    assert bond_energy(law, xi) == pytest.approx(oracle, rel=1e-8)
    # and the package's own force law integrates to the same value
    quad, _ = integrate.quad(lambda s: float(bond_force_scalar(s, law)) * xi, law.s0, law.sc,
                             epsabs=0, epsrel=1e-12, limit=200)
    assert quad == pytest.approx(oracle, rel=1e-8)


def test_softening_integral_closed_form():
    mp.mp.dps = 30
    for k, a in [(1.0, 0.0), (25.0, 0.25), (60.0, 2.0)]:
        oracle = mp.quad(lambda t: 1 - (1 - mp.e ** (-k * t)) / (1 - mp.e ** (-k)) + a * (1 - t), [0, 1])
        assert softening_integral(k, a) == pytest.approx(float(oracle), rel=1e-12)


def _geometric_fracture_energy(law, delta, kind):
    """Sum the work of every bond crossing a plane, by direct quadrature."""
    w = lambda xi: bond_energy(law, xi)  # noqa: E731
    if kind.kind == "three_d":
        f = lambda xi, z: 2 * math.pi * xi**2 * (1 - z / xi) * w(xi)  # noqa: E731
        val, _ = integrate.dblquad(f, 0, delta, lambda z: z, lambda z: delta, epsabs=0, epsrel=1e-11)
        return val
    f = lambda xi, z: 2 * math.acos(min(z / xi, 1.0)) * xi * w(xi)  # noqa: E731
    val, _ = integrate.dblquad(f, 0, delta, lambda z: z, lambda z: delta, epsabs=0, epsrel=1e-11)
    return kind.thickness * val


@pytest.mark.parametrize("kind", [PS, PE, TD], ids=lambda k: k.kind)
def test_fracture_energy_equals_crossing_bond_integral(kind):
    c = bond_stiffness(34.77e9, DELTA, kind)
    law = SofteningLaw(c, 9.1e-5, 7.7e-3)
    direct = _geometric_fracture_energy(law, DELTA, kind)
    closed = fracture_energy(c, DELTA, law.s0, law.sc, law.k, law.alpha, kind)
    assert closed == pytest.approx(direct, rel=1e-8)


@settings(max_examples=100)
@given(
    st.floats(10.0, 500.0),
    st.floats(1e10, 6e10),
    st.floats(2e-5, 2e-4),
    st.floats(1.0, 50.0),
    st.floats(0.0, 1.0),
    st.sampled_from([PS, PE, TD]),
)
def test_critical_stretch_round_trip(GF, E, s0, k, alpha, kind):
    sc = critical_stretch(GF, E, DELTA, s0, k, alpha, kind)
    back = fracture_energy(bond_stiffness(E, DELTA, kind), DELTA, s0, sc, k, alpha, kind)
    assert back == pytest.approx(GF, rel=1e-10)


def test_concrete_reference_stretches():
    # E, f_t, G_F at fc = 42.3 MPa; s0 and sc at dx = 10 mm, t = 50 mm (mpmath)
    law = make_law(34771112198.820591489, 3167018.994346869071, 143.23993862275618587, DELTA, PS)
    assert law.s0 == pytest.approx(0.000091081900867533706331, rel=1e-12)
    assert law.sc == pytest.approx(0.0077053298187621927365, rel=1e-10)


@pytest.mark.parametrize("GF", [0.0, -1.0])
def test_nonpositive_fracture_energy_is_rejected(GF):
    with pytest.raises(FractureEnergyError):
        critical_stretch(GF, 30e9, DELTA, 1e-4, 25.0, 0.25, PS)


def test_law_validation():
    with pytest.raises(ValueError):
        SofteningLaw(1.0, 1e-3, 1e-4)
    with pytest.raises(ValueError):
        SofteningLaw(1.0, 1e-4, 1e-3, k=0.0)
    with pytest.raises(ValueError):
        SofteningLaw(-1.0, 1e-4, 1e-3)


def test_force_is_continuous_at_elastic_limit_and_zero_past_sc():
    f0 = float(bond_force_scalar(LAW.s0, LAW))
    assert float(bond_force_scalar(LAW.s0 * (1 + 1e-9), LAW)) == pytest.approx(f0, rel=1e-6)
    assert float(bond_force_scalar(LAW.sc, LAW)) == pytest.approx(0.0, abs=1e-15)
    assert np.all(bond_force_scalar(np.linspace(LAW.sc, 3 * LAW.sc, 5), LAW) == 0.0)


def test_stiffness_is_linear_in_modulus():
    for kind in (PS, PE, TD):
        assert bond_stiffness(60e9, DELTA, kind) == pytest.approx(2 * bond_stiffness(30e9, DELTA, kind), rel=1e-15)


def test_elastic_branch_and_origin():
    assert float(bond_force_scalar(0.0, LAW)) == 0.0
    s = np.linspace(1e-7, LAW.s0, 50)
    assert np.array_equal(bond_force_scalar(s, LAW), LAW.c * s)
    near = LAW.sc * (1 - 1e-12)
    assert abs(float(bond_force_scalar(near, LAW))) <= LAW.c * LAW.sc * 1e-10


def test_critical_stretch_increases_with_fracture_energy():
    gf = np.linspace(20.0, 300.0, 50)
    sc = critical_stretch(gf, 34.77e9, DELTA, 9.1e-5, 25.0, 0.25, PS)
    assert np.all(np.diff(sc) > 0)


def test_default_damage_is_monotone_on_dense_sweep():
    law = SofteningLaw(1.0, 9.1e-5, 7.7e-3, 25.0, 0.25)
    d = damage(np.linspace(law.s0, law.sc, 1_000_000), law)
    assert np.all(np.diff(d) >= 0)
