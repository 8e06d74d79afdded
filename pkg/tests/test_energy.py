import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bdkin.energy import (
    PRODUCTION_SENTINEL,
    availability,
    availability_production,
    availability_report,
    availability_shifted,
    dissipation_lower_bound,
    generic_availability,
    jensen_lower_bound,
    standard_lyapunov,
)
from bdkin.energy import dissipation_summands, production_summands
from bdkin.equilibrium import solve_equilibrium, standard_equilibrium
from bdkin.errors import DivergenceError, InvalidParameterError
from bdkin.integrate import IntegratorConfig, simulate
from bdkin.kinetics import EnergyLadder, KineticCoefficients, ModifiedModel, StandardModel, StandardModelParams
from bdkin.state import ClusterState

from oracles import LN2, random_state

GEOM = EnergyLadder.geometric(LN2)
CONST = KineticCoefficients.constant()
EQ_LADDERS = [GEOM, EnergyLadder.example2(LN2), EnergyLadder.inverted_geometric(LN2)]


def test_availability_hand_example():
    # z = (1, 1): sum z ln z = 0, N ln N = 2 ln 2, q = (1, 1/2)
    z = ClusterState([1.0, 1.0])
    assert availability(z, GEOM) == pytest.approx(-LN2, rel=1e-15)
    # rho ln R = 3 ln 2
    assert availability_shifted(z, GEOM) == pytest.approx(-4 * LN2, rel=1e-14)


def test_availability_zero_state():
    z = ClusterState(np.zeros(5))
    assert availability(z, GEOM) == 0.0
    assert availability_shifted(z, GEOM) == 0.0
    assert availability_production(z, GEOM, CONST) == 0.0


def test_shift_identity_random():
    rng = np.random.default_rng(21)
    l = np.arange(1, 41)
    for ladder in EQ_LADDERS + [EnergyLadder.example1(2.0, 2.0)]:
        z = random_state(rng, 40, zero_fraction=0.3)
        rho = float(l @ z)
        assert availability_shifted(z, ladder) == pytest.approx(
            availability(z, ladder) - rho * math.log(ladder.R), abs=1e-10 * (1 + rho))


def test_generic_availability_matches():
    z = random_state(np.random.default_rng(22), 30)
    l = np.arange(1, 31)
    p = np.exp(GEOM.log_qtilde(l))
    assert generic_availability(z, p) == pytest.approx(availability_shifted(z, GEOM), rel=1e-13)
    assert generic_availability(z, log_p=np.log(p)) == pytest.approx(availability_shifted(z, GEOM), rel=1e-13)
    with pytest.raises(InvalidParameterError):
        generic_availability(z, np.ones(10))
    with pytest.raises(InvalidParameterError):
        generic_availability(z, np.zeros(30))


def test_shifted_availability_of_equilibrium():
    sol = solve_equilibrium(GEOM, 1.0)
    # A~(z_bar) = rho ln mu_bar; tail past 400 is below 1e-150
    assert availability_shifted(sol.state(400), GEOM) == pytest.approx(math.log(1 / 3), abs=1e-12)


def test_production_hand_example():
    # c = z1 z1 = 1, w = N r z2 = 4 for z = (1, 1) on the ratio-2 ladder
    z = ClusterState([1.0, 1.0])
    assert availability_production(z, GEOM, CONST) == pytest.approx(-3 * math.log(4.0), rel=1e-15)
    assert dissipation_lower_bound(z, GEOM, CONST) == pytest.approx(2.25, rel=1e-15)
    rep = availability_report(z, GEOM, CONST)
    assert not rep.boundary_flag
    assert rep.production == pytest.approx(-3 * math.log(4.0))


def test_production_boundary_sentinel():
    z = ClusterState([1.0, 0.0, 0.0])
    assert availability_production(z, GEOM, CONST) == PRODUCTION_SENTINEL
    assert availability_report(z, GEOM, CONST).boundary_flag
    terms = production_summands(z, GEOM, CONST)
    assert terms[0] == -math.inf and terms[1] == 0.0


def test_production_vanishes_at_equilibrium():
    for ladder in EQ_LADDERS:
        z = solve_equilibrium(ladder, 1.0).state(100)
        assert abs(availability_production(z, ladder, CONST)) <= 1e-20
        assert dissipation_lower_bound(z, ladder, CONST) <= 1e-20


def test_dissipation_summandwise_bound():
    rng = np.random.default_rng(23)
    for ladder in EQ_LADDERS + [EnergyLadder.example1(2.0, 2.0)]:
        for kin in (CONST, KineticCoefficients.power(0.5)):
            z = random_state(rng, 30) + 1e-3
            p = production_summands(z, ladder, kin)
            d = dissipation_summands(z, ladder, kin)
            assert np.all(p <= 0.0)
            assert np.all(-p >= d * (1 - 1e-12))


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(1e-6, 10.0)), st.floats(-2.0, 2.0))
def test_production_nonpositive_property(v, beta):
    ladder = EnergyLadder.geometric(beta)
    p = availability_production(v, ladder, CONST)
    d = dissipation_lower_bound(v, ladder, CONST)
    assert p <= 0.0
    assert -p >= d * (1 - 1e-12) - 1e-300


@pytest.mark.parametrize("ladder", [GEOM, EnergyLadder.example1(2.0, 2.0)])
def test_production_matches_finite_difference(ladder):
    model = ModifiedModel(ladder, CONST)
    z0 = random_state(np.random.default_rng(24), 20) + 0.05
    cfg = IntegratorConfig(t_end=2e-4, record_every=1e-4, rel_tol=1e-13, abs_tol=1e-15)
    traj = simulate(z0, model, cfg)
    slope = (traj.A[2] - traj.A[0]) / 2e-4
    prod = availability_production(traj.state(1), ladder, CONST)
    assert slope == pytest.approx(prod, rel=1e-4)


def test_jensen_bound_at_equilibrium_is_tight():
    sol = solve_equilibrium(GEOM, 1.0)
    z = sol.state(400)
    assert jensen_lower_bound(z, GEOM, sol.mu_bar) == pytest.approx(availability_shifted(z, GEOM), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(0.0, 5.0)),
       st.floats(1e-3, 0.999), st.sampled_from(range(3)))
def test_jensen_property(v, mu, which):
    ladder = EQ_LADDERS[which]
    assert availability_shifted(v, ladder) - jensen_lower_bound(v, ladder, mu) >= -1e-12 * (1 + v.sum() * 40)


def test_jensen_mu_one():
    ex1 = EnergyLadder.example1(2.0, 2.0)
    z = random_state(np.random.default_rng(25), 20)
    assert availability_shifted(z, ex1) >= jensen_lower_bound(z, ex1, 1.0) - 1e-12
    with pytest.raises(DivergenceError):
        jensen_lower_bound(z, GEOM, 1.0)
    for bad in (0.0, 1.5, -0.2):
        with pytest.raises(InvalidParameterError):
            jensen_lower_bound(z, GEOM, bad)
    assert jensen_lower_bound(np.zeros(4), GEOM, 0.5) == 0.0


def test_standard_lyapunov():
    sm = StandardModelParams(alpha=0.0, gamma_exp=0.5)
    z = ClusterState([2.0, 1.0])
    d2 = 1 + 2 ** -0.5
    expected = 2 * math.log(2) - 2 + 1.0 * (math.log(d2) - 1)
    assert standard_lyapunov(z, sm) == pytest.approx(expected, rel=1e-14)


def test_standard_lyapunov_decreases():
    sm = StandardModelParams()
    z0 = standard_equilibrium(sm, 0.3).state(40).values * 2.0
    traj = simulate(z0, StandardModel(sm), IntegratorConfig(t_end=5.0, record_every=0.5))
    assert np.all(np.diff(traj.A) <= 1e-12)
