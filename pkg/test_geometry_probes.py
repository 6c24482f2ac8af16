"""
Tests for the Banach-geometry probes
Run with: pytest test_geometry_probes.py -v
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from geometry_probes import (
    DualityMapError,
    EmptyCandidateSetError,
    GaugeFunction,
    asymptotic_center,
    basis_sequence,
    conjugate_exponent,
    duality_map,
    fixed_set_convexity_check,
    level_sets,
    line_grid,
    modulus_curve,
    modulus_of_convexity,
    opial_margin,
    sequential_convexity_probe,
    verify_duality_identity,
    weak_continuity_probe,
)
from iteration import ReferencePointError, estimate_weak_clusters, run_iteration
from operators import example_operator, identity_operator, planar_halving_operator
from sequence_space import SeqVector, basis, norm

MODULUS_L2_AT_ONE = 1.0 - math.sqrt(3.0) / 2.0


# Opial margin

@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_opial_margin_along_basis(p):
    result = opial_margin(basis_sequence(p), SeqVector.zero(p), basis(1, p), 64)
    assert result.liminf_to_limit == pytest.approx(1.0, abs=1e-10)
    assert result.liminf_to_other == pytest.approx(2.0 ** (1.0 / p), abs=1e-10)
    assert result.margin == pytest.approx(2.0 ** (1.0 / p) - 1.0, abs=1e-10)
    assert result.weakly_convergent


def test_opial_margin_l2_value():
    result = opial_margin(basis_sequence(2.0), SeqVector.zero(), basis(1), 64)
    assert result.margin == pytest.approx(math.sqrt(2.0) - 1.0, abs=1e-10)


def test_opial_margin_vanishes_for_same_point():
    result = opial_margin(basis_sequence(2.0), SeqVector.zero(), SeqVector.zero(), 64)
    assert result.margin == 0.0


@settings(max_examples=50)
@given(st.lists(st.floats(min_value=-3.0, max_value=3.0, allow_nan=False), min_size=1, max_size=5)
       .filter(lambda values: any(abs(v) > 1e-3 for v in values)),
       st.sampled_from([1.5, 2.0, 3.0]))
def test_opial_margin_is_positive_for_disjoint_supports(values, p):
    v = SeqVector.of(*values, p=p)
    result = opial_margin(basis_sequence(p), SeqVector.zero(p), v, 64)
    expected = (1.0 + norm(v) ** p) ** (1.0 / p) - 1.0
    assert result.margin > 0
    assert result.margin == pytest.approx(expected, abs=1e-10)


def test_opial_margin_needs_a_tail():
    with pytest.raises(ValueError):
        opial_margin(basis_sequence(2.0), SeqVector.zero(), basis(1), 1)


# Duality map

def test_duality_map_is_identity_in_l2():
    x = SeqVector.of(0.3, -1.7, 2.5)
    assert duality_map(x) == x


def test_duality_map_in_l3():
    x = SeqVector.of(1.0, -2.0, p=3.0)
    jx = duality_map(x)
    assert jx == SeqVector.of(1.0, -4.0, p=1.5)
    identity = verify_duality_identity(x)
    assert identity.pairing == pytest.approx(9.0, abs=1e-12)
    assert identity.holds()


def test_duality_map_of_zero():
    assert duality_map(SeqVector.zero(3.0)) == SeqVector.zero(1.5)


def test_duality_map_rejects_l1():
    with pytest.raises(DualityMapError):
        duality_map(SeqVector.of(1.0, p=1.0))
    with pytest.raises(DualityMapError):
        GaugeFunction.canonical(1.0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_duality_identity_on_random_vectors(p):
    rng = np.random.default_rng(17)
    for values in rng.standard_normal((10_000, 6)):
        assert verify_duality_identity(SeqVector.from_array(values, p)).holds(1e-10)


def test_duality_identity_with_other_gauge():
    x = SeqVector.of(0.5, -1.0, 2.0, p=3.0)
    assert verify_duality_identity(x, GaugeFunction.power(3.0)).holds()
    assert verify_duality_identity(x, GaugeFunction(name="exp", rule=lambda t: math.expm1(t))).holds()


def test_gauge_functions():
    assert GaugeFunction.canonical(3.0)(2.0) == 4.0
    assert GaugeFunction.power(0.5).is_admissible()
    assert not GaugeFunction(name="flat", rule=lambda t: 0.0 * t).is_admissible()
    assert not GaugeFunction(name="shifted", rule=lambda t: t + 1.0).is_admissible()
    with pytest.raises(ValueError):
        GaugeFunction.power(0.0)
    assert conjugate_exponent(3.0) == 1.5
    assert math.isinf(conjugate_exponent(1.0))


# Weak continuity

@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_duality_map_weakly_continuous_along_basis(p):
    result = weak_continuity_probe(None, p, 100)
    assert result.passed
    assert result.tail_values == [0.0] * 4


@pytest.mark.parametrize("N", [10, 20, 26])
@pytest.mark.parametrize("p", [2.0, 3.0])
def test_duality_map_weakly_continuous_on_short_sequences(p, N):
    result = weak_continuity_probe(None, p, N)
    assert result.passed
    assert result.head_values[-1] == 0.5
    assert result.tail_values[-1] == pytest.approx(0.5 ** (N - max(1, N // 10) + 1), rel=1e-12)


@pytest.mark.parametrize("N", [10, 20, 100])
def test_weak_continuity_is_not_fooled_by_constant_sequence(N):
    result = weak_continuity_probe(None, 2.0, N, sequence=lambda n: basis(1))
    assert not result.passed
    assert result.tail_values[0] == 1.0


def test_weak_continuity_probe_needs_p_above_one():
    with pytest.raises(DualityMapError):
        weak_continuity_probe(None, 1.0, 10)


# Modulus of convexity

def test_modulus_l2_at_two():
    assert modulus_of_convexity(2.0, 2.0, 1000, seed=0).delta == pytest.approx(1.0, abs=1e-12)


def test_modulus_l2_at_one():
    estimate = modulus_of_convexity(2.0, 1.0, 200_000, seed=0)
    assert MODULUS_L2_AT_ONE - 1e-12 <= estimate.delta <= MODULUS_L2_AT_ONE + 5e-3
    assert norm(estimate.witness_u - estimate.witness_v) >= 1.0 - 1e-12


def test_modulus_tends_to_zero():
    assert modulus_of_convexity(2.0, 1e-3, 5000, seed=0).delta <= 1e-6


def test_modulus_curve_is_monotone():
    curve = modulus_curve(2.0, [0.25, 0.5, 1.0, 1.5, 2.0], 20_000, seed=4)
    deltas = [delta for _, delta in curve]
    assert all(delta >= 0.0 for delta in deltas)
    assert all(b >= a - 1e-12 for a, b in zip(deltas, deltas[1:]))


def test_modulus_l3_respects_lower_bound():
    estimate = modulus_of_convexity(3.0, 1.0, 20_000, seed=1)
    assert estimate.delta >= 1.0 - (1.0 - 0.5 ** 3) ** (1.0 / 3.0) - 1e-9


def test_modulus_rejects_bad_epsilon():
    with pytest.raises(ValueError):
        modulus_of_convexity(2.0, 0.0, 10, seed=0)
    with pytest.raises(ValueError):
        modulus_of_convexity(2.0, 2.5, 10, seed=0)


# Sequential uniform convexity

def test_sequential_convexity_forces_difference_to_vanish():
    u_seq = lambda n: basis(1)
    v_seq = lambda n: SeqVector.of(1.0, 1.0 / n) * (1.0 / math.sqrt(1.0 + n ** -2))
    result = sequential_convexity_probe(u_seq, v_seq, 1.0, 10_000)
    assert result.premise
    assert result.conclusion
    assert result.implication_holds


def test_sequential_convexity_premise_fails_for_opposite_points():
    result = sequential_convexity_probe(lambda n: basis(1), lambda n: -basis(1), 1.0, 100)
    assert not result.premise
    assert result.implication_holds


# Asymptotic center

@pytest.fixture(scope="module")
def halving_trace():
    return run_iteration(planar_halving_operator(), SeqVector.of(1.0, 1.0), 60)


def test_asymptotic_center_on_the_fixed_line(halving_trace):
    T = planar_halving_operator()
    result = asymptotic_center(halving_trace, line_grid("-2:2:0.01"), T)
    assert result.y0.to_array(2) == pytest.approx([1.0, 0.0], abs=1e-9)
    assert result.r0 <= 1e-8
    assert all(value >= result.r0 - 1e-10 for value in result.values)
    assert result.values[0] == pytest.approx(3.0, abs=1e-9)
    assert result.nested
    assert result.level_set_diameter(1e-9) <= 2 * 0.01

    cluster = estimate_weak_clusters(halving_trace).points[0]
    assert np.max(np.abs(cluster.to_array(2) - result.y0.to_array(2))) <= 1e-6


def test_asymptotic_center_singleton(halving_trace):
    y = SeqVector.of(-1.0, 0.0)
    result = asymptotic_center(halving_trace, [y], planar_halving_operator())
    assert result.y0 == y
    assert result.r0 == pytest.approx(2.0, abs=1e-9)
    assert result.index == 0


def test_asymptotic_center_of_example():
    T = example_operator()
    trace = run_iteration(T, basis(3), 40)
    result = asymptotic_center(trace, [SeqVector.zero()], T)
    assert result.y0 == SeqVector.zero()
    assert result.r0 == 0.0


def test_asymptotic_center_rejects_bad_candidates(halving_trace):
    with pytest.raises(EmptyCandidateSetError):
        asymptotic_center(halving_trace, [], planar_halving_operator())
    with pytest.raises(ReferencePointError):
        asymptotic_center(halving_trace, [SeqVector.of(1.0, 1.0)], planar_halving_operator())


def test_asymptotic_center_resolves_operator_by_name(halving_trace):
    result = asymptotic_center(halving_trace, line_grid("0:2:0.5"))
    assert result.index == 2


def test_level_sets_nest():
    sets, nested = level_sets([0.0, 1.0, 2.0], [1.5, 0.5])
    assert sets == [{0, 1}, {0}]
    assert nested


def test_line_grid():
    grid = line_grid("-1:1:0.5")
    assert [y.coordinate(1) for y in grid] == [-1.0, -0.5, 0.0, 0.5, 1.0]
    with pytest.raises(ValueError):
        line_grid("1:-1:0.5")
    with pytest.raises(ValueError):
        line_grid("0:1:0")


def test_fixed_set_is_convex():
    worst, ok = fixed_set_convexity_check(
        planar_halving_operator(), [SeqVector.of(-1.0, 0.0), SeqVector.of(2.0, 0.0)], 100, seed=0
    )
    assert ok
    assert worst == 0.0
    _, ok = fixed_set_convexity_check(identity_operator(), [basis(1), basis(2)], 50, seed=0)
    assert ok
    with pytest.raises(EmptyCandidateSetError):
        fixed_set_convexity_check(identity_operator(), [], 10, seed=0)
