import numpy as np
import pytest
from hypothesis import given, strategies as st

from oranslice.mdp import (Observation, action_to_allocation, compute_reward, encode_state,
                           largest_remainder, project_action)
from oranslice.radio import QoSReport, SliceTargets, UEState, validate_allocation


def report(values=(0.0, 0.0, 0.0), sat=(0.0, 0.0, 0.0)):
    return QoSReport(np.array(values, dtype=float), np.array(sat, dtype=float), np.zeros(0))


SLICES = SliceTargets().bind([20, 20, 10])


def test_zero_state_keeps_only_densities():
    obs = encode_state(report(), [20, 20, 10], np.zeros(3), SLICES)
    np.testing.assert_array_equal(obs.qos_values, 0.0)
    np.testing.assert_array_equal(obs.prev_action, 0.0)
    np.testing.assert_allclose(obs.ue_density, [0.4, 0.4, 0.2])


def test_qos_at_target_encodes_to_one():
    lam = [s.lambda_target for s in SLICES]
    obs = encode_state(report(lam), [20, 20, 10], np.zeros(3), SLICES)
    np.testing.assert_allclose(obs.qos_values, [1.0, 1.0, 1.0], rtol=1e-15)


def test_observation_vector_round_trip():
    obs = encode_state(report([1e6, 10, 5e-3]), [20, 20, 10], np.array([0.1, 0.2, 0.3]), SLICES)
    v = obs.vector
    assert v.shape == (9,)
    back = Observation.from_vector(v, 3)
    np.testing.assert_array_equal(back.vector, v)


def test_encode_rejects_wrong_widths():
    with pytest.raises(ValueError):
        encode_state(report(), [20, 30], np.zeros(3), SLICES)


def test_exact_fractions():
    alloc = action_to_allocation(np.array([0.5, 0.3, 0.2]), 50)
    np.testing.assert_array_equal(alloc.slice_rb.sum(axis=1), [25, 15, 10])


def test_saturated_action_is_projected():
    alloc = action_to_allocation(np.ones(3), 50, ue_slice=np.array([0, 1, 2, 2]))
    counts = alloc.slice_rb.sum(axis=1)
    assert counts.sum() <= 50
    assert max(counts) - min(counts) <= 1
    np.testing.assert_array_equal(counts, [17, 17, 16])     # tie goes to the lower index
    validate_allocation(alloc, np.array([0, 1, 2, 2]), 50)


def test_zero_action_is_empty():
    ues = [UEState(i, i % 3, np.zeros(2), 50.0) for i in range(6)]
    alloc = action_to_allocation(np.zeros(3), 20, ues)
    assert alloc.slice_rb.sum() == 0 and alloc.ue_rb.sum() == 0
    assert compute_reward(report()) == 0.0


def test_blocks_are_contiguous_and_ordered():
    alloc = action_to_allocation(np.array([0.2, 0.5, 0.3]), 10)
    owner = np.argmax(alloc.slice_rb, axis=0)
    np.testing.assert_array_equal(owner, [0, 0, 1, 1, 1, 1, 1, 2, 2, 2])


@pytest.mark.parametrize("bad", [[-0.1, 0.5, 0.5], [0.2, 1.2, 0.0], [np.nan, 0.1, 0.1]])
def test_out_of_range_actions_rejected(bad):
    with pytest.raises(ValueError):
        project_action(np.array(bad))


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.integers(0, 200))
def test_largest_remainder_properties(a, k):
    frac = project_action(np.array(a))
    counts = largest_remainder(frac, k)
    assert counts.sum() <= k
    assert (counts >= 0).all()
    # each slice within one RB of its exact quota
    assert np.all(np.abs(counts - frac * k) < 1 + 1e-9)
    if frac.sum() > 1 - 1e-12:
        assert counts.sum() == k


@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.integers(1, 40),
       st.lists(st.integers(0, 2), min_size=1, max_size=12), st.integers(0, 2 ** 16))
def test_allocation_always_valid(a, k, ue_slice, seed):
    ue_slice = np.array(ue_slice)
    active = np.random.default_rng(seed).random(len(ue_slice)) < 0.7
    alloc = action_to_allocation(np.array(a), k, ue_slice=ue_slice, active=active)
    validate_allocation(alloc, ue_slice, k)
    # every RB of a slice with an active member is granted to exactly one UE
    for l in range(3):
        rbs = alloc.slice_rb[l].astype(bool)
        if active[ue_slice == l].any():
            np.testing.assert_array_equal(alloc.ue_rb[:, rbs].sum(axis=0), 1)


@pytest.mark.parametrize("sat,want", [((1, 1, 1), 3.0), ((0, 0, 0), 0.0), ((1.0, 0.5, 0.25), 1.75)])
def test_reward(sat, want):
    assert compute_reward(report(sat=sat)) == want
