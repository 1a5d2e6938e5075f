from __future__ import annotations

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activeshot.data import synth_glyphs
from activeshot.episodes import (
    EpisodeStep,
    build_episode,
    epsilon_greedy,
    observe,
    reward,
)
from activeshot.errors import ActionError, DataError
from activeshot.metrics import RunMetrics, accumulate_metrics
from activeshot.seeding import derive_rng


@pytest.fixture(scope="module")
def dataset():
    return synth_glyphs(12, samples_per_class=12, noise=0.05, seed=0)


# ---------------------------------------------------------------------------
# episode construction


def test_single_class_episode(dataset):
    spec = build_episode(dataset, num_classes=1, items_per_class=10, rng=derive_rng(0))
    assert spec.length == 10
    assert len(spec.class_ids) == 1
    assert spec.label_permutation[spec.class_ids[0]] == 0
    assert (spec.slots == 0).all()


def test_same_seed_reproduces_episode(dataset):
    a = build_episode(dataset, 3, 10, rng=derive_rng(7))
    b = build_episode(dataset, 3, 10, rng=derive_rng(7))
    assert a.class_ids == b.class_ids
    assert a.item_order == b.item_order
    assert a.label_permutation == b.label_permutation
    np.testing.assert_array_equal(a.images, b.images)


def test_episode_counts_and_instances(dataset):
    spec = build_episode(dataset, 3, 10, rng=derive_rng(1))
    assert spec.length == 30
    # Every class appears exactly items_per_class times, instance indices
    # run 1..items_per_class in order of appearance.
    seen: dict[str, list[int]] = {}
    for t, (cid, _) in enumerate(spec.item_order):
        seen.setdefault(cid, []).append(int(spec.instance_index[t]))
    assert set(seen) == set(spec.class_ids)
    for occurrences in seen.values():
        assert occurrences == list(range(1, 11))


def test_permutation_is_bijection(dataset):
    spec = build_episode(dataset, 4, 5, rng=derive_rng(2))
    assert sorted(spec.label_permutation.values()) == [0, 1, 2, 3]


def test_samples_drawn_without_replacement(dataset):
    spec = build_episode(dataset, 2, 10, rng=derive_rng(3))
    per_class: dict[str, set[int]] = {}
    for cid, j in spec.item_order:
        per_class.setdefault(cid, set()).add(j)
    assert all(len(js) == 10 for js in per_class.values())


def test_slot_histogram_uniform(dataset):
    # Statistical oracle: over many episodes the slot assigned to the
    # first drawn class is multinomially uniform.
    trials = 6000
    c = 3
    counts = np.zeros(c)
    for i in range(trials):
        spec = build_episode(dataset, c, 1, rng=derive_rng(4, i))
        counts[spec.label_permutation[spec.class_ids[0]]] += 1
    expected = trials / c
    sigma = np.sqrt(trials * (1 / c) * (1 - 1 / c))
    assert np.abs(counts - expected).max() < 3 * sigma


def test_insufficient_classes_or_samples(dataset):
    with pytest.raises(DataError):
        build_episode(dataset, num_classes=50, rng=derive_rng(5))
    with pytest.raises(DataError):
        build_episode(dataset, num_classes=2, items_per_class=99, rng=derive_rng(5))


# ---------------------------------------------------------------------------
# observations


def test_observe_first_step_hint_is_zero(dataset):
    spec = build_episode(dataset, 3, 10, rng=derive_rng(6))
    obs = observe(spec, 0, None)
    assert obs.shape == (403,)
    np.testing.assert_array_equal(obs[400:], np.zeros(3))
    np.testing.assert_array_equal(obs[:400], spec.images[0])


def test_observe_after_prediction_hint_is_zero(dataset):
    spec = build_episode(dataset, 3, 10, rng=derive_rng(7))
    for predicted in range(3):
        obs = observe(spec, 1, predicted)
        np.testing.assert_array_equal(obs[400:], np.zeros(3))


def test_observe_after_request_hint_marks_previous_slot(dataset):
    spec = build_episode(dataset, 3, 10, rng=derive_rng(8))
    obs = observe(spec, 1, spec.request_action)
    expected = np.zeros(3)
    expected[spec.slots[0]] = 1.0
    np.testing.assert_array_equal(obs[400:], expected)


def test_observe_hand_traced_three_step_episode(dataset):
    # request, predict, request: hints are zero, onehot(slot0), zero, onehot(slot2).
    spec = build_episode(dataset, 2, 2, rng=derive_rng(9))
    req = spec.request_action
    o0 = observe(spec, 0, None)
    o1 = observe(spec, 1, req)
    o2 = observe(spec, 2, 0)
    o3 = observe(spec, 3, req)
    np.testing.assert_array_equal(o0[400:], [0, 0])
    np.testing.assert_array_equal(o1[400:], np.eye(2)[spec.slots[0]])
    np.testing.assert_array_equal(o2[400:], [0, 0])
    np.testing.assert_array_equal(o3[400:], np.eye(2)[spec.slots[2]])


def test_observe_out_of_range(dataset):
    spec = build_episode(dataset, 2, 2, rng=derive_rng(10))
    with pytest.raises(DataError):
        observe(spec, 4, None)


# ---------------------------------------------------------------------------
# rewards and exploration


def test_reward_table():
    assert reward(3, 1, num_classes=3) == -0.05
    assert reward(3, 0, num_classes=3) == -0.05
    assert reward(1, 1, num_classes=3) == 1.0
    assert reward(2, 1, num_classes=3) == -1.0


def test_reward_action_out_of_range():
    with pytest.raises(ActionError):
        reward(4, 0, num_classes=3)
    with pytest.raises(ActionError):
        reward(-1, 0, num_classes=3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(0, 2))
def test_reward_values_are_in_contract(action, slot):
    assert reward(action, slot, num_classes=3) in (-0.05, 1.0, -1.0)


def test_epsilon_zero_always_argmax():
    rng = derive_rng(11)
    q = np.array([0.1, 0.9, 0.3])
    assert all(epsilon_greedy(q, 0.0, rng) == 1 for _ in range(100))


def test_epsilon_zero_tie_picks_lowest_index():
    rng = derive_rng(12)
    q = np.array([0.5, 0.5, 0.5])
    assert epsilon_greedy(q, 0.0, rng) == 0


def test_epsilon_zero_request_when_max():
    rng = derive_rng(13)
    q = np.array([0.0, 0.1, 0.9])  # request sits at the last index
    assert epsilon_greedy(q, 0.0, rng) == 2


def test_epsilon_one_uniform_over_all_actions():
    # Statistical oracle: 30000 fully exploratory draws over 3 actions.
    rng = derive_rng(14)
    q = np.array([5.0, 0.0, 0.0])
    draws = 30000
    counts = np.zeros(3)
    for _ in range(draws):
        counts[epsilon_greedy(q, 1.0, rng)] += 1
    expected = draws / 3
    sigma = np.sqrt(draws * (1 / 3) * (2 / 3))
    assert np.abs(counts - expected).max() < 3 * sigma


# ---------------------------------------------------------------------------
# label-permutation independence


def test_relabeling_permutes_rewards_consistently(dataset):
    spec = build_episode(dataset, 3, 4, rng=derive_rng(15))
    # Re-slot the same episode through a different bijection.
    remap = {0: 2, 1: 0, 2: 1}
    new_perm = {cid: remap[slot] for cid, slot in spec.label_permutation.items()}
    respec = dataclasses.replace(
        spec,
        label_permutation=new_perm,
        slots=np.array([new_perm[cid] for cid, _ in spec.item_order]),
    )
    rng = derive_rng(16)
    for t in range(spec.length):
        action = int(rng.integers(0, 4))
        mapped = remap[action] if action < 3 else action
        assert reward(action, int(spec.slots[t]), 3) == reward(
            mapped, int(respec.slots[t]), 3
        )


# ---------------------------------------------------------------------------
# metrics accounting


def make_step(action, slot, instance, num_classes=3):
    r = reward(action, slot, num_classes)
    return EpisodeStep(
        observation=np.zeros(400 + num_classes, dtype=np.float32),
        action=action,
        reward=r,
        true_slot=slot,
        instance_index=instance,
    )


def test_all_requests_episode_metrics():
    metrics = RunMetrics.empty(2)
    steps = [make_step(3, 0, 1), make_step(3, 1, 1), make_step(3, 0, 2), make_step(3, 1, 2)]
    accumulate_metrics(steps, metrics, num_classes=3)
    for k in (1, 2):
        assert metrics.accuracy_pct(k) is None
        assert metrics.request_pct(k) == 100.0


def test_single_correct_prediction_metrics():
    metrics = RunMetrics.empty(2)
    steps = [make_step(3, 0, 1), make_step(1, 1, 2)]
    accumulate_metrics(steps, metrics, num_classes=3)
    assert metrics.accuracy_pct(2) == 100.0
    assert metrics.request_pct(2) == 0.0
    assert metrics.request_pct(1) == 100.0


def test_episode_action_conservation(dataset):
    spec = build_episode(dataset, 3, 10, rng=derive_rng(17))
    rng = derive_rng(18)
    metrics = RunMetrics.empty(10)
    steps = []
    for t in range(spec.length):
        action = int(rng.integers(0, 4))
        steps.append(
            EpisodeStep(
                observation=observe(spec, t, None),
                action=action,
                reward=reward(action, int(spec.slots[t]), 3),
                true_slot=int(spec.slots[t]),
                instance_index=int(spec.instance_index[t]),
            )
        )
    accumulate_metrics(steps, metrics, num_classes=3)
    assert metrics.n_requests.sum() + metrics.n_predictions.sum() == spec.length


def test_metrics_against_hand_computed_batch():
    # Independent oracle: plain dict counting over a scripted 100-episode
    # batch, compared exactly against the accumulators.
    rng = derive_rng(19)
    num_classes, items = 3, 4
    metrics = RunMetrics.empty(items)
    expect = {k: {"req": 0, "pred": 0, "correct": 0} for k in range(1, items + 1)}
    for _ in range(100):
        steps = []
        for _ in range(num_classes * items):
            k = int(rng.integers(1, items + 1))
            action = int(rng.integers(0, num_classes + 1))
            slot = int(rng.integers(0, num_classes))
            steps.append(make_step(action, slot, k, num_classes))
            if action == num_classes:
                expect[k]["req"] += 1
            else:
                expect[k]["pred"] += 1
                expect[k]["correct"] += int(action == slot)
        accumulate_metrics(steps, metrics, num_classes=num_classes)
    for k in range(1, items + 1):
        assert metrics.n_requests[k - 1] == expect[k]["req"]
        assert metrics.n_predictions[k - 1] == expect[k]["pred"]
        assert metrics.n_correct[k - 1] == expect[k]["correct"]
        if expect[k]["pred"]:
            assert metrics.accuracy_pct(k) == 100.0 * expect[k]["correct"] / expect[k]["pred"]
        total = expect[k]["req"] + expect[k]["pred"]
        assert metrics.request_pct(k) == 100.0 * expect[k]["req"] / total


def test_metrics_csv_layout(tmp_path):
    metrics = RunMetrics.empty(2)
    accumulate_metrics([make_step(3, 0, 1), make_step(0, 0, 2)], metrics, num_classes=3)
    path = tmp_path / "metrics.csv"
    metrics.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "instance_index,accuracy_pct,request_pct,n_predictions,n_requests"
    assert lines[1].startswith("1,,100.0")  # no predictions at k=1: blank accuracy
    assert lines[2].startswith("2,100.0,0.0")
