"""The stream-based active-learning task.

An episode presents C classes x items_per_class shuffled images one at a
time. Class identities map to one-hot slots through a permutation drawn
fresh per episode, so nothing ties a dataset class to a fixed output
position across episodes. Per item the agent picks one of C class
predictions or the request action (index C). Requesting costs -0.05 and
reveals the true slot as a one-hot hint appended to the *next*
observation; predicting earns +1 when right and -1 when wrong and reveals
nothing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import ActionError, DataError

if TYPE_CHECKING:
    from .data import Dataset

REQUEST_REWARD = -0.05
CORRECT_REWARD = 1.0
WRONG_REWARD = -1.0


@dataclass(eq=False)
class EpisodeSpec:
    """One episode's classes, slot permutation, and materialized stream.

    ``images`` holds the flattened item at each step, ``slots`` the item's
    episode-local label slot, and ``instance_index`` how many times the
    item's class has appeared so far (1-based).
    """

    num_classes: int
    items_per_class: int
    class_ids: tuple[str, ...]
    label_permutation: dict[str, int]
    item_order: tuple[tuple[str, int], ...]
    images: np.ndarray  # (T, pixels) float32
    slots: np.ndarray  # (T,) int64
    instance_index: np.ndarray  # (T,) int64

    @property
    def length(self) -> int:
        return self.num_classes * self.items_per_class

    @property
    def request_action(self) -> int:
        return self.num_classes


@dataclass
class EpisodeStep:
    """One environment interaction, as consumed by the metrics tables."""

    observation: np.ndarray
    action: int
    reward: float
    true_slot: int
    instance_index: int


def build_episode(
    dataset: "Dataset",
    num_classes: int,
    items_per_class: int = 10,
    rng: np.random.Generator | None = None,
    class_ids: list[str] | None = None,
) -> EpisodeSpec:
    """Sample classes, samples, slot permutation, and the item shuffle.

    Draw order is fixed (classes, permutation, per-class samples, item
    shuffle) so a seeded generator reproduces the episode exactly.
    ``class_ids`` skips the class draw, which is how margin-based episode
    construction injects its selection.
    """
    rng = rng if rng is not None else np.random.default_rng()
    all_ids = dataset.class_ids()
    if class_ids is None:
        if len(all_ids) < num_classes:
            raise DataError(
                f"dataset has {len(all_ids)} classes, episode needs {num_classes}"
            )
        picked = [all_ids[i] for i in rng.choice(len(all_ids), num_classes, replace=False)]
    else:
        if len(class_ids) != num_classes:
            raise DataError(f"expected {num_classes} class ids, got {len(class_ids)}")
        picked = list(class_ids)

    perm = rng.permutation(num_classes)
    label_permutation = {cid: int(perm[i]) for i, cid in enumerate(picked)}

    items: list[tuple[str, int]] = []
    for cid in picked:
        stack = dataset.samples(cid)
        if len(stack) < items_per_class:
            raise DataError(
                f"class {cid!r} has {len(stack)} samples, episode needs {items_per_class}"
            )
        idx = rng.choice(len(stack), items_per_class, replace=False)
        items.extend((cid, int(j)) for j in idx)
    order = rng.permutation(len(items))
    item_order = tuple(items[i] for i in order)

    images = np.stack(
        [dataset.samples(cid)[j].reshape(-1) for cid, j in item_order]
    ).astype(np.float32)
    slots = np.array([label_permutation[cid] for cid, _ in item_order], dtype=np.int64)
    seen: dict[str, int] = {}
    instance = np.empty(len(item_order), dtype=np.int64)
    for t, (cid, _) in enumerate(item_order):
        seen[cid] = seen.get(cid, 0) + 1
        instance[t] = seen[cid]
    return EpisodeSpec(
        num_classes=num_classes,
        items_per_class=items_per_class,
        class_ids=tuple(picked),
        label_permutation=label_permutation,
        item_order=item_order,
        images=images,
        slots=slots,
        instance_index=instance,
    )


def observe(spec: EpisodeSpec, t: int, prev_action: int | None) -> np.ndarray:
    """Observation at step t: flattened image plus the label-hint vector.

    The hint is the previous item's true slot, one-hot, and only when the
    previous action paid for it with a label request; in every other case
    (including t=0 and after any prediction) it is all zeros.
    """
    if not 0 <= t < spec.length:
        raise DataError(f"step {t} outside episode of length {spec.length}")
    hint = np.zeros(spec.num_classes, dtype=np.float32)
    if t > 0 and prev_action == spec.request_action:
        hint[spec.slots[t - 1]] = 1.0
    return np.concatenate([spec.images[t], hint])


def reward(action: int, true_slot: int, num_classes: int) -> float:
    """-0.05 per label request, +1 for a correct prediction, -1 otherwise."""
    if not 0 <= action <= num_classes:
        raise ActionError(f"action {action} outside 0..{num_classes}")
    if action == num_classes:
        return REQUEST_REWARD
    return CORRECT_REWARD if action == true_slot else WRONG_REWARD


def epsilon_greedy(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Greedy argmax (lowest index wins ties) or, with prob. epsilon, a
    uniform draw over all C+1 actions."""
    explore = rng.random() < epsilon
    if explore:
        return int(rng.integers(len(q_values)))
    return int(np.argmax(q_values))
