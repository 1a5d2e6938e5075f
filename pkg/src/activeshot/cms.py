"""Margin-based episode construction: pre-screen a pool of candidate
classes with the current model and keep the ones it is least sure about.

Each candidate class is probed with a short standalone mini-episode of T
samples of that class, run greedily (no exploration, no learning), with
the usual delayed label-feedback mechanics driven by the greedy actions.
Memory and hidden state are fresh per probe and discarded afterwards, so
probing never touches persistent model state.

A class's margin is the sum over the T probe steps of |max_a Q|, the
absolute value taken after the maximum: a small margin means no action
value stands out, i.e. the model finds the class hard, and the C classes
with the smallest margins are selected (ties keep draw order).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, no_grad
from .config import CmsConfig
from .data import Dataset
from .errors import DataError
from .network import QNetwork


@dataclass
class ClassMargin:
    class_id: str
    margin: float


def probe_classes(
    model: QNetwork,
    dataset: Dataset,
    class_ids: list[str],
    margin_steps: int,
    rng: np.random.Generator,
) -> list[ClassMargin]:
    """Probe every class with one mini-episode; all probes run in parallel
    rows of a single batch, each from a freshly reset state.

    Per class, in draw order, the generator supplies the T sample indices
    (without replacement) and then the class's hint slot.
    """
    num_classes = model.num_classes
    t_steps = margin_steps
    images = []
    slots = []
    for cid in class_ids:
        stack = dataset.samples(cid)
        if len(stack) < t_steps:
            raise DataError(
                f"class {cid!r} has {len(stack)} samples, probe needs {t_steps}"
            )
        idx = rng.choice(len(stack), t_steps, replace=False)
        images.append(stack[idx].reshape(t_steps, -1))
        slots.append(int(rng.integers(num_classes)))
    batch = np.stack(images, axis=1).astype(np.float32)  # (T, B, pixels)
    slot_arr = np.array(slots)

    margins = np.zeros(len(class_ids))
    with no_grad():
        state = model.init_state(len(class_ids))
        prev_greedy = np.full(len(class_ids), -1)
        for t in range(t_steps):
            hint = np.zeros((len(class_ids), num_classes), dtype=np.float32)
            if t > 0:
                requested = prev_greedy == num_classes
                hint[requested, slot_arr[requested]] = 1.0
            obs = np.concatenate([batch[t], hint], axis=1)
            q, state = model.step(Tensor(obs), state, allow_write=True)
            margins += np.abs(q.data.max(axis=1))
            prev_greedy = q.data.argmax(axis=1)
    return [ClassMargin(cid, float(m)) for cid, m in zip(class_ids, margins)]


def probe_class(
    model: QNetwork,
    dataset: Dataset,
    class_id: str,
    margin_steps: int,
    rng: np.random.Generator,
) -> ClassMargin:
    return probe_classes(model, dataset, [class_id], margin_steps, rng)[0]


def cms_select(
    model: QNetwork,
    dataset: Dataset,
    num_classes: int,
    config: CmsConfig,
    rng: np.random.Generator,
) -> list[str]:
    """Draw a pool of C x multiplier classes and keep the C hardest.

    A pool no larger than C is degenerate: every drawn class is returned
    and no probing happens. Selection never mutates model parameters or
    persistent state, and it neither reads nor alters the exploration
    policy used by the episodes built from it.
    """
    pool_size = num_classes * max(config.pool_multiplier, 1)
    all_ids = dataset.class_ids()
    if len(all_ids) < pool_size:
        raise DataError(f"dataset has {len(all_ids)} classes, pool needs {pool_size}")
    pool = [all_ids[i] for i in rng.choice(len(all_ids), pool_size, replace=False)]
    if pool_size <= num_classes:
        return pool
    margins = probe_classes(model, dataset, pool, config.margin_steps, rng)
    order = np.argsort([cm.margin for cm in margins], kind="stable")
    return [pool[i] for i in order[:num_classes]]


def cms_select_many(
    model: QNetwork,
    dataset: Dataset,
    num_classes: int,
    config: CmsConfig,
    rngs: list[np.random.Generator],
) -> list[list[str]]:
    """One selection per generator, probing all pools in a single batch.

    Per-pool draws consume each generator exactly like :func:`cms_select`,
    and each probe row still starts from fresh state, so this is the same
    computation with the rows stacked for throughput.
    """
    pool_size = num_classes * max(config.pool_multiplier, 1)
    all_ids = dataset.class_ids()
    if len(all_ids) < pool_size:
        raise DataError(f"dataset has {len(all_ids)} classes, pool needs {pool_size}")
    pools = [
        [all_ids[i] for i in rng.choice(len(all_ids), pool_size, replace=False)]
        for rng in rngs
    ]
    if pool_size <= num_classes:
        return pools

    flat_ids: list[str] = []
    flat_images: list[np.ndarray] = []
    flat_slots: list[int] = []
    t_steps = config.margin_steps
    for pool, rng in zip(pools, rngs):
        for cid in pool:
            stack = dataset.samples(cid)
            if len(stack) < t_steps:
                raise DataError(
                    f"class {cid!r} has {len(stack)} samples, probe needs {t_steps}"
                )
            idx = rng.choice(len(stack), t_steps, replace=False)
            flat_ids.append(cid)
            flat_images.append(stack[idx].reshape(t_steps, -1))
            flat_slots.append(int(rng.integers(num_classes)))

    batch = np.stack(flat_images, axis=1).astype(np.float32)
    slot_arr = np.array(flat_slots)
    margins = np.zeros(len(flat_ids))
    with no_grad():
        state = model.init_state(len(flat_ids))
        prev_greedy = np.full(len(flat_ids), -1)
        for t in range(t_steps):
            hint = np.zeros((len(flat_ids), num_classes), dtype=np.float32)
            if t > 0:
                requested = prev_greedy == num_classes
                hint[requested, slot_arr[requested]] = 1.0
            obs = np.concatenate([batch[t], hint], axis=1)
            q, state = model.step(Tensor(obs), state, allow_write=True)
            margins += np.abs(q.data.max(axis=1))
            prev_greedy = q.data.argmax(axis=1)

    selections = []
    for p, pool in enumerate(pools):
        pool_margins = margins[p * pool_size : (p + 1) * pool_size]
        order = np.argsort(pool_margins, kind="stable")
        selections.append([pool[i] for i in order[:num_classes]])
    return selections
