"""Q-learning over episode batches with full-episode backpropagation.

A batch rolls out B episodes in parallel as rows of one recorded graph.
Each step acts epsilon-greedily, then the value target for that step is
produced by a *simulation* pass over the next observation with memory
writes disabled: the next state is only estimated, never committed, and
the real next step continues from the pre-simulation state. Targets are
plain numbers, so no gradient flows through the bootstrap.

The loss is the mean squared Bellman error per episode, summed across the
batch, minimized by Adam with one update per batch.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, no_grad, zero_grads
from .checkpoint import build_network, save_checkpoint
from .cms import cms_select_many
from .config import TrainConfig
from .data import Dataset, split_classes
from .episodes import EpisodeSpec, EpisodeStep, build_episode, epsilon_greedy, observe, reward
from .errors import DataError
from .metrics import RunMetrics, accumulate_metrics
from .network import QNetwork
from .seeding import derive_rng

ProgressFn = Callable[[int, int, dict], None]


@dataclass
class Transition:
    """One step's learning tuple: taken Q, reward, bootstrapped next value.

    ``next_max_q`` is None exactly on the terminal step of an episode.
    """

    step: int
    q_taken: Tensor
    reward: float
    next_max_q: float | None


@dataclass
class BatchRollout:
    q_taken: Tensor  # (B, T) graph-linked values of the executed actions
    rewards: np.ndarray  # (B, T)
    next_max: np.ndarray  # (B, T); the terminal column is unused
    actions: np.ndarray  # (B, T)
    episodes: list[list[EpisodeStep]]


def rollout_batch(
    model: QNetwork,
    specs: list[EpisodeSpec],
    epsilon: float,
    rngs: list[np.random.Generator],
    collect_targets: bool = True,
) -> BatchRollout:
    """Roll out one episode per batch row from freshly reset state.

    Every row owns its private action generator, so batch composition
    never couples episodes. With ``collect_targets`` the write-suppressed
    simulation pass fills ``next_max`` for all non-terminal steps.
    """
    if not specs:
        raise DataError("rollout_batch needs at least one episode")
    batch = len(specs)
    length = specs[0].length
    if any(s.length != length for s in specs):
        raise DataError("episodes in a batch must share one length")
    num_classes = model.num_classes

    state = model.init_state(batch)
    rewards = np.zeros((batch, length))
    next_max = np.zeros((batch, length))
    actions = np.zeros((batch, length), dtype=np.int64)
    episodes: list[list[EpisodeStep]] = [[] for _ in range(batch)]
    q_cols: list[Tensor] = []

    # (T, B, pixels) image block and per-step slot matrix, built up front.
    images = np.stack([spec.images for spec in specs], axis=1)
    slots = np.stack([spec.slots for spec in specs], axis=1)  # (T, B)
    rows = np.arange(batch)

    obs = np.concatenate([images[0], np.zeros((batch, num_classes), dtype=np.float32)], axis=1)
    for t in range(length):
        q, state = model.step(Tensor(obs), state, allow_write=True)
        q_data = q.data
        for b, spec in enumerate(specs):
            action = epsilon_greedy(q_data[b], epsilon, rngs[b])
            actions[b, t] = action
            rewards[b, t] = reward(action, int(slots[t, b]), num_classes)
            episodes[b].append(
                EpisodeStep(
                    observation=obs[b],
                    action=action,
                    reward=rewards[b, t],
                    true_slot=int(slots[t, b]),
                    instance_index=int(spec.instance_index[t]),
                )
            )
        taken = np.zeros((batch, num_classes + 1), dtype=np.float32)
        taken[rows, actions[:, t]] = 1.0
        q_col = ad.sum_reduce(ad.mul(q, ad.const(taken)), axis=1)
        q_cols.append(ad.reshape(q_col, (batch, 1)))

        if t + 1 < length:
            # The hint reveals the current item's slot only where the agent
            # just paid for a label request.
            hint = np.zeros((batch, num_classes), dtype=np.float32)
            requested = actions[:, t] == num_classes
            hint[requested, slots[t, requested]] = 1.0
            obs = np.concatenate([images[t + 1], hint], axis=1)
            if collect_targets:
                with no_grad():
                    q_sim, _ = model.step(Tensor(obs), state, allow_write=False)
                next_max[:, t] = q_sim.data.max(axis=1)

    return BatchRollout(
        q_taken=ad.concat(q_cols, axis=1),
        rewards=rewards,
        next_max=next_max,
        actions=actions,
        episodes=episodes,
    )


def rollout(
    model: QNetwork,
    spec: EpisodeSpec,
    epsilon: float,
    rng: np.random.Generator,
) -> list[tuple[EpisodeStep, Transition]]:
    """Single-episode rollout returning the per-step learning tuples."""
    batch = rollout_batch(model, [spec], epsilon, [rng])
    out = []
    for t in range(spec.length):
        terminal = t == spec.length - 1
        transition = Transition(
            step=t,
            q_taken=batch.q_taken[0, t],
            reward=float(batch.rewards[0, t]),
            next_max_q=None if terminal else float(batch.next_max[0, t]),
        )
        out.append((batch.episodes[0][t], transition))
    return out


def bellman_targets(rewards: np.ndarray, next_max: np.ndarray, discount: float) -> np.ndarray:
    """r + discount * max_a Q(next) per step; plain r on terminal steps."""
    targets = rewards.copy()
    targets[:, :-1] += discount * next_max[:, :-1]
    return targets


def bellman_loss(transitions: list[Transition], discount: float) -> Tensor:
    """Mean squared Bellman error over one episode's transitions.

    Targets are constants: the bootstrap side never carries gradient.
    """
    qs = ad.concat([ad.reshape(tr.q_taken, (1,)) for tr in transitions], axis=0)
    targets = np.array(
        [
            tr.reward + (discount * tr.next_max_q if tr.next_max_q is not None else 0.0)
            for tr in transitions
        ],
        dtype=np.float32,
    )
    return ad.mean_reduce(ad.square(ad.sub(qs, ad.const(targets))))


def batch_bellman_loss(batch: BatchRollout, discount: float) -> Tensor:
    """Per-episode mean squared error, summed over the batch."""
    targets = bellman_targets(batch.rewards, batch.next_max, discount)
    diff = ad.sub(batch.q_taken, ad.const(targets.astype(np.float32)))
    return ad.sum_reduce(ad.mean_reduce(ad.square(diff), axis=1))


# ---------------------------------------------------------------------------
# training loop


@dataclass
class BatchLog:
    batch: int
    loss: float
    mean_reward: float
    accuracy_pct: float | None
    request_pct: float


@dataclass
class TrainResult:
    model: QNetwork
    adam: AdamState
    config: TrainConfig
    history: list[BatchLog]
    eval_metrics: RunMetrics | None
    out_dir: Path | None = None
    checkpoint_path: Path | None = None
    curve_path: Path | None = None
    metrics_path: Path | None = None


def _batch_stats(rollout_result: BatchRollout, num_classes: int) -> tuple[float | None, float]:
    pred_mask = rollout_result.actions < num_classes
    n_pred = int(pred_mask.sum())
    n_total = rollout_result.actions.size
    accuracy = (
        100.0 * float((rollout_result.rewards[pred_mask] == 1.0).sum()) / n_pred
        if n_pred
        else None
    )
    request_pct = 100.0 * (n_total - n_pred) / n_total
    return accuracy, request_pct


class _Window:
    """Rolling accumulators for the logging cadence."""

    def __init__(self):
        self.reset()

    def reset(self):
        self.loss = 0.0
        self.reward = 0.0
        self.batches = 0
        self.predictions = 0
        self.correct = 0
        self.requests = 0
        self.steps = 0

    def add(self, loss: float, batch_rollout: BatchRollout, num_classes: int):
        self.loss += loss
        self.reward += float(batch_rollout.rewards.mean())
        self.batches += 1
        pred_mask = batch_rollout.actions < num_classes
        self.predictions += int(pred_mask.sum())
        self.correct += int((batch_rollout.rewards[pred_mask] == 1.0).sum())
        self.requests += int((~pred_mask).sum())
        self.steps += batch_rollout.actions.size

    def summary(self) -> dict:
        n = max(self.batches, 1)
        return {
            "loss": self.loss / n,
            "mean_reward": self.reward / n,
            "accuracy_pct": 100.0 * self.correct / self.predictions if self.predictions else None,
            "request_pct": 100.0 * self.requests / max(self.steps, 1),
        }


def train(
    config: TrainConfig,
    dataset: Dataset,
    out_dir: str | Path | None = None,
    progress: ProgressFn | None = None,
) -> TrainResult:
    """Train on the config's schedule, then evaluate on held-out classes.

    The dataset is split into disjoint train/test class sets (seeded by
    ``split_seed``). Episode construction uses the margin pre-screen when
    enabled, uniform class draws otherwise. Everything downstream of
    ``config.seed`` is deterministic.
    """
    config.validate()
    if dataset.num_classes < 2:
        raise DataError("training needs at least two classes to split")
    train_count = config.train_classes
    if train_count is None:
        train_count = max(1, min(dataset.num_classes - 1, round(dataset.num_classes * 0.75)))
    train_ds, test_ds = split_classes(dataset, train_count, config.split_seed)

    model = build_network(config, derive_rng(config.seed, "init"))
    adam = AdamState(learning_rate=config.learning_rate)
    history: list[BatchLog] = []
    curve_rows: list[dict] = []
    window = _Window()

    out_path = Path(out_dir) if out_dir is not None else None
    checkpoint_path = curve_path = metrics_path = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        checkpoint_path = out_path / "checkpoint.bin"
        curve_path = out_path / "training_curve.csv"
        metrics_path = out_path / "metrics.csv"

    for batch_idx in range(config.total_batches):
        selections: list[list[str] | None] = [None] * config.episodes_per_batch
        if config.cms.enabled:
            cms_rngs = [
                derive_rng(config.seed, "cms", batch_idx, e)
                for e in range(config.episodes_per_batch)
            ]
            selections = cms_select_many(
                model, train_ds, config.num_classes, config.cms, cms_rngs
            )
        specs = [
            build_episode(
                train_ds,
                config.num_classes,
                config.items_per_class,
                derive_rng(config.seed, "episode", batch_idx, e),
                class_ids=selections[e],
            )
            for e in range(config.episodes_per_batch)
        ]
        rngs = [
            derive_rng(config.seed, "action", batch_idx, e)
            for e in range(config.episodes_per_batch)
        ]
        batch_rollout = rollout_batch(model, specs, config.epsilon_at(batch_idx), rngs)
        loss = batch_bellman_loss(batch_rollout, config.discount)
        loss.backward()
        adam_step(model.params, adam)
        zero_grads(model.params)

        loss_value = float(loss.data)
        accuracy, request_pct = _batch_stats(batch_rollout, config.num_classes)
        history.append(
            BatchLog(
                batch=batch_idx,
                loss=loss_value,
                mean_reward=float(batch_rollout.rewards.mean()),
                accuracy_pct=accuracy,
                request_pct=request_pct,
            )
        )
        window.add(loss_value, batch_rollout, config.num_classes)

        done = batch_idx + 1 == config.total_batches
        if (batch_idx + 1) % config.log_every == 0 or done:
            stats = window.summary()
            window.reset()
            curve_rows.append({"batch": batch_idx + 1, **stats})
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, model, adam, config)
            if progress is not None:
                progress(batch_idx + 1, config.total_batches, stats)

    eval_metrics = None
    if config.eval_batches > 0:
        eval_metrics = evaluate(
            model,
            test_ds,
            num_classes=config.num_classes,
            items_per_class=config.items_per_class,
            batches=config.eval_batches,
            episodes_per_batch=config.episodes_per_batch,
            epsilon=config.eval_epsilon,
            seed=config.seed,
        )

    if out_path is not None:
        save_checkpoint(checkpoint_path, model, adam, config)
        _write_curve(curve_path, curve_rows)
        if eval_metrics is not None:
            eval_metrics.write_csv(metrics_path)

    return TrainResult(
        model=model,
        adam=adam,
        config=config,
        history=history,
        eval_metrics=eval_metrics,
        out_dir=out_path,
        checkpoint_path=checkpoint_path,
        curve_path=curve_path,
        metrics_path=metrics_path if eval_metrics is not None else None,
    )


def evaluate(
    model: QNetwork,
    dataset: Dataset,
    num_classes: int,
    items_per_class: int,
    batches: int,
    episodes_per_batch: int,
    epsilon: float = 0.0,
    seed: int = 0,
) -> RunMetrics:
    """Greedy-by-default evaluation; never touches parameters or recorded
    graphs, only accumulates the per-instance-index tables."""
    metrics = RunMetrics.empty(items_per_class)
    with no_grad():
        for batch_idx in range(batches):
            specs = [
                build_episode(
                    dataset,
                    num_classes,
                    items_per_class,
                    derive_rng(seed, "eval-episode", batch_idx, e),
                )
                for e in range(episodes_per_batch)
            ]
            rngs = [
                derive_rng(seed, "eval-action", batch_idx, e)
                for e in range(episodes_per_batch)
            ]
            result = rollout_batch(model, specs, epsilon, rngs, collect_targets=False)
            for steps in result.episodes:
                accumulate_metrics(steps, metrics, num_classes)
    return metrics


def _write_curve(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["batch", "loss", "mean_reward", "accuracy_pct", "request_pct"]
        )
        writer.writeheader()
        for row in rows:
            if row.get("accuracy_pct") is None:
                row = dict(row, accuracy_pct="")
            writer.writerow(row)
