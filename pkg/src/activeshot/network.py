"""Assembly of controller, optional external memory, and Q-head.

A :class:`QNetwork` owns the parameter dictionary; rollout state is a
separate value object so concurrent rollouts can share parameters while
each owns its state. State is rebuilt from scratch at every episode
boundary, which is what guarantees episode isolation.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .controllers import init_head_params, init_lstm_params, lstm_step, q_head
from .errors import ShapeError
from .memory_lrua import LruaMemory, LruaState
from .memory_ntm import NtmMemory, NtmState

MODEL_KINDS = ("lstm", "ntm", "lrua")
IMAGE_PIXELS = 400  # 20 x 20 observations, flattened


@dataclass
class NetState:
    hidden: Tensor  # (B, H)
    cell: Tensor  # (B, H)
    memory: NtmState | LruaState | None


class QNetwork:
    """Maps an observation stream to action values, one step at a time."""

    def __init__(
        self,
        kind: str,
        num_classes: int,
        hidden_size: int = 200,
        memory_slots: int = 128,
        memory_width: int = 40,
        usage_decay: float = 0.95,
        input_pixels: int = IMAGE_PIXELS,
        rng: np.random.Generator | None = None,
    ):
        if kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {kind!r}, expected one of {MODEL_KINDS}")
        self.kind = kind
        self.num_classes = num_classes
        self.hidden_size = hidden_size
        self.input_pixels = input_pixels
        self.input_size = input_pixels + num_classes
        self.num_actions = num_classes + 1
        if kind == "ntm":
            self.memory = NtmMemory(memory_slots, memory_width, hidden_size)
        elif kind == "lrua":
            self.memory = LruaMemory(memory_slots, memory_width, hidden_size, decay=usage_decay)
        else:
            self.memory = None
        self.feature_size = self.memory.feature_size if self.memory else hidden_size

        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: dict[str, Tensor] = {}
        self.params.update(init_lstm_params(self.input_size, hidden_size, rng))
        if self.memory is not None:
            self.params.update(self.memory.init_params(rng))
        self.params.update(init_head_params(self.feature_size, self.num_actions, rng))

    def init_state(self, batch_size: int, dtype=np.float32) -> NetState:
        zeros = np.zeros((batch_size, self.hidden_size), dtype=dtype)
        return NetState(
            hidden=Tensor(zeros.copy()),
            cell=Tensor(zeros.copy()),
            memory=self.memory.init_state(batch_size, dtype) if self.memory else None,
        )

    def step(
        self, x: Tensor, state: NetState, allow_write: bool = True
    ) -> tuple[Tensor, NetState]:
        """One interaction step: (B, 400+C) observation to (B, C+1) Q-values.

        ``allow_write=False`` runs the memory read path only; the returned
        state then carries the input memory content unchanged. The input
        state is never mutated either way.
        """
        if x.shape[-1] != self.input_size:
            raise ShapeError(f"step: observation width {x.shape[-1]} != {self.input_size}")
        hidden, cell = lstm_step(x, state.hidden, state.cell, self.params)
        if self.memory is not None:
            features, mem_state = self.memory.step(
                hidden, state.memory, self.params, allow_write=allow_write
            )
        else:
            features, mem_state = hidden, None
        q = q_head(features, self.params)
        return q, NetState(hidden=hidden, cell=cell, memory=mem_state)

    def param_hash(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(self.params[name].data.tobytes())
        return digest.hexdigest()

    def astype(self, dtype) -> "QNetwork":
        """A copy with parameters cast to ``dtype`` (float64 test harness)."""
        clone = QNetwork.__new__(QNetwork)
        clone.__dict__.update(self.__dict__)
        clone.params = {
            name: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)
            for name, p in self.params.items()
        }
        return clone
