"""External memory with combined content and location addressing.

One read head and one write head, both driven by affine maps of the
controller output. Addressing follows the classic pipeline: cosine-content
softmax, gated interpolation with the previous weights, a 3-tap circular
shift, then sharpening. Raw head outputs pass through range transforms
(softplus for strength, sigmoid for gates and erase, softmax for shift,
1+softplus for sharpening) so every precondition holds by construction.

Memory resets to a small constant (1e-6, not zero) at episode boundaries
so cosine similarity is defined at the first step; initial attention is a
one-hot on slot 0.

A step with ``allow_write=False`` performs reads only and returns the
input memory object untouched. That mode backs the next-state value
estimate during training: simulating the next step must not commit
anything to memory.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .controllers import uniform_init
from .errors import ShapeError

MEMORY_INIT = 1e-6
SHIFT_OFFSETS = (-1, 0, 1)


@dataclass
class NtmState:
    """Per-rollout memory state; every field is (B, ...) batched."""

    memory: Tensor  # (B, N, M)
    read_weights: Tensor  # (B, N)
    write_weights: Tensor  # (B, N)
    last_read: Tensor  # (B, M)


def address(
    key: Tensor,
    strength: Tensor,
    gate: Tensor,
    shift_logits: Tensor,
    sharpen: Tensor,
    prev_weights: Tensor,
    memory: Tensor,
) -> Tensor:
    """Produce normalized attention weights over the N memory slots.

    ``key`` is (B, M); ``strength`` (>0), ``gate`` ([0,1]) and ``sharpen``
    (>=1) are (B, 1); ``shift_logits`` is (B, 3) and is softmaxed here.
    Every stage preserves nonnegativity and a row sum of one.
    """
    content = ad.softmax(ad.mul(strength, ad.cosine_similarity(key, memory)), axis=-1)
    gated = ad.add(ad.mul(gate, content), ad.mul(_one_minus(gate), prev_weights))
    shift = ad.softmax(shift_logits, axis=-1)
    shifted = None
    for idx, offset in enumerate(SHIFT_OFFSETS):
        term = ad.mul(shift[:, idx : idx + 1], ad.roll(gated, offset, axis=-1))
        shifted = term if shifted is None else ad.add(shifted, term)
    return _sharpen(shifted, sharpen)


def _one_minus(t: Tensor) -> Tensor:
    return ad.add(ad.scale(t, -1.0), ad.const(1.0, dtype=t.dtype))


def _sharpen(weights: Tensor, gamma: Tensor) -> Tensor:
    # Dividing by the (detached) row max before exponentiation cancels out
    # of the normalized result exactly but keeps w**gamma from underflowing.
    top = np.maximum(weights.data.max(axis=-1, keepdims=True), 1e-30)
    scaled = ad.mul(weights, ad.const(1.0 / top, dtype=weights.dtype))
    raised = ad.power(scaled, gamma)
    total = ad.sum_reduce(raised, axis=-1, keepdims=True)
    return ad.mul(raised, ad.power(total, ad.const(-1.0, dtype=weights.dtype)))


def read(memory: Tensor, weights: Tensor) -> Tensor:
    """Attention-weighted sum of memory rows: (B, N, M) x (B, N) -> (B, M)."""
    return ad.sum_reduce(ad.mul(memory, ad.reshape(weights, weights.shape + (1,))), axis=1)


def write(memory: Tensor, weights: Tensor, erase: Tensor, add_vec: Tensor) -> Tensor:
    """Per-slot erase-then-add: M'[i] = M[i] * (1 - w[i] e) + w[i] a."""
    w_col = ad.reshape(weights, weights.shape + (1,))
    erase_outer = ad.mul(w_col, ad.reshape(erase, (erase.shape[0], 1, erase.shape[1])))
    add_outer = ad.mul(w_col, ad.reshape(add_vec, (add_vec.shape[0], 1, add_vec.shape[1])))
    return ad.add(ad.mul(memory, _one_minus(erase_outer)), add_outer)


class NtmMemory:
    """Sizes plus the interface layout; parameters and state live outside."""

    def __init__(self, slots: int, width: int, controller_size: int):
        self.slots = slots
        self.width = width
        self.controller_size = controller_size
        # Per addressing head: key, strength, gate, 3 shift logits, sharpen.
        self.head_size = width + 6
        self.interface_size = 2 * self.head_size + 2 * width  # + erase, add

    @property
    def feature_size(self) -> int:
        return self.controller_size + self.width

    def init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        return {
            "ntm_w_if": Tensor(
                uniform_init((self.controller_size, self.interface_size), rng),
                requires_grad=True,
            ),
            "ntm_b_if": Tensor(np.zeros(self.interface_size, dtype=np.float32), requires_grad=True),
        }

    def init_state(self, batch_size: int, dtype=np.float32) -> NtmState:
        one_hot = np.zeros((batch_size, self.slots), dtype=dtype)
        one_hot[:, 0] = 1.0
        return NtmState(
            memory=Tensor(np.full((batch_size, self.slots, self.width), MEMORY_INIT, dtype=dtype)),
            read_weights=Tensor(one_hot.copy()),
            write_weights=Tensor(one_hot.copy()),
            last_read=Tensor(np.zeros((batch_size, self.width), dtype=dtype)),
        )

    def _split_head(self, iface: Tensor, offset: int) -> tuple[dict[str, Tensor], int]:
        m = self.width
        key = ad.tanh(iface[:, offset : offset + m])
        strength = ad.softplus(iface[:, offset + m : offset + m + 1])
        gate = ad.sigmoid(iface[:, offset + m + 1 : offset + m + 2])
        shift_logits = iface[:, offset + m + 2 : offset + m + 5]
        sharpen = ad.add(
            ad.softplus(iface[:, offset + m + 5 : offset + m + 6]),
            ad.const(1.0, dtype=iface.dtype),
        )
        head = {
            "key": key,
            "strength": strength,
            "gate": gate,
            "shift_logits": shift_logits,
            "sharpen": sharpen,
        }
        return head, offset + self.head_size

    def step(
        self,
        controller_out: Tensor,
        state: NtmState,
        params: dict[str, Tensor],
        allow_write: bool = True,
    ) -> tuple[Tensor, NtmState]:
        """Write (optionally), then read, then emit controller+read features.

        The write addresses the incoming memory; the read addresses the
        post-write memory so a just-stored item is immediately readable.
        With ``allow_write=False`` the write head is skipped entirely and
        the returned state carries the input memory object unchanged.
        """
        if controller_out.shape[1] != self.controller_size:
            raise ShapeError(
                f"ntm_step: controller width {controller_out.shape[1]} != {self.controller_size}"
            )
        iface = ad.add(ad.matmul(controller_out, params["ntm_w_if"]), params["ntm_b_if"])
        read_head, offset = self._split_head(iface, 0)
        if allow_write:
            write_head, offset = self._split_head(iface, offset)
            erase = ad.sigmoid(iface[:, offset : offset + self.width])
            add_vec = ad.tanh(iface[:, offset + self.width : offset + 2 * self.width])
            write_weights = address(
                write_head["key"],
                write_head["strength"],
                write_head["gate"],
                write_head["shift_logits"],
                write_head["sharpen"],
                state.write_weights,
                state.memory,
            )
            memory = write(state.memory, write_weights, erase, add_vec)
        else:
            write_weights = state.write_weights
            memory = state.memory
        read_weights = address(
            read_head["key"],
            read_head["strength"],
            read_head["gate"],
            read_head["shift_logits"],
            read_head["sharpen"],
            state.read_weights,
            memory,
        )
        last_read = read(memory, read_weights)
        features = ad.concat([controller_out, last_read], axis=1)
        new_state = NtmState(
            memory=memory,
            read_weights=read_weights,
            write_weights=write_weights,
            last_read=last_read,
        )
        return features, new_state
