"""Least-recently-used-access memory: content reads, usage-driven writes.

Reads are pure content addressing (cosine softmax, no shift, no
sharpening). The write location interpolates between two choices:

* gate near 1 writes onto the previously read slot, updating what was
  just used;
* gate near 0 writes onto the least-used slot, whose row is zeroed first
  so a brand-new item replaces whatever decayed there.

Usage is a decayed accumulation of read and write attention. It only
feeds the discrete least-used selection, so it is tracked as a plain
array and carries no gradient; the selection itself is a constant during
backpropagation.

``allow_write=False`` suppresses both the write and the usage update,
mirroring the NTM read-only simulation mode.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .controllers import uniform_init
from .errors import ShapeError
from .memory_ntm import MEMORY_INIT, read

USAGE_DECAY = 0.95


@dataclass
class LruaState:
    memory: Tensor  # (B, N, M)
    read_weights: Tensor  # (B, N)
    usage: np.ndarray  # (B, N), gradient-free bookkeeping
    prev_write: np.ndarray  # (B, N), detached copy for inspection/usage


def least_used_weights(usage: np.ndarray, n: int = 1) -> np.ndarray:
    """Binary indicator of the n smallest-usage slots, lowest index on ties."""
    single = usage.ndim == 1
    u = usage[None, :] if single else usage
    if n > u.shape[-1]:
        raise ShapeError(f"least_used_weights: n={n} exceeds slot count {u.shape[-1]}")
    order = np.argsort(u, axis=-1, kind="stable")
    out = np.zeros_like(u)
    rows = np.arange(u.shape[0])[:, None]
    out[rows, order[:, :n]] = 1.0
    return out[0] if single else out


def lrua_write_weights(prev_read: Tensor, least_used: np.ndarray, interp_gate: Tensor) -> Tensor:
    """Convex mix of the previous read attention and the least-used slot.

    ``interp_gate`` is (B, 1) in [0, 1]; the least-used indicator enters
    as a constant so no gradient flows through the discrete selection.
    """
    lu = ad.const(least_used, dtype=prev_read.dtype)
    inv_gate = ad.add(ad.scale(interp_gate, -1.0), ad.const(1.0, dtype=interp_gate.dtype))
    return ad.add(ad.mul(interp_gate, prev_read), ad.mul(inv_gate, lu))


def usage_update(
    prev_usage: np.ndarray,
    read_w: np.ndarray,
    write_w: np.ndarray,
    decay: float = USAGE_DECAY,
) -> np.ndarray:
    """usage' = decay * usage + read weights + write weights."""
    return decay * prev_usage + read_w + write_w


class LruaMemory:
    def __init__(self, slots: int, width: int, controller_size: int, decay: float = USAGE_DECAY):
        self.slots = slots
        self.width = width
        self.controller_size = controller_size
        self.decay = decay
        self.interface_size = width + 2  # key, read strength, interpolation gate

    @property
    def feature_size(self) -> int:
        return self.controller_size + self.width

    def init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        return {
            "lrua_w_if": Tensor(
                uniform_init((self.controller_size, self.interface_size), rng),
                requires_grad=True,
            ),
            "lrua_b_if": Tensor(
                np.zeros(self.interface_size, dtype=np.float32), requires_grad=True
            ),
        }

    def init_state(self, batch_size: int, dtype=np.float32) -> LruaState:
        # Uniform (zero) usage means the first least-used pick is slot 0 by
        # the tie rule, matching the one-hot initial read attention.
        one_hot = np.zeros((batch_size, self.slots), dtype=dtype)
        one_hot[:, 0] = 1.0
        return LruaState(
            memory=Tensor(np.full((batch_size, self.slots, self.width), MEMORY_INIT, dtype=dtype)),
            read_weights=Tensor(one_hot),
            usage=np.zeros((batch_size, self.slots), dtype=dtype),
            prev_write=np.zeros((batch_size, self.slots), dtype=dtype),
        )

    def step(
        self,
        controller_out: Tensor,
        state: LruaState,
        params: dict[str, Tensor],
        allow_write: bool = True,
    ) -> tuple[Tensor, LruaState]:
        """Write the key (optionally), read by content, update usage."""
        if controller_out.shape[1] != self.controller_size:
            raise ShapeError(
                f"lrua_step: controller width {controller_out.shape[1]} != {self.controller_size}"
            )
        m = self.width
        iface = ad.add(ad.matmul(controller_out, params["lrua_w_if"]), params["lrua_b_if"])
        key = ad.tanh(iface[:, 0:m])
        strength = ad.softplus(iface[:, m : m + 1])
        interp_gate = ad.sigmoid(iface[:, m + 1 : m + 2])

        if allow_write:
            lu = least_used_weights(state.usage, n=1)
            write_w = lrua_write_weights(state.read_weights, lu, interp_gate)
            # A gate below one half means "place in a fresh slot": clear the
            # least-used row before the additive write replaces it.
            reset_rows = (interp_gate.data < 0.5) * lu  # (B, N) constant mask
            keep = ad.const(1.0 - reset_rows[:, :, None], dtype=state.memory.dtype)
            cleared = ad.mul(state.memory, keep)
            w_col = ad.reshape(write_w, write_w.shape + (1,))
            key_row = ad.reshape(key, (key.shape[0], 1, m))
            memory = ad.add(cleared, ad.mul(w_col, key_row))
        else:
            memory = state.memory

        sims = ad.cosine_similarity(key, memory)
        read_weights = ad.softmax(ad.mul(strength, sims), axis=-1)
        last_read = read(memory, read_weights)

        if allow_write:
            usage = usage_update(state.usage, read_weights.data, write_w.data, self.decay)
            prev_write = np.array(write_w.data)
        else:
            usage = state.usage
            prev_write = state.prev_write

        features = ad.concat([controller_out, last_read], axis=1)
        new_state = LruaState(
            memory=memory,
            read_weights=read_weights,
            usage=usage,
            prev_write=prev_write,
        )
        return features, new_state
