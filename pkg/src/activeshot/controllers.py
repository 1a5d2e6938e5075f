"""LSTM controller cell and the linear Q-value head.

The LSTM is the whole Q-network in the baseline configuration and the
memory controller in the augmented ones. The head is a plain affine map;
its last output slot is, by convention everywhere in this package, the
"request label" action.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError

INIT_SCALE = 0.05
FORGET_BIAS = 1.0


def uniform_init(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape).astype(np.float32)


def init_lstm_params(
    input_size: int, hidden_size: int, rng: np.random.Generator
) -> dict[str, Tensor]:
    """Uniform [-0.05, 0.05] weights, zero biases except the forget gate.

    The +1 forget bias keeps gradients alive through full-episode
    backpropagation; gate order in the fused bias/weight layout is
    input, forget, candidate, output.
    """
    b = np.zeros(4 * hidden_size, dtype=np.float32)
    b[hidden_size : 2 * hidden_size] = FORGET_BIAS
    return {
        "lstm_w_x": Tensor(uniform_init((input_size, 4 * hidden_size), rng), requires_grad=True),
        "lstm_w_h": Tensor(uniform_init((hidden_size, 4 * hidden_size), rng), requires_grad=True),
        "lstm_b": Tensor(b, requires_grad=True),
    }


def lstm_step(
    x: Tensor,
    hidden: Tensor,
    cell: Tensor,
    params: dict[str, Tensor],
) -> tuple[Tensor, Tensor]:
    """One LSTM update; returns the new (hidden, cell) pair.

    ``x`` is (B, input_size), states are (B, H). Inputs are not modified.
    """
    w_x, w_h, b = params["lstm_w_x"], params["lstm_w_h"], params["lstm_b"]
    if x.shape[1] != w_x.shape[0]:
        raise ShapeError(f"lstm_step: input width {x.shape[1]} != expected {w_x.shape[0]}")
    if hidden.shape != cell.shape or hidden.shape[1] * 4 != w_h.shape[1]:
        raise ShapeError(
            f"lstm_step: state shapes {hidden.shape}/{cell.shape} do not match params"
        )
    h_size = hidden.shape[1]
    pre = ad.add(ad.add(ad.matmul(x, w_x), ad.matmul(hidden, w_h)), b)
    gate_i = ad.sigmoid(pre[:, 0:h_size])
    gate_f = ad.sigmoid(pre[:, h_size : 2 * h_size])
    candidate = ad.tanh(pre[:, 2 * h_size : 3 * h_size])
    gate_o = ad.sigmoid(pre[:, 3 * h_size : 4 * h_size])
    new_cell = ad.add(ad.mul(gate_f, cell), ad.mul(gate_i, candidate))
    new_hidden = ad.mul(gate_o, ad.tanh(new_cell))
    return new_hidden, new_cell


def init_head_params(
    feature_size: int, num_actions: int, rng: np.random.Generator
) -> dict[str, Tensor]:
    return {
        "head_w": Tensor(uniform_init((feature_size, num_actions), rng), requires_grad=True),
        "head_b": Tensor(np.zeros(num_actions, dtype=np.float32), requires_grad=True),
    }


def q_head(features: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Affine map from features (B, F) to action values (B, C+1).

    No activation. Index C (the last one) is the label-request action.
    """
    w, b = params["head_w"], params["head_b"]
    if features.shape[1] != w.shape[0]:
        raise ShapeError(f"q_head: feature width {features.shape[1]} != expected {w.shape[0]}")
    return ad.add(ad.matmul(features, w), b)
