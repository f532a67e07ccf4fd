"""Cross-layer mutual relation fusion and score prediction."""
from __future__ import annotations

import numpy as np

from . import ndcore as nd
from .ndcore import Tensor


def normalize_layers(layers: list[Tensor], epsilon: float = 1e-12) -> list[Tensor]:
    return [nd.l2_normalize(x, epsilon) for x in layers]


def _heads(x: Tensor, w: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return nd.reshape(nd.einsum("bld,ed->ble", x, w), (b, n, heads, w.shape[0] // heads))


def mutual_importance(user_layers: Tensor, item_layers: Tensor, w_key: Tensor, heads: int) -> Tensor:
    """ReLU'd key-space dot products between every (user layer, item layer) pair.

    Inputs are normalized (B, L+1, d) blocks; output is (B, C, L+1, L+1).
    """
    pu = _heads(user_layers, w_key, heads)
    pv = _heads(item_layers, w_key, heads)
    return nd.relu(nd.einsum("blch,bmch->bclm", pu, pv))


def fuse(user_layers: Tensor, item_layers: Tensor, importance: Tensor, w_value: Tensor,
         heads: int) -> Tensor:
    """Importance-weighted sum of elementwise value products, heads concatenated."""
    tu = _heads(user_layers, w_value, heads)
    tv = _heads(item_layers, w_value, heads)
    out = nd.einsum("bclm,blch,bmch->bch", importance, tu, tv)
    return nd.reshape(out, (out.shape[0], out.shape[1] * out.shape[2]))


def predict(fused: Tensor, w3: Tensor, b3: Tensor, w4: Tensor) -> Tensor:
    hidden = nd.relu(nd.einsum("bd,ed->be", fused, w3) + b3) + fused
    return nd.einsum("bd,d->b", hidden, w4)


def score_pairs(user_states: list[Tensor], item_states: list[Tensor], users, items,
                params: dict, heads: int, epsilon: float = 1e-12, prefix: str = "fusion"):
    """Scores for (user, item) pairs given by local sub-graph indices.

    Returns ``(scores, importance)`` with importance shaped (B, C, L+1, L+1).
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if users.shape != items.shape or users.ndim != 1:
        raise nd.ContractError("users and items must be equal-length 1-d index arrays")
    nu, ni = user_states[0].shape[0], item_states[0].shape[0]
    if len(users) and (users.min() < 0 or users.max() >= nu):
        raise nd.ContractError(f"user index outside the sub-graph (size {nu})")
    if len(items) and (items.min() < 0 or items.max() >= ni):
        raise nd.ContractError(f"item index outside the sub-graph (size {ni})")
    eu = nd.l2_normalize(nd.stack([s[users] for s in user_states], axis=1), epsilon)
    ev = nd.l2_normalize(nd.stack([s[items] for s in item_states], axis=1), epsilon)
    phi = mutual_importance(eu, ev, params[f"{prefix}.key"], heads)
    gamma = fuse(eu, ev, phi, params[f"{prefix}.value"], heads)
    scores = predict(gamma, params[f"{prefix}.w3"], params[f"{prefix}.b3"], params[f"{prefix}.w4"])
    return scores, phi
