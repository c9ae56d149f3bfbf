"""Sentence pooling: mean, last-token, and anchor-token-aware (ATA).

ATA pooling scores each token by the log-scaled attention it exchanges in
the final layer, normalizes the scores to sum to one, and uses them to
reweight the hidden states. The raw score of token t is

    sum over heads h and positions p of log(a[h, p, t] * K + 1)

in the default "incoming" direction (t read as the attended Key, i.e. the
attention the token receives), or with the roles of p and t swapped in the
"literal" direction (t read as the attending Query). The K scaling keeps
per-token scores comparable across sequence lengths; the log base is
irrelevant after normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .encoder import EncoderOutput
from .errors import ConfigError, ContractError, ShapeError
from .numkit import Tensor

DIRECTIONS = ("incoming", "literal")
POOLING_METHODS = ("mean", "last", "ata")

_ROW_SUM_TOL = 1e-6


@dataclass
class AnchorWeights:
    """Per-token anchor scores, raw and normalized to sum 1."""

    raw: Tensor
    normalized: Tensor


def _check_attention(attention: Tensor) -> int:
    if attention.ndim != 3 or attention.shape[1] != attention.shape[2]:
        raise ShapeError(f"attention must have shape (H, K, K), got {attention.shape}")
    h, k = attention.shape[0], attention.shape[1]
    if h < 1 or k < 1:
        raise ShapeError(f"attention needs H >= 1 and K >= 1, got {attention.shape}")
    data = attention.data
    if np.any(data < -1e-12):
        raise ContractError("attention entries must be non-negative")
    row_err = np.max(np.abs(data.sum(axis=-1) - 1.0))
    if row_err > _ROW_SUM_TOL:
        raise ContractError(f"attention rows must sum to 1 (max deviation {row_err:.3e})")
    return k


def ata_weights(attention: Tensor, direction: str = "incoming") -> AnchorWeights:
    """Anchor weights for a row-stochastic (H, K, K) attention tensor."""
    if direction not in DIRECTIONS:
        raise ConfigError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    k = _check_attention(attention)
    scored = nk.log(nk.add(nk.scale(attention, float(k)), 1.0))
    axes = (0, 1) if direction == "incoming" else (0, 2)
    raw = nk.sum(scored, axis=axes)
    normalized = nk.div(raw, nk.sum(raw))
    return AnchorWeights(raw=raw, normalized=normalized)


def pool_ata(
    out: EncoderOutput,
    direction: str = "incoming",
    weight_gradients: bool = True,
) -> Tensor:
    """Hidden states reweighted by normalized anchor weights.

    weight_gradients=False detaches the weights, leaving only the hidden
    state path differentiable (ablation knob).
    """
    weights = ata_weights(out.attention, direction).normalized
    if not weight_gradients:
        weights = nk.stop_gradient(weights)
    k = out.seq_len
    return nk.reshape(nk.matmul(nk.reshape(weights, (1, k)), out.hidden), (out.hidden.shape[1],))


def pool_mean(out: EncoderOutput) -> Tensor:
    """Arithmetic mean of the hidden-state rows."""
    return nk.mean(out.hidden, axis=0)


def pool_last(out: EncoderOutput) -> Tensor:
    """Hidden state at the final position (the appended end marker)."""
    k = out.seq_len
    return nk.reshape(nk.index_rows(out.hidden, [k - 1]), (out.hidden.shape[1],))


def pool(
    out: EncoderOutput,
    method: str,
    direction: str = "incoming",
    weight_gradients: bool = True,
) -> Tensor:
    if method == "mean":
        return pool_mean(out)
    if method == "last":
        return pool_last(out)
    if method == "ata":
        return pool_ata(out, direction=direction, weight_gradients=weight_gradients)
    raise ConfigError(f"pooling method must be one of {POOLING_METHODS}, got {method!r}")
