"""Cosine similarity and the contrastive InfoNCE objective.

For batch item b the negative set is its hard negatives plus the other
items' positives (in-batch negatives). The loss per item is

    -log exp(t * cos(q, d+)) / (exp(t * cos(q, d+)) + sum_neg exp(t * cos(q, d-)))

with the temperature t entering multiplicatively, and the batch loss is the
mean over items. t=1 matches the written objective; cosine logits in [-1, 1]
give weak gradients at that setting, so training configs default to t=50
(the conventional divisive temperature 0.02 expressed multiplicatively).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .errors import ContractError, DegenerateInputError
from .numkit import Tensor

_NORM_FLOOR = 1e-12


@dataclass
class ContrastiveBatch:
    """Aligned query/positive/hard-negative embeddings plus loss settings.

    hard_negatives holds one list per item (usually length one: the negative
    selected for the current curriculum level); every item must carry the
    same number of hard negatives. in_batch=False drops the other items'
    positives from the negative set; include_cross_hard=True additionally
    treats other items' hard negatives as negatives.
    """

    queries: list[Tensor]
    positives: list[Tensor]
    hard_negatives: list[list[Tensor]] | None = None
    temperature: float = 1.0
    in_batch: bool = True
    include_cross_hard: bool = False


def _norm(v: Tensor, what: str) -> Tensor:
    n2 = nk.sum(nk.mul(v, v))
    if n2.data < _NORM_FLOOR * _NORM_FLOOR:
        raise DegenerateInputError(f"{what} has near-zero norm")
    return nk.sqrt(n2)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Scalar cosine similarity; differentiable through both arguments."""
    if u.shape != v.shape or u.ndim != 1:
        raise ContractError(f"cosine needs two equal-length vectors, got {u.shape} and {v.shape}")
    return nk.div(nk.sum(nk.mul(u, v)), nk.mul(_norm(u, "first argument"), _norm(v, "second argument")))


def _unit_rows(vectors: list[Tensor], what: str) -> Tensor:
    rows = []
    for i, v in enumerate(vectors):
        rows.append(nk.div(v, _norm(v, f"{what}[{i}]")))
    return nk.stack(rows)


def info_nce(batch: ContrastiveBatch) -> Tensor:
    """Mean InfoNCE loss over the batch; a differentiable scalar."""
    b = len(batch.queries)
    if b < 1:
        raise ContractError("info_nce needs a non-empty batch")
    if len(batch.positives) != b:
        raise ContractError(f"queries/positives length mismatch: {b} vs {len(batch.positives)}")
    if batch.temperature <= 0:
        raise ContractError(f"temperature must be positive, got {batch.temperature}")
    hard = batch.hard_negatives
    if hard is not None:
        if len(hard) != b:
            raise ContractError(f"queries/hard_negatives length mismatch: {b} vs {len(hard)}")
        counts = {len(h) for h in hard}
        if len(counts) > 1:
            raise ContractError(f"hard negative counts must match across the batch, got {sorted(counts)}")

    tau = float(batch.temperature)
    qn = _unit_rows(batch.queries, "query")
    pn = _unit_rows(batch.positives, "positive")
    sims = nk.scale(nk.matmul(qn, nk.transpose(pn)), tau)

    eye = np.eye(b)
    off_diag = np.where(eye == 1.0, 0.0, -np.inf)
    pos = nk.sum(nk.mul(sims, nk.tensor(eye)), axis=1)

    parts = [sims if batch.in_batch else nk.add(sims, nk.tensor(off_diag))]
    m = len(hard[0]) if hard else 0
    for j in range(m):
        col = _unit_rows([hard[i][j] for i in range(b)], f"hard_negative[:][{j}]")
        cross = nk.scale(nk.matmul(qn, nk.transpose(col)), tau)
        if not batch.include_cross_hard:
            cross = nk.add(cross, nk.tensor(off_diag))
        parts.append(cross)

    logits = nk.concat(parts, axis=1) if len(parts) > 1 else parts[0]
    return nk.mean(nk.sub(nk.logsumexp_lastdim(logits), pos))
