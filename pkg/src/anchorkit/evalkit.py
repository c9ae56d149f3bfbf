"""Desk-scale evaluation: retrieval metrics, rank correlation, granularity
similarity statistics, a pooling ablation harness, and anchor-weight
inspection.

The desk benchmark is built from held-out triplets: the corpus is their
positives, the queries their queries (instruction wrapped to match
training). Ranking ties break deterministically toward the lower document
index.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .encoder import EncoderModel, render_token, tokenize, wrap_instruction
from .errors import ConfigError, ContractError, DegenerateInputError
from .pooling import ata_weights, pool
from .synth import MOCK_CORRUPTION_RATES, TrainingTriplet
from .trainer import TrainConfig, instruction_for, train

_NORM_FLOOR = 1e-12


class Embedder:
    """Frozen model plus a pooling choice; encodes texts to vectors."""

    def __init__(
        self,
        model: EncoderModel,
        pooling: str = "ata",
        direction: str = "incoming",
    ):
        self.model = model
        self.pooling = pooling
        self.direction = direction

    def embed(self, text: str, instruction: str | None = None) -> np.ndarray:
        if instruction is not None:
            text = wrap_instruction(instruction, text)
        out = self.model.encode(tokenize(text, self.model.cfg.max_seq_len))
        return pool(out, self.pooling, self.direction).data

    def embed_many(self, texts: list[str], instructions: list[str] | None = None) -> np.ndarray:
        rows = [
            self.embed(t, instructions[i] if instructions is not None else None)
            for i, t in enumerate(texts)
        ]
        return np.stack(rows)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosines between the rows of a (n,d) and b (m,d)."""
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na < _NORM_FLOOR) or np.any(nb < _NORM_FLOOR):
        raise DegenerateInputError("cosine_matrix received a near-zero row")
    return (a / na) @ (b / nb).T


@dataclass
class RetrievalTask:
    """Queries with one gold document id each, over a shared corpus."""

    queries: list[str]
    gold_ids: list[int]
    corpus: list[str]
    instructions: list[str] | None = None

    def validate(self) -> "RetrievalTask":
        if not self.queries:
            raise ContractError("retrieval task has no queries")
        if len(self.gold_ids) != len(self.queries):
            raise ContractError("gold_ids must align with queries")
        for gid in self.gold_ids:
            if not 0 <= gid < len(self.corpus):
                raise ContractError(f"gold id {gid} not in corpus of size {len(self.corpus)}")
        return self


def benchmark_from_triplets(triplets: list[TrainingTriplet]) -> RetrievalTask:
    """Corpus = positives, queries = queries, gold = own positive."""
    if not triplets:
        raise ContractError("cannot build a benchmark from zero triplets")
    return RetrievalTask(
        queries=[t.query for t in triplets],
        gold_ids=list(range(len(triplets))),
        corpus=[t.positive for t in triplets],
        instructions=[instruction_for(t.category) for t in triplets],
    ).validate()


def gold_ranks(query_emb: np.ndarray, corpus_emb: np.ndarray, gold_ids: list[int]) -> np.ndarray:
    """1-based rank of each query's gold document; ties favor lower indices."""
    sims = cosine_matrix(query_emb, corpus_emb)
    ranks = np.empty(len(gold_ids), dtype=np.int64)
    for i, gid in enumerate(gold_ids):
        row, gold = sims[i], sims[i, gid]
        ranks[i] = 1 + np.sum(row > gold) + np.sum((row == gold).nonzero()[0] < gid)
    return ranks


def recall_at_k(query_emb: np.ndarray, corpus_emb: np.ndarray, gold_ids: list[int], k: int) -> float:
    """Fraction of queries whose gold document ranks in the top k."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if len(gold_ids) == 0:
        raise ContractError("recall over zero queries")
    return float(np.mean(gold_ranks(query_emb, corpus_emb, gold_ids) <= k))


def ndcg_at_k(query_emb: np.ndarray, corpus_emb: np.ndarray, gold_ids: list[int], k: int) -> float:
    """Binary single-gold nDCG: gain 1/log2(rank+1) inside the top k, else 0."""
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    if len(gold_ids) == 0:
        raise ContractError("ndcg over zero queries")
    ranks = gold_ranks(query_emb, corpus_emb, gold_ids)
    gains = np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0)
    return float(np.mean(gains))


def evaluate_retrieval(embedder: Embedder, task: RetrievalTask, ks: tuple[int, ...] = (1, 10)) -> dict:
    task.validate()
    query_emb = embedder.embed_many(task.queries, task.instructions)
    corpus_emb = embedder.embed_many(task.corpus)
    report = {}
    for k in ks:
        report[f"recall@{k}"] = recall_at_k(query_emb, corpus_emb, task.gold_ids, k)
        report[f"ndcg@{k}"] = ndcg_at_k(query_emb, corpus_emb, task.gold_ids, k)
    return report


def _average_ranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=np.float64)
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ContractError(f"spearman needs two equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ContractError("spearman needs at least two points")
    rx, ry = _average_ranks(x), _average_ranks(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom < _NORM_FLOOR:
        raise DegenerateInputError("spearman over constant input")
    return float((rx * ry).sum() / denom)


@dataclass
class GranularityReport:
    """Mean cosine(query, negative) per difficulty level, hardest first."""

    levels: list[int]
    means: list[float]
    stds: list[float]
    counts: list[int]

    def rows(self) -> list[dict]:
        return [
            {"level": lv, "mean_cosine": m, "std": s, "count": c}
            for lv, m, s, c in zip(self.levels, self.means, self.stds, self.counts)
        ]

    def as_text(self) -> str:
        lines = ["level\tmean_cosine\tstd\tcount"]
        for r in self.rows():
            lines.append(f"{r['level']}\t{r['mean_cosine']:.4f}\t{r['std']:.4f}\t{r['count']}")
        return "\n".join(lines)

    def strictly_decreasing(self) -> bool:
        return all(a > b for a, b in zip(self.means, self.means[1:]))


def granularity_stats(triplets: list[TrainingTriplet], embedder: Embedder) -> GranularityReport:
    """Mean cosine similarity between each query and its level-k negatives.

    Queries are embedded bare here: the statistic compares raw texts, and the
    same vector is reused against all of the item's negatives.
    """
    if not triplets:
        raise ContractError("granularity_stats over an empty dataset")
    num_levels = len(triplets[0].negatives)
    sims: list[list[float]] = [[] for _ in range(num_levels)]
    for t in triplets:
        if len(t.negatives) != num_levels:
            raise ContractError("triplets carry differing negative counts")
        q = embedder.embed(t.query)[None, :]
        negs = embedder.embed_many(list(t.negatives))
        row = cosine_matrix(q, negs)[0]
        for k in range(num_levels):
            sims[k].append(float(row[k]))
    return GranularityReport(
        levels=list(range(1, num_levels + 1)),
        means=[float(np.mean(s)) for s in sims],
        stds=[float(np.std(s)) for s in sims],
        counts=[len(s) for s in sims],
    )


def sts_pairs(triplets: list[TrainingTriplet]) -> list[tuple[str, str, float]]:
    """Similarity-labelled pairs from planted corruption rates: (query,
    positive) scores 1.0 and (query, negative level k) scores 1 - rate_k."""
    pairs: list[tuple[str, str, float]] = []
    for t in triplets:
        pairs.append((t.query, t.positive, 1.0))
        rates = MOCK_CORRUPTION_RATES if len(t.negatives) == len(MOCK_CORRUPTION_RATES) else np.linspace(
            MOCK_CORRUPTION_RATES[0], MOCK_CORRUPTION_RATES[-1], len(t.negatives)
        )
        for neg, rate in zip(t.negatives, rates):
            pairs.append((t.query, neg, 1.0 - float(rate)))
    return pairs


def evaluate_sts(embedder: Embedder, pairs: list[tuple[str, str, float]]) -> float:
    if len(pairs) < 2:
        raise ContractError("sts evaluation needs at least two pairs")
    left = embedder.embed_many([p[0] for p in pairs])
    right = embedder.embed_many([p[1] for p in pairs])
    ln = np.linalg.norm(left, axis=1)
    rn = np.linalg.norm(right, axis=1)
    cos = np.sum(left * right, axis=1) / (ln * rn)
    return spearman(cos, [p[2] for p in pairs])


def pooling_ablation(
    base_cfg: TrainConfig,
    poolings: list[str],
    train_triplets: list[TrainingTriplet],
    eval_triplets: list[TrainingTriplet],
) -> list[dict]:
    """Train one model per pooling method with identical seeds and data,
    evaluate on identical tasks, one row per method."""
    if len(poolings) < 2:
        raise ConfigError(f"ablation needs at least two pooling methods, got {poolings}")
    task = benchmark_from_triplets(eval_triplets)
    pairs = sts_pairs(eval_triplets)
    rows = []
    for method in poolings:
        cfg = replace(base_cfg, pooling=method)
        model, manifest = train(cfg, train_triplets)
        embedder = Embedder(model, pooling=method, direction=cfg.ata_direction)
        row = {"pooling": method, "final_loss": manifest.loss_log[-1][2]}
        row.update(evaluate_retrieval(embedder, task, ks=(1, 10)))
        row["spearman"] = evaluate_sts(embedder, pairs)
        rows.append(row)
    return rows


@dataclass
class TokenWeightReport:
    """Per-token anchor weights plus the head-summed attention map."""

    token_ids: list[int]
    tokens: list[str]
    raw: np.ndarray
    normalized: np.ndarray
    attention_sum: np.ndarray  # (K, K), summed over heads

    def as_text(self, include_attention: bool = False) -> str:
        lines = ["position\ttoken\traw_weight\tnormalized_weight"]
        for i, (tok, r, w) in enumerate(zip(self.tokens, self.raw, self.normalized)):
            lines.append(f"{i}\t{tok}\t{r:.6f}\t{w:.6f}")
        if include_attention:
            lines.append("")
            lines.append("summed_attention (query rows x key columns):")
            for row in self.attention_sum:
                lines.append("\t".join(f"{v:.4f}" for v in row))
        return "\n".join(lines)


def inspect_weights(model: EncoderModel, text: str, direction: str = "incoming") -> TokenWeightReport:
    """Anchor weights and attention mass for one input text."""
    ids = tokenize(text, model.cfg.max_seq_len)
    out = model.encode(ids)
    weights = ata_weights(out.attention, direction)
    return TokenWeightReport(
        token_ids=ids,
        tokens=[render_token(i) for i in ids],
        raw=weights.raw.data.copy(),
        normalized=weights.normalized.data.copy(),
        attention_sum=out.attention.data.sum(axis=0),
    )
