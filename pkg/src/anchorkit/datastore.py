"""Line-delimited dataset files, pair files, and mixing/splitting.

One JSON object per line, UTF-8, canonical field order:

    {"user_query": ..., "positive_document": ...,
     "hard_negative_document": [{"similarity_level": ..., "text": ...}, ...],
     "source": "synthetic" | "retrieval_augmented", "task_category": ...}

Pair files for augmentation carry {"query": ..., "positive": ...} per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .encoder import file_digest  # re-exported for manifest writers
from .errors import ConfigError, GenerationFormatError
from .synth import TrainingTriplet, level_tags, validate_record

__all__ = [
    "CANONICAL_FIELDS",
    "MixSpec",
    "file_digest",
    "mix_and_split",
    "read_dataset",
    "read_pairs",
    "triplet_to_record",
    "write_dataset",
    "write_pairs",
]

CANONICAL_FIELDS = (
    "user_query",
    "positive_document",
    "hard_negative_document",
    "source",
    "task_category",
)


def triplet_to_record(t: TrainingTriplet) -> dict:
    tags = level_tags(len(t.negatives))
    return {
        "user_query": t.query,
        "positive_document": t.positive,
        "hard_negative_document": [
            {"similarity_level": tag, "text": text} for tag, text in zip(tags, t.negatives)
        ],
        "source": t.source,
        "task_category": t.category,
    }


def write_dataset(triplets: Iterable[TrainingTriplet], path: str | Path) -> int:
    """Write records in canonical field order; returns the record count."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in triplets:
            fh.write(json.dumps(triplet_to_record(t), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_dataset(
    path: str | Path, strict: bool = False, num_levels: int = 4
) -> tuple[list[TrainingTriplet], dict]:
    """Read a dataset file.

    strict=True raises on the first invalid line (naming the line number);
    strict=False skips invalid lines and returns per-violation counts.
    """
    triplets: list[TrainingTriplet] = []
    errors: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise GenerationFormatError("unparseable", str(exc), raw=line, line=lineno) from None
                triplets.append(validate_record(record, num_levels=num_levels, line=lineno))
            except GenerationFormatError as exc:
                if strict:
                    raise
                errors[exc.violation] = errors.get(exc.violation, 0) + 1
    return triplets, errors


def write_pairs(pairs: Iterable[tuple[str, str]], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for query, positive in pairs:
            fh.write(json.dumps({"query": query, "positive": positive}, ensure_ascii=False) + "\n")
            count += 1
    return count


def read_pairs(path: str | Path, strict: bool = False) -> tuple[list[tuple[str, str]], dict]:
    """Read a {query, positive} pair file with the same strictness contract."""
    pairs: list[tuple[str, str]] = []
    errors: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise GenerationFormatError("unparseable", str(exc), raw=line, line=lineno) from None
                if not isinstance(record, dict) or "query" not in record or "positive" not in record:
                    raise GenerationFormatError("missing_field", "pair needs query and positive", line=lineno)
                q, p = record["query"], record["positive"]
                if not isinstance(q, str) or not isinstance(p, str) or not q.strip() or not p.strip():
                    raise GenerationFormatError("empty_text", "pair fields must be non-empty strings", line=lineno)
                pairs.append((q, p))
            except GenerationFormatError as exc:
                if strict:
                    raise
                errors[exc.violation] = errors.get(exc.violation, 0) + 1
    return pairs, errors


@dataclass
class MixSpec:
    """Weighted sources plus a seeded shuffle and a (train, eval) split."""

    inputs: list[tuple[str, float]]
    seed: int = 0
    train_fraction: float = 0.8
    eval_fraction: float = 0.2
    num_levels: int = 4
    strict: bool = field(default=False)

    def validate(self) -> "MixSpec":
        if not self.inputs:
            raise ConfigError("mix needs at least one input")
        for path, weight in self.inputs:
            if weight <= 0:
                raise ConfigError(f"weight for {path!r} must be positive, got {weight}")
        if abs(self.train_fraction + self.eval_fraction - 1.0) > 1e-9:
            raise ConfigError(
                f"split fractions must sum to 1, got {self.train_fraction} + {self.eval_fraction}"
            )
        if not 0.0 <= self.train_fraction <= 1.0:
            raise ConfigError(f"train_fraction outside [0, 1]: {self.train_fraction}")
        return self


def mix_and_split(spec: MixSpec) -> tuple[list[TrainingTriplet], list[TrainingTriplet]]:
    """Weighted interleave of the sources, seeded shuffle, disjoint split.

    The union of the two returned lists is exactly the input multiset; only
    the order and the cut point depend on the seed.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, 0x111])
    streams: list[list[TrainingTriplet]] = []
    weights: list[float] = []
    for path, weight in spec.inputs:
        triplets, _ = read_dataset(path, strict=spec.strict, num_levels=spec.num_levels)
        streams.append(triplets)
        weights.append(weight)
    if sum(len(s) for s in streams) == 0:
        raise ConfigError("mix inputs contain no records")

    # Draw the next record from source i with probability proportional to
    # its weight, among sources that still have records.
    merged: list[TrainingTriplet] = []
    cursors = [0] * len(streams)
    while True:
        live = [i for i, s in enumerate(streams) if cursors[i] < len(s)]
        if not live:
            break
        w = np.asarray([weights[i] for i in live])
        pick = live[rng.choice(len(live), p=w / w.sum())]
        merged.append(streams[pick][cursors[pick]])
        cursors[pick] += 1

    order = rng.permutation(len(merged))
    merged = [merged[i] for i in order]
    n_train = int(round(spec.train_fraction * len(merged)))
    return merged[:n_train], merged[n_train:]
