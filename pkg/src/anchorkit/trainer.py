"""Contrastive training loop with curriculum-scheduled hard negatives.

Each step looks up its granularity level from the schedule, selects that
level's negative from every triplet in the batch, encodes query (instruction
wrapped), positive, and negative, pools, and takes an InfoNCE step. Gradients
are averaged over grad_accum micro-batches before one Adam update, so an
accumulated step matches the update a single concatenated batch would produce
(exactly so when items do not couple through in-batch negatives).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .curriculum import build_schedule
from .encoder import (
    EncoderConfig,
    EncoderModel,
    encode_tokens,
    save_checkpoint,
    tokenize,
    wrap_instruction,
)
from .errors import ConfigError, TrainingDivergedError
from .numkit import Tape
from .objective import ContrastiveBatch, info_nce
from .pooling import DIRECTIONS, POOLING_METHODS, pool
from .synth import CATEGORIES, RETRIEVAL_CATEGORY, TrainingTriplet

# Query-side instructions by task family, in the style of public retrieval
# instruction tables; documents are always encoded bare. Kept short so the
# wrapped query still fits the byte-level encoder's sequence budget.
CATEGORY_INSTRUCTIONS = {
    "short-long": "Retrieve documents that answer the query",
    "long-short": "Retrieve the short text matching the passage",
    "long-long": "Retrieve documents on the same subject",
    "short-short": "Retrieve phrases with the same meaning",
    "sts": "Retrieve semantically similar text",
    RETRIEVAL_CATEGORY: "Retrieve passages that answer the query",
}


def instruction_for(category: str) -> str:
    return CATEGORY_INSTRUCTIONS.get(category, CATEGORY_INSTRUCTIONS[RETRIEVAL_CATEGORY])


@dataclass
class TrainConfig:
    """Desk-scale defaults; the full-scale settings (batch 64, accumulation 8,
    1600 steps, learning rate 2e-5, temperature 1) remain expressible."""

    encoder: EncoderConfig = field(default_factory=lambda: EncoderConfig(max_seq_len=128))
    pooling: str = "ata"
    ata_direction: str = "incoming"
    ata_weight_gradients: bool = True
    temperature: float = 50.0
    batch_size: int = 16
    grad_accum: int = 2
    total_steps: int = 400
    learning_rate: float = 1e-3
    warmup_steps: int = 50
    strategy: str = "curriculum"
    num_levels: int = 4
    schedule_seed: int = 0
    fixed_level: int | None = None
    in_batch: bool = True
    include_cross_hard: bool = False
    instruction_wrap: bool = True
    checkpoint_every: int = 0
    seed: int = 0

    def validate(self) -> "TrainConfig":
        self.encoder.validate()
        if self.pooling not in POOLING_METHODS:
            raise ConfigError(f"pooling must be one of {POOLING_METHODS}, got {self.pooling!r}")
        if self.ata_direction not in DIRECTIONS:
            raise ConfigError(f"ata_direction must be one of {DIRECTIONS}, got {self.ata_direction!r}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.batch_size < 1 or self.grad_accum < 1 or self.total_steps < 1:
            raise ConfigError("batch_size, grad_accum, and total_steps must be >= 1")
        if self.in_batch and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 when in-batch negatives are enabled")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0


def adam_init(params: dict[str, np.ndarray]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
    )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place."""
    b1, b2 = betas
    state.t += 1
    t = state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class RunManifest:
    """Everything needed to reproduce a run bit-for-bit with the same code."""

    config: dict
    schedule: dict
    dataset_digest: str | None
    loss_log: list
    final_checkpoint: str | None
    status: str = "completed"

    def to_json(self) -> str:
        return json.dumps(
            {
                "config": self.config,
                "schedule": self.schedule,
                "dataset_digest": self.dataset_digest,
                "status": self.status,
                "final_checkpoint": self.final_checkpoint,
                "loss_log": [[s, k, float(f"{v:.17g}")] for s, k, v in self.loss_log],
            },
            sort_keys=True,
            indent=2,
        )


def _loss_log_lines(loss_log: list) -> str:
    return "".join(f"{step}\t{level}\t{loss:.17g}\n" for step, level, loss in loss_log)


def _embed_batch(cfg: TrainConfig, bound: dict, items: list[TrainingTriplet], level: int):
    msl = cfg.encoder.max_seq_len
    queries, positives, negatives = [], [], []
    for item in items:
        qtext = item.query
        if cfg.instruction_wrap:
            qtext = wrap_instruction(instruction_for(item.category), qtext)
        for text, dest in ((qtext, queries), (item.positive, positives),
                           (item.negatives[level - 1], negatives)):
            out = encode_tokens(cfg.encoder, bound, tokenize(text, msl))
            dest.append(pool(out, cfg.pooling, cfg.ata_direction, cfg.ata_weight_gradients))
    return queries, positives, negatives


def train(
    cfg: TrainConfig,
    triplets: list[TrainingTriplet],
    out_dir: str | Path | None = None,
    dataset_digest: str | None = None,
) -> tuple[EncoderModel, RunManifest]:
    """Run supervised contrastive training; returns the model and manifest.

    With out_dir set, writes manifest.json, loss_log.txt (step, level, loss
    per line), and checkpoint files there.
    """
    cfg.validate()
    if not triplets:
        raise ConfigError("training set is empty")
    if len(triplets) < cfg.batch_size:
        raise ConfigError(
            f"training set ({len(triplets)} records) is smaller than one batch ({cfg.batch_size})"
        )
    for t in triplets:
        if len(t.negatives) < cfg.num_levels:
            raise ConfigError(
                f"a triplet has {len(t.negatives)} negatives but the schedule uses {cfg.num_levels} levels"
            )

    schedule = build_schedule(
        cfg.strategy, cfg.total_steps, cfg.num_levels, cfg.schedule_seed, cfg.fixed_level
    )
    model = EncoderModel(cfg.encoder)
    state = adam_init(model.params)
    order_rng = np.random.default_rng([cfg.seed, 0xDA7A])

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    def next_batch(cursor: int, perm: np.ndarray):
        batch = []
        for _ in range(cfg.batch_size):
            if cursor == len(perm):
                perm = order_rng.permutation(len(triplets))
                cursor = 0
            batch.append(triplets[perm[cursor]])
            cursor += 1
        return batch, cursor, perm

    loss_log: list[tuple[int, int, float]] = []
    perm = order_rng.permutation(len(triplets))
    cursor = 0

    def write_outputs(manifest: RunManifest):
        if out_path is None:
            return
        (out_path / "loss_log.txt").write_text(_loss_log_lines(manifest.loss_log), encoding="utf-8")
        (out_path / "manifest.json").write_text(manifest.to_json() + "\n", encoding="utf-8")

    for step in range(1, cfg.total_steps + 1):
        level = schedule.level_at(step)
        lr = cfg.learning_rate
        if cfg.warmup_steps > 0:
            lr *= min(1.0, step / cfg.warmup_steps)
        grad_total = {name: np.zeros_like(arr) for name, arr in model.params.items()}
        micro_losses = []
        for _ in range(cfg.grad_accum):
            batch, cursor, perm = next_batch(cursor, perm)
            tape = Tape()
            bound = model.bind(tape)
            queries, positives, negatives = _embed_batch(cfg, bound, batch, level)
            loss = info_nce(
                ContrastiveBatch(
                    queries=queries,
                    positives=positives,
                    hard_negatives=[[n] for n in negatives],
                    temperature=cfg.temperature,
                    in_batch=cfg.in_batch,
                    include_cross_hard=cfg.include_cross_hard,
                )
            )
            value = loss.item()
            if not np.isfinite(value):
                manifest = RunManifest(
                    config=cfg.to_dict(),
                    schedule=schedule.to_dict(),
                    dataset_digest=dataset_digest,
                    loss_log=loss_log,
                    final_checkpoint=None,
                    status=f"aborted: non-finite loss at step {step}",
                )
                write_outputs(manifest)
                raise TrainingDivergedError(f"non-finite loss at step {step}")
            micro_losses.append(value)
            grads = tape.backward(loss)
            for name, leaf in bound.items():
                grad_total[name] += grads.wrt(leaf) / cfg.grad_accum
        adam_step(model.params, grad_total, state, lr)
        loss_log.append((step, level, float(np.mean(micro_losses))))
        if out_path is not None and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save_checkpoint(str(out_path / f"checkpoint_step{step:06d}.bin"), model)

    checkpoint_path = None
    if out_path is not None:
        checkpoint_path = str(out_path / "checkpoint_final.bin")
        save_checkpoint(checkpoint_path, model)
    manifest = RunManifest(
        config=cfg.to_dict(),
        schedule=schedule.to_dict(),
        dataset_digest=dataset_digest,
        loss_log=loss_log,
        final_checkpoint=checkpoint_path,
    )
    write_outputs(manifest)
    return model, manifest
