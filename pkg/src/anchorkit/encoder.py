"""Small bidirectional transformer encoder over a byte-level tokenizer.

The encoder is natively bidirectional (no causal mask anywhere) and exposes
two things per input: the final-layer hidden states, one row per token, and
the final-layer attention probabilities per head, which downstream pooling
consumes. Both outputs stay differentiable when the parameters are bound to
a tape.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from . import numkit as nk
from .errors import ConfigError, ContractError, FileFormatError
from .numkit import Tape, Tensor

BOS_ID = 256
EOS_ID = 257
VOCAB_SIZE = 258

_CHECKPOINT_MAGIC = b"ATAENC01"


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    num_heads: int = 4
    model_dim: int = 64
    ff_dim: int = 128
    vocab_size: int = VOCAB_SIZE
    max_seq_len: int = 64
    seed: int = 0

    def validate(self) -> "EncoderConfig":
        for name in ("num_layers", "num_heads", "model_dim", "ff_dim", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.max_seq_len < 1:
            raise ConfigError(f"max_seq_len must be >= 1, got {self.max_seq_len}")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        return self


@dataclass
class EncoderOutput:
    """Final-layer hidden states (K x d) and attention (H x K x K)."""

    hidden: Tensor
    attention: Tensor

    @property
    def seq_len(self) -> int:
        return self.hidden.shape[0]


def tokenize(text: str, max_seq_len: int) -> list[int]:
    """Byte-level ids framed by begin/end markers; truncation keeps the end marker."""
    if max_seq_len < 2:
        raise ConfigError(f"max_seq_len must be >= 2 to hold the sequence markers, got {max_seq_len}")
    body = list(text.encode("utf-8"))[: max_seq_len - 2]
    return [BOS_ID] + body + [EOS_ID]


def render_token(token_id: int) -> str:
    """Printable rendering of one token id for inspection output."""
    if token_id == BOS_ID:
        return "<bos>"
    if token_id == EOS_ID:
        return "<eos>"
    if 32 <= token_id <= 126:
        return chr(token_id)
    return f"\\x{token_id:02x}"


def wrap_instruction(task: str, text: str) -> str:
    """Query-side instruction wrapping; documents are encoded bare."""
    return f"Instruct: {task}\nQuery: {text}"


def _layer_param_names(i: int) -> list[str]:
    p = f"l{i}."
    return [
        p + "ln1_g",
        p + "ln1_b",
        p + "wq",
        p + "wk",
        p + "wv",
        p + "wo",
        p + "ln2_g",
        p + "ln2_b",
        p + "w1",
        p + "b1",
        p + "w2",
        p + "b2",
    ]


def param_names(cfg: EncoderConfig) -> list[str]:
    names = ["tok_emb", "pos_emb"]
    for i in range(cfg.num_layers):
        names.extend(_layer_param_names(i))
    names.extend(["lnf_g", "lnf_b"])
    return names


def param_count(cfg: EncoderConfig) -> int:
    """Closed-form parameter count implied by the config."""
    d, f = cfg.model_dim, cfg.ff_dim
    per_layer = 4 * d * d + 2 * d * f + f + 5 * d
    return cfg.vocab_size * d + cfg.max_seq_len * d + cfg.num_layers * per_layer + 2 * d


def init_params(cfg: EncoderConfig) -> dict[str, np.ndarray]:
    """Seeded scaled-normal init (scale 1/sqrt(model_dim)) for all weight matrices."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    d, f = cfg.model_dim, cfg.ff_dim
    s = 1.0 / np.sqrt(d)

    def normal(*shape):
        return rng.normal(0.0, s, size=shape)

    params: dict[str, np.ndarray] = {
        "tok_emb": normal(cfg.vocab_size, d),
        "pos_emb": normal(cfg.max_seq_len, d),
    }
    for i in range(cfg.num_layers):
        p = f"l{i}."
        params[p + "ln1_g"] = np.ones(d)
        params[p + "ln1_b"] = np.zeros(d)
        params[p + "wq"] = normal(d, d)
        params[p + "wk"] = normal(d, d)
        params[p + "wv"] = normal(d, d)
        params[p + "wo"] = normal(d, d)
        params[p + "ln2_g"] = np.ones(d)
        params[p + "ln2_b"] = np.zeros(d)
        params[p + "w1"] = normal(d, f)
        params[p + "b1"] = np.zeros(f)
        params[p + "w2"] = normal(f, d)
        params[p + "b2"] = np.zeros(d)
    params["lnf_g"] = np.ones(d)
    params["lnf_b"] = np.zeros(d)
    return params


def encode_tokens(
    cfg: EncoderConfig, params: Mapping[str, Tensor], ids: Sequence[int]
) -> EncoderOutput:
    """Forward pass over bound parameter tensors; pure and differentiable."""
    ids = list(ids)
    if not ids:
        raise ContractError("encode needs at least one token")
    if len(ids) > cfg.max_seq_len:
        raise ContractError(f"sequence length {len(ids)} exceeds max_seq_len {cfg.max_seq_len}")
    if min(ids) < 0 or max(ids) >= cfg.vocab_size:
        raise ContractError(f"token id out of range for vocab_size {cfg.vocab_size}")
    missing = [n for n in param_names(cfg) if n not in params]
    if missing:
        raise ContractError(f"model is missing parameters: {missing[:3]}")

    K = len(ids)
    d, H = cfg.model_dim, cfg.num_heads
    dh = d // H
    x = nk.add(nk.index_rows(params["tok_emb"], ids), nk.index_rows(params["pos_emb"], range(K)))

    attention = None
    for i in range(cfg.num_layers):
        p = f"l{i}."
        h = nk.layer_norm(x, params[p + "ln1_g"], params[p + "ln1_b"])
        q = nk.transpose(nk.reshape(h @ params[p + "wq"], (K, H, dh)), (1, 0, 2))
        k = nk.transpose(nk.reshape(h @ params[p + "wk"], (K, H, dh)), (1, 2, 0))
        v = nk.transpose(nk.reshape(h @ params[p + "wv"], (K, H, dh)), (1, 0, 2))
        attention = nk.softmax_lastdim(nk.scale(q @ k, 1.0 / np.sqrt(dh)))
        ctx = nk.reshape(nk.transpose(attention @ v, (1, 0, 2)), (K, d))
        x = nk.add(x, ctx @ params[p + "wo"])
        h2 = nk.layer_norm(x, params[p + "ln2_g"], params[p + "ln2_b"])
        ff = nk.gelu(nk.add(h2 @ params[p + "w1"], params[p + "b1"]))
        x = nk.add(x, nk.add(ff @ params[p + "w2"], params[p + "b2"]))

    hidden = nk.layer_norm(x, params["lnf_g"], params["lnf_b"])
    return EncoderOutput(hidden=hidden, attention=attention)


class EncoderModel:
    """Parameter store plus convenience forward passes.

    The model is immutable for encoding purposes; the training loop mutates
    ``params`` in place between steps and is the exclusive writer.
    """

    def __init__(self, cfg: EncoderConfig, params: dict[str, np.ndarray] | None = None):
        self.cfg = cfg.validate()
        self.params = params if params is not None else init_params(cfg)

    def bind(self, tape: Tape) -> dict[str, Tensor]:
        """Fresh differentiable leaves holding the current parameter values."""
        return {name: tape.leaf(arr) for name, arr in self.params.items()}

    def encode(self, ids: Sequence[int]) -> EncoderOutput:
        """Untracked (inference) forward pass."""
        # Views keep the tensors immutable without copying the parameters.
        consts = {name: Tensor._wrap(arr.view()) for name, arr in self.params.items()}
        return encode_tokens(self.cfg, consts, ids)

    def encode_text(self, text: str) -> EncoderOutput:
        return self.encode(tokenize(text, self.cfg.max_seq_len))


def save_checkpoint(path: str, model: EncoderModel) -> str:
    """Write the versioned checkpoint container; returns its sha256 digest.

    Layout: 8-byte magic, uint64 little-endian header length, UTF-8 JSON
    header {format, version, config, params: [[name, shape], ...]}, then the
    float64 little-endian row-major bytes of each parameter in header order.
    """
    names = param_names(model.cfg)
    header = {
        "format": "anchorkit-encoder",
        "version": 1,
        "config": asdict(model.cfg),
        "params": [[n, list(model.params[n].shape)] for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(model.params[n], dtype="<f8").tobytes())
    return file_digest(path)


def load_checkpoint(path: str) -> EncoderModel:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CHECKPOINT_MAGIC:
            raise FileFormatError(f"bad checkpoint field 'magic': {magic!r}")
        raw_len = fh.read(8)
        if len(raw_len) != 8:
            raise FileFormatError("bad checkpoint field 'header_len': truncated")
        header_len = int.from_bytes(raw_len, "little")
        blob = fh.read(header_len)
        if len(blob) != header_len:
            raise FileFormatError("bad checkpoint field 'header': truncated")
        try:
            header = json.loads(blob.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FileFormatError(f"bad checkpoint field 'header': {exc}") from None
        for field in ("format", "version", "config", "params"):
            if field not in header:
                raise FileFormatError(f"bad checkpoint field '{field}': missing")
        if header["format"] != "anchorkit-encoder":
            raise FileFormatError(f"bad checkpoint field 'format': {header['format']!r}")
        if header["version"] != 1:
            raise FileFormatError(f"bad checkpoint field 'version': {header['version']!r}")
        try:
            cfg = EncoderConfig(**header["config"]).validate()
        except (TypeError, ConfigError) as exc:
            raise FileFormatError(f"bad checkpoint field 'config': {exc}") from None
        params: dict[str, np.ndarray] = {}
        for entry in header["params"]:
            name, shape = entry[0], tuple(int(s) for s in entry[1])
            count = int(np.prod(shape, dtype=np.int64)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise FileFormatError(f"bad checkpoint field 'params:{name}': truncated payload")
            params[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
        if fh.read(1):
            raise FileFormatError("bad checkpoint field 'payload': trailing bytes")
    missing = [n for n in param_names(cfg) if n not in params]
    if missing:
        raise FileFormatError(f"bad checkpoint field 'params': missing {missing[:3]}")
    return EncoderModel(cfg, params)


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
