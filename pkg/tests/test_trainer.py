import numpy as np
import pytest

from anchorkit import numkit as nk
from anchorkit.curriculum import build_schedule
from anchorkit.encoder import EncoderConfig, EncoderModel, encode_tokens, tokenize
from anchorkit.errors import ConfigError, TrainingDivergedError
from anchorkit.pooling import pool
from anchorkit.trainer import (
    AdamState,
    TrainConfig,
    _embed_batch,
    adam_init,
    adam_step,
    instruction_for,
    train,
)

TINY_ENCODER = EncoderConfig(num_layers=1, num_heads=2, model_dim=16, ff_dim=24, max_seq_len=48, seed=3)


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        encoder=TINY_ENCODER,
        pooling="ata",
        temperature=50.0,
        batch_size=4,
        grad_accum=1,
        total_steps=8,
        learning_rate=1e-3,
        warmup_steps=0,
        strategy="fixed",
        fixed_level=4,
        seed=11,
    )
    base.update(overrides)
    return TrainConfig(**base)


# -- Adam ----------------------------------------------------------------------


def test_adam_zero_gradient_leaves_params_unchanged():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    state = adam_init(params)
    adam_step(params, {"w": np.zeros(3)}, state, lr=0.1)
    assert np.array_equal(params["w"], [1.0, -2.0, 3.0])


def test_adam_first_step_matches_scalar_reference():
    g = np.array([0.3, -0.7, 0.0, 1.9])
    params = {"w": np.array([1.0, 1.0, 1.0, 1.0])}
    state = adam_init(params)
    adam_step(params, {"w": g.copy()}, state, lr=0.01)

    expected = []
    b1, b2, eps = 0.9, 0.999, 1e-8
    for gi in g:
        m = (1 - b1) * gi
        v = (1 - b2) * gi * gi
        m_hat = m / (1 - b1)
        v_hat = v / (1 - b2)
        expected.append(1.0 - 0.01 * m_hat / (np.sqrt(v_hat) + eps))
    assert np.allclose(params["w"], expected, atol=1e-15)


def test_adam_equal_streams_give_equal_states(rng):
    grads = [rng.normal(size=(3, 2)) for _ in range(5)]
    pa = {"w": np.ones((3, 2))}
    pb = {"w": np.ones((3, 2))}
    sa, sb = adam_init(pa), adam_init(pb)
    for g in grads:
        adam_step(pa, {"w": g}, sa, lr=0.05)
        adam_step(pb, {"w": g}, sb, lr=0.05)
    assert np.array_equal(pa["w"], pb["w"])
    assert np.array_equal(sa.m["w"], sb.m["w"])
    assert np.array_equal(sa.v["w"], sb.v["w"])
    assert sa.t == sb.t


def test_adam_shape_mismatch():
    params = {"w": np.ones(3)}
    with pytest.raises(ConfigError):
        adam_step(params, {"w": np.ones(4)}, adam_init(params), lr=0.1)


# -- config validation -----------------------------------------------------------


def test_batch_size_one_with_in_batch_rejected():
    with pytest.raises(ConfigError, match="in-batch"):
        tiny_config(batch_size=1).validate()
    tiny_config(batch_size=1, in_batch=False).validate()


def test_dataset_smaller_than_batch_rejected(mock_corpus_64):
    with pytest.raises(ConfigError, match="smaller than one batch"):
        train(tiny_config(batch_size=128), mock_corpus_64)


def test_empty_dataset_rejected():
    with pytest.raises(ConfigError):
        train(tiny_config(), [])


# -- training behavior ------------------------------------------------------------


def test_loss_decreases_on_easiest_level(mock_corpus_64):
    cfg = tiny_config(total_steps=20, batch_size=8, fixed_level=4, seed=11)
    _, manifest = train(cfg, mock_corpus_64)
    losses = [v for _, _, v in manifest.loss_log]
    assert len(losses) == 20
    assert np.mean(losses[-5:]) < np.mean(losses[:5])
    assert all(np.isfinite(losses))


def test_training_is_deterministic(mock_corpus_64):
    cfg = tiny_config(total_steps=5)
    _, m1 = train(cfg, mock_corpus_64)
    _, m2 = train(tiny_config(total_steps=5), mock_corpus_64)
    assert m1.loss_log == m2.loss_log


def test_loss_log_levels_follow_schedule(mock_corpus_64):
    cfg = tiny_config(strategy="curriculum", fixed_level=None, total_steps=8)
    _, manifest = train(cfg, mock_corpus_64)
    schedule = build_schedule("curriculum", 8, 4, 0)
    assert [lv for _, lv, _ in manifest.loss_log] == list(schedule.levels)
    assert manifest.schedule["blocks"] == [[4, 1, 2], [3, 3, 4], [2, 5, 6], [1, 7, 8]]


def test_embed_batch_selects_level_negative(mock_corpus_64):
    """The negative embedded at level k must be triplet.negatives[k-1]."""
    cfg = tiny_config()
    item = mock_corpus_64[0]
    tape = nk.Tape()
    model = EncoderModel(cfg.encoder)
    bound = model.bind(tape)
    _, _, negatives = _embed_batch(cfg, bound, [item], level=3)
    direct = encode_tokens(
        cfg.encoder,
        {k: nk.tensor(v) for k, v in model.params.items()},
        tokenize(item.negatives[2], cfg.encoder.max_seq_len),
    )
    expected = pool(direct, cfg.pooling, cfg.ata_direction, cfg.ata_weight_gradients)
    assert np.allclose(negatives[0].data, expected.data, atol=1e-12)


def test_gradient_accumulation_matches_concatenated_batch(mock_corpus_64):
    """Micro-batch coupling is removed (in_batch=False) so the two runs see
    identical per-item losses; the averaged update must agree to 1e-9."""
    accum = tiny_config(batch_size=4, grad_accum=2, total_steps=4, in_batch=False)
    concat = tiny_config(batch_size=8, grad_accum=1, total_steps=4, in_batch=False)
    model_a, _ = train(accum, mock_corpus_64)
    model_b, _ = train(concat, mock_corpus_64)
    for name in model_a.params:
        assert np.abs(model_a.params[name] - model_b.params[name]).max() < 1e-9


def test_run_outputs_written(tmp_path, mock_corpus_64):
    cfg = tiny_config(total_steps=4, checkpoint_every=2)
    _, manifest = train(cfg, mock_corpus_64, out_dir=tmp_path, dataset_digest="abc123")
    assert (tmp_path / "manifest.json").exists()
    assert (tmp_path / "loss_log.txt").exists()
    assert (tmp_path / "checkpoint_final.bin").exists()
    assert (tmp_path / "checkpoint_step000002.bin").exists()
    assert manifest.dataset_digest == "abc123"
    lines = (tmp_path / "loss_log.txt").read_text().splitlines()
    assert len(lines) == 4
    step, level, loss = lines[0].split("\t")
    assert step == "1" and level == "4"
    float(loss)


def test_nonfinite_loss_aborts_with_diagnostic_manifest(tmp_path, monkeypatch, mock_corpus_64):
    import anchorkit.trainer as trainer_mod

    def poisoned_info_nce(batch):
        return nk.tensor(float("nan"))

    monkeypatch.setattr(trainer_mod, "info_nce", poisoned_info_nce)
    with pytest.raises(TrainingDivergedError):
        train(tiny_config(total_steps=4), mock_corpus_64, out_dir=tmp_path)
    manifest = (tmp_path / "manifest.json").read_text()
    assert "non-finite loss at step 1" in manifest


def test_instruction_lookup():
    assert instruction_for("sts") == "Retrieve semantically similar text"
    assert "query" in instruction_for("retrieval")
    assert instruction_for("unknown") == instruction_for("retrieval")
