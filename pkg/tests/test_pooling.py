import numpy as np
import pytest

from anchorkit import numkit as nk
from anchorkit.encoder import EncoderOutput
from anchorkit.errors import ConfigError, ContractError, ShapeError
from anchorkit.gradcheck import central_difference, relative_error
from anchorkit.pooling import ata_weights, pool, pool_ata, pool_last, pool_mean

HAND_ATTENTION = np.array([[[0.9, 0.1], [0.5, 0.5]]])  # H=1, K=2


def uniform_output(h, k, d, rng):
    hidden = nk.tensor(rng.normal(size=(k, d)))
    attention = nk.tensor(np.full((h, k, k), 1.0 / k))
    return EncoderOutput(hidden=hidden, attention=attention)


def test_uniform_attention_weights_symmetry(rng):
    out = uniform_output(2, 3, 4, rng)
    w = ata_weights(out.attention)
    assert np.allclose(w.raw.data, 2 * 3 * np.log(2.0), atol=1e-12)
    assert np.allclose(w.normalized.data, 1 / 3, atol=1e-12)


def test_hand_example_incoming_direction():
    w = ata_weights(nk.tensor(HAND_ATTENTION), direction="incoming")
    raw_expected = [np.log(2.8) + np.log(2.0), np.log(1.2) + np.log(2.0)]
    assert np.allclose(w.raw.data, raw_expected, atol=1e-12)
    assert np.allclose(w.normalized.data, [0.6631, 0.3369], atol=1e-4)


def test_hand_example_literal_direction():
    w = ata_weights(nk.tensor(HAND_ATTENTION), direction="literal")
    raw_expected = [np.log(2.8) + np.log(1.2), np.log(2.0) + np.log(2.0)]
    assert np.allclose(w.raw.data, raw_expected, atol=1e-12)
    assert np.allclose(w.normalized.data, [0.4665, 0.5335], atol=1e-4)


def test_log_base_cancels_in_normalization():
    att = HAND_ATTENTION
    k = att.shape[-1]
    for direction, axes in (("incoming", (0, 1)), ("literal", (0, 2))):
        lib = ata_weights(nk.tensor(att), direction=direction).normalized.data
        raw_ln = np.log(att * k + 1).sum(axis=axes)
        raw_l2 = np.log2(att * k + 1).sum(axis=axes)
        assert np.allclose(lib, raw_ln / raw_ln.sum(), atol=1e-12)
        assert np.allclose(lib, raw_l2 / raw_l2.sum(), atol=1e-12)


def test_normalized_weights_sum_to_one(rng):
    for _ in range(10):
        h, k = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        logits = rng.normal(size=(h, k, k)) * 3
        att = np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True)
        for direction in ("incoming", "literal"):
            w = ata_weights(nk.tensor(att), direction=direction)
            assert abs(w.normalized.data.sum() - 1.0) < 1e-9
            assert np.all(w.raw.data >= 0.0)
            assert np.all(w.normalized.data >= 0.0)


def test_incoming_monotonicity(rng):
    """Moving attention mass onto a key strictly raises its raw weight."""
    logits = rng.normal(size=(2, 4, 4))
    att = np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True)
    before = ata_weights(nk.tensor(att), direction="incoming").raw.data[2]
    bumped = att.copy()
    delta = bumped[1, 0, 3] * 0.5
    bumped[1, 0, 3] -= delta
    bumped[1, 0, 2] += delta  # row stays stochastic
    after = ata_weights(nk.tensor(bumped), direction="incoming").raw.data[2]
    assert after > before


def test_scale_rationale_raw_grows_with_k():
    h = 2
    for k in (2, 4, 8, 16):
        att = np.full((h, k, k), 1.0 / k)
        w = ata_weights(nk.tensor(att))
        assert np.allclose(w.raw.data, h * k * np.log(2.0), atol=1e-12)
        assert np.allclose(w.normalized.data, 1.0 / k, atol=1e-12)


def test_pool_ata_equals_mean_for_uniform_attention(rng):
    for k in (1, 2, 5, 9):
        out = uniform_output(3, k, 6, rng)
        diff = np.abs(pool_ata(out).data - pool_mean(out).data).max()
        assert diff < 1e-9


def test_pool_ata_single_token(rng):
    out = uniform_output(2, 1, 4, rng)
    assert np.allclose(pool_ata(out).data, out.hidden.data[0], atol=1e-12)


def test_pool_ata_elementwise_oracle(rng):
    hidden = rng.normal(size=(2, 5))
    out = EncoderOutput(hidden=nk.tensor(hidden), attention=nk.tensor(HAND_ATTENTION))
    w = ata_weights(out.attention).normalized.data
    expected = np.array([sum(w[i] * hidden[i, j] for i in range(2)) for j in range(5)])
    assert np.allclose(pool_ata(out).data, expected, atol=1e-12)


def test_pool_mean_examples(rng):
    out = EncoderOutput(
        hidden=nk.tensor([[1.0, 1.0], [3.0, 3.0]]),
        attention=nk.tensor(np.full((1, 2, 2), 0.5)),
    )
    assert np.allclose(pool_mean(out).data, [2.0, 2.0])
    hidden = rng.normal(size=(4, 3))
    perm = hidden[[2, 0, 3, 1]]
    a = pool_mean(EncoderOutput(nk.tensor(hidden), nk.tensor(np.full((1, 4, 4), 0.25))))
    b = pool_mean(EncoderOutput(nk.tensor(perm), nk.tensor(np.full((1, 4, 4), 0.25))))
    assert np.allclose(a.data, b.data, atol=1e-12)


def test_pool_last_examples(rng):
    hidden = rng.normal(size=(4, 3))
    att = np.full((1, 4, 4), 0.25)
    out = EncoderOutput(nk.tensor(hidden), nk.tensor(att))
    assert np.array_equal(pool_last(out).data, hidden[3])
    changed = hidden.copy()
    changed[0] += 10.0
    out2 = EncoderOutput(nk.tensor(changed), nk.tensor(att))
    assert np.array_equal(pool_last(out2).data, pool_last(out).data)
    single = uniform_output(1, 1, 3, rng)
    assert np.array_equal(pool_last(single).data, single.hidden.data[0])


def test_ata_gradients_through_weight_path(rng):
    # Perturb attention logits and go through the softmax so the rows the
    # pooling contract checks stay stochastic during finite differencing.
    logits = rng.normal(size=(2, 3, 3))
    hidden = rng.normal(size=(3, 4))
    w = rng.uniform(0.5, 1.5, 4)

    def build(logit_tensor):
        out = EncoderOutput(
            hidden=nk.tensor(hidden), attention=nk.softmax_lastdim(logit_tensor)
        )
        return nk.sum(nk.mul(pool_ata(out), nk.tensor(w)))

    def scalar(flat):
        return build(nk.tensor(flat.reshape(logits.shape))).item()

    tape = nk.Tape()
    leaf = tape.leaf(logits)
    analytic = tape.backward(build(leaf)).wrt(leaf)
    numeric = central_difference(scalar, logits.ravel()).reshape(logits.shape)
    for a, b in zip(analytic.flat, numeric.flat):
        assert relative_error(a, b, floor=1e-7) < 1e-4


def test_stop_gradient_flag_detaches_weights(rng):
    logits = rng.normal(size=(2, 3, 3))
    att = np.exp(logits) / np.exp(logits).sum(axis=-1, keepdims=True)
    hidden = rng.normal(size=(3, 4))
    probe = rng.normal(size=4)

    def grad_wrt_attention(weight_gradients):
        tape = nk.Tape()
        att_leaf = tape.leaf(att)
        hid_leaf = tape.leaf(hidden)
        out = EncoderOutput(hidden=hid_leaf, attention=att_leaf)
        loss = nk.sum(nk.mul(pool_ata(out, weight_gradients=weight_gradients), nk.tensor(probe)))
        return tape.backward(loss).wrt(att_leaf)

    assert np.all(grad_wrt_attention(False) == 0.0)
    assert np.abs(grad_wrt_attention(True)).max() > 0.0


def test_pool_dispatcher(rng):
    out = uniform_output(1, 3, 4, rng)
    assert np.allclose(pool(out, "mean").data, pool_mean(out).data)
    assert np.allclose(pool(out, "last").data, pool_last(out).data)
    assert np.allclose(pool(out, "ata").data, pool_ata(out).data)
    with pytest.raises(ConfigError):
        pool(out, "max")


def test_ata_weight_errors(rng):
    with pytest.raises(ContractError, match="sum to 1"):
        ata_weights(nk.tensor(np.full((1, 2, 2), 0.3)))
    with pytest.raises(ShapeError):
        ata_weights(nk.tensor(np.full((2, 3), 0.5)))
    with pytest.raises(ConfigError):
        ata_weights(nk.tensor(HAND_ATTENTION), direction="sideways")
    with pytest.raises(ContractError, match="non-negative"):
        bad = np.array([[[1.5, -0.5], [0.5, 0.5]]])
        ata_weights(nk.tensor(bad))
