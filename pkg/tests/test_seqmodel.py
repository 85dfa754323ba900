import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tsforge import netcore as nc
from tsforge.segloss import IntervalSegmentation, plain_mse
from tsforge.seqmodel import (SeqModel, SeqModelConfig, TrainSchedule, alternating_train,
                              build_causal_mask, build_view_mask, generate_sequence, make_loss,
                              seq_forward, teacher_forced_loss, teacher_forcing_batch)
from oracles import check_store_grads


def tiny(**kw):
    base = dict(width=8, heads=2, depth=1, window=2, length=6, features=2, classes=3, dtype="float64")
    base.update(kw)
    return SeqModel(SeqModelConfig(**base))


def frames(n=4, T=6, d=2, seed=0):
    return np.random.default_rng(seed).uniform(0.1, 0.9, size=(n, T, d))


# masks --------------------------------------------------------------------------------------

def test_mask_algebra_exhaustive():
    for T in range(1, 33):
        causal = build_causal_mask(T) == 0
        for w in range(1, T + 1):
            view = build_view_mask(T, w) == 0
            assert not np.any(view & ~causal)
            assert np.all(view.sum(axis=1) == np.minimum(np.arange(T) + 1, w))
        for w in (T, T + 1, T + 7):
            np.testing.assert_array_equal(build_view_mask(T, w), build_causal_mask(T))


def test_window_one_is_identity_attention():
    q = nc.Tensor(np.random.default_rng(0).normal(size=(5, 4)))
    _, w = nc.scaled_dot_attention(q, q, q, build_view_mask(5, 1))
    np.testing.assert_allclose(w, np.eye(5), atol=1e-12)


def test_view_mask_example():
    keep = build_view_mask(5, 2) == 0
    assert np.flatnonzero(keep[3]).tolist() == [2, 3]
    assert np.flatnonzero(keep[0]).tolist() == [0]


def test_mask_arguments():
    with pytest.raises(ValueError):
        build_view_mask(4, 0)
    with pytest.raises(ValueError):
        build_causal_mask(0)


# model ------------------------------------------------------------------------------------

def test_forward_shape_and_range():
    m = tiny()
    x = frames()
    out = seq_forward(m, x[:, :-1], x[:, :-1], np.array([0, 1, 2, 0]))
    assert out.shape == (4, 5, 2)
    assert np.all((out > 0) & (out < 1))


def test_full_model_gradients():
    m = tiny(seed=2)
    x = frames(n=2, T=4)
    seg = IntervalSegmentation(4, (2, 3, 4))
    loss = make_loss("weighted", seg, 4)
    errs = check_store_grads(m.store, lambda: teacher_forced_loss(m, x, np.array([0, 2]), loss)[0])
    assert max(errs.values()) < 1e-3, {k: v for k, v in errs.items() if v > 1e-4}


def test_future_frames_do_not_leak():
    m = tiny()
    x = frames(n=1)
    a = seq_forward(m, x, x, [1])
    y = x.copy()
    y[:, 4:] = 0.0
    b = seq_forward(m, y, y, [1])
    np.testing.assert_allclose(a[:, :4], b[:, :4], atol=1e-12)
    assert not np.allclose(a[:, 4:], b[:, 4:])


def test_batch_permutation_equivariant():
    m = tiny()
    x = frames(n=5)
    labels = np.array([0, 1, 2, 1, 0])
    perm = np.array([3, 0, 4, 2, 1])
    a = seq_forward(m, x, x, labels)
    b = seq_forward(m, x[perm], x[perm], labels[perm])
    np.testing.assert_allclose(a[perm], b, atol=1e-12)


def test_label_and_length_validation():
    m = tiny()
    with pytest.raises(ValueError):
        seq_forward(m, frames(n=1), frames(n=1), [3])
    with pytest.raises(ValueError):
        seq_forward(m, frames(n=1, T=7), frames(n=1, T=7), [0])
    with pytest.raises(ValueError):
        SeqModelConfig(width=10, heads=4).validate()


# teacher forcing -------------------------------------------------------------------------------

def test_teacher_forcing_slices():
    x = frames(n=2)
    enc, dec, tgt = teacher_forcing_batch(x)
    np.testing.assert_array_equal(enc, x[:, :-1])
    np.testing.assert_array_equal(dec, x[:, :-1])
    np.testing.assert_array_equal(tgt, x[:, 1:])


def test_noise_touches_only_encoder_first_frame():
    x = frames(n=3)
    enc, dec, _ = teacher_forcing_batch(x, 0.1, np.random.default_rng(0))
    enc2, _, _ = teacher_forcing_batch(x, 0.1, np.random.default_rng(1))
    np.testing.assert_array_equal(enc[:, 1:], x[:, 1:-1])
    np.testing.assert_array_equal(dec, x[:, :-1])
    assert not np.allclose(enc[:, 0], x[:, 0])
    assert enc.shape == enc2.shape and not np.allclose(enc[:, 0], enc2[:, 0])
    with pytest.raises(ValueError):
        teacher_forced_loss(tiny(), x, [0, 1, 2], plain_mse, noise_std=-1)


def test_forced_perfect_output_gives_zero_loss():
    x = frames(n=2)

    class Perfect(SeqModel):
        def forward(self, enc, dec, labels):
            return nc.Tensor(x[:, 1:])

    loss, _, _ = teacher_forced_loss(Perfect(SeqModelConfig(width=8, heads=2, depth=1, length=6,
                                                            features=2, classes=3, dtype="float64")),
                                     x, [0, 1], plain_mse)
    assert float(loss.data) == 0.0


# generation ----------------------------------------------------------------------------------

def test_generation_prefix_and_length_one():
    m = tiny()
    first = frames(n=3)[:, 0]
    labels = np.array([0, 1, 2])
    out = generate_sequence(m, first, labels, 6)
    assert out.shape == (3, 6, 2)
    np.testing.assert_array_equal(out[:, 0], first)
    one = generate_sequence(m, first, labels, 1)
    np.testing.assert_array_equal(one[:, 0], first)
    # each generated frame is the model's last prediction on the prefix before it
    pred = seq_forward(m, out[:, :4], out[:, :4], labels)[:, -1]
    np.testing.assert_allclose(out[:, 4], pred, atol=1e-12)


def test_generation_deterministic():
    m = tiny()
    first = frames(n=2)[:, 0]
    np.testing.assert_array_equal(generate_sequence(m, first, [0, 1], 6),
                                  generate_sequence(m, first, [0, 1], 6))


# training -----------------------------------------------------------------------------------------

def _schedule(**kw):
    base = dict(phases=[("weighted", 3, 1e-2), ("mse", 2, 1e-2), ("weighted", 2, 1e-3)], batch_size=2)
    base.update(kw)
    return TrainSchedule(**base)


def test_alternating_log_structure():
    m = tiny()
    seg = IntervalSegmentation(6, (2, 4, 6))
    log = alternating_train(m, frames(), [0, 1, 2, 0], seg, _schedule())
    assert [r["phase"] for r in log] == [1, 1, 1, 2, 2, 3, 3]
    assert [r["loss_fn"] for r in log] == ["weighted"] * 3 + ["mse"] * 2 + ["weighted"] * 2
    assert abs(log[3]["loss"] - log[3]["mse"]) < 1e-12
    assert all(np.isfinite(r[f"interval{i}"]) for r in log for i in range(1, 5))


def test_training_reduces_loss():
    m = tiny()
    seg = IntervalSegmentation(6, (2, 4, 6))
    sched = TrainSchedule(phases=[("mse", 60, 1e-2)], batch_size=4)
    log = alternating_train(m, frames(), [0, 1, 2, 0], seg, sched)
    assert log[-1]["mse"] < 0.5 * log[0]["mse"]


def test_equal_weights_gradient_is_scaled_mse_gradient():
    seg = IntervalSegmentation(6, (2, 4, 6), (1.0, 1.0, 1.0, 1.0))
    x = frames()
    labels = [0, 1, 2, 0]
    m = tiny(seed=1)
    grads = []
    for kind in ("weighted", "mse"):
        m.store.zero_grad()
        teacher_forced_loss(m, x, labels, make_loss(kind, seg, 6))[0].backward()
        grads.append(m.store.grads())
    # unit weights sum (T-1) per-step MSEs
    for name in grads[0]:
        np.testing.assert_allclose(grads[0][name], 5 * grads[1][name], rtol=1e-9, atol=1e-14)


def test_training_deterministic_and_save_load(tmp_path):
    seg = IntervalSegmentation(6, (2, 4, 6))
    logs = []
    models = []
    for _ in range(2):
        m = tiny(dtype="float32")
        logs.append(alternating_train(m, frames(), [0, 1, 2, 0], seg, _schedule()))
        models.append(m)
    assert logs[0] == logs[1]
    models[0].save(tmp_path / "m")
    back = SeqModel.load(tmp_path / "m")
    x = frames(n=1)
    np.testing.assert_array_equal(seq_forward(back, x, x, [2]), seq_forward(models[0], x, x, [2]))


def test_epoch_scale():
    s = TrainSchedule(epoch_scale=0.1)
    assert [p[1] for p in s.scaled_phases()] == [20, 10, 10]
    assert [p[1] for p in TrainSchedule(epoch_scale=0.001).scaled_phases()] == [1, 1, 1]


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 6), st.integers(0, 50))
def test_outputs_for_any_window(window, seed):
    m = tiny(window=window, seed=seed)
    x = frames(n=1, seed=seed)
    out = seq_forward(m, x, x, [seed % 3])
    assert np.all(np.isfinite(out))
