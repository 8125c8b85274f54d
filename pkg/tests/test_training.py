import numpy as np
import pytest

from encdec_ad.errors import DivergenceError
from encdec_ad.lstm import EncDecModel, window_losses
from encdec_ad.training import AdamState, TrainConfig, adam_update, clip_by_global_norm, load_checkpoint, train


def _sine_windows(n, L, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(L)
    phase = rng.uniform(0, 2 * np.pi, n)
    return np.sin(2 * np.pi * t / 12 + phase[:, None])[..., None] + 0.02 * rng.normal(size=(n, L, 1))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(patience=0)


def test_adam_zero_gradient_is_a_no_op():
    p = {"a": np.array([1.0, -2.0])}
    new, st = adam_update(p, {"a": np.zeros(2)}, AdamState.fresh(p), TrainConfig())
    np.testing.assert_array_equal(new["a"], p["a"])
    assert st.t == 1


def test_adam_first_step_closed_form():
    p = {"a": np.array([0.0])}
    new, _ = adam_update(p, {"a": np.array([0.5])}, AdamState.fresh(p), TrainConfig(learning_rate=1e-3, eps=1e-8))
    # bias-corrected first step: m_hat = g, v_hat = g^2
    assert new["a"][0] == pytest.approx(-1e-3 * 0.5 / (0.5 + 1e-8), rel=1e-12)


def test_adam_constant_gradient_step_tends_to_lr():
    cfg = TrainConfig(learning_rate=0.01)
    p = {"a": np.array([0.0])}
    st = AdamState.fresh(p)
    for _ in range(2000):
        prev = p["a"].copy()
        p, st = adam_update(p, {"a": np.array([-3.0])}, st, cfg)
    assert p["a"][0] - prev[0] == pytest.approx(0.01, rel=1e-6)


def test_adam_does_not_mutate_inputs():
    p = {"a": np.array([1.0])}
    st = AdamState.fresh(p)
    adam_update(p, {"a": np.array([2.0])}, st, TrainConfig())
    assert p["a"][0] == 1.0 and st.t == 0 and st.m["a"][0] == 0.0


def test_adam_divergence():
    p = {"w": np.array([1.0])}
    with pytest.raises(DivergenceError) as e:
        adam_update(p, {"w": np.array([np.inf])}, AdamState.fresh(p), TrainConfig())
    assert e.value.block == "w"


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    c = clip_by_global_norm(g, 1.0)
    assert np.sqrt(c["a"][0] ** 2 + c["b"][0] ** 2) == pytest.approx(1.0)
    assert clip_by_global_norm(g, 10.0) is g


def test_overfits_constant_series():
    x = np.full((1, 20, 1), 0.6)
    model, report = train(x, x, (1, 4, 20), TrainConfig(max_epochs=2000, patience=2000))
    assert report.steps <= 2000
    assert window_losses(model, x)[0] < 1e-3


def test_patience_stops_after_loss_increase():
    X = np.sin(np.arange(160).reshape(8, 20, 1) / 3.0)
    model, report = train(X[:4], X[4:], (1, 4, 20), TrainConfig(learning_rate=1.0, max_epochs=10, patience=1, seed=0))
    assert report.val_loss[1] > report.val_loss[0]
    assert (report.epochs_run, report.best_epoch, report.stop_reason) == (2, 1, "patience")


def test_returns_best_snapshot():
    X = _sine_windows(12, 15)
    model, report = train(X[:8], X[8:], (1, 6, 15), TrainConfig(learning_rate=0.05, max_epochs=40, patience=5, batch_size=4))
    vloss = float(window_losses(model, X[8:]).mean())
    assert vloss == report.best_val_loss
    assert vloss <= report.val_loss[-1]
    assert report.best_val_loss == min(report.val_loss)
    if report.stop_reason == "patience":
        assert report.epochs_run == report.best_epoch + 5


def test_single_window_loss_drops_tenfold():
    x = _sine_windows(1, 20)
    _, report = train(x, x, (1, 8, 20), TrainConfig(max_epochs=300, patience=300))
    assert report.train_loss[-1] < report.train_loss[0] / 10


def test_deterministic_under_seed():
    X = _sine_windows(10, 12)
    cfg = TrainConfig(max_epochs=15, batch_size=3, seed=4)
    m1, r1 = train(X[:7], X[7:], (1, 5, 12), cfg)
    m2, r2 = train(X[:7], X[7:], (1, 5, 12), cfg)
    assert r1 == r2
    for k, v in m1.parameters().items():
        assert np.array_equal(v, m2.parameters()[k])


def test_incomplete_final_batch_is_used():
    X = _sine_windows(10, 8)
    _, report = train(X[:7], X[7:], (1, 3, 8), TrainConfig(max_epochs=3, batch_size=3, patience=10))
    assert report.steps == 3 * 3


def test_resume_is_bit_exact(tmp_path):
    X = _sine_windows(10, 12)
    arch = (1, 5, 12)
    full_model, full_rep = train(X[:7], X[7:], arch, TrainConfig(max_epochs=12, batch_size=3, patience=50))
    ck = tmp_path / "ck.json"
    train(X[:7], X[7:], arch, TrainConfig(max_epochs=5, batch_size=3, patience=50), checkpoint_path=ck)
    assert load_checkpoint(ck)["report"]["epochs_run"] == 5
    res_model, res_rep = train(X[:7], X[7:], arch, TrainConfig(max_epochs=12, batch_size=3, patience=50), resume=ck)
    assert res_rep == full_rep
    for k, v in full_model.parameters().items():
        assert np.array_equal(v, res_model.parameters()[k])


def test_rejects_mismatched_shapes():
    X = _sine_windows(4, 10)
    with pytest.raises(ValueError):
        train(X, X, (1, 3, 11))
    with pytest.raises(ValueError):
        train(X[:0], X, (1, 3, 10))


def test_returned_model_records_training_metadata():
    X = _sine_windows(4, 6)
    model, report = train(X[:2], X[2:], (1, 2, 6), TrainConfig(max_epochs=3))
    assert model.metadata["best_epoch"] == report.best_epoch
    back = EncDecModel.from_dict(model.to_dict())
    assert back.metadata["train_config"]["max_epochs"] == 3
