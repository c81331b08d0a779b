import numpy as np
import pytest

from copresence import explain, network
from copresence.explain import (
    DegenerateBaselineError,
    EnsembleGate,
    ExplainError,
    Hypothesis,
    RrrConfig,
    column_mask,
    ensemble_vote,
    feature_importance,
    load_hypotheses,
    penalty,
    rrr_iterate,
    save_hypotheses,
)
from copresence.network import TrainConfig, build_model


def _one_feature_data(n=160, d=6, seed=0):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, d))
    y = (x[:, 0] > 0).astype(int)
    x[:, 0] += np.where(y == 1, 1.5, -1.5)     # margin so the class is clean
    x = (x - x.mean(0)) / x.std(0)
    return x, y


def small_factory(dim, seed):
    return network.build_model(dim, hidden_dims=(16, 8), dropout=0.0, seed=seed)


# -- penalty ---------------------------------------------------------------------

def test_penalty_zero_mask(rng):
    g = rng.standard_normal((5, 4))
    assert penalty(np.zeros_like(g), g) == 0.0


def test_penalty_full_mask_is_squared_frobenius(rng):
    g = rng.standard_normal((5, 4))
    assert penalty(np.ones_like(g), g) == pytest.approx(np.sum(g * g), rel=1e-12)


def test_penalty_shape_mismatch():
    with pytest.raises(ExplainError):
        penalty(np.zeros((2, 2)), np.zeros((3, 2)))


# -- feature importance ------------------------------------------------------------

def test_importance_counting_rule(monkeypatch):
    grads = np.array([[2.0, -1.0, 0.5]])
    monkeypatch.setattr(network, "input_gradients", lambda model, x: grads)
    imp = feature_importance(None, np.zeros((1, 3)), ratio_threshold=0.67)
    assert np.array_equal(imp, [1.0, 0.0, 0.0])


def test_importance_identical_gradients_binary(monkeypatch):
    grads = np.tile([[0.2, 1.0, -0.9]], (7, 1))
    monkeypatch.setattr(network, "input_gradients", lambda model, x: grads)
    imp = feature_importance(None, np.zeros((7, 3)), ratio_threshold=0.67)
    assert set(imp.tolist()) <= {0.0, 1.0}
    assert np.array_equal(imp, [0.0, 1.0, 1.0])


def test_importance_scale_invariant_per_instance(monkeypatch):
    r = np.random.default_rng(3)
    grads = r.standard_normal((10, 5))
    scales = r.uniform(0.5, 10.0, size=(10, 1))
    captured = {}

    def fake(model, x):
        return captured["g"]

    monkeypatch.setattr(network, "input_gradients", fake)
    captured["g"] = grads
    base = feature_importance(None, np.zeros((10, 5)))
    captured["g"] = grads * scales
    scaled = feature_importance(None, np.zeros((10, 5)))
    assert np.array_equal(base, scaled)


def test_importance_bounds_and_zero_instances(monkeypatch):
    grads = np.array([[1.0, 0.8], [0.0, 0.0]])
    monkeypatch.setattr(network, "input_gradients", lambda model, x: grads)
    imp = feature_importance(None, np.zeros((2, 2)))
    assert np.all((0.0 <= imp) & (imp <= 1.0))
    assert np.array_equal(imp, [0.5, 0.5])    # dead instance carries no counts
    monkeypatch.setattr(network, "input_gradients", lambda model, x: np.zeros((2, 2)))
    with pytest.raises(ExplainError):
        feature_importance(None, np.zeros((2, 2)))


def test_importance_on_real_model():
    x, y = _one_feature_data()
    model = small_factory(6, 0)
    network.train(model, x, y, TrainConfig(epochs=20, rng_seed=0))
    imp = feature_importance(model, x)
    assert imp.argmax() == 0
    assert np.all((imp >= 0) & (imp <= 1))


# -- rrr iteration -------------------------------------------------------------------

def test_single_informative_feature_collapses():
    x, y = _one_feature_data(seed=1)
    xt, yt = _one_feature_data(seed=2)
    hyps = rrr_iterate(x, y, xt, yt, RrrConfig(),
                       TrainConfig(epochs=25, rng_seed=0),
                       model_factory=small_factory)
    assert len(hyps) >= 2
    assert hyps[0].penalized == ()
    assert hyps[0].auc >= 0.95
    assert 0 in hyps[1].penalized
    assert hyps[-1].auc < 0.6


def test_penalty_sets_strictly_grow():
    x, y = _one_feature_data(seed=4)
    hyps = rrr_iterate(x, y, x, y, RrrConfig(),
                       TrainConfig(epochs=20, rng_seed=1),
                       model_factory=small_factory)
    for a, b in zip(hyps, hyps[1:]):
        assert set(a.penalized) < set(b.penalized)
    for h in hyps[:-1]:
        assert h.auc >= RrrConfig().auc_stop


def test_degenerate_baseline_reported(rng):
    x = rng.standard_normal((60, 6))
    y = rng.integers(0, 2, 60)    # unlearnable noise
    with pytest.raises(DegenerateBaselineError):
        rrr_iterate(x, y, x[:30], y[:30], RrrConfig(),
                    TrainConfig(epochs=2, rng_seed=0), model_factory=small_factory)


def test_column_mask_layout():
    mask = column_mask(3, 5, [1, 4])
    assert mask.shape == (3, 5)
    assert np.array_equal(mask.sum(axis=0), [0, 3, 0, 0, 3])


# -- ensemble -------------------------------------------------------------------------

def _stub_hypothesis(bias, auc):
    # single softmax layer with fixed bias: constant vote regardless of x
    layer = network.Layer(weights=np.zeros((2, 2)), bias=np.array([0.0, bias]),
                          activation="softmax")
    return Hypothesis(model=network.MlpModel(layers=[layer]), penalized=(), auc=auc)


def test_majority_vote():
    hyps = [_stub_hypothesis(1.0, 0.95), _stub_hypothesis(1.0, 0.92),
            _stub_hypothesis(-1.0, 0.91)]
    decisions, gate = ensemble_vote(hyps, np.zeros((4, 2)))
    assert np.all(decisions)          # votes {1,1,0} -> copresent
    assert gate.n_passing == 3 and gate.passed


def test_tie_fails_secure():
    hyps = [_stub_hypothesis(1.0, 0.95), _stub_hypothesis(-1.0, 0.95)]
    decisions, _ = ensemble_vote(hyps, np.zeros((3, 2)))
    assert not np.any(decisions)


def test_gate_thresholding():
    hyps = [_stub_hypothesis(1.0, a) for a in (0.95, 0.91, 0.80)]
    _, gate = ensemble_vote(hyps, np.zeros((1, 2)), auc_threshold=0.9, min_models=3)
    assert gate.n_passing == 2 and not gate.passed
    _, gate = ensemble_vote(hyps, np.zeros((1, 2)), auc_threshold=0.9, min_models=2)
    assert gate.passed


def test_gate_recomputes_on_probe_labels(rng):
    x, y = _one_feature_data(seed=5)
    model = small_factory(6, 0)
    network.train(model, x, y, TrainConfig(epochs=20, rng_seed=0))
    hyp = Hypothesis(model=model, penalized=(), auc=0.0)
    _, gate = ensemble_vote([hyp], x, probe_labels=y, auc_threshold=0.9, min_models=1)
    assert gate.aucs[0] > 0.9 and gate.passed


def test_empty_hypotheses_rejected():
    with pytest.raises(ExplainError):
        ensemble_vote([], np.zeros((1, 2)))


def test_save_load_hypotheses(tmp_path):
    x, y = _one_feature_data(seed=6)
    model = small_factory(6, 0)
    network.train(model, x, y, TrainConfig(epochs=5, rng_seed=0))
    hyps = [Hypothesis(model=model, penalized=(0, 3), auc=0.97)]
    save_hypotheses(hyps, tmp_path / "set", pipeline_meta={
        "preset": "2g4", "norm_mu": np.zeros(6), "norm_sigma": np.ones(6),
    })
    back, meta = load_hypotheses(tmp_path / "set")
    assert back[0].penalized == (0, 3)
    assert back[0].auc == 0.97
    assert np.array_equal(back[0].model.layers[0].weights, model.layers[0].weights)
    assert meta["preset"] == "2g4"
    with pytest.raises(ExplainError):
        load_hypotheses(tmp_path / "nowhere")
