"""Acceptance gate: one test per criterion, each prints a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. These use the bundled
scenarios and the full training recipes, so the module takes a few
minutes in total.
"""

import math
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest

from copresence import network
from copresence.channel import get_preset
from copresence.evaluate import (
    cross_validate,
    eer,
    roc_auc,
    stratified_folds,
)
from copresence.explain import RrrConfig, rrr_iterate
from copresence.features import (
    FeatureMatrix,
    apply_scaling,
    build_feature_matrix,
    fit_variance_scaling,
)
from copresence.network import AnnotationPenalty, TrainConfig
from copresence.realtime import DecisionWindow, push
from copresence.simulate import (
    PathTap,
    generate_dataset,
    resolve_scenario,
    sample_cir,
    cir_to_csi,
    csi_to_cir,
)
from copresence.transfer import transfer_train


@contextmanager
def criterion(number, name):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number:2d} {name}: FAIL")
        raise
    print(f"ACCEPTANCE {number:2d} {name}: PASS")


# -- shared fixtures -----------------------------------------------------------

@pytest.fixture(scope="module")
def separable_features():
    spec = resolve_scenario("separable")
    ms = generate_dataset(spec, frames_per_pair=30)
    return build_feature_matrix(ms)


def test_01_dft_bijectivity():
    with criterion(1, "DFT bijectivity"):
        start = time.monotonic()
        rng = np.random.default_rng(0)
        for k in (4, 8, 64, 256):
            for _ in range(100):
                x = rng.standard_normal(k) + 1j * rng.standard_normal(k)
                cir = csi_to_cir(x, bandwidth_hz=20e6)
                cir.taps = x
                back = csi_to_cir(cir_to_csi(cir), bandwidth_hz=20e6)
                assert np.abs(back.taps - x).max() < 1e-9
        assert time.monotonic() - start < 1.0


def test_02_sampling_leakage():
    with criterion(2, "sampling kernel leakage"):
        config = get_preset("2g4")
        dt = 1.0 / config.bandwidth_hz
        on_grid = sample_cir([PathTap(1.0, 0.0, 2 * dt)], config)
        others = np.delete(np.abs(on_grid.taps), 2)
        assert abs(on_grid.taps[2] - 1.0) < 1e-12
        assert others.max() < 1e-12
        off_grid = sample_cir([PathTap(1.0, 0.0, 1.5 * dt)], config)
        assert abs(off_grid.taps[1]) == abs(off_grid.taps[2])


def test_03_gradient_oracle():
    with criterion(3, "gradient finite-difference oracle"):
        start = time.monotonic()
        eps = 1e-5
        lam = 1000.0

        def fd_params(model, objective):
            out = []
            for layer in model.layers:
                pair = []
                for arr in (layer.weights, layer.bias):
                    fd = np.zeros_like(arr)
                    it = np.nditer(arr, flags=["multi_index"])
                    for _ in it:
                        idx = it.multi_index
                        orig = arr[idx]
                        arr[idx] = orig + eps
                        hi = objective()
                        arr[idx] = orig - eps
                        lo = objective()
                        arr[idx] = orig
                        fd[idx] = (hi - lo) / (2 * eps)
                    pair.append(fd)
                out.append(tuple(pair))
            return out

        def block_err(analytic, fd):
            worst = 0.0
            for (ga, gb), (fa, fb) in zip(analytic, fd):
                for g, f in ((ga, fa), (gb, fb)):
                    denom = max(np.linalg.norm(g), np.linalg.norm(f), 1e-10)
                    worst = max(worst, np.linalg.norm(g - f) / denom)
            return worst

        for seed in range(20):
            gen = np.random.default_rng(seed)
            model = network.build_model(6, hidden_dims=(4, 3), dropout=0.0, seed=seed)
            x = gen.standard_normal((4, 6))
            y = gen.integers(0, 2, 4)
            mask = (gen.random((4, 6)) < 0.5).astype(float)

            probs, cache = network.forward(model, x)
            grads, input_grads = network.backward(model, cache, y)
            _, pgrads = network.penalty_value_and_grads(model, cache, mask)
            total = [(gw + lam * pw, gb + lam * pb)
                     for (gw, gb), (pw, pb) in zip(grads, pgrads)]

            def plain():
                p, _ = network.forward(model, x)
                return network.loss(p, y)

            def penalized():
                p, c = network.forward(model, x)
                v, _ = network.penalty_value_and_grads(model, c, mask)
                return network.loss(p, y) + lam * v

            assert block_err(grads, fd_params(model, plain)) < 1e-4
            assert block_err(total, fd_params(model, penalized)) < 1e-4

            fd_inputs = np.zeros_like(x)
            for n in range(x.shape[0]):
                for d in range(x.shape[1]):
                    for sign in (1, -1):
                        xp = x.copy()
                        xp[n, d] += sign * eps
                        p, _ = network.forward(model, xp)
                        fd_inputs[n, d] += sign * np.sum(np.log(p)) / (2 * eps)
            denom = max(np.linalg.norm(input_grads), np.linalg.norm(fd_inputs))
            assert np.linalg.norm(input_grads - fd_inputs) / denom < 1e-4

        assert time.monotonic() - start < 30.0


def test_04_metric_oracles():
    with criterion(4, "metric oracles"):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(4, 201))
            scores = rng.choice(np.round(rng.standard_normal(25), 2), size=n)
            labels = rng.integers(0, 2, n)
            if labels.sum() in (0, n):
                labels[0] = 1 - labels[0]
            pos = scores[labels == 1]
            neg = scores[labels == 0]
            wins = sum(
                1.0 if p > m else (0.5 if p == m else 0.0)
                for p in pos for m in neg
            )
            brute = wins / (len(pos) * len(neg))
            assert roc_auc(scores, labels) == pytest.approx(brute, abs=1e-12)

        value, threshold = eer([0.1, 0.2, 0.3, 0.6, 0.4, 0.7, 0.8, 0.9],
                               [0, 0, 0, 0, 1, 1, 1, 1])
        assert value == 0.25 and threshold == 0.6
        assert eer([0.8, 0.9, 0.1, 0.2], [1, 1, 0, 0])[0] == 0.0
        assert eer([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0])[0] == 1.0


def test_05_pipeline_separability(separable_features):
    with criterion(5, "pipeline separability + shuffled control"):
        start = time.monotonic()
        fm = separable_features
        cfg = TrainConfig(epochs=35, rng_seed=0)
        report = cross_validate(fm, cfg, k=5, fold_seed=123)
        assert report.auc >= 0.95
        assert report.eer <= 0.05

        shuffled = FeatureMatrix(
            data=fm.data,
            labels=np.random.default_rng(99).permutation(fm.labels),
            preset=fm.preset,
        )
        control = cross_validate(shuffled, cfg, k=5, fold_seed=123)
        assert 0.40 <= control.auc <= 0.60
        assert time.monotonic() - start < 300.0


def test_06_rrr_loop():
    with criterion(6, "penalized-hypothesis loop"):
        spec = resolve_scenario("separable")
        ms = generate_dataset(spec, frames_per_pair=40)
        fm = build_feature_matrix(ms)
        plan = stratified_folds(fm.labels, k=5, seed=123)
        tr, te = plan.train_indices(0), plan.test_indices(0)
        stats = fit_variance_scaling(fm.rows(tr))
        x_train = apply_scaling(fm.rows(tr), stats).data
        x_test = apply_scaling(fm.rows(te), stats).data
        hyps = rrr_iterate(
            x_train, fm.labels[tr], x_test, fm.labels[te],
            RrrConfig(), TrainConfig(epochs=40, rng_seed=0),
        )
        assert len(hyps) >= 3
        assert all(h.auc >= 0.85 for h in hyps[:3])
        for a, b in zip(hyps, hyps[1:]):
            assert set(a.penalized) < set(b.penalized)

        # penalizing the only informative feature collapses the AUC
        gen = np.random.default_rng(0)
        x = gen.standard_normal((160, 6))
        y = (x[:, 0] > 0).astype(int)
        x[:, 0] += np.where(y == 1, 1.5, -1.5)
        x = (x - x.mean(0)) / x.std(0)
        xt = gen.standard_normal((160, 6))
        yt = (xt[:, 0] > 0).astype(int)
        xt[:, 0] += np.where(yt == 1, 1.5, -1.5)
        xt = (xt - xt.mean(0)) / xt.std(0)

        def small(dim, seed):
            return network.build_model(dim, hidden_dims=(16, 8), dropout=0.0, seed=seed)

        collapse = rrr_iterate(x, y, xt, yt, RrrConfig(),
                               TrainConfig(epochs=25, rng_seed=0), model_factory=small)
        assert 0 in collapse[1].penalized
        assert collapse[-1].auc < 0.6


def test_07_transfer():
    with criterion(7, "transfer within one point + FLOP factors"):
        office = generate_dataset(resolve_scenario("office_like"), frames_per_pair=30)
        fm_o = build_feature_matrix(office)
        stats_o = fit_variance_scaling(fm_o)
        base = network.build_model(fm_o.dim, seed=0)
        network.train(base, apply_scaling(fm_o, stats_o).data, fm_o.labels,
                      TrainConfig(epochs=35, rng_seed=0))

        car = generate_dataset(resolve_scenario("car_like"), frames_per_pair=40)
        fm_c = build_feature_matrix(car)
        plan = stratified_folds(fm_c.labels, k=5, seed=123)
        tr, te = plan.train_indices(0), plan.test_indices(0)
        stats_c = fit_variance_scaling(fm_c.rows(tr))
        x_train = apply_scaling(fm_c.rows(tr), stats_c).data
        x_test = apply_scaling(fm_c.rows(te), stats_c).data
        y_train, y_test = fm_c.labels[tr], fm_c.labels[te]

        scratch = network.build_model(fm_c.dim, seed=1)
        network.train(scratch, x_train, y_train, TrainConfig(epochs=35, rng_seed=1))
        auc_scratch = roc_auc(network.predict_proba(scratch, x_test)[:, 1], y_test)

        transferred, report = transfer_train(base, x_train, y_train,
                                             TrainConfig(rng_seed=1), epochs=10)
        auc_transfer = roc_auc(network.predict_proba(transferred, x_test)[:, 1], y_test)

        assert abs(auc_transfer - auc_scratch) <= 0.01
        assert abs(report.flop_reduction - 7.0) <= 0.15 * 7.0

        wide = network.build_model(484, seed=0)
        network.freeze_prefix(wide, 2)
        ratio = network.flops_forward(wide) / network.flops_forward(wide, only_trainable=True)
        assert abs(ratio - 13.0) <= 0.15 * 13.0


def test_08_feature_counts():
    with criterion(8, "feature-count conformance"):
        rng = np.random.default_rng(0)
        from copresence.measurement import CsiMeasurement

        for preset, expected in (("2g4", 112), ("5g", 484)):
            config = get_preset(preset)
            ms = [
                CsiMeasurement(0.0, "p", "v", config,
                               rng.standard_normal(config.subcarrier_count)
                               + 1j * rng.standard_normal(config.subcarrier_count))
                for _ in range(3)
            ]
            assert build_feature_matrix(ms).dim == expected


def test_09_agc_power_invariance():
    with criterion(9, "AGC hides transmit power"):
        spec = resolve_scenario("separable")
        small = replace(spec, devices=[d for d in spec.devices
                                       if d.id in ("v1", "p1", "n1")])
        low = generate_dataset(replace(small, tx_power_scale=1.0),
                               frames_per_pair=500, noise_seed=1000)
        high = generate_dataset(replace(small, tx_power_scale=10.0),
                                frames_per_pair=500, noise_seed=1001)
        assert len(low) == len(high) == 1000
        mean_low = np.abs(np.array([m.csi for m in low])).mean(axis=0)
        mean_high = np.abs(np.array([m.csi for m in high])).mean(axis=0)
        assert (np.abs(mean_low - mean_high) / mean_low).max() <= 0.02


def test_10_realtime_window():
    with criterion(10, "realtime windowed vote"):
        spec = resolve_scenario("separable")
        ms = generate_dataset(spec, frames_per_pair=40)
        fm = build_feature_matrix(ms)
        stats = fit_variance_scaling(fm)
        x = apply_scaling(fm, stats).data
        model = network.build_model(fm.dim, hidden_dims=(32, 16), dropout=0.0, seed=0)
        network.train(model, x, fm.labels, TrainConfig(epochs=8, rng_seed=0))

        stream = [m for m in ms if m.tx_id == "p1"]

        # quorum: no decision before min_measurements
        window = DecisionWindow(window_length=5.0, min_measurements=3)
        assert push(window, stream[0].timestamp, stream[0], model, stats) is None
        assert push(window, stream[1].timestamp, stream[1], model, stats) is None
        assert push(window, stream[2].timestamp, stream[2], model, stats) is not None

        # 3 fps into a 5 s window buffers 15 +- 1 measurements
        window = DecisionWindow(window_length=5.0)
        last = None
        for m in stream:
            last = push(window, m.timestamp, m, model, stats)
        assert abs(last.votes_total - 15) <= 1

        # eviction: nothing older than newest - window
        newest = window.buffer[-1][0]
        assert all(t >= newest - window.window_length for t, _ in window.buffer)

        # permutation invariance of the vote
        votes = [p for _, p in window.buffer]
        decision = sum(votes) * 2 > len(votes)
        gen = np.random.default_rng(3)
        for _ in range(10):
            shuffled = list(np.array(votes)[gen.permutation(len(votes))])
            assert (sum(shuffled) * 2 > len(shuffled)) == decision

        # fail-secure tie
        assert (1 + 1) * 2 == 4 and not (2 * 2 > 4)   # 2 of 4 votes -> reject


def test_11_power_attack_retraining():
    with criterion(11, "power-attack retraining protocol"):
        spec = resolve_scenario("power_attack")
        normal = generate_dataset(spec, frames_per_pair=40)
        attack_all = generate_dataset(replace(spec, tx_power_scale=10.0),
                                      frames_per_pair=40, noise_seed=777)
        attack = [m for m in attack_all if not m.is_copresent]
        fm_n = build_feature_matrix(normal)
        fm_a = build_feature_matrix(attack)

        plan = stratified_folds(fm_n.labels, k=5, seed=123)
        tr, te = plan.train_indices(0), plan.test_indices(0)
        gen = np.random.default_rng(5)
        perm = gen.permutation(fm_a.n)
        n_inject = max(1, fm_a.n // 10)
        inject, held_out = perm[:n_inject], perm[n_inject:]

        def run(with_adversarial):
            x_train = fm_n.data[tr]
            y_train = fm_n.labels[tr]
            if with_adversarial:
                x_train = np.vstack([x_train, fm_a.data[inject]])
                y_train = np.concatenate([y_train, fm_a.labels[inject]])
            fm_train = FeatureMatrix(data=x_train, labels=y_train, preset="2g4")
            stats = fit_variance_scaling(fm_train)
            model = network.build_model(fm_n.dim, seed=0)
            network.train(model, apply_scaling(fm_train, stats).data, y_train,
                          TrainConfig(epochs=25, rng_seed=0))
            x_test = np.vstack([fm_n.data[te], fm_a.data[held_out]])
            y_test = np.concatenate([fm_n.labels[te], fm_a.labels[held_out]])
            x_test = (x_test - stats.mu) / stats.sigma
            return roc_auc(network.predict_proba(model, x_test)[:, 1], y_test)

        auc_without = run(with_adversarial=False)
        auc_with = run(with_adversarial=True)
        assert auc_with - auc_without >= 0.05
