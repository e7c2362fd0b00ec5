import math

import numpy as np
import pytest

from cardioserve import autodiff as ad
from cardioserve import metrics
from cardioserve.autodiff import Parameter, Tensor
from cardioserve.cardionet import LeadConfiguration, ModelConfig, build, forward_graph
from cardioserve.synth import SpecError, af_spec, generate_recording, sinus_spec, waveform_mv
from cardioserve.training import (
    TOY_VOCABULARY,
    CheckpointLedger,
    OptimizerError,
    PlateauScheduler,
    SgdMomentum,
    TrainConfig,
    TrainingError,
    bce_multilabel_loss,
    fit,
    prepare_dataset,
    synthetic_dataset,
)


def tiny_config():
    return ModelConfig(
        lead_configuration=LeadConfiguration.SINGLE_LEAD,
        conv_layers=2, base_filters=2, kernel_size=3, downsample_every=2,
        filter_double_every=2, rnn_hidden=3, head_hidden=None,
        segment_seconds=2.0, labels=TOY_VOCABULARY,
    )


def scalar_bce(p, y, eps=1e-7):
    p = min(max(p, eps), 1 - eps)
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


class TestBceLoss:
    def test_perfect_prediction_near_zero(self):
        probs = ad.sigmoid(Tensor([100.0, -100.0]))  # saturates to ~1, ~0
        loss = bce_multilabel_loss(probs, np.array([1.0, 0.0]))
        assert 0.0 <= loss.item() <= 1e-6

    def test_half_everywhere_is_ln2(self):
        probs = ad.sigmoid(Tensor(np.zeros(7)))
        loss = bce_multilabel_loss(probs, np.zeros(7))
        assert loss.item() == pytest.approx(math.log(2.0), rel=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            n = int(rng.integers(1, 9))
            logits = rng.normal(scale=3, size=n)
            targets = rng.integers(0, 2, size=n).astype(float)
            probs = ad.sigmoid(Tensor(logits))
            got = bce_multilabel_loss(probs, targets).item()
            expected = np.mean([scalar_bce(p, y) for p, y in zip(probs.data, targets)])
            assert got == pytest.approx(expected, rel=1e-12)

    def test_loss_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            probs = ad.sigmoid(Tensor(rng.normal(size=4)))
            loss = bce_multilabel_loss(probs, rng.integers(0, 2, size=4).astype(float))
            assert loss.item() >= 0.0

    def test_length_mismatch(self):
        with pytest.raises(TrainingError):
            bce_multilabel_loss(ad.sigmoid(Tensor([0.0])), np.array([1.0, 0.0]))

    def test_gradient_against_finite_difference(self):
        rng = np.random.default_rng(2)
        logits = Parameter(rng.normal(size=5))
        targets = rng.integers(0, 2, size=5).astype(float)

        def loss_fn():
            return bce_multilabel_loss(ad.sigmoid(logits * 1.0), targets)

        ad.backward(loss_fn())
        analytic = logits.grad.copy()
        eps = 1e-6
        for i in range(5):
            orig = logits.data[i]
            logits.data[i] = orig + eps
            up = loss_fn().item()
            logits.data[i] = orig - eps
            down = loss_fn().item()
            logits.data[i] = orig
            fd = (up - down) / (2 * eps)
            assert analytic[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestSgdMomentum:
    def test_zero_lr_leaves_parameters(self):
        p = Parameter(np.array([1.0, 2.0]))
        ad.backward(ad.sum_all(p * 3.0))
        opt = SgdMomentum([p])
        opt.step(0.0)
        np.testing.assert_array_equal(p.data, [1.0, 2.0])

    def test_plain_sgd_with_zero_momentum(self):
        p = Parameter(np.array([1.0]))
        ad.backward(ad.sum_all(p * 4.0))  # grad = 4
        SgdMomentum([p], momentum=0.0).step(0.5)
        assert p.data[0] == pytest.approx(1.0 - 0.5 * 4.0)

    def test_quadratic_matches_hand_recurrence(self):
        # minimize 0.5*x^2 from x=1 with lr=0.1, momentum=0.9
        p = Parameter(np.array([1.0]))
        opt = SgdMomentum([p], momentum=0.9)
        x, v = 1.0, 0.0
        for _ in range(2):
            loss = ad.mean_all(p * p) * 0.5
            ad.backward(loss)
            opt.step(0.1)
            v = 0.9 * v - 0.1 * x
            x = x + v
        assert p.data[0] == pytest.approx(x, rel=1e-12)

    def test_step_before_backward_raises(self):
        p = Parameter(np.array([1.0]))
        with pytest.raises(OptimizerError):
            SgdMomentum([p]).step(0.1)

    def test_gradients_zeroed_after_step(self):
        p = Parameter(np.array([1.0]))
        ad.backward(ad.sum_all(p * 2.0))
        opt = SgdMomentum([p])
        opt.step(0.1)
        np.testing.assert_array_equal(p.grad, [0.0])
        assert not p.grad_fresh

    def test_descends_positive_definite_quadratic(self):
        rng = np.random.default_rng(3)
        p = Parameter(rng.normal(size=4))
        opt = SgdMomentum([p], momentum=0.0)

        def loss_node():
            return ad.mean_all(p * p)

        before = loss_node().item()
        ad.backward(loss_node())
        opt.step(0.05)
        assert loss_node().item() < before


class TestPlateauScheduler:
    def test_improving_sequence_keeps_lr(self):
        s = PlateauScheduler(1e-3, patience_batches=50)
        for metric in (0.6, 0.7, 0.8):
            assert s.update(metric, 25) == 1e-3

    def test_flat_metric_cuts_at_second_stagnant_validation(self):
        s = PlateauScheduler(1e-3, patience_batches=50)
        assert s.update(0.5, 25) == 1e-3          # establishes the best
        assert s.update(0.5, 25) == 1e-3          # first stagnant validation
        assert s.update(0.5, 25) == pytest.approx(1e-4)  # second stagnant: cut

    def test_floor(self):
        s = PlateauScheduler(1e-6, patience_batches=1)
        s.update(0.5, 1)
        for _ in range(5):
            assert s.update(0.5, 1) == 1e-6

    def test_never_raises_lr_and_powers_of_factor(self):
        rng = np.random.default_rng(4)
        s = PlateauScheduler(1e-3, patience_batches=50)
        seen = set()
        last = s.lr
        for _ in range(200):
            lr = s.update(float(rng.uniform(0.4, 0.6)), 25)
            assert lr <= last
            last = lr
            seen.add(lr)
        for lr in seen:
            k = round(math.log10(1e-3 / lr))
            assert lr == pytest.approx(max(1e-3 * 0.1 ** k, 1e-6), rel=1e-12)

    def test_tiny_improvement_counts_as_stagnant(self):
        s = PlateauScheduler(1e-3, patience_batches=2, min_delta=1e-6)
        s.update(0.5, 1)
        s.update(0.5 + 1e-9, 1)
        assert s.update(0.5, 1) == pytest.approx(1e-4)


class TestGenerator:
    def test_beat_count_75bpm_30s(self):
        mv, beats = waveform_mv(sinus_spec(mean_rr_ms=800.0, rr_jitter=0.0),
                                duration_s=30.0, rate_hz=500.0, seed=0)
        assert len(beats) in (37, 38)
        assert np.std(np.diff(beats)) == pytest.approx(0.0, abs=1e-12)

    def test_af_has_no_p_wave_energy(self):
        # Suppress T and noise so the 50-120 ms pre-QRS window isolates the P bump.
        rate = 500.0
        af = af_spec(mean_rr_ms=1000.0, rr_jitter=0.2, t_amplitude_mv=0.0, noise_std_mv=0.0)
        ns = sinus_spec(mean_rr_ms=1000.0, rr_jitter=0.0, t_amplitude_mv=0.0, noise_std_mv=0.0)

        def window_peak(spec):
            mv, beats = waveform_mv(spec, duration_s=20.0, rate_hz=rate, seed=3)
            peaks = []
            for t in beats:
                lo, hi = int((t - 0.120) * rate), int((t - 0.050) * rate)
                if lo > 0:
                    peaks.append(np.max(np.abs(mv[lo:hi])))
            return np.median(peaks)

        assert window_peak(af) < 1e-3
        assert window_peak(ns) > 0.05

    def test_same_seed_identical(self):
        a, _, _ = generate_recording(af_spec(), duration_s=10.0, rate_hz=500.0, seed=9)
        b, _, _ = generate_recording(af_spec(), duration_s=10.0, rate_hz=500.0, seed=9)
        np.testing.assert_array_equal(a.leads[list(a.leads)[0]], b.leads[list(b.leads)[0]])

    def test_label_vectors(self):
        _, labels_s, _ = generate_recording(sinus_spec(), duration_s=4.0, rate_hz=500.0,
                                            seed=1, vocabulary=TOY_VOCABULARY)
        _, labels_a, _ = generate_recording(af_spec(), duration_s=4.0, rate_hz=500.0,
                                            seed=1, vocabulary=TOY_VOCABULARY)
        np.testing.assert_array_equal(labels_s, [1.0, 0.0])
        np.testing.assert_array_equal(labels_a, [0.0, 1.0])

    def test_r_indices_match_waveform_peaks(self):
        rec, _, r_idx = generate_recording(
            sinus_spec(rr_jitter=0.0, noise_std_mv=0.0), duration_s=10.0,
            rate_hz=500.0, seed=2)
        lead = rec.leads[list(rec.leads)[0]]
        for idx in r_idx:
            window = lead[max(0, idx - 5):idx + 6]
            assert np.max(window) == pytest.approx(np.max(lead), rel=0.05)

    def test_spec_invariants(self):
        with pytest.raises(SpecError):
            af_spec(rr_jitter=0.1)
        with pytest.raises(SpecError):
            af_spec(p_amplitude_mv=0.3)
        with pytest.raises(SpecError):
            sinus_spec(p_amplitude_mv=0.0)

    def test_rhythms_separable_by_rr_std_alone(self):
        # Well-posedness of the toy task: a threshold on true RR deviation
        # separates the two classes at AUC >= 0.99 over 200 recordings.
        rng = np.random.default_rng(5)
        scores, labels = [], []
        for i in range(200):
            if i % 2 == 0:
                spec = sinus_spec(mean_rr_ms=float(rng.uniform(630, 1000)),
                                  rr_jitter=float(rng.uniform(0.0, 0.05)))
            else:
                spec = af_spec(mean_rr_ms=float(rng.uniform(350, 550)),
                               rr_jitter=float(rng.uniform(0.22, 0.35)))
            _, beats = waveform_mv(spec, duration_s=16.0, rate_hz=500.0,
                                   seed=int(rng.integers(0, 2 ** 31)))
            scores.append(float(np.std(np.diff(beats))))
            labels.append(0 if spec.rhythm == "sinus" else 1)
        assert metrics.roc_auc(scores, labels) >= 0.99


class TestFit:
    @staticmethod
    def datasets(config, n_train=12, n_val=8):
        train = synthetic_dataset(config, n_train, seed=0, duration_s=4.0)
        val = synthetic_dataset(config, n_val, seed=1, duration_s=4.0)
        return train, val

    def test_zero_batches_initial_snapshot_only(self):
        cfg = tiny_config()
        net = build(cfg, seed=1)
        train, val = self.datasets(cfg)
        ledger = fit(net, train, val, TrainConfig(max_batches=0, batch_size=4))
        assert len(ledger.history) == 1
        assert ledger.history[0]["batch"] == 0
        assert ledger.macro is not None and ledger.macro.batch == 0
        assert set(ledger.per_label) == {"NSR", "AF"}

    def test_deterministic_same_seed(self):
        cfg = tiny_config()
        train, val = self.datasets(cfg)
        tc = TrainConfig(max_batches=10, batch_size=4, validation_every=5, seed=77)
        ledgers = []
        for _ in range(2):
            net = build(cfg, seed=5)
            ledgers.append(fit(net, train, val, tc))
        assert ledgers[0].history == ledgers[1].history
        assert ledgers[0].macro.bundle_bytes == ledgers[1].macro.bundle_bytes

    def test_ledger_aucs_non_decreasing(self):
        cfg = tiny_config()
        net = build(cfg, seed=2)
        train, val = self.datasets(cfg)
        tc = TrainConfig(max_batches=20, batch_size=4, validation_every=5,
                         learning_rate=0.01)
        ledger = fit(net, train, val, tc)
        for code in ("NSR", "AF"):
            best = -1.0
            for entry in ledger.history:
                if code in entry["per_label_auc"]:
                    running = max(best, entry["per_label_auc"][code])
                    assert running >= best
                    best = running
            assert ledger.per_label[code].auc == pytest.approx(best)

    def test_serving_net_is_macro_best_snapshot(self):
        cfg = tiny_config()
        net = build(cfg, seed=3)
        train, val = self.datasets(cfg)
        ledger = fit(net, train, val, TrainConfig(max_batches=5, batch_size=4,
                                                  validation_every=5))
        restored = ledger.serving_net()
        assert restored.config == cfg

    def test_run_dir_manifest(self, tmp_path):
        cfg = tiny_config()
        net = build(cfg, seed=4)
        train, val = self.datasets(cfg)
        fit(net, train, val, TrainConfig(max_batches=5, batch_size=4, validation_every=5),
            run_dir=tmp_path / "run")
        import json
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["macro"]["file"] == "best_macro.bundle"
        assert (tmp_path / "run" / "best_macro.bundle").exists()
        assert set(manifest["labels"]) == {"NSR", "AF"}

    def test_vocabulary_mismatch_rejected(self):
        cfg = tiny_config()
        net = build(cfg, seed=5)
        other_cfg = ModelConfig(
            lead_configuration=LeadConfiguration.SINGLE_LEAD,
            conv_layers=2, base_filters=2, kernel_size=3, downsample_every=2,
            filter_double_every=2, rnn_hidden=3, head_hidden=None,
            labels=(("ONLY", "one"),))
        train, _ = self.datasets(cfg)
        bad_val = synthetic_dataset(other_cfg, 4, seed=2, duration_s=4.0)
        with pytest.raises(TrainingError):
            fit(net, train, bad_val, TrainConfig(max_batches=1))

    def test_prepare_dataset_validates_target_shape(self):
        cfg = tiny_config()
        rec, _, _ = generate_recording(sinus_spec(), duration_s=4.0, rate_hz=500.0, seed=0)
        with pytest.raises(TrainingError):
            prepare_dataset(cfg, [(rec, np.array([1.0, 0.0, 0.0]))])
