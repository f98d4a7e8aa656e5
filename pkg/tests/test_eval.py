"""Probe protocols against frozen models, plus image dump formats."""

from types import SimpleNamespace

import numpy as np
import pytest

from bijepa.autodiff import Tensor
from bijepa.data import MnistConfig, ViewBatch
from bijepa.eval import (
    ProbeConfig, ProbeResult, denormalize_to_u8, forecast_table,
    generative_decoder, linear_probe_classify, protocol_a, protocol_b,
    write_pgm,
)
from bijepa.jepa import BiJepaModel, ConstraintMode, encode_for_inference
from bijepa.nn import (
    Linear, Network, ReLU, build_mlp_encoder, build_predictor, fingerprint,
    init_parameters,
)
from bijepa.optim import EmaConfig
from bijepa.seeding import derive_seed

IN_DIM, EMB, HIDDEN = 6, 8, 16


def make_model(seed=0, p_fwd=None, p_bwd="default"):
    enc = build_mlp_encoder(IN_DIM, HIDDEN, EMB, with_ln=True)
    init_parameters(enc, derive_seed(seed, "init:encoder"))
    if p_fwd is None:
        p_fwd = build_predictor(EMB, HIDDEN, with_ln=True)
        init_parameters(p_fwd, derive_seed(seed, "init:p-fwd"))
    if p_bwd == "default":
        p_bwd = build_predictor(EMB, HIDDEN, with_ln=True)
        init_parameters(p_bwd, derive_seed(seed, "init:p-bwd"))
    return BiJepaModel.create(
        enc, lambda: build_mlp_encoder(IN_DIM, HIDDEN, EMB, with_ln=True),
        p_fwd, p_bwd, 0.5, EmaConfig(0.99), ConstraintMode.EXPRESSIVE)


def regression_dataset(model, rng, out_dim=4, realizable=True):
    """Probe/test splits whose targets are an exact linear readout of the
    context embeddings (or random noise when realizable=False)."""
    xp = rng.standard_normal((256, IN_DIM))
    xt = rng.standard_normal((64, IN_DIM))
    if realizable:
        fp = encode_for_inference(model, Tensor(xp)).values
        ft = encode_for_inference(model, Tensor(xt)).values
        A = rng.standard_normal((EMB, out_dim)) * 0.5
        yp, yt = fp @ A, ft @ A
    else:
        yp = rng.standard_normal((256, out_dim))
        yt = rng.standard_normal((64, out_dim))
    return SimpleNamespace(probe=ViewBatch(xp, yp), test=ViewBatch(xt, yt))


class TestRegressionProtocols:
    def test_realizable_target_fits_to_zero(self):
        model = make_model()
        ds = regression_dataset(model, np.random.default_rng(0))
        r = protocol_a(model, ds, ProbeConfig(lr=1e-2, steps=4000))
        assert r.mse < 1e-6

    def test_collapsed_encoder_hits_variance_floor(self):
        # a constant embedding admits only constant predictions, so the
        # optimal probe is the target mean and MSE equals the variance
        model = make_model(seed=1)
        for p in model.online_encoder.parameters():
            p.values[...] = 0.0
        rng = np.random.default_rng(1)
        model.online_encoder.layers[-1].b.values[...] = rng.standard_normal(EMB)
        xp = rng.standard_normal((256, IN_DIM))
        yp = rng.standard_normal((256, 5)) * 2.0 + 1.0
        ds = SimpleNamespace(probe=ViewBatch(xp, yp), test=ViewBatch(xp, yp))
        r = protocol_a(model, ds, ProbeConfig())
        var = float(yp.var())
        assert abs(r.mse - var) < 0.01 * var

    def test_identity_predictor_makes_protocols_agree(self):
        # relu(x) - relu(-x) == x exactly, so protocol B sees the same
        # features as protocol A and the probes train identically
        w = np.concatenate([np.eye(EMB), -np.eye(EMB)], axis=1)
        p_fwd = Network([Linear(EMB, 2 * EMB), ReLU(), Linear(2 * EMB, EMB)])
        p_fwd.layers[0].w.values[...] = w
        p_fwd.layers[2].w.values[...] = w.T
        model = make_model(seed=2, p_fwd=p_fwd)
        ds = regression_dataset(model, np.random.default_rng(2))
        ra = protocol_a(model, ds, ProbeConfig())
        rb = protocol_b(model, ds, ProbeConfig())
        assert ra.mse == rb.mse
        assert np.array_equal(ra.predictions, rb.predictions)

    def test_probe_determinism(self):
        model = make_model(seed=3)
        ds = regression_dataset(model, np.random.default_rng(3))
        r1 = protocol_b(model, ds, ProbeConfig())
        r2 = protocol_b(model, ds, ProbeConfig())
        assert r1.mse == r2.mse
        assert np.array_equal(r1.predictions, r2.predictions)

    def test_model_frozen_through_probing(self):
        model = make_model(seed=4)
        ds = regression_dataset(model, np.random.default_rng(4))
        prints = [fingerprint(n) for n in (model.online_encoder,
                                           model.target_encoder,
                                           model.p_fwd, model.p_bwd)]
        protocol_a(model, ds, ProbeConfig(steps=50))
        protocol_b(model, ds, ProbeConfig(steps=50))
        after = [fingerprint(n) for n in (model.online_encoder,
                                          model.target_encoder,
                                          model.p_fwd, model.p_bwd)]
        assert prints == after

    def test_backward_predictor_never_evaluated(self):
        class Boom(Network):
            def forward(self, x):
                raise AssertionError("backward predictor must stay idle")
            __call__ = forward

        model = make_model(seed=5, p_bwd=Boom([]))
        ds = regression_dataset(model, np.random.default_rng(5))
        protocol_a(model, ds, ProbeConfig(steps=20))
        protocol_b(model, ds, ProbeConfig(steps=20))

    def test_unknown_probe_kind_rejected(self):
        model = make_model(seed=6)
        ds = regression_dataset(model, np.random.default_rng(6))
        with pytest.raises(ValueError):
            protocol_a(model, ds, ProbeConfig(kind="forest"))


def classification_fixture(rng, n_train=2000, n_test=4000):
    xtr = rng.standard_normal((n_train, IN_DIM))
    xte = rng.standard_normal((n_test, IN_DIM))
    return SimpleNamespace(
        train=ViewBatch(xtr, xtr, labels=rng.integers(0, 10, n_train)),
        test=ViewBatch(xte, xte, labels=rng.integers(0, 10, n_test)))


class TestClassifierProbe:
    def test_random_features_random_labels_chance_level(self):
        model = make_model(seed=2)
        mn = classification_fixture(np.random.default_rng(0))
        r = linear_probe_classify(model, mn, ProbeConfig(lr=1e-2))
        assert 0.08 <= r.accuracy <= 0.12

    def test_separable_features_learned(self):
        # labels derived from the embedding itself must be predictable
        model = make_model(seed=7)
        rng = np.random.default_rng(7)
        x = rng.standard_normal((3000, IN_DIM))
        feats = encode_for_inference(model, Tensor(x)).values
        labels = (feats @ rng.standard_normal(EMB) > 0).astype(np.int64)
        mn = SimpleNamespace(
            train=ViewBatch(x[:2000], x[:2000], labels=labels[:2000]),
            test=ViewBatch(x[2000:], x[2000:], labels=labels[2000:]))
        r = linear_probe_classify(model, mn, ProbeConfig(lr=1e-2))
        assert r.accuracy > 0.95

    def test_prediction_vector_shape(self):
        model = make_model(seed=8)
        mn = classification_fixture(np.random.default_rng(8), n_test=500)
        r = linear_probe_classify(model, mn, ProbeConfig(epochs=1))
        assert r.predictions.shape == (500,)
        assert set(np.unique(r.predictions)) <= set(range(10))


class TestGenerativeDecoder:
    @staticmethod
    def image_fixture(rng, n=512):
        imgs = rng.standard_normal((n, 1, 28, 28))
        return SimpleNamespace(
            train=ViewBatch(imgs[:, :, :, :14], imgs[:, :, :, 14:]),
            test=ViewBatch(imgs[:, :, :, :14], imgs[:, :, :, 14:]))

    @staticmethod
    def conv_free_model(seed):
        # flat 392-pixel inputs keep the fixture cheap; the decoder only
        # needs an embedding, not a conv stack
        enc = build_mlp_encoder(392, HIDDEN, EMB, with_ln=True)
        init_parameters(enc, derive_seed(seed, "init:encoder"))
        p_fwd = build_predictor(EMB, HIDDEN, with_ln=True)
        init_parameters(p_fwd, derive_seed(seed, "init:p-fwd"))
        p_bwd = build_predictor(EMB, HIDDEN, with_ln=True)
        init_parameters(p_bwd, derive_seed(seed, "init:p-bwd"))
        return BiJepaModel.create(
            enc, lambda: build_mlp_encoder(392, HIDDEN, EMB, with_ln=True),
            p_fwd, p_bwd, 0.5, EmaConfig(0.99), ConstraintMode.EXPRESSIVE)

    def test_mse_and_prediction_shape(self):
        rng = np.random.default_rng(9)
        n = 512
        imgs = rng.standard_normal((n, 392))
        mn = SimpleNamespace(train=ViewBatch(imgs, imgs),
                             test=ViewBatch(imgs[:100], imgs[:100]))
        model = self.conv_free_model(9)
        r = generative_decoder(model, mn, ProbeConfig(epochs=2))
        assert r.predictions.shape == (100, 392)
        assert r.mse >= 0.0

    def test_pixel_std_rescales_mse_exactly(self):
        rng = np.random.default_rng(10)
        imgs = rng.standard_normal((256, 392))
        mn = SimpleNamespace(train=ViewBatch(imgs, imgs),
                             test=ViewBatch(imgs[:64], imgs[:64]))
        model = self.conv_free_model(10)
        base = generative_decoder(model, mn, ProbeConfig(epochs=1))
        scaled = generative_decoder(model, mn, ProbeConfig(epochs=1),
                                    pixel_std=0.3081)
        assert abs(scaled.mse - base.mse * 0.3081 ** 2) < 1e-15
        assert np.array_equal(scaled.predictions, base.predictions)


class TestForecastTable:
    def test_record_count_and_keys(self):
        vb = ViewBatch(np.zeros((5, 4)), np.arange(20.0).reshape(5, 4))
        preds = np.ones((5, 4))
        table = forecast_table(vb, ProbeResult(mse=0.0, predictions=preds),
                               ProbeResult(mse=0.0, predictions=2 * preds))
        assert len(table) == 5
        assert table[0] == {"sample": 0, "truth": 0.0, "proto_a": 1.0,
                            "proto_b": 2.0}
        assert table[3]["truth"] == 12.0

    def test_perfect_probes_align(self):
        vb = ViewBatch(np.zeros((3, 2)), np.array([[1.0, 9], [2, 9], [3, 9]]))
        perfect = ProbeResult(mse=0.0, predictions=vb.y.values.copy())
        for rec in forecast_table(vb, perfect, perfect):
            assert rec["truth"] == rec["proto_a"] == rec["proto_b"]


class TestProbeResult:
    def test_validation(self):
        with pytest.raises(ValueError):
            ProbeResult(accuracy=1.2)
        with pytest.raises(ValueError):
            ProbeResult(mse=-0.1)


class TestImageDumps:
    def test_denormalize_round_trip(self):
        cfg = MnistConfig()
        u8 = np.arange(256, dtype=np.uint8)
        norm = (u8 / 255.0 - cfg.norm_mean) / cfg.norm_std
        assert np.array_equal(denormalize_to_u8(norm, cfg), u8)

    def test_denormalize_clips(self):
        assert denormalize_to_u8(np.array([-100.0]))[0] == 0
        assert denormalize_to_u8(np.array([100.0]))[0] == 255

    def test_pgm_bytes(self, tmp_path):
        img = np.arange(392, dtype=np.uint8).reshape(28, 14)
        path = tmp_path / "x.pgm"
        write_pgm(path, img)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n14 28\n255\n")
        assert raw[len(b"P5\n14 28\n255\n"):] == img.tobytes()

    def test_pgm_full_width(self, tmp_path):
        write_pgm(tmp_path / "y.pgm", np.zeros((28, 28), dtype=np.uint8))
        assert (tmp_path / "y.pgm").read_bytes().startswith(b"P5\n28 28\n")

    def test_pgm_rejects_other_shapes(self, tmp_path):
        with pytest.raises(ValueError):
            write_pgm(tmp_path / "z.pgm", np.zeros((14, 28), dtype=np.uint8))
