import csv

import numpy as np
import pytest

import oracles
from vcnet.config import ConfigError
from vcnet.dataset import GrayImage, PatchSet, bundled_corpus, extract_patches
from vcnet.losses import LossWeights, RoleWeights
from vcnet.networks import Mode, decode_checkpoint
from vcnet.pipeline import InferenceModel, baseline_compress, baseline_decompress
from vcnet.codec.bitstream import BitstreamError
from vcnet.tensor import Tensor, backward
from vcnet.trainer import (
    PhaseViolation,
    TrainConfig,
    TrainingDiverged,
    TrainReport,
    _guarded,
    build_nets,
    gradient_bridge,
    inference_checkpoint,
    lossy_channel,
    pretrain_autoencoder,
    train,
    training_checkpoint,
)


@pytest.fixture(scope="module")
def toy():
    ps = extract_patches(bundled_corpus("train"), 32, 64)
    return PatchSet(ps.patches[:8], ps.sources[:8]), PatchSet(ps.patches[8:10], ps.sources[8:10])


def tiny(**kw):
    base = dict(K=1, p=1, q=1, m=4, width=4, pretrain_epochs=1, patch=32, lr=1e-3)
    base.update(kw)
    return TrainConfig(**base)


class TestConfig:
    def test_from_mapping(self):
        cfg = TrainConfig.from_mapping({"K": "2", "mode": "low", "lr": "5e-4", "augment": "no",
                                        "final_epochs": "none", "w_rsn_dssim": "0.5"})
        assert (cfg.K, cfg.mode, cfg.lr, cfg.augment, cfg.final_epochs) == (2, Mode.LOW, 5e-4, False, None)
        assert cfg.weights.rsn.dssim == 0.5 and cfg.weights.idn.dssim == 1.0

    @pytest.mark.parametrize("kv", [{"bogus": "1"}, {"w_xyz_data": "1"}, {"framework": "png"}, {"qf": "0"},
                                    {"p": "0"}, {"patch": "30"}])
    def test_rejects(self, kv):
        with pytest.raises((ConfigError, ValueError)):
            TrainConfig.from_mapping(kv)

    def test_dnnc_forces_low_mode_and_checks_rate(self):
        assert TrainConfig(framework="dnnc", n_maps=4).mode is Mode.LOW
        with pytest.raises(ValueError):
            TrainConfig(framework="dnnc", n_maps=3)

    def test_final_refresh_defaults_to_p(self):
        assert TrainConfig(p=3).idn_refresh_epochs == 3
        assert TrainConfig(p=3, final_epochs=1).idn_refresh_epochs == 1


class TestPretraining:
    def test_l1_falls_over_200_steps(self, toy):
        train_set = PatchSet(toy[0].patches[:4])
        cfg = tiny(pretrain_epochs=200, augment=False, pretrain_dssim=False, lr=3e-3)
        report = TrainReport()
        pretrain_autoencoder(cfg, train_set, report)
        data = [r["data"] for r in report.losses]
        assert len(data) == 200
        assert np.mean(data[-10:]) < 0.5 * np.mean(data[:10])

    def test_vcn_starts_as_idn_copy(self, toy):
        nets = pretrain_autoencoder(tiny(), toy[0])
        assert nets.vcn.checksum() == nets.idn.checksum()

    def test_dnnc_fits_quantizer_range(self, toy):
        cfg = tiny(framework="dnnc", n_maps=1, dnnc_width=4, dnnc_blocks=1)
        nets = pretrain_autoencoder(cfg, toy[0])
        assert nets.spec is not None and nets.spec.y_min < nets.spec.y_max


class TestPhases:
    def test_guard_raises_when_another_network_changes(self, toy):
        nets = build_nets(tiny())
        with pytest.raises(PhaseViolation):
            with _guarded(nets, "idn", TrainReport(), "idn", 1):
                nets.rsn.params["0.bias"].data += 1.0

    def test_guard_records_owner_change(self):
        nets = build_nets(tiny())
        report = TrainReport()
        with _guarded(nets, "vcn", report, "vcn", 1):
            nets.vcn.params["0.bias"].data += 1.0
        assert report.phases[0]["changed"] == ["vcn"]

    def test_run_records_every_phase_and_validation(self, toy):
        _, report = train(tiny(K=2), *toy)
        assert [(p["phase"], p["k"], p["changed"]) for p in report.phases] == [
            ("idn", 1, ["idn"]), ("vcn", 1, ["vcn"]), ("rsn", 1, ["rsn"]),
            ("idn", 2, ["idn"]), ("vcn", 2, ["vcn"]), ("rsn", 2, ["rsn"]), ("idn", 0, ["idn"])]
        assert [k for k, _, _ in report.vcn_fidelity()] == [1, 2]
        assert report.end_to_end("pretrained") > 0 and report.end_to_end("final") > 0

    def test_phase_lr_schedule_restarts(self, toy):
        _, report = train(tiny(K=1, p=5), *toy)
        idn = [r["lr"] for r in report.losses if r["phase"] == "idn" and r["k"] == 1]
        assert idn == [1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4, 2.5e-4]

    def test_dnnc_run(self, toy):
        cfg = tiny(framework="dnnc", n_maps=1, dnnc_width=4, dnnc_blocks=1)
        nets, report = train(cfg, *toy)
        _, meta = decode_checkpoint(inference_checkpoint(nets, cfg))
        assert float(meta["y_min"]) == nets.spec.y_min and meta["n"] == "1"


class TestBridge:
    def test_rsn_gradient_matches_finite_differences(self, rng):
        cfg = tiny(dtype="float64")
        nets = build_nets(cfg)
        x = rng.uniform(0, 1, (1, 1, 16, 16))
        nets.rsn.set_trainable(True)
        loss, _ = gradient_bridge(x, nets.rsn, nets.vcn, cfg)
        grads = backward(loss, nets.rsn.params)
        assert all(p.grad is None for p in nets.vcn.params.values())
        w = nets.rsn.params["1.weight"]
        g = grads["1.weight"].reshape(-1)
        flat = w.data.reshape(-1)
        for idx in np.argsort(-np.abs(g))[:5]:
            num = oracles.finite_difference(lambda: gradient_bridge(x, nets.rsn, nets.vcn, cfg)[0].item(), flat, idx)
            assert oracles.relative_error(g[idx], num) < 1e-4

    def test_zero_vcn_passes_no_codec_gradient(self, rng):
        weights = RoleWeights(rsn=LossWeights(data=1.0, grad=1.0, dssim=0.0))
        cfg = tiny(dtype="float64", weights=weights)
        nets = build_nets(cfg)
        for p in nets.vcn.params.values():
            p.data[...] = 0
        nets.rsn.set_trainable(True)
        loss, _ = gradient_bridge(rng.uniform(size=(1, 1, 16, 16)), nets.rsn, nets.vcn, cfg)
        grads = backward(loss, nets.rsn.params)
        assert not any(g.any() for g in grads.values())

    def test_lossy_channel_refuses_tensors(self):
        with pytest.raises(AssertionError):
            lossy_channel(Tensor(np.zeros((1, 1, 8, 8))), tiny(), None)


class TestCheckpoints:
    def test_seeded_runs_are_byte_identical(self, toy):
        a, _ = train(tiny(seed=4), *toy)
        b, _ = train(tiny(seed=4), *toy)
        c, _ = train(tiny(seed=5), *toy)
        cfg = tiny(seed=4)
        assert inference_checkpoint(a, cfg) == inference_checkpoint(b, cfg)
        assert inference_checkpoint(a, cfg) != inference_checkpoint(c, cfg)

    def test_inference_checkpoint_drops_vcn(self, toy):
        cfg = tiny()
        nets, _ = train(cfg, *toy)
        inf, meta = decode_checkpoint(inference_checkpoint(nets, cfg))
        full, _ = decode_checkpoint(training_checkpoint(nets, cfg))
        assert not any(k.startswith("vcn.") for k in inf)
        assert any(k.startswith("vcn.") for k in full)
        assert meta["framework"] == "scic" and meta["qf"] == "10" and meta["width"] == "4"


class TestReport:
    def test_non_finite_loss_stops(self):
        with pytest.raises(TrainingDiverged):
            TrainReport().log_loss("idn", 1, 0, 0, 1e-4, {}, float("nan"))

    def test_csv(self, tmp_path, toy):
        _, report = train(tiny(), *toy)
        report.write_csv(tmp_path / "r.csv")
        rows = list(csv.reader(open(tmp_path / "r.csv")))
        assert rows[0][:7] == ["kind", "phase", "k", "epoch", "step", "lr", "loss"]
        kinds = {r[0] for r in rows[1:]}
        assert kinds == {"loss", "val", "wall_clock"}


@pytest.fixture(scope="module")
def models(toy):
    out = {}
    for mode in (Mode.FULL, Mode.LOW):
        cfg = tiny(mode=mode)
        nets, _ = train(cfg, *toy)
        out[mode] = InferenceModel.from_bytes(inference_checkpoint(nets, cfg))
    cfg = tiny(framework="dnnc", n_maps=2, dnnc_width=4, dnnc_blocks=1)
    nets, _ = train(cfg, *toy)
    out["dnnc"] = InferenceModel.from_bytes(inference_checkpoint(nets, cfg))
    return out


class TestInferenceModel:
    @pytest.mark.parametrize("key", [Mode.FULL, Mode.LOW, "dnnc"])
    def test_odd_extents_roundtrip(self, models, rng, key):
        img = GrayImage(rng.integers(0, 256, (40, 56)).astype(np.uint8))
        model = models[key]
        stream = model.compress(img)
        out = model.decompress(stream.to_bytes())
        assert (out.width, out.height) == (56, 40)
        assert stream.resampled

    def test_mismatched_streams_rejected(self, models, rng):
        img = GrayImage(rng.integers(0, 256, (32, 32)).astype(np.uint8))
        with pytest.raises(BitstreamError):
            models[Mode.FULL].decompress(models[Mode.LOW].compress(img))
        with pytest.raises(BitstreamError):
            models[Mode.FULL].decompress(models["dnnc"].compress(img))
        with pytest.raises(BitstreamError):
            models[Mode.FULL].decompress(baseline_compress(img, 50))
        with pytest.raises(BitstreamError):
            baseline_decompress(models[Mode.FULL].compress(img))

    def test_qf_override(self, models, rng):
        img = GrayImage(rng.integers(0, 256, (32, 32)).astype(np.uint8))
        assert models[Mode.FULL].compress(img, 90).qf == 90
        assert models[Mode.FULL].compress(img).qf == 10
