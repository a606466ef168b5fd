"""Autoencoder initialization and the alternating IDN / VCN / RSN training loop.

One outer iteration: push the current re-sampled vectors Y through the
lossy channel to get Z, fit the IDN on (Z, X), fit the VCN on (Y, I~), then
fit the RSN through the frozen VCN. A last IDN refresh follows the loop.
The lossy channel only ever sees detached numpy arrays.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .config import ConfigError, read_kv
from .codec.bitstream import g_map
from .dataset import PATCH, BatchPlan, DatasetConfig, PatchSet, extract_patches, gather
from .losses import LossWeights, RoleWeights, SsimParams, dssim, idn_loss, rsn_loss, upsample_s, vcn_loss
from .networks import (
    DNNC_BLOCKS,
    DNNC_WIDTH,
    PAPER_WIDTH,
    Mode,
    Network,
    build_dnnc,
    build_idn,
    build_rsn,
    build_vcn,
    check_rate,
    copy_params,
    encode_checkpoint,
    prefixed,
)
from .optim import AdamState, adam_step, lr_at
from .quantizer import DEFAULT_BETA, QuantizerSpec, fit_range, quantize
from .tensor import Tensor, backward

logger = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    """A loss or gradient went non-finite; training stopped."""


class PhaseViolation(RuntimeError):
    """A phase changed parameters it does not own."""


@dataclass
class TrainConfig:
    framework: str = "scic"
    mode: Mode = Mode.FULL
    K: int = 3
    p: int = 2
    q: int = 2
    m: int = 8
    qf: int = 10
    n_maps: int = 4
    beta: int = DEFAULT_BETA
    seed: int = 0
    width: int = PAPER_WIDTH
    dnnc_width: int = DNNC_WIDTH
    dnnc_blocks: int = DNNC_BLOCKS
    lr: float = 1e-4
    pretrain_epochs: int = 3
    pretrain_dssim: bool = True
    final_epochs: int | None = None
    augment: bool = True
    patch: int = PATCH
    patch_stride: int = PATCH
    dtype: str = "float32"
    weights: RoleWeights = field(default_factory=RoleWeights)
    ssim: SsimParams = field(default_factory=SsimParams)

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.framework = self.framework.lower()
        if self.framework not in ("scic", "dnnc"):
            raise ConfigError(f"framework must be scic or dnnc, got {self.framework!r}")
        if self.K < 0 or self.p < 1 or self.q < 1 or self.m < 1:
            raise ConfigError("need K >= 0 and p, q, m >= 1")
        if self.framework == "dnnc":
            check_rate(self.n_maps)
            self.mode = Mode.LOW
        elif not 1 <= self.qf <= 100:
            raise ConfigError(f"qf must lie in 1..100, got {self.qf}")
        if self.patch % 8:
            raise ConfigError("patch size must be a multiple of 8")

    @property
    def idn_refresh_epochs(self) -> int:
        return self.p if self.final_epochs is None else self.final_epochs

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @classmethod
    def from_mapping(cls, kv: Mapping[str, str]) -> "TrainConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        args: dict = {}
        role_w: dict[str, dict[str, float]] = {"idn": {}, "vcn": {}, "rsn": {}}
        for key, raw in kv.items():
            if key.startswith("w_"):
                # w_<role>_<term>, e.g. w_rsn_dssim = 0.5
                try:
                    _, role, term = key.split("_", 2)
                    role_w[role][term] = float(raw)
                except (ValueError, KeyError):
                    raise ConfigError(f"bad loss-weight key {key!r}") from None
                continue
            if key not in kinds or key in ("weights", "ssim"):
                raise ConfigError(f"unknown training option {key!r}")
            kind = str(kinds[key])
            if "bool" in kind:
                args[key] = raw.strip().lower() in ("1", "true", "yes", "on")
            elif "int" in kind and "None" in kind:
                args[key] = None if raw.strip().lower() in ("", "none") else int(raw)
            elif "int" in kind:
                args[key] = int(raw)
            elif "float" in kind:
                args[key] = float(raw)
            else:
                args[key] = raw.strip()
        args["weights"] = RoleWeights(**{r: LossWeights(**w) for r, w in role_w.items()})
        return cls(**args)

    @classmethod
    def from_file(cls, path: str | Path) -> "TrainConfig":
        return cls.from_mapping(read_kv(path))


@dataclass
class Nets:
    rsn: Network
    idn: Network
    vcn: Network
    spec: QuantizerSpec | None = None

    def checksums(self) -> dict[str, str]:
        return {"rsn": self.rsn.checksum(), "idn": self.idn.checksum(), "vcn": self.vcn.checksum()}


@dataclass
class TrainReport:
    losses: list[dict] = field(default_factory=list)
    validation: list[dict] = field(default_factory=list)
    phases: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoints: list[str] = field(default_factory=list)

    def log_loss(self, phase: str, k: int, epoch: int, step: int, lr: float, parts: Mapping[str, float], total: float):
        if not np.isfinite(total):
            raise TrainingDiverged(f"{phase} k={k} epoch={epoch} step={step}: loss is {total}")
        self.losses.append({"phase": phase, "k": k, "epoch": epoch, "step": step, "lr": lr, "loss": total, **parts})

    def val(self, metric: str, k: int, value: float, when: str = "") -> None:
        self.validation.append({"metric": metric, "k": k, "when": when, "value": float(value)})

    def vcn_fidelity(self) -> list[tuple[int, float, float]]:
        """(k, before, after) validation L1(I^, I~) around each VCN phase."""
        rows = {}
        for r in self.validation:
            if r["metric"] == "vcn_l1":
                rows.setdefault(r["k"], {})[r["when"]] = r["value"]
        return [(k, v["before"], v["after"]) for k, v in sorted(rows.items())]

    def end_to_end(self, when: str) -> float:
        for r in self.validation:
            if r["metric"] == "e2e_l1" and r["when"] == when:
                return r["value"]
        raise KeyError(when)

    def write_csv(self, path: str | Path) -> None:
        """Loss curve rows followed by validation rows, one CSV."""
        terms = sorted({k for r in self.losses for k in r} - {"phase", "k", "epoch", "step", "lr", "loss"})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kind", "phase", "k", "epoch", "step", "lr", "loss", *terms])
            for r in self.losses:
                w.writerow(["loss", r["phase"], r["k"], r["epoch"], r["step"], f"{r['lr']:.6g}", f"{r['loss']:.6g}"]
                           + [f"{r[t]:.6g}" if t in r else "" for t in terms])
            for r in self.validation:
                w.writerow(["val", f"{r['metric']}:{r['when']}", r["k"], "", "", "", f"{r['value']:.6g}"] + [""] * len(terms))
            w.writerow(["wall_clock", "", "", "", "", "", f"{self.wall_clock:.3f}"] + [""] * len(terms))


# -- construction ----------------------------------------------------------------------


def build_nets(cfg: TrainConfig) -> Nets:
    dt = cfg.np_dtype
    base = 3 * cfg.seed
    if cfg.framework == "dnnc":
        ae = build_dnnc(cfg.n_maps, cfg.dnnc_width, cfg.dnnc_blocks, dt, seed=base)
        vcn = build_dnnc(cfg.n_maps, cfg.dnnc_width, cfg.dnnc_blocks, dt, seed=base + 2).decoder
        vcn.kind = "vcn"
        return Nets(ae.encoder, ae.decoder, vcn)
    return Nets(
        build_rsn(cfg.mode, cfg.width, dt, seed=base),
        build_idn(cfg.mode, cfg.width, dt, seed=base + 1),
        build_vcn(cfg.mode, cfg.width, dt, seed=base + 2),
    )


def prepare_data(cfg: TrainConfig, data: DatasetConfig | None = None) -> tuple[PatchSet, PatchSet]:
    data = data or DatasetConfig()
    train = extract_patches(data.train_images(), cfg.patch, cfg.patch_stride)
    val = extract_patches(data.val_images(), cfg.patch, cfg.patch)
    return train, val


# -- forward helpers (no graph) -----------------------------------------------------------


def _infer(net: Network, x: np.ndarray, chunk: int = 8) -> np.ndarray:
    """Forward a (n, 1, H, W) array in chunks without recording a graph."""
    net.set_trainable(False)
    out = [net.forward(Tensor(x[i : i + chunk].astype(net.dtype, copy=False))).data for i in range(0, len(x), chunk)]
    return np.concatenate(out)


def lossy_channel(y: np.ndarray, cfg: TrainConfig, spec: QuantizerSpec | None) -> np.ndarray:
    """Z from Y: the codec round trip (SCIC) or feature quantization (DNNC). Plain arrays only."""
    assert not isinstance(y, Tensor), "the lossy channel never carries gradients"
    if cfg.framework == "scic":
        return g_map(np.clip(y, 0.0, 1.0), cfg.qf, cfg.mode).astype(y.dtype)
    return quantize(y, spec).astype(y.dtype)


def mean_abs(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - b)))


def _as_batch(patches: np.ndarray) -> np.ndarray:
    return patches[:, None] if patches.ndim == 3 else patches


def pipeline_outputs(nets: Nets, cfg: TrainConfig, x: np.ndarray) -> dict[str, np.ndarray]:
    """Y, Z, I~ = h(Z) and I^ = v(Y) for a batch of images."""
    x = _as_batch(x).astype(cfg.np_dtype)
    y = _infer(nets.rsn, x)
    z = lossy_channel(y, cfg, nets.spec)
    return {"y": y, "z": z, "decoded": _infer(nets.idn, z), "virtual": _infer(nets.vcn, y)}


# -- one optimization phase -------------------------------------------------------------


StepLoss = Callable[[list[np.ndarray]], tuple[Tensor, dict[str, Tensor]]]


def run_phase(
    name: str,
    k: int,
    net: Network,
    state: AdamState,
    arrays: list[np.ndarray],
    epochs: int,
    loss_fn: StepLoss,
    cfg: TrainConfig,
    report: TrainReport,
    epoch_base: int,
    others: tuple[Network, ...] = (),
) -> int:
    """Train `net` alone for `epochs` passes over the aligned (n, H, W) `arrays`.

    Every network in `others` is frozen; the lr schedule spans this phase only.
    Returns the number of epochs consumed (for seeding the next phase's draws).
    """
    plan = BatchPlan(cfg.m, seed=cfg.seed, augment=cfg.augment)
    n = len(arrays[0])
    total = epochs * plan.batches_per_epoch(n)
    for o in others:
        o.set_trainable(False)
    net.set_trainable(True)
    step = 0
    for epoch in range(epochs):
        for idx, codes in plan.draws(n, epoch_base + epoch):
            batch = gather(arrays, idx, codes, cfg.np_dtype)
            lr = lr_at(step, total, cfg.lr)
            net.set_trainable(True)
            loss, parts = loss_fn(batch)
            grads = backward(loss, net.params)
            for o in others:
                assert all(p.grad is None for p in o.params.values()), f"{name}: frozen network received gradients"
            try:
                adam_step(net.params, grads, state, lr)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"{name} k={k}: {exc}") from None
            report.log_loss(name, k, epoch, step, lr, {t: v.item() for t, v in parts.items()}, loss.item())
            step += 1
    net.set_trainable(False)
    return epochs


def _guarded(nets: Nets, owner: str, report: TrainReport, phase: str, k: int):
    """Context manager checking that only `owner` changes during a phase."""

    class _Guard:
        def __enter__(self):
            self.before = nets.checksums()
            return self

        def __exit__(self, exc_type, *_):
            if exc_type:
                return False
            after = nets.checksums()
            changed = sorted(n for n in after if after[n] != self.before[n])
            report.phases.append({"phase": phase, "k": k, "owner": owner, "changed": changed,
                                  "before": self.before, "after": after})
            if any(c != owner for c in changed):
                raise PhaseViolation(f"{phase} k={k}: {changed} changed, only {owner} may")
            return False

    return _Guard()


# -- losses per role ----------------------------------------------------------------------


def _pretrain_loss(nets: Nets, cfg: TrainConfig):
    w = cfg.weights

    def f(batch):
        x = Tensor(batch[0])
        y = nets.rsn(x)
        decoded = nets.idn(y)
        total, parts = idn_loss(decoded, x, cfg.framework, w.idn)
        if cfg.framework == "scic" and cfg.pretrain_dssim:
            parts = dict(parts)
            parts["dssim"] = dssim(upsample_s(y, cfg.mode), x, cfg.ssim)
            total = total + parts["dssim"] * w.rsn.dssim
        return total, parts

    return f


def gradient_bridge(x, rsn: Network, vcn: Network, cfg: TrainConfig) -> tuple[Tensor, dict[str, Tensor]]:
    """L_RSN with the codec replaced by the frozen VCN; the graph runs X -> Y -> I^ only."""
    vcn.set_trainable(False)
    x = x if isinstance(x, Tensor) else Tensor(x)
    y = rsn(x)
    virtual = vcn(y)
    return rsn_loss(virtual, x, y, cfg.mode, cfg.framework, cfg.weights.rsn, cfg.ssim)


# -- Algorithm 1 ------------------------------------------------------------------------------


def pretrain_autoencoder(cfg: TrainConfig, train: PatchSet, report: TrainReport | None = None,
                         nets: Nets | None = None) -> Nets:
    """Fit RSN + IDN jointly with no quantization; VCN starts as a copy of the IDN."""
    report = report if report is not None else TrainReport()
    nets = nets or build_nets(cfg)
    params = {**{f"rsn.{k}": v for k, v in nets.rsn.params.items()}, **{f"idn.{k}": v for k, v in nets.idn.params.items()}}
    state = AdamState(lr=cfg.lr)
    plan = BatchPlan(cfg.m, seed=cfg.seed, augment=cfg.augment)
    n = len(train)
    total = cfg.pretrain_epochs * plan.batches_per_epoch(n)
    loss_fn = _pretrain_loss(nets, cfg)
    step = 0
    for epoch in range(cfg.pretrain_epochs):
        for idx, codes in plan.draws(n, epoch):
            batch = gather([train.patches], idx, codes, cfg.np_dtype)
            nets.rsn.set_trainable(True)
            nets.idn.set_trainable(True)
            lr = lr_at(step, total, cfg.lr)
            loss, parts = loss_fn(batch)
            grads = backward(loss, params)
            try:
                adam_step(params, grads, state, lr)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"pretrain: {exc}") from None
            report.log_loss("pretrain", 0, epoch, step, lr, {t: v.item() for t, v in parts.items()}, loss.item())
            step += 1
    nets.rsn.set_trainable(False)
    nets.idn.set_trainable(False)
    copy_params(nets.idn, nets.vcn)
    if cfg.framework == "dnnc":
        codes = [_infer(nets.rsn, train.patches[i : i + cfg.m, None].astype(cfg.np_dtype)) for i in range(0, n, cfg.m)]
        nets.spec = fit_range(codes, cfg.beta)
    return nets


def _val_metrics(nets: Nets, cfg: TrainConfig, val: PatchSet) -> dict[str, float]:
    out = pipeline_outputs(nets, cfg, val.patches)
    x = _as_batch(val.patches)
    return {
        "vcn_l1": mean_abs(out["virtual"], out["decoded"]),
        "e2e_l1": mean_abs(np.clip(out["decoded"], 0.0, 1.0), x),
    }


def train(cfg: TrainConfig, train_set: PatchSet, val_set: PatchSet, nets: Nets | None = None,
          report: TrainReport | None = None) -> tuple[Nets, TrainReport]:
    """Algorithm 1. Pretrains first unless initialized `nets` are supplied."""
    t0 = time.perf_counter()
    report = report if report is not None else TrainReport()
    if nets is None:
        nets = pretrain_autoencoder(cfg, train_set, report)
    w = cfg.weights
    report.val("e2e_l1", 0, _val_metrics(nets, cfg, val_set)["e2e_l1"], "pretrained")
    x_all = train_set.patches
    states = {"rsn": AdamState(lr=cfg.lr), "idn": AdamState(lr=cfg.lr), "vcn": AdamState(lr=cfg.lr)}
    epoch_base = cfg.pretrain_epochs

    def idn_phase(k: int, z: np.ndarray) -> None:
        nonlocal epoch_base

        def f(batch):
            return idn_loss(nets.idn(Tensor(batch[0])), Tensor(batch[1]), cfg.framework, w.idn)

        with _guarded(nets, "idn", report, "idn", k):
            epoch_base += run_phase("idn", k, nets.idn, states["idn"], [z, x_all],
                                    cfg.p if k else cfg.idn_refresh_epochs, f, cfg, report, epoch_base,
                                    (nets.rsn, nets.vcn))

    for k in range(1, cfg.K + 1):
        y = _infer(nets.rsn, x_all[:, None].astype(cfg.np_dtype))
        z = lossy_channel(y, cfg, nets.spec)
        idn_phase(k, z)

        decoded = _infer(nets.idn, z)
        report.val("vcn_l1", k, _val_metrics(nets, cfg, val_set)["vcn_l1"], "before")

        def fv(batch):
            return vcn_loss(nets.vcn(Tensor(batch[0])), Tensor(batch[1]), cfg.mode, cfg.framework, w.vcn, cfg.ssim)

        with _guarded(nets, "vcn", report, "vcn", k):
            epoch_base += run_phase("vcn", k, nets.vcn, states["vcn"], [y, decoded], cfg.p, fv, cfg,
                                    report, epoch_base, (nets.rsn, nets.idn))
        report.val("vcn_l1", k, _val_metrics(nets, cfg, val_set)["vcn_l1"], "after")

        def fr(batch):
            return gradient_bridge(Tensor(batch[0]), nets.rsn, nets.vcn, cfg)

        with _guarded(nets, "rsn", report, "rsn", k):
            epoch_base += run_phase("rsn", k, nets.rsn, states["rsn"], [x_all], cfg.q, fr, cfg, report,
                                    epoch_base, (nets.idn, nets.vcn))

    if cfg.K:
        y = _infer(nets.rsn, x_all[:, None].astype(cfg.np_dtype))
        idn_phase(0, lossy_channel(y, cfg, nets.spec))
    report.val("e2e_l1", cfg.K, _val_metrics(nets, cfg, val_set)["e2e_l1"], "final")
    report.wall_clock = time.perf_counter() - t0
    return nets, report


# -- inference checkpoints ---------------------------------------------------------------------


def checkpoint_meta(cfg: TrainConfig, spec: QuantizerSpec | None) -> dict[str, object]:
    meta: dict[str, object] = {"framework": cfg.framework, "mode": cfg.mode.value, "seed": cfg.seed}
    if cfg.framework == "scic":
        meta.update(width=cfg.width, qf=cfg.qf)
    else:
        meta.update(n=cfg.n_maps, dnnc_width=cfg.dnnc_width, dnnc_blocks=cfg.dnnc_blocks)
        if spec is not None:
            meta.update(beta=spec.beta, y_min=repr(spec.y_min), y_max=repr(spec.y_max))
    return meta


def inference_checkpoint(nets: Nets, cfg: TrainConfig) -> bytes:
    """RSN and IDN parameters only; the VCN is a training-time device."""
    return encode_checkpoint({**prefixed("rsn", nets.rsn), **prefixed("idn", nets.idn)}, checkpoint_meta(cfg, nets.spec))


def training_checkpoint(nets: Nets, cfg: TrainConfig) -> bytes:
    """All three parameter sets, for resuming Algorithm 1 from an initialization."""
    tensors = {**prefixed("rsn", nets.rsn), **prefixed("idn", nets.idn), **prefixed("vcn", nets.vcn)}
    return encode_checkpoint(tensors, checkpoint_meta(cfg, nets.spec))


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["mode"] = cfg.mode.value
    return d
