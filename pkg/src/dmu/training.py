"""Primed-pair training: reconstruct ``y2`` from ``(y1, x2)`` under a masked, balanced L1 loss."""

from __future__ import annotations

import csv
import dataclasses
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Adam, NonFiniteError, Tape, Tensor, abs_, backward, clip_global_norm, mul, sub, sum_
from .data import NoiseConfig, batches_per_epoch, dataset_stream, read_dataset, validation_samples
from .model import CaeModel, desk_architecture, paper_architecture
from .presets import get_preset
from .scene import ScenarioSpec, load_scenario

PROFILES = ("desk", "paper")


class TrainingDiverged(FloatingPointError):
    """Non-finite loss or gradient; the last per-epoch checkpoint is left untouched."""


def outlier_mask(y, lo: float = 0.0, hi: float = 1.0, max_depth: float = 1.0) -> np.ndarray:
    """Validity map: normalized depth in ``(lo, hi]``; zero (invalid) pixels are always masked.

    The upper end is closed so ``lo=0, hi=1`` keeps everything except the
    invalid code, including no-hit pixels stored at ``max_depth``.
    """
    if not (0.0 <= lo < hi <= 1.0):
        raise ValueError(f"outlier interval must satisfy 0 <= lo < hi <= 1, got ({lo}, {hi})")
    yn = np.asarray(y, dtype=np.float64) / max_depth
    return (yn > lo) & (yn <= hi) & (np.asarray(y) != 0)


def loss_weights(mask: np.ndarray, valid: np.ndarray, balance: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel weights (labeled, unlabeled) so that ``sum(w * |d|)`` is each term's mean.

    With ``balance`` off all valid pixels go into the second term, which is
    then the plain mean absolute error.
    """
    mask = np.asarray(mask, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if not balance:
        n = valid.sum()
        return np.zeros(mask.shape), (valid / n if n else np.zeros(mask.shape))
    lab = mask & valid
    unl = ~mask & valid
    nl, nu = lab.sum(), unl.sum()
    wl = lab / nl if nl else np.zeros(mask.shape)  # empty labeled set: term is 0
    wu = unl / nu if nu else np.zeros(mask.shape)
    return wl, wu


def masked_balanced_l1(pred, target, mask, valid=None, balance: bool = True):
    """Mean |pred - target| over labeled valid pixels plus the same over unlabeled valid pixels.

    Means run over the whole minibatch.  ``pred`` may be a :class:`Tensor`
    (the result is then a differentiable scalar) or an array (returns float).
    """
    target = np.asarray(target)
    if valid is None:
        valid = np.ones(target.shape, dtype=bool)
    pdata = pred.data if isinstance(pred, Tensor) else np.asarray(pred)
    if pdata.shape != target.shape or np.shape(mask) != target.shape or np.shape(valid) != target.shape:
        raise ValueError(f"shape mismatch: pred {pdata.shape}, target {target.shape}, "
                         f"mask {np.shape(mask)}, valid {np.shape(valid)}")
    wl, wu = loss_weights(mask, valid, balance)
    if not isinstance(pred, Tensor):
        d = np.abs(pdata.astype(np.float64) - target)
        return float(np.sum(d * wl) + np.sum(d * wu))
    w = Tensor((wl + wu).astype(pdata.dtype))
    return sum_(mul(abs_(sub(pred, Tensor(target.astype(pdata.dtype)))), w))


def loss_terms(pred: np.ndarray, target: np.ndarray, mask, valid, balance: bool = True) -> tuple[float, float]:
    d = np.abs(np.asarray(pred, dtype=np.float64) - target)
    wl, wu = loss_weights(mask, valid, balance)
    return float(np.sum(d * wl)), float(np.sum(d * wu))


LR_SCHEDULES = ("constant", "cosine")


def learning_rate(cfg: TrainConfig, step: int, total: int) -> float:
    """Learning rate for optimizer step ``step`` (0-based) of ``total``."""
    if cfg.lr_schedule == "cosine":
        return float(cfg.lr * 0.5 * (1.0 + np.cos(np.pi * step / total)))
    return cfg.lr


@dataclass
class TrainConfig:
    scenario: str = "box_translation"  # preset name or scenario YAML path
    profile: str = "desk"
    variant: str = "cae"
    latent_dim: int | None = None  # profile default when None
    lr: float = 1e-4
    lr_schedule: str = "constant"  # or "cosine": anneal from lr to 0 over the run
    epochs: int = 30
    epoch_size: int = 1050
    reuse: int = 5
    batch: int = 35
    seed: int = 0
    outlier_masking: bool = True
    outlier_lo: float = 0.0
    outlier_hi: float = 1.0
    loss_balance: bool = True
    mask_union: bool = False
    dropout_prob: float = 0.0
    gaussian_sigma: float = 0.0
    grad_clip: float | None = 10.0
    dtype: str = "float32"
    workers: int = 1
    buffer: int = 4
    validation_fraction: float = 0.05
    dataset: str | None = None  # directory written by gen-data; live stream when None
    arch_overrides: dict = field(default_factory=dict)

    def validate(self) -> list[str]:
        problems = []
        for name in ("epochs", "epoch_size", "reuse", "batch", "workers"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive, got {getattr(self, name)}")
        if self.epoch_size > 0 and self.batch > 0 and self.epoch_size % self.batch:
            problems.append(f"epoch_size {self.epoch_size} is not divisible by batch {self.batch}")
        if not self.lr >= 0:
            problems.append(f"lr must be >= 0, got {self.lr}")
        if self.lr_schedule not in LR_SCHEDULES:
            problems.append(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.profile not in PROFILES:
            problems.append(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.variant not in ("cae", "cae_generator"):
            problems.append(f"variant must be cae or cae_generator, got {self.variant!r}")
        if not (0.0 <= self.outlier_lo < self.outlier_hi <= 1.0):
            problems.append(f"outlier interval ({self.outlier_lo}, {self.outlier_hi}) invalid")
        if not 0.0 <= self.validation_fraction < 1.0:
            problems.append(f"validation_fraction must be in [0, 1), got {self.validation_fraction}")
        if self.dtype not in ("float32", "float64"):
            problems.append(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.latent_dim is not None and self.latent_dim <= 0:
            problems.append(f"latent_dim must be positive, got {self.latent_dim}")
        try:
            NoiseConfig(self.dropout_prob, self.gaussian_sigma)
        except ValueError as exc:
            problems.append(str(exc))
        return problems

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {unknown}")
        return cls(**d)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # dicts: epoch, labeled, unlabeled, total, val_total
    wall_time: float = 0.0
    checkpoint: Path | None = None

    @property
    def totals(self) -> list[float]:
        return [e["total"] for e in self.epochs]

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        cols = ["epoch", "labeled", "unlabeled", "total", "val_total"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for e in self.epochs:
            w.writerow([e["epoch"]] + [repr(float(e[c])) for c in cols[1:]])
        return buf.getvalue()


def resolve_scenario(name_or_path: str | ScenarioSpec) -> ScenarioSpec:
    if isinstance(name_or_path, ScenarioSpec):
        return name_or_path
    p = Path(name_or_path)
    if p.suffix in (".yaml", ".yml") or p.exists():
        return load_scenario(p)
    return get_preset(name_or_path)


def training_setup(cfg: TrainConfig) -> tuple[ScenarioSpec, CaeModel]:
    """Scenario re-rendered at the profile resolution, plus a freshly initialized model."""
    spec = resolve_scenario(cfg.scenario)
    factory = desk_architecture if cfg.profile == "desk" else paper_architecture
    overrides = dict(cfg.arch_overrides)
    if cfg.latent_dim is not None:
        overrides["latent_dim"] = cfg.latent_dim
    arch = factory(spec, cfg.variant, seed=cfg.seed, dtype=cfg.dtype, **overrides)
    if (spec.camera.height, spec.camera.width) != (arch.height, arch.width):
        spec = dataclasses.replace(spec, camera=spec.camera.with_resolution(arch.width, arch.height))
    return spec, CaeModel(arch)


class _Step:
    """One forward/backward/update on a minibatch, shared by training and validation."""

    def __init__(self, model: CaeModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.max_depth = model.arch.max_depth

    def inputs(self, y1, y2, x2, mask2):
        m = self.model
        yin = m.normalize_depth(y1)
        target = m.normalize_depth(y2)
        mask = np.asarray(mask2, dtype=bool)[:, None]
        if self.cfg.outlier_masking:
            valid = outlier_mask(y2, self.cfg.outlier_lo, self.cfg.outlier_hi, self.max_depth)[:, None]
        else:
            valid = np.ones(mask.shape, dtype=bool)
        return yin, m.normalize_state(x2), target, mask, valid

    def evaluate(self, y1, y2, x2, mask2) -> tuple[float, float]:
        yin, xn, target, mask, valid = self.inputs(y1, y2, x2, mask2)
        pred = self.model.forward(Tensor(yin), Tensor(xn))
        return loss_terms(pred.data, target, mask, valid, self.cfg.loss_balance)


def train(cfg: TrainConfig, out_dir=None, progress=None) -> tuple[CaeModel, TrainReport]:
    """Train a model; with ``out_dir`` write per-epoch checkpoints, ``model.ckpt`` and ``metrics.csv``.

    ``progress`` (optional) is called with each epoch's metrics dict.
    """
    problems = cfg.validate()
    if problems:
        raise ValueError("invalid training config: " + "; ".join(problems))
    t0 = time.perf_counter()
    spec, model = training_setup(cfg)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    params = model.parameters()
    for p in params.values():
        p.requires_grad = True
    opt = Adam(params, lr=cfg.lr)
    step = _Step(model, cfg)
    clip = cfg.grad_clip if cfg.dtype == "float32" else None

    n_val = int(round(cfg.validation_fraction * cfg.epoch_size))
    val = validation_samples(spec, n_val, cfg.seed, cfg.mask_union) if n_val else []
    source = read_dataset(cfg.dataset) if cfg.dataset else None
    per_epoch = batches_per_epoch(cfg.epoch_size, cfg.reuse, cfg.batch)
    stream = dataset_stream(spec, cfg.epoch_size, cfg.reuse, cfg.batch, cfg.seed, epochs=cfg.epochs,
                            noise=NoiseConfig(cfg.dropout_prob, cfg.gaussian_sigma), workers=cfg.workers,
                            buffer=cfg.buffer, mask_union=cfg.mask_union, source=source)
    report = TrainReport()
    sums = np.zeros(2)
    try:
        for mb in stream:
            yin, xn, target, mask, valid = step.inputs(mb.y1, mb.y2, mb.x2, mb.mask2)
            opt.zero_grad()
            try:
                with Tape() as tape:
                    pred = model.forward(Tensor(yin), Tensor(xn))
                    loss = masked_balanced_l1(pred, target, mask, valid, cfg.loss_balance)
                backward(tape, loss)
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite value at epoch {mb.epoch} batch {mb.index}: {exc}") from exc
            grads = opt.grads()
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDiverged(f"non-finite gradient at epoch {mb.epoch} batch {mb.index}")
            if clip:
                clip_global_norm(grads, clip)
            opt.lr = learning_rate(cfg, mb.epoch * per_epoch + mb.index, cfg.epochs * per_epoch)
            opt.step(grads)
            sums += loss_terms(pred.data, target, mask, valid, cfg.loss_balance)
            if mb.index == per_epoch - 1:
                row = _close_epoch(mb.epoch, sums / per_epoch, step, val, cfg.batch)
                report.epochs.append(row)
                sums[:] = 0
                if out is not None:
                    model.save(out / f"epoch_{mb.epoch:03d}.ckpt")
                    model.save(out / "model.ckpt")
                    (out / "metrics.csv").write_text(report.metrics_csv())
                    report.checkpoint = out / "model.ckpt"
                if progress is not None:
                    progress(row)
    finally:
        stream.close()
    report.wall_time = time.perf_counter() - t0
    return model, report


def _close_epoch(epoch, means, step: _Step, val, batch) -> dict:
    row = {"epoch": epoch, "labeled": float(means[0]), "unlabeled": float(means[1]),
           "total": float(means.sum()), "val_total": float("nan")}
    if val:
        totals = []
        for i in range(0, len(val), batch):
            chunk = val[i:i + batch]
            lab, unl = step.evaluate(np.stack([s.y1 for s in chunk]), np.stack([s.y2 for s in chunk]),
                                     np.stack([s.x2 for s in chunk]), np.stack([s.mask2 for s in chunk]))
            totals.append((lab + unl) * len(chunk))
        row["val_total"] = float(sum(totals) / len(val))
    for k in ("labeled", "unlabeled", "total"):
        if not np.isfinite(row[k]):
            raise TrainingDiverged(f"non-finite {k} loss at epoch {epoch}")
    return row
