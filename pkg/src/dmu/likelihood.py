"""Measurement similarity, the learned likelihood, two render-based benchmarks, and axis sweeps.

Every evaluator maps ``(y_obs, states)`` to one non-negative loss per state;
:func:`loss_to_weight` turns losses into normalized weights ``w ∝ 1/loss``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .model import CaeModel
from .render import min_compose, render_depth
from .scene import ScenarioSpec, bind_state, default_unmodeled, sweep_axis
from .training import outlier_mask

LOSS_FLOOR = 1e-9
SCALE_DELTA = 1e-3


def similarity(a, b, valid=None) -> float:
    """Mean |a - b| over pixels valid in both images (non-zero and, if given, ``valid``)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    keep = (a != 0) & (b != 0)
    if valid is not None:
        keep &= np.asarray(valid, dtype=bool)
    n = int(keep.sum())
    if n == 0:
        raise ValueError("no valid pixels to compare")
    return float(np.abs(a - b)[keep].sum() / n)


def _as_states(states) -> np.ndarray:
    return np.atleast_2d(np.asarray(states, dtype=np.float64))


class Evaluator:
    """Base class; ``scaled`` selects per-batch min-max scaling in :func:`loss_to_weight`."""

    scaled = False

    def losses(self, y_obs, states) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, y_obs, x) -> float:
        return float(self.losses(y_obs, _as_states(x))[0])


class Learned(Evaluator):
    """Reconstruction loss of ``y_obs`` through the model conditioned on each state.

    The observation is encoded once and the latent shared across the batch.
    """

    def __init__(self, model: CaeModel, scaled: bool = True, lo: float = 0.0, hi: float = 1.0,
                 chunk: int = 128):
        self.model = model
        self.scaled = scaled
        self.lo, self.hi = lo, hi
        self.chunk = chunk

    def losses(self, y_obs, states) -> np.ndarray:
        states = _as_states(states)
        y_obs = np.asarray(y_obs)
        valid = outlier_mask(y_obs, self.lo, self.hi, self.model.arch.max_depth)
        latent = self.model.encode(y_obs)
        out = np.empty(len(states))
        for i in range(0, len(states), self.chunk):
            recon = self.model.decode(latent, states[i:i + self.chunk])
            out[i:i + len(recon)] = [similarity(y_obs, r, valid) for r in recon]
        return out


def learned_loss(model: CaeModel, y_obs, x, lo: float = 0.0, hi: float = 1.0) -> float:
    return Learned(model, lo=lo, hi=hi)(y_obs, x)


class InputAndSynthetic(Evaluator):
    """``similarity(y, min(y, y_syn(x)))`` with ``y_syn`` the target rendered alone.

    Background pixels of the synthetic render sit at ``max_depth`` so the
    pixel-wise minimum hands them back to the observation; only places where
    the hypothesized target would be visible *in front of* the observed
    surface cost anything.
    """

    def __init__(self, spec: ScenarioSpec, z=None, scaled: bool = False):
        self.spec = spec
        self.z = default_unmodeled(spec) if z is None else np.asarray(z, dtype=np.float64)
        self.scaled = scaled

    def render(self, x) -> np.ndarray:
        return render_depth(bind_state(self.spec, x, self.z).only(self.spec.target_ids))

    def losses(self, y_obs, states) -> np.ndarray:
        y_obs = np.asarray(y_obs)
        return np.array([similarity(y_obs, min_compose(y_obs, self.render(x))) for x in _as_states(states)])


def input_and_synthetic(y_obs, x, spec: ScenarioSpec, z=None) -> float:
    return InputAndSynthetic(spec, z)(y_obs, x)


class SyntheticAndSynthetic(Evaluator):
    """Full-scene render at ``x`` against the ground-truth render, both under ``z_gt``.

    Needs the ground truth; the observation argument is ignored.
    """

    def __init__(self, spec: ScenarioSpec, x_gt, z_gt, scaled: bool = False):
        self.spec = spec
        self.x_gt = np.asarray(x_gt, dtype=np.float64)
        self.z_gt = np.asarray(z_gt, dtype=np.float64)
        self.scaled = scaled
        self.y_gt = self.render(self.x_gt)

    def render(self, x) -> np.ndarray:
        return render_depth(bind_state(self.spec, x, self.z_gt))

    def losses(self, y_obs, states) -> np.ndarray:
        out = []
        for x in _as_states(states):
            if np.array_equal(x, self.x_gt):
                out.append(0.0)
            else:
                out.append(similarity(self.render(x), self.y_gt))
        return np.array(out)


def synthetic_and_synthetic(x_gt, z_gt, x, spec: ScenarioSpec) -> float:
    return SyntheticAndSynthetic(spec, x_gt, z_gt)(None, x)


def unit_scale(values, lo: float = 0.0) -> np.ndarray:
    """Min-max map onto ``[lo, 1]``; a constant input maps to all ``lo``."""
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    if span == 0:
        return np.full(v.shape, lo)
    return lo + (1.0 - lo) * (v - v.min()) / span


def loss_to_weight(losses, scaling: bool = False) -> np.ndarray:
    """Normalized weights proportional to 1/loss, with losses floored at 1e-9.

    With ``scaling`` the losses are first min-max scaled to ``[1e-3, 1]``.
    """
    v = np.asarray(losses, dtype=np.float64)
    if v.size == 0:
        raise ValueError("loss_to_weight needs at least one loss")
    if scaling:
        v = unit_scale(v, SCALE_DELTA)
    inv = 1.0 / np.maximum(v, LOSS_FLOOR)
    return inv / inv.sum()


@dataclass(frozen=True)
class SweepRow:
    axis: str
    offset: float
    raw_loss: float
    scaled_loss: float


def sweep(ev: Evaluator, spec: ScenarioSpec, y_obs, x_gt, axes, half_ranges, steps: int = 21) -> list[SweepRow]:
    """Evaluate ``ev`` along each axis around ``x_gt``; ``scaled_loss`` is min-max scaled per axis."""
    if np.isscalar(half_ranges):
        half_ranges = [half_ranges] * len(axes)
    if len(half_ranges) != len(axes):
        raise ValueError("need one half-range per axis")
    rows = []
    for axis, half in zip(axes, half_ranges):
        states = sweep_axis(spec, x_gt, axis, half, steps)
        raw = ev.losses(y_obs, np.stack(states))
        scaled = unit_scale(raw)
        offsets = np.linspace(-half, half, steps)
        offsets[steps // 2] = 0.0
        rows += [SweepRow(str(axis), float(o), float(r), float(s)) for o, r, s in zip(offsets, raw, scaled)]
    return rows


def sweep_argmin(rows: list[SweepRow], axis) -> int:
    """Step index of the minimum raw loss along ``axis`` (first one on ties)."""
    return int(np.argmin([r.raw_loss for r in rows if r.axis == str(axis)]))


def rows_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["axis", "offset", "raw_loss", "scaled_loss"])
    for r in rows:
        w.writerow([r.axis, repr(r.offset), repr(r.raw_loss), repr(r.scaled_loss)])
    return buf.getvalue()
