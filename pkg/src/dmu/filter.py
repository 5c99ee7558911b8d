"""Particle filter whose measurement update weighs particles with an evaluator.

Per frame: diffuse (predict), weigh by ``1/loss`` and renormalize (measurement
update), then resample systematically when the effective sample size drops
below a fraction of the particle count.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .geometry import quat_from_axis_angle, quat_multiply
from .imageio import read_pfm
from .likelihood import Evaluator, loss_to_weight
from .presets import OCCLUSION_TRUTH, occlusion
from .render import render_depth, render_segmentation
from .scene import ScenarioSpec, bind_state


class DegeneracyError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Particle:
    state: np.ndarray
    weight: float


@dataclass
class ParticleSet:
    states: np.ndarray  # (n, D)
    weights: np.ndarray  # (n,)
    eta: float = 1.0

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.weights) != len(self.states):
            raise ValueError(f"{len(self.states)} states but {len(self.weights)} weights")
        if np.any(self.weights < 0):
            raise ValueError("particle weights must be non-negative")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def particles(self) -> list[Particle]:
        return [Particle(s.copy(), float(w)) for s, w in zip(self.states, self.weights)]

    def mean(self) -> np.ndarray:
        return self.weights @ self.states / self.weights.sum()

    def copy(self) -> ParticleSet:
        return ParticleSet(self.states.copy(), self.weights.copy(), self.eta)


@dataclass
class FilterConfig:
    n_particles: int = 100
    sigma: Sequence[float] | float = 0.0  # per state DOF (quaternion DOFs: axis-angle std in rad)
    ess_fraction: float = 0.5
    seed: int = 0

    def validate(self) -> list[str]:
        problems = []
        if self.n_particles < 2:
            problems.append(f"n_particles must be >= 2, got {self.n_particles}")
        if np.any(np.asarray(self.sigma, dtype=float) < 0):
            problems.append("process noise sigma must be >= 0")
        if not 0.0 <= self.ess_fraction <= 1.0:
            problems.append(f"ess_fraction must be in [0, 1], got {self.ess_fraction}")
        return problems


def _rng(seed, *keys) -> np.random.Generator:
    return np.random.default_rng([seed, *keys])


def init(config: FilterConfig, prior: Callable[[np.random.Generator, int], np.ndarray]) -> ParticleSet:
    """``n`` particles drawn from ``prior(rng, n)`` with uniform weights."""
    problems = config.validate()
    if problems:
        raise ValueError("; ".join(problems))
    n = config.n_particles
    states = np.asarray(prior(_rng(config.seed, 0), n), dtype=np.float64)
    return ParticleSet(states, np.full(n, 1.0 / n))


def line_prior(lo, hi, axis: int = 0):
    """Uniform prior on a segment from state ``lo`` to ``hi``, varying only along ``axis``."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)

    def sample(rng, n):
        out = np.tile(lo, (n, 1))
        out[:, axis] = rng.uniform(lo[axis], hi[axis], n)
        return out

    return sample


def _noise_layout(spec: ScenarioSpec | None, dim: int, sigma) -> list[tuple[slice, float, bool]]:
    """(component slice, sigma, is_quaternion) per DOF."""
    if spec is None:
        s = np.broadcast_to(np.asarray(sigma, dtype=float), (dim,))
        return [(slice(i, i + 1), float(s[i]), False) for i in range(dim)]
    s = np.broadcast_to(np.asarray(sigma, dtype=float), (len(spec.state),))
    out, i = [], 0
    for d, sd in zip(spec.state, s):
        out.append((slice(i, i + d.size), float(sd), d.kind == "quat"))
        i += d.size
    return out


def predict(ps: ParticleSet, config: FilterConfig, seed, spec: ScenarioSpec | None = None) -> ParticleSet:
    """Independent Gaussian diffusion per DOF; quaternions get a random small rotation."""
    rng = np.random.default_rng(seed)
    states = ps.states.copy()
    n = len(ps)
    for sl, sd, is_quat in _noise_layout(spec, states.shape[1], config.sigma):
        if sd == 0.0:
            continue
        if is_quat:
            rotvec = rng.normal(0.0, sd, (n, 3))
            for k in range(n):
                angle = np.linalg.norm(rotvec[k])
                if angle > 0:
                    q = quat_multiply(states[k, sl], quat_from_axis_angle(rotvec[k] / angle, angle))
                    states[k, sl] = q / np.linalg.norm(q)
        else:
            states[:, sl] += rng.normal(0.0, sd, (n, sl.stop - sl.start))
    return ParticleSet(states, ps.weights.copy(), ps.eta)


def measurement_update(ps: ParticleSet, y_obs, ev: Evaluator) -> ParticleSet:
    """Multiply prior weights by ``loss_to_weight`` of the evaluator losses and renormalize."""
    if len(ps) == 0:
        raise ValueError("empty particle set")
    losses = np.asarray(ev.losses(y_obs, ps.states), dtype=np.float64)
    if not np.all(np.isfinite(losses)):
        raise DegeneracyError("evaluator returned non-finite losses")
    post = ps.weights * loss_to_weight(losses, ev.scaled)
    eta = float(post.sum())
    if not eta > 0 or not np.isfinite(eta):
        raise DegeneracyError("all particle weights vanished in the measurement update")
    return ParticleSet(ps.states.copy(), post / eta, eta)


def ess(ps: ParticleSet) -> float:
    return float(1.0 / np.sum(ps.weights ** 2))


def systematic_indices(weights, u0: float) -> np.ndarray:
    """Offspring parent indices for one uniform offset ``u0`` in ``[0, 1/n)``."""
    w = np.asarray(weights, dtype=np.float64)
    n = len(w)
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    positions = u0 + np.arange(n) / n
    return np.minimum(np.searchsorted(cdf, positions, side="right"), n - 1)


def resample_systematic(ps: ParticleSet, seed) -> ParticleSet:
    n = len(ps)
    u0 = np.random.default_rng(seed).uniform(0.0, 1.0 / n)
    idx = systematic_indices(ps.weights, u0)
    return ParticleSet(ps.states[idx].copy(), np.full(n, 1.0 / n), ps.eta)


@dataclass
class Snapshot:
    frame: int
    states: np.ndarray
    weights: np.ndarray
    eta: float
    ess: float
    resampled: bool
    mean: np.ndarray
    metrics: dict = field(default_factory=dict)


def run_sequence(frames, config: FilterConfig, ev: Evaluator | Callable[[int], Evaluator],
                 prior, spec: ScenarioSpec | None = None,
                 metrics: Callable[[int, ParticleSet], dict] | None = None) -> list[Snapshot]:
    """Filter a list of depth images; one snapshot per frame, taken after the measurement update.

    ``ev`` may be a single evaluator or a function of the frame index.
    """
    if len(frames) == 0:
        raise ValueError("run_sequence needs at least one frame")
    ps = init(config, prior)
    snaps = []
    for t, y in enumerate(frames):
        ps = predict(ps, config, [config.seed, 1, t], spec)
        evaluator = ev(t) if callable(ev) and not isinstance(ev, Evaluator) else ev
        try:
            ps = measurement_update(ps, y, evaluator)
        except DegeneracyError as exc:
            raise DegeneracyError(f"frame {t}: {exc}") from exc
        e = ess(ps)
        extra = metrics(t, ps) if metrics is not None else {}
        resample = e < config.ess_fraction * len(ps)
        snaps.append(Snapshot(t, ps.states.copy(), ps.weights.copy(), ps.eta, e, resample, ps.mean(), extra))
        if resample:
            ps = resample_systematic(ps, [config.seed, 2, t])
    return snaps


def load_frames(directory) -> list[np.ndarray]:
    """All ``*.pfm`` depth images of a directory in name order."""
    paths = sorted(Path(directory).glob("*.pfm"))
    if not paths:
        raise FileNotFoundError(f"no .pfm frames in {directory}")
    return [read_pfm(p) for p in paths]


def snapshot_csv(snap: Snapshot, names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([*names, "weight"])
    for s, wt in zip(snap.states, snap.weights):
        w.writerow([*(repr(float(v)) for v in s), repr(float(wt))])
    return buf.getvalue()


def summary_csv(snaps: list[Snapshot], names: Sequence[str]) -> str:
    metric_keys = sorted({k for s in snaps for k in s.metrics})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame", "eta", "ess", "resampled", *(f"mean_{n}" for n in names), *metric_keys])
    for s in snaps:
        w.writerow([s.frame, repr(s.eta), repr(s.ess), int(s.resampled), *(repr(float(v)) for v in s.mean),
                    *(repr(s.metrics.get(k, float("nan"))) for k in metric_keys)])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# scripted three-phase occlusion sequence


@dataclass
class ScriptedSequence:
    spec: ScenarioSpec
    x_true: np.ndarray
    frames: list  # depth images
    z: list  # unmodeled state per frame
    phase: list  # 1, 2 or 3 per frame
    prior: Callable


def occlusion3_sequence(frames_per_phase: int = 5) -> ScriptedSequence:
    """Box hidden behind one of two obstacles; one obstacle is removed, then the other.

    The prior is uniform along a line across the table through the hidden
    position, at table height.
    """
    spec = occlusion()
    x_true = OCCLUSION_TRUTH.copy()
    lo, hi = spec.state[0].range
    prior = line_prior([lo, x_true[1], x_true[2]], [hi, x_true[1], x_true[2]], axis=0)
    frames, zs, phases = [], [], []
    for phase, n_obstacles in ((1, 2), (2, 1), (3, 0)):
        z = np.array([float(n_obstacles)])
        y = render_depth(bind_state(spec, x_true, z))
        for _ in range(frames_per_phase):
            frames.append(y)
            zs.append(z)
            phases.append(phase)
    return ScriptedSequence(spec, x_true, frames, zs, phases, prior)


def hidden_mask(spec: ScenarioSpec, states, z) -> np.ndarray:
    """True where the target at that state has no visible pixel in the scene with ``z``."""
    return np.array([not render_segmentation(bind_state(spec, x, z), spec.target_ids).any() for x in states])


def occlusion3_metrics(seq: ScriptedSequence):
    """Per-frame metrics: mass hidden by the current obstacles, mass hidden by the
    obstacle that stays in phase 2, and posterior-mean translation error."""
    one_obstacle = np.array([1.0])

    def metrics(t: int, ps: ParticleSet) -> dict:
        hidden_now = hidden_mask(seq.spec, ps.states, seq.z[t])
        behind_remaining = hidden_mask(seq.spec, ps.states, one_obstacle)
        return {
            "phase": seq.phase[t],
            "mass_hidden": float(ps.weights[hidden_now].sum()),
            "mass_behind_remaining": float(ps.weights[behind_remaining].sum()),
            "mean_error": float(np.linalg.norm(ps.mean()[:3] - seq.x_true[:3])),
        }

    return metrics


@dataclass
class DemoResult:
    snapshots: list
    phase1_mass: float
    phase2_mass: float
    phase3_error: float
    sequence: ScriptedSequence


def run_occlusion3(evaluator_factory: Callable[[ScriptedSequence], Evaluator],
                   config: FilterConfig | None = None, frames_per_phase: int = 5) -> DemoResult:
    """Run the scripted sequence; phase metrics are read from the last frame of each phase."""
    seq = occlusion3_sequence(frames_per_phase)
    config = config or FilterConfig(sigma=[0.005, 0.0, 0.0])
    snaps = run_sequence(seq.frames, config, evaluator_factory(seq), seq.prior, seq.spec,
                         occlusion3_metrics(seq))
    last = {p: max(i for i, q in enumerate(seq.phase) if q == p) for p in (1, 2, 3)}
    return DemoResult(snaps, snaps[last[1]].metrics["mass_hidden"],
                      snaps[last[2]].metrics["mass_behind_remaining"],
                      snaps[last[3]].metrics["mean_error"], seq)
