"""Primed training pairs and the minibatch stream feeding training.

A primed pair renders two modeled states ``x1``, ``x2`` under one shared
unmodeled draw ``z``.  Everything is keyed by integer seeds so the stream is
reproducible regardless of how many worker threads render samples or how
far the producer runs ahead of the consumer.
"""

from __future__ import annotations

import itertools
import json
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .render import render_segmentation, render_with_ids
from .scene import ScenarioSpec, bind_state, sample_state, sample_unmodeled, scenario_to_dict

# seed-stream namespaces
_TRAIN, _VALID, _ORDER, _NOISE = 0, 1, 2, 3


@dataclass
class PrimedSample:
    y1: np.ndarray
    y2: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    mask2: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class NoiseConfig:
    dropout_prob: float = 0.0
    gaussian_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError(f"dropout_prob must be in [0, 1], got {self.dropout_prob}")
        if self.gaussian_sigma < 0:
            raise ValueError(f"gaussian_sigma must be >= 0, got {self.gaussian_sigma}")


def _target_mask(spec: ScenarioSpec, scene, index: np.ndarray) -> np.ndarray:
    targets = spec.target_ids
    is_target = np.array([p.object_id in targets for p in scene.primitives] + [False])
    return is_target[index]


def make_primed_pair(spec: ScenarioSpec, seed, mask_union: bool = False, x1=None, x2=None) -> PrimedSample:
    """Render ``y1 = f(x1, z)`` and ``y2 = f(x2, z)`` for one shared ``z``.

    ``mask2`` marks target pixels of ``y2``; with ``mask_union`` the target
    pixels of ``y1`` (the footprint vacated by ``x1``) are labeled too.
    """
    sz, s1, s2 = np.random.SeedSequence(seed).spawn(3)
    z = sample_unmodeled(spec, np.random.default_rng(sz))
    x1 = sample_state(spec, np.random.default_rng(s1)) if x1 is None else np.asarray(x1, dtype=np.float64)
    x2 = sample_state(spec, np.random.default_rng(s2)) if x2 is None else np.asarray(x2, dtype=np.float64)
    scene2 = bind_state(spec, x2, z)
    y2, idx2 = render_with_ids(scene2)
    mask2 = _target_mask(spec, scene2, idx2)
    if np.array_equal(x1, x2):
        y1 = y2.copy()
        mask1 = mask2
    else:
        scene1 = bind_state(spec, x1, z)
        y1, idx1 = render_with_ids(scene1)
        mask1 = _target_mask(spec, scene1, idx1)
    if mask_union:
        mask2 = mask2 | mask1
    return PrimedSample(y1, y2, x1, x2, mask2, z)


def target_footprint(spec: ScenarioSpec, x, z) -> np.ndarray:
    return render_segmentation(bind_state(spec, x, z), spec.target_ids)


def inject_noise(y: np.ndarray, cfg: NoiseConfig, seed, max_depth: float) -> np.ndarray:
    """Drop pixels to 0 with ``dropout_prob``; add Gaussian noise to the rest, clamped to (0, max_depth]."""
    if cfg.dropout_prob == 0.0 and cfg.gaussian_sigma == 0.0:
        return y.copy()
    rng = np.random.default_rng(seed)
    drop = rng.random(y.shape) < cfg.dropout_prob
    out = y.astype(np.float64)
    if cfg.gaussian_sigma > 0:
        out = out + rng.normal(0.0, cfg.gaussian_sigma, y.shape)
        out = np.clip(out, 1e-6, max_depth)
    out[drop] = 0.0
    return out.astype(y.dtype)


@dataclass
class Minibatch:
    y1: np.ndarray  # (B, H, W), noise applied
    y2: np.ndarray
    x1: np.ndarray  # (B, D)
    x2: np.ndarray
    mask2: np.ndarray  # (B, H, W) bool
    epoch: int
    index: int
    sample_ids: np.ndarray


def batches_per_epoch(epoch_size: int, reuse: int, batch: int) -> int:
    if epoch_size <= 0 or reuse <= 0 or batch <= 0:
        raise ValueError("epoch_size, reuse and batch must be positive")
    if epoch_size % batch:
        raise ValueError(f"epoch_size {epoch_size} is not divisible by batch size {batch}")
    return epoch_size * reuse // batch


def _epoch_batches(samples, epoch, reuse, batch, seed, noise, max_depth):
    n = len(samples)
    k = 0
    for r in range(reuse):
        order = np.random.default_rng([seed, _ORDER, epoch, r]).permutation(n)
        for start in range(0, n, batch):
            ids = order[start:start + batch]
            chosen = [samples[i] for i in ids]
            y1 = np.stack([inject_noise(s.y1, noise, [seed, _NOISE, epoch, r, int(i)], max_depth)
                           for s, i in zip(chosen, ids)])
            yield Minibatch(
                y1=y1,
                y2=np.stack([s.y2 for s in chosen]),
                x1=np.stack([s.x1 for s in chosen]),
                x2=np.stack([s.x2 for s in chosen]),
                mask2=np.stack([s.mask2 for s in chosen]),
                epoch=epoch,
                index=k,
                sample_ids=ids,
            )
            k += 1


_DONE = object()


def dataset_stream(
    spec: ScenarioSpec,
    epoch_size: int,
    reuse: int,
    batch: int,
    seed: int,
    epochs: int | None = None,
    noise: NoiseConfig = NoiseConfig(),
    workers: int = 1,
    buffer: int = 4,
    mask_union: bool = False,
    source: Sequence[PrimedSample] | None = None,
) -> Iterator[Minibatch]:
    """Yield ``epoch_size * reuse / batch`` minibatches per epoch.

    Each epoch draws ``epoch_size`` fresh pairs (or the next slice of
    ``source``) and replays them ``reuse`` times, reshuffled each time.  With
    ``buffer > 0`` a producer thread renders ahead, holding at most
    ``buffer`` minibatches; ``buffer=0`` runs inline.
    """
    batches_per_epoch(epoch_size, reuse, batch)
    if source is not None and len(source) == 0:
        raise ValueError("stored dataset is empty")
    max_depth = spec.camera.max_depth
    epoch_ids = range(epochs) if epochs is not None else itertools.count()

    def sample_jobs(pool, epoch):
        if source is not None:
            return [source[(epoch * epoch_size + i) % len(source)] for i in range(epoch_size)]
        seeds = [[seed, _TRAIN, epoch, i] for i in range(epoch_size)]
        if pool is None:
            return [make_primed_pair(spec, s, mask_union) for s in seeds]
        return [pool.submit(make_primed_pair, spec, s, mask_union) for s in seeds]

    def resolve(jobs):
        return [j.result() if hasattr(j, "result") else j for j in jobs]

    if buffer <= 0:
        with ThreadPoolExecutor(workers) if workers > 1 else _nullpool() as pool:
            for e in epoch_ids:
                samples = resolve(sample_jobs(pool, e))
                yield from _epoch_batches(samples, e, reuse, batch, seed, noise, max_depth)
        return

    q: queue.Queue = queue.Queue(maxsize=buffer)
    stop = threading.Event()

    def put(item) -> bool:
        while not stop.is_set():
            try:
                q.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def producer():
        try:
            with ThreadPoolExecutor(max(1, workers)) as pool:
                it = iter(epoch_ids)
                e = next(it, None)
                jobs = sample_jobs(pool, e) if e is not None else None
                while e is not None and not stop.is_set():
                    samples = resolve(jobs)
                    nxt = next(it, None)
                    jobs = sample_jobs(pool, nxt) if nxt is not None else None  # render ahead
                    for mb in _epoch_batches(samples, e, reuse, batch, seed, noise, max_depth):
                        if not put(mb):
                            return
                    e = nxt
            put(_DONE)
        except BaseException as exc:  # surfaced in the consumer
            put(exc)

    thread = threading.Thread(target=producer, daemon=True)
    thread.start()
    try:
        while True:
            item = q.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        thread.join(timeout=5.0)


class _nullpool:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def validation_samples(spec: ScenarioSpec, n: int, seed: int, mask_union: bool = False) -> list[PrimedSample]:
    """Pairs from a seed namespace the training stream never draws from."""
    return [make_primed_pair(spec, [seed, _VALID, i], mask_union) for i in range(n)]


# ---------------------------------------------------------------------------
# on-disk datasets


def write_dataset(directory, spec: ScenarioSpec, count: int, seed: int, mask_union: bool = False,
                  workers: int = 1) -> Path:
    """Render ``count`` pairs (the first ``count`` training slots of ``seed``) as ``.npz`` records."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seeds = [[seed, _TRAIN, 0, i] for i in range(count)]
    with ThreadPoolExecutor(max(1, workers)) as pool:
        samples = pool.map(lambda s: make_primed_pair(spec, s, mask_union), seeds)
        records = []
        for i, s in enumerate(samples):
            name = f"record_{i:06d}.npz"
            np.savez(directory / name, y1=s.y1, y2=s.y2, x1=s.x1, x2=s.x2, mask2=s.mask2, z=s.z)
            records.append(name)
    manifest = {"format": "dmu-primed-pairs", "version": 1, "count": count, "seed": seed,
                "mask_union": mask_union, "scenario": scenario_to_dict(spec), "records": records}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory


def read_dataset(directory) -> list[PrimedSample]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    out = []
    for name in manifest["records"]:
        with np.load(directory / name) as f:
            out.append(PrimedSample(f["y1"], f["y2"], f["x1"], f["x2"], f["mask2"], f["z"]))
    return out
