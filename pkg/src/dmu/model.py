"""Conditional autoencoders mapping (depth image, state) to a depth image.

Two variants share the encoder/decoder:

* ``cae``: encoder -> latent, latent ++ state -> decoder -> image.
* ``cae_generator``: additionally a per-pixel generator paints features from
  the state alone; decoder and generator features are fused by a small
  1x1 output block.

Depth is divided by ``max_depth`` on the way in and multiplied back (and
clamped to ``[0, max_depth]``) on the way out.  States are affinely scaled
per DOF with the offsets/scales stored in the architecture; quaternion
components pass through unchanged.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import checkpoint
from .autodiff.nn import Conv2d, Deconv2d, Linear
from .autodiff.tensor import Tensor, broadcast_to, concat, relu, reshape
from .scene import ScenarioSpec

VARIANTS = ("cae", "cae_generator")


@dataclass
class Architecture:
    variant: str = "cae"
    height: int = 32
    width: int = 64
    state_dim: int = 3
    latent_dim: int = 16
    channels: tuple = (8, 16, 32, 64)
    hidden: tuple = (128, 64)
    decoder_features: int = 8
    generator_width: int = 32
    generator_layers: int = 7
    generator_features: int = 8
    output_width: int = 16
    max_depth: float = 1.5
    state_offset: tuple = ()
    state_scale: tuple = ()
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.hidden = tuple(self.hidden)
        if not self.state_offset:
            self.state_offset = (0.0,) * self.state_dim
        if not self.state_scale:
            self.state_scale = (1.0,) * self.state_dim
        self.state_offset = tuple(float(v) for v in self.state_offset)
        self.state_scale = tuple(float(v) for v in self.state_scale)
        problems = []
        if self.variant not in VARIANTS:
            problems.append(f"variant {self.variant!r} not in {VARIANTS}")
        n = len(self.channels)
        if self.height % 2**n or self.width % 2**n:
            problems.append(f"resolution {self.height}x{self.width} not divisible by 2^{n}")
        if len(self.state_offset) != self.state_dim or len(self.state_scale) != self.state_dim:
            problems.append("state_offset/state_scale length must equal state_dim")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def seed_shape(self) -> tuple[int, int, int]:
        n = len(self.channels)
        return self.channels[-1], self.height >> n, self.width >> n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["hidden"] = list(self.hidden)
        d["state_offset"] = list(self.state_offset)
        d["state_scale"] = list(self.state_scale)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> Architecture:
        return cls(**d)


def state_normalization(spec: ScenarioSpec) -> tuple[tuple, tuple]:
    """Per-DOF (offset, scale) mapping each declared range onto [-1, 1]."""
    offset, scale = [], []
    for d in spec.state:
        if d.kind == "quat":
            offset += [0.0] * 4
            scale += [1.0] * 4
        else:
            lo, hi = d.range
            offset.append(0.5 * (lo + hi))
            scale.append(0.5 * (hi - lo) if hi > lo else 1.0)
    return tuple(offset), tuple(scale)


def desk_architecture(spec: ScenarioSpec, variant: str = "cae", **overrides) -> Architecture:
    """32x64 input, four stride-2 stages, 16-d latent."""
    offset, scale = state_normalization(spec)
    kw = dict(variant=variant, height=32, width=64, state_dim=spec.state_dim, latent_dim=16,
              channels=(8, 16, 32, 64), hidden=(128, 64), max_depth=spec.camera.max_depth,
              state_offset=offset, state_scale=scale)
    kw.update(overrides)
    return Architecture(**kw)


def paper_architecture(spec: ScenarioSpec, variant: str = "cae", **overrides) -> Architecture:
    """128x256 input, six stride-2 stages, 64-d latent."""
    offset, scale = state_normalization(spec)
    kw = dict(variant=variant, height=128, width=256, state_dim=spec.state_dim, latent_dim=64,
              channels=(8, 16, 32, 64, 128, 256), hidden=(512, 256), max_depth=spec.camera.max_depth,
              state_offset=offset, state_scale=scale)
    kw.update(overrides)
    return Architecture(**kw)


class CaeModel:
    def __init__(self, arch: Architecture):
        self.arch = arch
        rng = np.random.default_rng(arch.seed)
        dtype = np.dtype(arch.dtype)
        ch = arch.channels
        self.encoder_convs = [
            Conv2d(1 if i == 0 else ch[i - 1], ch[i], 4, stride=2, coord=(i == 0), rng=rng, dtype=dtype)
            for i in range(len(ch))
        ]
        c, h, w = arch.seed_shape
        sizes = [c * h * w, *arch.hidden, arch.latent_dim]
        self.encoder_linears = [Linear(a, b, rng=rng, dtype=dtype) for a, b in zip(sizes[:-1], sizes[1:])]
        self.seed_linear = Linear(arch.latent_dim + arch.state_dim, c * h * w, rng=rng, dtype=dtype)
        rev = list(reversed(ch))
        out_ch = 1 if arch.variant == "cae" else arch.decoder_features
        dec_ch = rev + [out_ch]
        self.decoder_deconvs = [
            Deconv2d(dec_ch[i], dec_ch[i + 1], 4, stride=2, coord=(i == 0), rng=rng, dtype=dtype)
            for i in range(len(ch))
        ]
        self.generator_convs = []
        self.output_convs = []
        if arch.variant == "cae_generator":
            widths = [arch.state_dim] + [arch.generator_width] * (arch.generator_layers - 1) + [arch.generator_features]
            self.generator_convs = [
                Conv2d(widths[i], widths[i + 1], 1, coord=(i == 0), rng=rng, dtype=dtype)
                for i in range(arch.generator_layers)
            ]
            fused = arch.decoder_features + arch.generator_features
            self.output_convs = [
                Conv2d(fused, arch.output_width, 1, coord=True, rng=rng, dtype=dtype),
                Conv2d(arch.output_width, 1, 1, rng=rng, dtype=dtype),
            ]

    # -- parameters -----------------------------------------------------

    def _layers(self):
        groups = [
            ("encoder.conv", self.encoder_convs),
            ("encoder.linear", self.encoder_linears),
            ("decoder.seed", [self.seed_linear]),
            ("decoder.deconv", self.decoder_deconvs),
            ("generator.conv", self.generator_convs),
            ("output.conv", self.output_convs),
        ]
        for prefix, layers in groups:
            for i, layer in enumerate(layers):
                yield f"{prefix}{i}", layer

    def parameters(self) -> dict[str, Tensor]:
        return {f"{name}.{k}": t for name, layer in self._layers() for k, t in layer.parameters().items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.parameters().items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, t in params.items():
            if arrays[k].shape != t.shape:
                raise ValueError(f"{k}: shape {arrays[k].shape} != {t.shape}")
            t.data[...] = arrays[k]

    def save(self, path) -> None:
        checkpoint.save(path, self.state_dict(), {"architecture": self.arch.to_dict()})

    @classmethod
    def load(cls, path) -> CaeModel:
        arrays, meta = checkpoint.load(path)
        model = cls(Architecture.from_dict(meta["architecture"]))
        model.load_state_dict(arrays)
        return model

    def copy(self) -> CaeModel:
        other = CaeModel(self.arch)
        other.load_state_dict(self.state_dict())
        return other

    # -- differentiable forward (normalized units) ------------------------

    def encoder(self, y: Tensor) -> Tensor:
        h = y
        for conv in self.encoder_convs:
            h = relu(conv(h))
        h = reshape(h, (h.shape[0], -1))
        for lin in self.encoder_linears[:-1]:
            h = relu(lin(h))
        return self.encoder_linears[-1](h)  # linear latent: a ReLU here leaves most units dead

    def decoder(self, latent: Tensor, x: Tensor) -> Tensor:
        n = latent.shape[0]
        h = relu(self.seed_linear(concat([latent, x], axis=1)))
        h = reshape(h, (n, *self.arch.seed_shape))
        last = len(self.decoder_deconvs) - 1
        for i, deconv in enumerate(self.decoder_deconvs):
            h = deconv(h)
            if i < last or self.arch.variant == "cae_generator":
                h = relu(h)
        if self.arch.variant == "cae":
            return h
        g = broadcast_to(reshape(x, (n, self.arch.state_dim, 1, 1)),
                         (n, self.arch.state_dim, self.arch.height, self.arch.width))
        for conv in self.generator_convs:
            g = relu(conv(g))
        out = relu(self.output_convs[0](concat([h, g], axis=1)))
        return self.output_convs[1](out)

    def forward(self, y_norm: Tensor, x_norm: Tensor) -> Tensor:
        """Normalized reconstruction for (N,1,H,W) input and (N,D) normalized states."""
        return self.decoder(self.encoder(y_norm), x_norm)

    # -- numpy API in meters ---------------------------------------------

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.arch.dtype)

    def normalize_depth(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 2:
            y = y[None]
        if y.shape[-2:] != (self.arch.height, self.arch.width):
            raise ValueError(
                f"resolution mismatch: image {y.shape[-2:]} vs model {(self.arch.height, self.arch.width)}")
        return (y / self.arch.max_depth)[:, None].astype(self.dtype)

    def normalize_state(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.arch.state_dim:
            raise ValueError(f"state dimension mismatch: got {x.shape[1]}, model expects {self.arch.state_dim}")
        return ((x - np.array(self.arch.state_offset)) / np.array(self.arch.state_scale)).astype(self.dtype)

    def to_depth(self, out: Tensor) -> np.ndarray:
        return np.clip(out.data[:, 0].astype(np.float64) * self.arch.max_depth, 0.0, self.arch.max_depth)

    def encode(self, y) -> np.ndarray:
        """Latent codes, shape (N, latent_dim), for one (H,W) or a stack (N,H,W) of depth images."""
        return self.encoder(Tensor(self.normalize_depth(y))).data

    def decode(self, latent, x) -> np.ndarray:
        """Depth images (N,H,W) in meters; a single latent is shared by all states."""
        latent = np.atleast_2d(np.asarray(latent, dtype=self.dtype))
        xn = self.normalize_state(x)
        if latent.shape[1] != self.arch.latent_dim:
            raise ValueError(f"latent dimension mismatch: {latent.shape[1]} vs {self.arch.latent_dim}")
        if latent.shape[0] == 1 and xn.shape[0] > 1:
            latent = np.repeat(latent, xn.shape[0], axis=0)
        if latent.shape[0] != xn.shape[0]:
            raise ValueError(f"batch mismatch: {latent.shape[0]} latents vs {xn.shape[0]} states")
        return self.to_depth(self.decoder(Tensor(latent), Tensor(xn)))

    def reconstruct(self, y_in, x_cond) -> np.ndarray:
        """psi(phi(y_in), x) for each row of ``x_cond``; the input is encoded once."""
        return self.decode(self.encode(y_in), x_cond)

    def describe(self) -> dict:
        d = self.arch.to_dict()
        d["parameters"] = int(sum(t.data.size for t in self.parameters().values()))
        return d


def load_model(path) -> CaeModel:
    return CaeModel.load(Path(path))
