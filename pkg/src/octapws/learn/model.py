"""Two-channel vasculature encoder with auxiliary-token fusion.

The image branch stacks the en-face flow map with its depth map, runs a
small strided conv pyramid, pools, and projects to the embedding. OCT
structural frames, gender, and age enter as three attention tokens whose
weighted sum is added back onto the image embedding (residual), so a
zeroed value projection leaves the image embedding untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Conv2d, Linear, Module, global_avg_pool


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    conv_channels: tuple[int, ...] = (8, 16, 32, 64)
    conv_kernel: int = 3
    conv_stride: int = 2
    embed_dim: int = 32
    projector_hidden: int = 64
    predictor_hidden: int = 16
    aux_dim: int = 16
    frame_channels: tuple[int, ...] = (4, 8)
    depth_norm_um: float = 1000.0
    w_tri: float = 1.0
    w_sp: float = 1.0
    w_bc: float = 1.0
    margin: float = 1.0
    views: int = 2
    frame_drop: float = 0.1
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    batch_size: int = 8
    epochs: int = 30
    seed: int = 0

    def validate(self) -> None:
        if self.embed_dim < 2:
            raise ValueError(f"embed_dim must be >= 2, got {self.embed_dim}")
        if self.views < 2:
            raise ValueError(f"views must be >= 2, got {self.views}")
        if self.margin <= 0:
            raise ValueError(f"margin must be positive, got {self.margin}")
        if not 0.0 <= self.frame_drop < 1.0:
            raise ValueError(f"frame_drop must be in [0, 1), got {self.frame_drop}")
        if len(self.conv_channels) < 1 or any(c < 1 for c in self.conv_channels):
            raise ValueError(f"bad conv_channels {self.conv_channels}")
        if self.depth_norm_um <= 0:
            raise ValueError("depth_norm_um must be positive")


@dataclass
class Sample:
    """One ROI ready for the encoder.

    enface and depthmap are co-registered (H, W) maps; depth values are
    um below the surface with NaN where no vessel was seen. oct_frames
    are structural slices of a common shape. label is "P" for lesion
    skin and "C" for healthy control.
    """

    enface: np.ndarray
    depthmap: np.ndarray
    oct_frames: list[np.ndarray]
    gender: int
    age: float
    patient_id: str
    label: str
    archetype_id: int | None = None

    def __post_init__(self):
        self.enface = np.asarray(self.enface, dtype=float)
        self.depthmap = np.asarray(self.depthmap, dtype=float)
        if self.enface.ndim != 2:
            raise ShapeError(f"enface must be 2-d, got {self.enface.ndim}-d")
        for i, (ne, nd) in enumerate(zip(self.enface.shape, self.depthmap.shape)):
            if ne != nd:
                axis = "height" if i == 0 else "width"
                raise ShapeError(f"depthmap {axis} {nd} does not match enface {axis} {ne}")
        if self.enface.ndim != self.depthmap.ndim:
            raise ShapeError("depthmap must be 2-d like enface")
        if self.gender not in (0, 1):
            raise ValueError(f"gender must be 0 or 1, got {self.gender}")
        if self.label not in ("C", "P"):
            raise ValueError(f"label must be 'C' or 'P', got {self.label!r}")
        if len(self.oct_frames) < 1:
            raise ValueError("need at least one structural frame")
        self.oct_frames = [np.asarray(f, dtype=float) for f in self.oct_frames]
        f0 = self.oct_frames[0].shape
        for i, f in enumerate(self.oct_frames):
            if f.shape != f0:
                raise ShapeError(f"frame {i} shape {f.shape} differs from frame 0 shape {f0}")


@dataclass(frozen=True)
class Triplet:
    anchor: Sample
    positive: Sample
    negative: Sample

    def validate(self) -> None:
        if self.anchor.label != self.positive.label:
            raise ValueError("anchor and positive must share a label")
        if self.anchor.label == self.negative.label:
            raise ValueError("negative must come from the other class")


def sample_image(sample: Sample, depth_norm_um: float) -> np.ndarray:
    """(2, H, W) input: en-face flow plus slab-normalized depth."""
    depth = np.nan_to_num(sample.depthmap, nan=0.0) / depth_norm_um
    return np.stack([sample.enface, depth])


class PwsModel(Module):
    def __init__(self, config: EncoderConfig):
        config.validate()
        self.config = config
        rng = np.random.default_rng([config.seed, 0])
        k, s = config.conv_kernel, config.conv_stride
        pad = k // 2

        chans = (2,) + tuple(config.conv_channels)
        self.blocks = [
            Conv2d(chans[i], chans[i + 1], k, rng, stride=s, padding=pad)
            for i in range(len(config.conv_channels))
        ]
        feat = chans[-1]
        self.proj1 = Linear(feat, config.projector_hidden, rng)
        self.proj2 = Linear(config.projector_hidden, config.embed_dim, rng)
        self.pred1 = Linear(config.embed_dim, config.predictor_hidden, rng)
        self.pred2 = Linear(config.predictor_hidden, config.embed_dim, rng)

        fc = (1,) + tuple(config.frame_channels)
        self.frame_blocks = [
            Conv2d(fc[i], fc[i + 1], k, rng, stride=2, padding=pad)
            for i in range(len(config.frame_channels))
        ]
        self.frame_proj = Linear(fc[-1], config.aux_dim, rng)
        self.gender_proj = Linear(1, config.aux_dim, rng)
        self.age_proj = Linear(1, config.aux_dim, rng)

        self.q_proj = Linear(config.embed_dim, config.aux_dim, rng)
        self.k_proj = Linear(config.aux_dim, config.aux_dim, rng)
        self.v_proj = Linear(config.aux_dim, config.aux_dim, rng)
        self.o_proj = Linear(config.aux_dim, config.embed_dim, rng)
        self.classifier = Linear(config.embed_dim, 1, rng)

    # -- image branch ------------------------------------------------------

    def embed_images(self, x: Tensor) -> Tensor:
        """(N, 2, H, W) -> (N, d) through conv pyramid + projector."""
        h = x
        for block in self.blocks:
            h = ad.relu(block(h))
        h = global_avg_pool(h)
        h = ad.relu(self.proj1(h))
        return self.proj2(h)

    def predict(self, z: Tensor) -> Tensor:
        return self.pred2(ad.relu(self.pred1(z)))

    def batch_images(self, samples: list[Sample]) -> Tensor:
        ref = samples[0]
        for i, s in enumerate(samples):
            if s.enface.shape[0] != ref.enface.shape[0]:
                raise ShapeError(
                    f"sample {i} enface height {s.enface.shape[0]} != {ref.enface.shape[0]}"
                )
            if s.enface.shape[1] != ref.enface.shape[1]:
                raise ShapeError(
                    f"sample {i} enface width {s.enface.shape[1]} != {ref.enface.shape[1]}"
                )
        imgs = np.stack([sample_image(s, self.config.depth_norm_um) for s in samples])
        return Tensor(imgs)

    def encode(self, sample: Sample) -> np.ndarray:
        """Eval-mode image embedding of one sample."""
        return self.embed_images(self.batch_images([sample])).data[0].copy()

    # -- auxiliary branch --------------------------------------------------

    def frame_token(self, frames: list[np.ndarray], train_mode: bool, rng) -> Tensor:
        stackf = np.stack(frames)[:, None, :, :]  # (F, 1, h, w)
        if train_mode and self.config.frame_drop > 0:
            drop = rng.random(len(frames)) < self.config.frame_drop
            if drop.any():
                stackf = stackf.copy()
                stackf[drop] = 0.0
        h: Tensor = Tensor(stackf)
        for block in self.frame_blocks:
            h = ad.relu(block(h))
        tokens = self.frame_proj(global_avg_pool(h))  # (F, aux)
        return ad.tmean(tokens, axis=0, keepdims=True)  # (1, aux)

    def aux_fuse(
        self,
        e: Tensor,
        samples: list[Sample],
        train_mode: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, np.ndarray]:
        """Residual cross-attention of the image embedding over the
        frame/gender/age tokens. Returns (fused embedding, attention
        weights as a plain (N, 3) array)."""
        if train_mode and rng is None:
            raise ValueError("train_mode frame dropping needs an rng")
        frame_tok = ad.concatenate(
            [self.frame_token(s.oct_frames, train_mode, rng) for s in samples], axis=0
        )
        gender = Tensor(np.array([[float(s.gender)] for s in samples]))
        age = Tensor(np.array([[s.age / 100.0] for s in samples]))  # years -> [0, 1]
        tokens = [frame_tok, self.gender_proj(gender), self.age_proj(age)]

        q = self.q_proj(e)
        scale = 1.0 / np.sqrt(self.config.aux_dim)
        scores = [ad.tsum(q * self.k_proj(tok), axis=1, keepdims=True) * scale for tok in tokens]
        attn = ad.softmax(ad.concatenate(scores, axis=1), axis=1)  # (N, 3)
        out = None
        for i, tok in enumerate(tokens):
            term = self.v_proj(tok) * attn[:, i : i + 1]
            out = term if out is None else out + term
        fused = e + self.o_proj(out)
        return fused, attn.data.copy()

    def classify(self, e_fused: Tensor) -> Tensor:
        """(N, d) -> (N, 1) lesion logits."""
        return self.classifier(e_fused)

    def full_embedding(self, sample: Sample) -> np.ndarray:
        """Eval-mode fused embedding (image + auxiliary attention)."""
        e = self.embed_images(self.batch_images([sample]))
        fused, _ = self.aux_fuse(e, [sample], train_mode=False)
        return fused.data[0].copy()
