"""Training loop: joint triplet + view-prediction + classification
objective, Adam updates, per-epoch loss logging, checkpoints, and a
finite-difference gradient verifier."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .. import container
from ..cluster import LatentSpace
from . import autodiff as ad
from .autodiff import Tensor
from .augment import random_view
from .layers import Conv2d, Linear
from .losses import bce_loss, neg_cosine, self_supervised_loss, triplet_loss
from .model import EncoderConfig, PwsModel, Sample, Triplet, sample_image


class TrainingDiverged(RuntimeError):
    pass


class Adam(object):
    """Adaptive-moment gradient step over a fixed parameter list."""

    def __init__(self, params, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.b1, self.b2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            mhat = self.m[i] / (1.0 - self.b1**self.t)
            vhat = self.v[i] / (1.0 - self.b2**self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_triplets(samples: list[Sample], rng: np.random.Generator) -> list[Triplet]:
    """Every sample anchors one triplet; positives prefer the anchor's
    own patient, negatives come from the other class."""
    by_class: dict[str, list[Sample]] = {"C": [], "P": []}
    for s in samples:
        by_class[s.label].append(s)
    if not by_class["C"] or not by_class["P"]:
        raise ValueError("dataset must contain both lesion and control samples")
    if len({s.patient_id for s in samples}) < 2:
        raise ValueError("dataset must span at least two patients")

    triplets = []
    for anchor in samples:
        same = [s for s in by_class[anchor.label] if s is not anchor]
        if not same:
            continue
        own = [s for s in same if s.patient_id == anchor.patient_id]
        pool = own if own else same
        positive = pool[int(rng.integers(len(pool)))]
        other = by_class["P" if anchor.label == "C" else "C"]
        negative = other[int(rng.integers(len(other)))]
        triplets.append(Triplet(anchor, positive, negative))
    return triplets


def _view_batch(samples: list[Sample], config: EncoderConfig, rng: np.random.Generator) -> Tensor:
    imgs = [random_view(sample_image(s, config.depth_norm_um), rng) for s in samples]
    return Tensor(np.stack(imgs))


@dataclass
class TrainResult:
    model: PwsModel
    latent: LatentSpace
    history: list[dict]


def train(dataset: list[Sample], config: EncoderConfig | None = None, log_path=None) -> TrainResult:
    """Fit the encoder on labeled samples and embed them all.

    Minimizes w_tri * triplet + w_sp * view-prediction + w_bc * binary
    cross-entropy with Adam; everything is driven by config.seed, so the
    same call yields bitwise-identical weights. A non-finite loss aborts
    with the offending epoch and batch.
    """
    config = config or EncoderConfig()
    config.validate()
    model = PwsModel(config)
    rng = np.random.default_rng([config.seed, 1])
    optim = Adam(model.parameters(), lr=config.lr, betas=config.betas)

    history: list[dict] = []
    for epoch in range(config.epochs):
        triplets = make_triplets(dataset, rng)
        order = rng.permutation(len(triplets))
        sums = np.zeros(4)
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [triplets[i] for i in order[start : start + config.batch_size]]
            anchors = [t.anchor for t in batch]

            views = [_view_batch(anchors, config, rng) for _ in range(config.views)]
            z_views = [model.embed_images(v) for v in views]
            z_a = z_views[0]
            z_p = model.embed_images(_view_batch([t.positive for t in batch], config, rng))
            z_n = model.embed_images(_view_batch([t.negative for t in batch], config, rng))

            l_tri = triplet_loss(z_a, z_p, z_n, margin=config.margin)
            preds = [model.predict(z) for z in z_views]
            l_sp = self_supervised_loss(preds, z_views, query=0)
            fused, _ = model.aux_fuse(z_a, anchors, train_mode=True, rng=rng)
            labels = np.array([1.0 if s.label == "P" else 0.0 for s in anchors])
            l_bc = bce_loss(model.classify(fused), labels)

            total = l_tri * config.w_tri + l_sp * config.w_sp + l_bc * config.w_bc
            if not np.isfinite(total.item()):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch}, batch {n_batches}"
                )
            model.zero_grad()
            total.backward()
            optim.step()
            sums += (l_tri.item(), l_sp.item(), l_bc.item(), total.item())
            n_batches += 1

        mean = sums / max(n_batches, 1)
        history.append(
            {
                "epoch": epoch,
                "triplet": float(mean[0]),
                "simsiam": float(mean[1]),
                "bce": float(mean[2]),
                "total": float(mean[3]),
            }
        )

    first = [h["total"] for h in history[:5]]
    if len(first) >= 2 and any(b >= a for a, b in zip(first, first[1:])):
        warnings.warn("training loss did not strictly decrease over the first epochs")

    if log_path is not None:
        lines = ["epoch,triplet,simsiam,bce,total"]
        for h in history:
            lines.append(
                f"{h['epoch']},{h['triplet']:.10g},{h['simsiam']:.10g},{h['bce']:.10g},{h['total']:.10g}"
            )
        container.atomic_write_text(log_path, "\n".join(lines) + "\n")

    return TrainResult(model=model, latent=encode_all(model, dataset), history=history)


def encode_all(model: PwsModel, samples: list[Sample]) -> LatentSpace:
    """Eval-mode fused embeddings for every sample, in dataset order."""
    embeddings = np.stack([model.full_embedding(s) for s in samples])
    archetypes = [s.archetype_id for s in samples]
    return LatentSpace(
        embeddings=embeddings,
        labels=np.array([s.label for s in samples]),
        patient_ids=np.array([s.patient_id for s in samples]),
        archetype_ids=None if any(a is None for a in archetypes) else np.array(archetypes),
    )


# -- checkpoints -----------------------------------------------------------

_TUPLE_FIELDS = ("conv_channels", "frame_channels", "betas")


def _config_dict(config: EncoderConfig) -> dict:
    d = asdict(config)
    for key in _TUPLE_FIELDS:
        d[key] = list(d[key])
    return d


def save_checkpoint(path, model: PwsModel) -> None:
    named = model.named_parameters()
    cfg = _config_dict(model.config)
    header = {
        "kind": "checkpoint",
        "config": cfg,
        "config_hash": container.sha256_bytes(container.canonical_json(cfg)),
        "seed": model.config.seed,
        "dtype": "float64",
        "params": [{"name": n, "shape": list(p.data.shape)} for n, p in named],
    }
    payload = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for _, p in named)
    container.write_blob(path, header, payload)


def load_checkpoint(path) -> PwsModel:
    header, payload = container.read_blob(path)
    if header.get("kind") != "checkpoint":
        raise container.ContainerError(f"{path}: not a checkpoint")
    cfg = dict(header["config"])
    for key in _TUPLE_FIELDS:
        cfg[key] = tuple(cfg[key])
    config = EncoderConfig(**cfg)
    expected_hash = container.sha256_bytes(container.canonical_json(header["config"]))
    if header.get("config_hash") != expected_hash:
        raise container.ContainerError(f"{path}: config hash mismatch")
    model = PwsModel(config)
    named = model.named_parameters()
    manifest = header["params"]
    if [m["name"] for m in manifest] != [n for n, _ in named]:
        raise container.ContainerError(f"{path}: parameter manifest does not match architecture")
    offset = 0
    for meta, (name, p) in zip(manifest, named):
        shape = tuple(meta["shape"])
        if shape != p.data.shape:
            raise container.ContainerError(
                f"{path}: parameter {name} has shape {shape}, expected {p.data.shape}"
            )
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = payload[offset : offset + n_bytes]
        if len(chunk) != n_bytes:
            raise container.ContainerError(f"{path}: parameter blob truncated at {name}")
        p.data = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += n_bytes
    if offset != len(payload):
        raise container.ContainerError(f"{path}: {len(payload) - offset} trailing payload bytes")
    return model


# -- gradient verification -------------------------------------------------


def _fd_max_rel_err(params: list[Tensor], forward, h: float = 1e-5) -> float:
    """Compare analytic gradients of forward() against central
    differences, entry by entry, and return the worst relative error."""
    for p in params:
        p.grad = None
    loss = forward()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = ana.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            fp = forward().item()
            flat[i] = keep - h
            fm = forward().item()
            flat[i] = keep
            numeric = (fp - fm) / (2.0 * h)
            denom = max(abs(numeric), abs(aflat[i]), 1e-6)
            worst = max(worst, abs(numeric - aflat[i]) / denom)
    return worst


def _micro_config() -> EncoderConfig:
    return EncoderConfig(
        conv_channels=(3, 4),
        embed_dim=4,
        projector_hidden=5,
        predictor_hidden=3,
        aux_dim=3,
        frame_channels=(2,),
        seed=7,
    )


def _micro_samples(rng: np.random.Generator, n: int = 2) -> list[Sample]:
    out = []
    for i in range(n):
        out.append(
            Sample(
                enface=rng.random((6, 6)),
                depthmap=rng.random((6, 6)) * 400.0,
                oct_frames=[rng.random((5, 5)) for _ in range(2)],
                gender=i % 2,
                age=30.0 + 10 * i,
                patient_id=f"p{i}",
                label="P" if i % 2 else "C",
            )
        )
    return out


def grad_check(component: str = "composite", h: float = 1e-5) -> float:
    """Max relative error between analytic and numeric gradients for one
    block, on a fixed seeded micro-input in 64-bit.

    Stop-gradient targets are frozen at their initial values during the
    numeric sweep, which is exactly what the analytic gradient claims to
    differentiate.
    """
    rng = np.random.default_rng(42)

    if component == "linear":
        layer = Linear(4, 3, rng)
        x = Tensor(rng.random((5, 4)) - 0.5)

        def forward():
            return ad.tsum(layer(x) ** 2.0)

        return _fd_max_rel_err(layer.parameters(), forward, h)

    if component == "conv":
        layer = Conv2d(2, 3, 3, rng, stride=2, padding=1)
        x = Tensor(rng.random((2, 2, 6, 6)) - 0.5)

        def forward():
            return ad.tsum(ad.conv2d(x, layer.weight, layer.bias, stride=2, padding=1) ** 2.0)

        return _fd_max_rel_err(layer.parameters(), forward, h)

    if component == "attention":
        model = PwsModel(_micro_config())
        samples = _micro_samples(rng)
        e = Tensor(rng.random((len(samples), model.config.embed_dim)) - 0.5)
        aux_params = []
        for name, p in model.named_parameters():
            if name.split(".")[0] in (
                "frame_blocks",
                "frame_proj",
                "gender_proj",
                "age_proj",
                "q_proj",
                "k_proj",
                "v_proj",
                "o_proj",
                "classifier",
            ):
                aux_params.append(p)

        def forward():
            fused, _ = model.aux_fuse(e, samples, train_mode=False)
            return ad.tsum(model.classify(fused) ** 2.0)

        return _fd_max_rel_err(aux_params, forward, h)

    if component == "triplet":
        layer = Linear(4, 3, rng)
        xa, xp, xn = (Tensor(rng.random((2, 4)) - 0.5) for _ in range(3))

        def forward():
            return triplet_loss(layer(xa), layer(xp), layer(xn), margin=1.0)

        return _fd_max_rel_err(layer.parameters(), forward, h)

    if component == "simsiam":
        model = PwsModel(_micro_config())
        v0 = Tensor(rng.random((2, 2, 6, 6)))
        v1 = Tensor(rng.random((2, 2, 6, 6)))
        # frozen targets: stop-gradient treats projections as constants
        frozen = [Tensor(model.embed_images(v).data.copy()) for v in (v0, v1)]

        def forward():
            zs = [model.embed_images(v0), model.embed_images(v1)]
            ps = [model.predict(z) for z in zs]
            return (
                neg_cosine(ps[0], frozen[1]) * 0.5 + neg_cosine(ps[1], frozen[0]) * 0.5
            )

        return _fd_max_rel_err(model.parameters(), forward, h)

    if component == "bce":
        layer = Linear(4, 1, rng)
        x = Tensor(rng.random((6, 4)) - 0.5)
        labels = rng.integers(0, 2, size=6).astype(float)

        def forward():
            return bce_loss(layer(x), labels)

        return _fd_max_rel_err(layer.parameters(), forward, h)

    if component == "composite":
        config = _micro_config()
        model = PwsModel(config)
        samples = _micro_samples(rng, n=4)
        imgs = [Tensor(np.stack([sample_image(s, config.depth_norm_um) for s in samples[:2]]))
                for _ in range(2)]
        pos = Tensor(np.stack([sample_image(s, config.depth_norm_um) for s in samples[2:4]]))
        neg = Tensor(np.stack([sample_image(s, config.depth_norm_um) for s in samples[::-1][:2]]))
        labels = np.array([0.0, 1.0])
        frozen = [Tensor(model.embed_images(v).data.copy()) for v in imgs]

        def forward():
            zs = [model.embed_images(v) for v in imgs]
            ps = [model.predict(z) for z in zs]
            l_sp = neg_cosine(ps[0], frozen[1]) * 0.5 + neg_cosine(ps[1], frozen[0]) * 0.5
            l_tri = triplet_loss(zs[0], model.embed_images(pos), model.embed_images(neg), margin=1.0)
            fused, _ = model.aux_fuse(zs[0], samples[:2], train_mode=False)
            l_bc = bce_loss(model.classify(fused), labels)
            return l_tri + l_sp + l_bc

        return _fd_max_rel_err(model.parameters(), forward, h)

    raise ValueError(
        f"unknown component {component!r}; expected one of linear, conv, attention, "
        "triplet, simsiam, bce, composite"
    )
