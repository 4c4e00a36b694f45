"""Reproducible command-line runs over the full processing chain.

Every command writes its artifacts plus a run manifest (argv, seed,
config hash, input/output hashes, wall time) into --out; replay
re-executes a recorded manifest into a fresh directory and verifies the
outputs are byte-identical. Exit codes: 0 success, 2 usage or validation
error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, container
from .cluster import (
    annotate,
    knn_predict,
    load_cluster_model,
    load_latent,
    save_cluster_model,
    save_latent,
)
from .container import ContainerError
from .learn import EncoderConfig, encode_all, load_checkpoint, save_checkpoint, train
from .metrics import METRIC_NAMES, percent_change
from .phantom import (
    DEFAULT_AXIAL_SPAN_UM,
    DEFAULT_LATERAL_UM,
    CohortSpec,
    PhantomSpec,
    PhantomSpecError,
    PhantomTemplate,
    RoiRecord,
    SurfaceSpec,
    VesselSpec,
    generate_cohort,
    generate_volume,
)
from .pipeline import PipelineConfig, cohort_samples
from .stats import GroupSummary, anova_oneway, tukey_hsd

PROG = "octapws"


class UsageError(Exception):
    """Bad flags or malformed input files; maps to exit code 2."""


# ---------------------------------------------------------------------------
# small formatting helpers

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    container.atomic_write_text(path, buf.getvalue())


def _load_json(path, what: str):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    try:
        return container.read_json(p)
    except ValueError as e:
        raise UsageError(f"{what} {path} is not valid JSON: {e}")


def _reject_unknown(doc: dict, allowed, ctx: str) -> None:
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise UsageError(f"{ctx}: unknown field(s): {', '.join(unknown)}")


def _conv(doc: dict, key: str, conv, ctx: str):
    try:
        return conv(doc[key])
    except (TypeError, ValueError, IndexError) as e:
        raise UsageError(f"{ctx}.{key}: {e}")


def _pair_f(v):
    a, b = v
    return (float(a), float(b))


def _pair_i(v):
    a, b = v
    return (int(a), int(b))


def _dims4(v):
    out = tuple(int(x) for x in v)
    if len(out) != 4:
        raise ValueError(f"expected 4 entries, got {len(out)}")
    return out


# ---------------------------------------------------------------------------
# JSON -> phantom specs

def _surface_from(doc, ctx: str) -> SurfaceSpec:
    if not isinstance(doc, dict):
        raise UsageError(f"{ctx}: must be an object")
    _reject_unknown(doc, ("base_um", "waves", "roughness_um"), ctx)
    kwargs = {}
    if "base_um" in doc:
        kwargs["base_um"] = _conv(doc, "base_um", float, ctx)
    if "waves" in doc:
        kwargs["waves"] = _conv(
            doc, "waves", lambda ws: tuple(tuple(float(x) for x in w) for w in ws), ctx
        )
    if "roughness_um" in doc:
        kwargs["roughness_um"] = _conv(doc, "roughness_um", float, ctx)
    return SurfaceSpec(**kwargs)


def _vessel_from(doc, ctx: str) -> VesselSpec:
    if not isinstance(doc, dict):
        raise UsageError(f"{ctx}: must be an object")
    _reject_unknown(
        doc,
        ("centerline_um", "radius_um", "flow_decorrelation", "intensity_contrast", "mixing_weight"),
        ctx,
    )
    for req in ("centerline_um", "radius_um", "flow_decorrelation"):
        if req not in doc:
            raise UsageError(f"{ctx}.{req}: required")
    kwargs = {
        "centerline_um": _conv(
            doc, "centerline_um", lambda pts: tuple(tuple(float(x) for x in p) for p in pts), ctx
        ),
        "radius_um": _conv(doc, "radius_um", float, ctx),
        "flow_decorrelation": _conv(doc, "flow_decorrelation", float, ctx),
    }
    if "intensity_contrast" in doc:
        kwargs["intensity_contrast"] = _conv(doc, "intensity_contrast", float, ctx)
    if doc.get("mixing_weight") is not None:
        kwargs["mixing_weight"] = _conv(doc, "mixing_weight", float, ctx)
    return VesselSpec(**kwargs)


def _phantom_spec_from(doc, ctx: str) -> PhantomSpec:
    if not isinstance(doc, dict):
        raise UsageError(f"{ctx}: must be an object")
    _reject_unknown(
        doc,
        (
            "dims",
            "pitch",
            "pitch_um",
            "lateral_um",
            "axial_span_um",
            "surface",
            "vessels",
            "attenuation_per_mm",
            "base_intensity",
            "noise_floor",
            "seed",
        ),
        ctx,
    )
    if "dims" not in doc:
        raise UsageError(f"{ctx}.dims: required")
    dims = _conv(doc, "dims", _dims4, ctx)
    if "pitch" in doc or "pitch_um" in doc:
        key = "pitch" if "pitch" in doc else "pitch_um"
        pitch = _conv(doc, key, _pair_f, ctx)
    else:
        lat = _conv(doc, "lateral_um", float, ctx) if "lateral_um" in doc else DEFAULT_LATERAL_UM
        span = (
            _conv(doc, "axial_span_um", float, ctx)
            if "axial_span_um" in doc
            else DEFAULT_AXIAL_SPAN_UM
        )
        if dims[2] < 1:
            raise UsageError(f"{ctx}.dims: depth must be >= 1")
        pitch = (lat, span / dims[2])
    kwargs = {}
    if "surface" in doc:
        kwargs["surface"] = _surface_from(doc["surface"], f"{ctx}.surface")
    if "vessels" in doc:
        if not isinstance(doc["vessels"], (list, tuple)):
            raise UsageError(f"{ctx}.vessels: must be a list")
        kwargs["vessels"] = tuple(
            _vessel_from(v, f"{ctx}.vessels[{i}]") for i, v in enumerate(doc["vessels"])
        )
    for key in ("attenuation_per_mm", "base_intensity", "noise_floor"):
        if key in doc:
            kwargs[key] = _conv(doc, key, float, ctx)
    if "seed" in doc:
        kwargs["seed"] = _conv(doc, "seed", int, ctx)
    return PhantomSpec(dims=dims, pitch=pitch, **kwargs)


_TEMPLATE_CONVS = {
    "dims": _dims4,
    "lateral_um": float,
    "axial_span_um": float,
    "base_depth_um": _pair_f,
    "n_waves": int,
    "wave_amp_um": _pair_f,
    "wave_cycles": _pair_f,
    "roughness_um": _pair_f,
    "n_vessels": _pair_i,
    "radius_um": _pair_f,
    "depth_um": _pair_f,
    "depth_drop_um": _pair_f,
    "decorrelation": _pair_f,
    "contrast": _pair_f,
    "attenuation_per_mm": float,
    "base_intensity": float,
    "noise_floor": float,
}


def _template_from(doc, ctx: str) -> PhantomTemplate:
    if not isinstance(doc, dict):
        raise UsageError(f"{ctx}: must be an object")
    _reject_unknown(doc, _TEMPLATE_CONVS, ctx)
    kwargs = {key: _conv(doc, key, fn, ctx) for key, fn in _TEMPLATE_CONVS.items() if key in doc}
    return PhantomTemplate(**kwargs)


def _cohort_spec_from(doc, ctx: str) -> CohortSpec:
    _reject_unknown(
        doc, ("kind", "n_patients", "rois_per_patient", "archetypes", "covariates", "seed"), ctx
    )
    for req in ("n_patients", "rois_per_patient", "archetypes"):
        if req not in doc:
            raise UsageError(f"{ctx}.{req}: required")
    archetypes = []
    if not isinstance(doc["archetypes"], (list, tuple)):
        raise UsageError(f"{ctx}.archetypes: must be a list")
    for i, pair in enumerate(doc["archetypes"]):
        actx = f"{ctx}.archetypes[{i}]"
        if not isinstance(pair, dict) or set(pair) != {"lesion", "normal"}:
            raise UsageError(f"{actx}: expected an object with 'lesion' and 'normal' templates")
        archetypes.append(
            (_template_from(pair["lesion"], f"{actx}.lesion"), _template_from(pair["normal"], f"{actx}.normal"))
        )
    covariates = None
    if doc.get("covariates") is not None:
        covariates = _conv(
            doc, "covariates", lambda cs: tuple((int(g), float(a)) for g, a in cs), ctx
        )
    return CohortSpec(
        n_patients=_conv(doc, "n_patients", int, ctx),
        rois_per_patient=_conv(doc, "rois_per_patient", int, ctx),
        archetypes=tuple(archetypes),
        covariates=covariates,
        seed=_conv(doc, "seed", int, ctx) if "seed" in doc else 0,
    )


@dataclass
class _ManifestDataset:
    records: tuple


def _dataset_from_manifest(doc, ctx: str) -> _ManifestDataset:
    if doc.get("kind") != "cohort":
        raise UsageError(f"{ctx}: not a cohort manifest (kind={doc.get('kind')!r})")
    if "records" not in doc or not isinstance(doc["records"], list):
        raise UsageError(f"{ctx}.records: required")
    records = []
    for i, rec in enumerate(doc["records"]):
        rctx = f"{ctx}.records[{i}]"
        for req in ("record_id", "patient_id", "roi", "side", "archetype", "gender", "age", "spec"):
            if req not in rec:
                raise UsageError(f"{rctx}.{req}: required")
        records.append(
            RoiRecord(
                record_id=str(rec["record_id"]),
                patient_id=str(rec["patient_id"]),
                roi=int(rec["roi"]),
                side=str(rec["side"]),
                archetype=int(rec["archetype"]),
                gender=int(rec["gender"]),
                age=float(rec["age"]),
                spec=_phantom_spec_from(rec["spec"], f"{rctx}.spec"),
            )
        )
    return _ManifestDataset(records=tuple(records))


# ---------------------------------------------------------------------------
# config parsing

def _pipeline_config_from(doc, ctx: str) -> PipelineConfig:
    if not isinstance(doc, dict):
        raise UsageError(f"{ctx}: must be an object")
    convs = {
        "decorr_kernel": _pair_i,
        "search": int,
        "peak_floor": float,
        "k_id": float,
        "c_id": float,
        "jump_limit": int,
        "smooth_sigma": _pair_f,
        "slab_um": _pair_f,
        "threshold_window": int,
        "norm_percentile": float,
        "enface_smooth_sigma": float,
        "min_feature_px": int,
        "max_hole_px": int,
        "min_branch_px": int,
        "noise_floor": lambda v: None if v is None else float(v),
        "n_frames_keep": int,
    }
    _reject_unknown(doc, convs, ctx)
    kwargs = {key: _conv(doc, key, fn, ctx) for key, fn in convs.items() if key in doc}
    cfg = PipelineConfig(**kwargs)
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(f"{ctx}: {e}")
    return cfg


_ENCODER_TUPLES = {"conv_channels": int, "frame_channels": int, "betas": float}


def _encoder_config_from(doc, ctx: str, seed_override: int | None) -> EncoderConfig:
    if not isinstance(doc, dict):
        raise UsageError(f"{ctx}: must be an object")
    names = set(EncoderConfig.__dataclass_fields__)
    _reject_unknown(doc, names, ctx)
    kwargs = dict(doc)
    for key, conv in _ENCODER_TUPLES.items():
        if key in kwargs:
            kwargs[key] = _conv(kwargs, key, lambda v, c=conv: tuple(c(x) for x in v), ctx)
    if seed_override is not None:
        kwargs["seed"] = seed_override
    try:
        cfg = EncoderConfig(**kwargs)
        cfg.validate()
    except (TypeError, ValueError) as e:
        raise UsageError(f"{ctx}: {e}")
    return cfg


def _nested_config(args, need_encoder: bool):
    """--config for train/cluster/predict: pipeline + encoder + n_frames."""
    doc = _load_json(args.config, "config") if args.config else {}
    _reject_unknown(doc, ("pipeline", "encoder", "n_frames"), "config")
    pipe = _pipeline_config_from(doc.get("pipeline", {}), "config.pipeline")
    n_frames = doc.get("n_frames", 4)
    try:
        n_frames = int(n_frames)
    except (TypeError, ValueError) as e:
        raise UsageError(f"config.n_frames: {e}")
    enc = None
    if need_encoder:
        enc = _encoder_config_from(doc.get("encoder", {}), "config.encoder", getattr(args, "seed", None))
    return pipe, enc, n_frames


def _slab_override(cfg: PipelineConfig, slab: str | None) -> PipelineConfig:
    if slab is None:
        return cfg
    parts = slab.split(":")
    if len(parts) != 2:
        raise UsageError(f"--slab expects 'top:bottom' in um, got {slab!r}")
    try:
        top, bottom = float(parts[0]), float(parts[1])
    except ValueError:
        raise UsageError(f"--slab expects numeric bounds, got {slab!r}")
    from dataclasses import replace

    cfg = replace(cfg, slab_um=(top, bottom))
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(f"--slab: {e}")
    return cfg


# ---------------------------------------------------------------------------
# command results and the manifest wrapper

@dataclass
class CmdResult:
    outputs: list
    inputs: list
    config: dict = field(default_factory=dict)
    seed: int | None = None


def _run_command(args, argv) -> int:
    t0 = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    res: CmdResult = _HANDLERS[args.command](args, out_dir)
    manifest = {
        "kind": "run_manifest",
        "command": args.command,
        "argv": list(argv),
        "tool_version": __version__,
        "seed": res.seed,
        "config": res.config,
        "config_hash": container.sha256_bytes(container.canonical_json(res.config)),
        "inputs": {str(p): container.sha256_file(p) for p in sorted({str(x) for x in res.inputs})},
        "outputs": {rel: container.sha256_file(out_dir / rel) for rel in sorted(res.outputs)},
        "wall_time_s": round(time.monotonic() - t0, 3),
    }
    container.write_json(out_dir / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# phantom

def _metric_row(m) -> list:
    return [getattr(m, name) for name in METRIC_NAMES]


def _cmd_phantom(args, out_dir: Path) -> CmdResult:
    doc = _load_json(args.spec, "spec")
    if not isinstance(doc, dict):
        raise UsageError("spec: top level must be an object")
    kind = doc.get("kind", "single")
    inputs = [args.spec]
    if kind == "single":
        spec = _phantom_spec_from({k: v for k, v in doc.items() if k != "kind"}, "spec")
        vol, gt = generate_volume(spec)
        container.save_volume(out_dir / "volume.bin", vol)
        container.save_mask(out_dir / "truth_footprint.bin", gt.vessel_mask.any(axis=2))
        container.write_array(
            out_dir / "truth_surface.bin", gt.surface_height_um, kind="surface", dtype="float32"
        )
        container.write_json(
            out_dir / "truth.json",
            {
                "true_metrics": gt.true_metrics.as_dict(),
                "per_vessel": [
                    {
                        "endpoint_depths_um": list(pv.endpoint_depths_um),
                        "path_length_um": pv.path_length_um,
                        "radius_um": pv.radius_um,
                    }
                    for pv in gt.per_vessel
                ],
            },
        )
        outputs = ["volume.bin", "truth_footprint.bin", "truth_surface.bin", "truth.json"]
        return CmdResult(outputs=outputs, inputs=inputs, config=doc, seed=spec.seed)
    if kind == "cohort":
        cohort = _cohort_spec_from(doc, "spec")
        try:
            dataset = generate_cohort(cohort)
        except PhantomSpecError as e:
            raise UsageError(f"spec: {e}")
        outputs = []
        rows = []
        for rec in dataset.records:
            vol, gt = dataset.realize(rec)
            rel = f"records/{rec.record_id}.bin"
            container.save_volume(out_dir / rel, vol)
            outputs.append(rel)
            rows.append(
                [rec.record_id, rec.patient_id, rec.roi, rec.side, rec.archetype]
                + _metric_row(gt.true_metrics)
            )
        _write_csv(
            out_dir / "truth_metrics.csv",
            ["record_id", "patient_id", "roi", "side", "archetype", *METRIC_NAMES],
            rows,
        )
        container.write_json(out_dir / "cohort.json", dataset.manifest())
        outputs += ["truth_metrics.csv", "cohort.json"]
        return CmdResult(outputs=outputs, inputs=inputs, config=doc, seed=cohort.seed)
    raise UsageError(f"spec.kind must be 'single' or 'cohort', got {kind!r}")


# ---------------------------------------------------------------------------
# quantify

_META_COLS = ("record_id", "patient_id", "roi", "side", "archetype")


def _cmd_quantify(args, out_dir: Path) -> CmdResult:
    cfg = _pipeline_config_from(
        _load_json(args.config, "config") if args.config else {}, "config"
    )
    cfg = _slab_override(cfg, args.slab)
    inputs = list(args.inputs)
    if args.config:
        inputs.append(args.config)

    entries = []  # (meta dict, volume thunk)
    paths = [Path(p) for p in args.inputs]
    manifest_mode = len(paths) == 1 and paths[0].suffix == ".json"
    if manifest_mode:
        doc = _load_json(paths[0], "cohort manifest")
        dataset = _dataset_from_manifest(doc, "manifest")
        records_dir = paths[0].parent / "records"
        for rec in dataset.records:
            meta = {
                "record_id": rec.record_id,
                "patient_id": rec.patient_id,
                "roi": rec.roi,
                "side": rec.side,
                "archetype": rec.archetype,
            }
            vol_path = records_dir / f"{rec.record_id}.bin"
            if vol_path.exists():
                inputs.append(vol_path)
                entries.append((meta, lambda p=vol_path: container.load_volume(p)))
            else:
                entries.append((meta, lambda s=rec.spec: generate_volume(s)[0]))
    else:
        for p in paths:
            if not p.exists():
                raise UsageError(f"volume not found: {p}")
            meta = {"record_id": p.stem, "patient_id": "", "roi": "", "side": "", "archetype": ""}
            entries.append((meta, lambda q=p: container.load_volume(q)))

    from .pipeline import process_volume

    rows = []
    by_pair: dict[tuple, dict] = {}
    for meta, thunk in entries:
        analysis = process_volume(thunk(), cfg)
        record = analysis.metrics
        rows.append(["absolute", *[meta[c] for c in _META_COLS], *_metric_row(record)])
        if meta["side"] in ("lesion", "normal"):
            by_pair.setdefault((meta["patient_id"], meta["roi"]), {})[meta["side"]] = (meta, record)

    if args.pairing:
        if not manifest_mode:
            for meta, _ in entries:
                print(
                    f"{PROG}: quantify: {meta['record_id']}: no pairing metadata, skipped",
                    file=sys.stderr,
                )
        for key in sorted(by_pair):
            sides = by_pair[key]
            if "lesion" in sides and "normal" in sides:
                meta, lesion = sides["lesion"]
                change = percent_change(lesion, sides["normal"][1])
                rows.append(
                    ["percent_change", meta["record_id"], meta["patient_id"], meta["roi"], "", meta["archetype"], *_metric_row(change)]
                )
            else:
                (meta, _rec) = next(iter(sides.values()))
                print(
                    f"{PROG}: quantify: {meta['record_id']}: unpaired, skipped", file=sys.stderr
                )

    _write_csv(out_dir / "metrics.csv", ["kind", *_META_COLS, *METRIC_NAMES], rows)
    return CmdResult(outputs=["metrics.csv"], inputs=inputs, config=cfg.as_dict())


# ---------------------------------------------------------------------------
# train / cluster / predict

def _cmd_train(args, out_dir: Path) -> CmdResult:
    doc = _load_json(args.inp, "cohort manifest")
    dataset = _dataset_from_manifest(doc, "manifest")
    pipe, enc, n_frames = _nested_config(args, need_encoder=True)
    samples = [s for _, _, s in cohort_samples(dataset, pipe, n_frames=n_frames)]
    result = train(samples, enc)
    save_checkpoint(out_dir / "checkpoint.bin", result.model)
    save_latent(out_dir / "latent.bin", result.latent)
    _write_csv(
        out_dir / "loss_curve.csv",
        ["epoch", "triplet", "simsiam", "bce", "total"],
        [[h["epoch"], h["triplet"], h["simsiam"], h["bce"], h["total"]] for h in result.history],
    )
    inputs = [args.inp] + ([args.config] if args.config else [])
    config = {
        "pipeline": pipe.as_dict(),
        "encoder": {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in vars(enc).items()
        },
        "n_frames": n_frames,
    }
    return CmdResult(
        outputs=["checkpoint.bin", "latent.bin", "loss_curve.csv"],
        inputs=inputs,
        config=config,
        seed=enc.seed,
    )


def _queries_from(args, inputs: list):
    """Latent space either straight from a blob or by encoding a manifest."""
    inp = Path(args.inp)
    if inp.suffix == ".json":
        if not args.ckpt:
            raise UsageError("--ckpt is required when --in is a cohort manifest")
        ckpt = Path(args.ckpt)
        if not ckpt.exists():
            raise UsageError(f"checkpoint not found: {ckpt}")
        doc = _load_json(inp, "cohort manifest")
        dataset = _dataset_from_manifest(doc, "manifest")
        pipe, _, n_frames = _nested_config(args, need_encoder=False)
        model = load_checkpoint(ckpt)
        samples = [s for _, _, s in cohort_samples(dataset, pipe, n_frames=n_frames)]
        inputs.append(ckpt)
        return encode_all(model, samples), pipe
    if not inp.exists():
        raise UsageError(f"latent space not found: {inp}")
    if args.ckpt and not Path(args.ckpt).exists():
        raise UsageError(f"checkpoint not found: {args.ckpt}")
    return load_latent(inp), None


def _type_assignments(latent, model) -> list[int]:
    # exact-match retrieval: every holdout member votes for itself at k=1
    return [int(np.argmax(knn_predict(e, model, k_nn=1))) for e in latent.embeddings]


def _cmd_cluster(args, out_dir: Path) -> CmdResult:
    inputs = [args.inp] + ([args.config] if args.config else [])
    latent, pipe = _queries_from(args, inputs)
    try:
        model = annotate(latent, k=args.k, seed=args.seed, k_nn=args.knn)
    except ValueError as e:
        raise UsageError(f"cluster: {e}")
    save_cluster_model(out_dir / "cluster_model.bin", model)
    types = _type_assignments(latent, model)
    rows = [
        [i, latent.patient_ids[i], latent.labels[i], types[i]]
        for i in range(len(latent))
    ]
    _write_csv(out_dir / "assignments.csv", ["sample_id", "patient_id", "label", "type"], rows)
    sizes = {str(t): types.count(t) for t in range(args.k + 1)}
    container.write_json(
        out_dir / "cluster_summary.json",
        {"k": args.k, "classes": list(range(args.k + 1)), "sizes": sizes},
    )
    config = {"k": args.k, "knn": args.knn}
    if pipe is not None:
        config["pipeline"] = pipe.as_dict()
    return CmdResult(
        outputs=["cluster_model.bin", "assignments.csv", "cluster_summary.json"],
        inputs=inputs,
        config=config,
        seed=args.seed,
    )


def _cmd_predict(args, out_dir: Path) -> CmdResult:
    model_path = Path(args.model)
    if not model_path.exists():
        raise UsageError(f"cluster model not found: {model_path}")
    model = load_cluster_model(model_path)
    inputs = [args.inp, args.model] + ([args.config] if args.config else [])
    latent, pipe = _queries_from(args, inputs)
    k_nn = args.knn if args.knn is not None else model.k_nn
    n_types = int(model.ranking.max()) + 1 if model.ranking.size else 1
    header = ["sample_id", "patient_id", *[f"p_type{t}" for t in range(n_types)], "type"]
    rows = []
    for i, emb in enumerate(latent.embeddings):
        probs = knn_predict(emb, model, k_nn=k_nn)
        rows.append([i, latent.patient_ids[i], *[float(p) for p in probs], int(np.argmax(probs))])
    _write_csv(out_dir / "predictions.csv", header, rows)
    config = {"knn": k_nn}
    if pipe is not None:
        config["pipeline"] = pipe.as_dict()
    return CmdResult(outputs=["predictions.csv"], inputs=inputs, config=config)


# ---------------------------------------------------------------------------
# stats

def _read_table(path) -> tuple[list[str], list[dict]]:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input table not found: {path}")
    with open(p, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise UsageError(f"{path}: empty CSV")
        return list(reader.fieldnames), list(reader)


def _groups_from_summaries(rows, ctx: str) -> dict[str, dict[str, GroupSummary]]:
    out: dict[str, dict[str, GroupSummary]] = {}
    for i, row in enumerate(rows):
        try:
            metric = row["metric"]
            group = row["group"]
            summary = GroupSummary(n=int(row["n"]), mean=float(row["mean"]), std=float(row["std"]))
        except (KeyError, TypeError, ValueError) as e:
            raise UsageError(f"{ctx} row {i + 2}: {e}")
        out.setdefault(metric, {})[group] = summary
    return out


def _groups_from_long(rows, header, group_col: str, ctx: str):
    if group_col not in header:
        raise UsageError(f"{ctx}: no {group_col!r} column; available: {', '.join(header)}")
    metrics = [m for m in METRIC_NAMES if m in header]
    if not metrics:
        raise UsageError(f"{ctx}: no metric columns found; available: {', '.join(header)}")
    values: dict[str, dict[str, list[float]]] = {m: {} for m in metrics}
    for row in rows:
        group = row[group_col]
        for m in metrics:
            cell = (row.get(m) or "").strip()
            if not cell:
                continue
            try:
                values[m].setdefault(group, []).append(float(cell))
            except ValueError:
                raise UsageError(f"{ctx}: non-numeric {m} value {cell!r}")
    out: dict[str, dict[str, GroupSummary]] = {}
    for m in metrics:
        out[m] = {}
        for group, vals in values[m].items():
            x = np.asarray(vals, dtype=float)
            std = float(x.std(ddof=1)) if x.size > 1 else 0.0
            out[m][group] = GroupSummary(n=int(x.size), mean=float(x.mean()), std=std)
    return out


def _cmd_stats(args, out_dir: Path) -> CmdResult:
    header, rows = _read_table(args.inp)
    ctx = str(args.inp)
    if {"metric", "group", "n", "mean", "std"} <= set(header):
        tables = _groups_from_summaries(rows, ctx)
    else:
        tables = _groups_from_long(rows, header, args.group or "group", ctx)

    anova_rows = []
    tukey_rows = []
    chart: dict[str, dict] = {}
    for metric in tables:
        groups = tables[metric]  # insertion order: first appearance in the CSV
        if len(groups) < 2:
            raise UsageError(f"stats: metric {metric}: needs at least two groups, got {len(groups)}")
        names = list(groups)
        summaries = [groups[g] for g in names]
        an = anova_oneway(summaries)
        anova_rows.append(
            [metric, an.F, an.df_between, an.df_within, an.p, "yes" if an.degenerate else "no"]
        )
        tk = tukey_hsd(summaries, alpha=0.05)
        marks = []
        for pc in tk.pairs:
            mark = "*" if pc.significant else "ns"
            tukey_rows.append([metric, names[pc.i], names[pc.j], pc.q, pc.p, mark])
            marks.append((names[pc.i], names[pc.j], mark))
        chart[metric] = {"names": names, "summaries": summaries, "marks": marks}

    _write_csv(
        out_dir / "anova.csv", ["metric", "F", "df_between", "df_within", "p", "degenerate"], anova_rows
    )
    _write_csv(out_dir / "tukey.csv", ["metric", "group_a", "group_b", "q", "p", "mark"], tukey_rows)
    container.atomic_write_text(out_dir / "chart.svg", _render_chart(chart))
    return CmdResult(
        outputs=["anova.csv", "tukey.csv", "chart.svg"],
        inputs=[args.inp],
        config={"group": args.group or "group", "alpha": 0.05},
    )


# ---------------------------------------------------------------------------
# SVG bar chart

_PALETTE = ("#4878a8", "#e49444", "#d1615d", "#85b6b2", "#6a9f58", "#e7ca60", "#a87c9f")


def _render_chart(chart: dict[str, dict]) -> str:
    """Grouped bars (one panel per metric) with std whiskers and pairwise
    significance annotations."""
    plot_h = 150.0
    bar_w, gap = 26.0, 8.0
    left_pad, right_pad = 46.0, 12.0
    n_marks = max((len(p["marks"]) for p in chart.values()), default=0)
    ann_h = 14.0 * n_marks + 8.0
    top = 28.0 + ann_h
    bottom_pad = 34.0
    panel_ws = []
    for metric in chart:
        n = len(chart[metric]["names"])
        panel_ws.append(left_pad + n * (bar_w + gap) + right_pad)
    width = sum(panel_ws) + 10.0
    height = top + plot_h + bottom_pad

    def f(v: float) -> str:
        return f"{v:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{f(width)}" height="{f(height)}" '
        f'viewBox="0 0 {f(width)} {f(height)}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{f(width)}" height="{f(height)}" fill="white"/>',
    ]
    x0 = 5.0
    for pi, metric in enumerate(chart):
        panel = chart[metric]
        names, summaries, marks = panel["names"], panel["summaries"], panel["marks"]
        lo = min(0.0, min(s.mean - s.std for s in summaries))
        hi = max(0.0, max(s.mean + s.std for s in summaries))
        if hi == lo:
            hi = lo + 1.0
        span = hi - lo

        def sy(v: float) -> float:
            return top + (hi - v) / span * plot_h

        # frame and axis labels
        ax_x = x0 + left_pad - 6.0
        parts.append(
            f'<line x1="{f(ax_x)}" y1="{f(top)}" x2="{f(ax_x)}" y2="{f(top + plot_h)}" stroke="#444"/>'
        )
        for v in (lo, 0.0, hi):
            if not lo <= v <= hi:
                continue
            parts.append(
                f'<line x1="{f(ax_x - 3)}" y1="{f(sy(v))}" x2="{f(ax_x)}" y2="{f(sy(v))}" stroke="#444"/>'
            )
            parts.append(
                f'<text x="{f(ax_x - 5)}" y="{f(sy(v) + 3.5)}" text-anchor="end">{v:.4g}</text>'
            )
        if lo <= 0.0 <= hi:
            parts.append(
                f'<line x1="{f(ax_x)}" y1="{f(sy(0.0))}" x2="{f(x0 + panel_ws[pi] - right_pad)}" '
                f'y2="{f(sy(0.0))}" stroke="#999" stroke-dasharray="2,2"/>'
            )
        # bars with error whiskers
        for gi, (name, s) in enumerate(zip(names, summaries)):
            bx = x0 + left_pad + gi * (bar_w + gap)
            color = _PALETTE[gi % len(_PALETTE)]
            y_top = sy(max(s.mean, 0.0))
            y_bot = sy(min(s.mean, 0.0))
            parts.append(
                f'<rect x="{f(bx)}" y="{f(y_top)}" width="{f(bar_w)}" '
                f'height="{f(max(y_bot - y_top, 0.5))}" fill="{color}"/>'
            )
            cx = bx + bar_w / 2.0
            e_lo, e_hi = sy(s.mean - s.std), sy(s.mean + s.std)
            parts.append(
                f'<line x1="{f(cx)}" y1="{f(e_lo)}" x2="{f(cx)}" y2="{f(e_hi)}" stroke="#222"/>'
            )
            for ey in (e_lo, e_hi):
                parts.append(
                    f'<line x1="{f(cx - 4)}" y1="{f(ey)}" x2="{f(cx + 4)}" y2="{f(ey)}" stroke="#222"/>'
                )
            parts.append(
                f'<text x="{f(cx)}" y="{f(top + plot_h + 14)}" text-anchor="middle">{name}</text>'
            )
        # pairwise significance annotations above the panel
        for mi, (ga, gb, mark) in enumerate(marks):
            parts.append(
                f'<text x="{f(x0 + left_pad)}" y="{f(20.0 + 14.0 * mi)}">{ga} vs {gb}: {mark}</text>'
            )
        parts.append(
            f'<text x="{f(x0 + left_pad + (panel_ws[pi] - left_pad - right_pad) / 2)}" '
            f'y="{f(height - 8)}" text-anchor="middle" font-weight="bold">{metric}</text>'
        )
        x0 += panel_ws[pi]
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# replay

def _with_out(argv: list, out: str) -> list:
    new = list(argv)
    for i, tok in enumerate(new):
        if tok == "--out" and i + 1 < len(new):
            new[i + 1] = out
            return new
        if tok.startswith("--out="):
            new[i] = f"--out={out}"
            return new
    raise UsageError("manifest argv has no --out flag to redirect")


def _cmd_replay(args) -> int:
    man = _load_json(args.manifest, "manifest")
    if man.get("kind") != "run_manifest":
        raise UsageError(f"{args.manifest}: not a run manifest")
    for path, digest in sorted(man.get("inputs", {}).items()):
        p = Path(path)
        if not p.exists():
            raise RuntimeError(f"replay input missing: {path}")
        if container.sha256_file(p) != digest:
            raise RuntimeError(f"replay input changed: {path}")
    new_argv = _with_out([str(a) for a in man.get("argv", [])], args.out)
    rc = main(new_argv)
    if rc != 0:
        raise RuntimeError(f"replayed {man.get('command')} exited {rc}")
    out_dir = Path(args.out)
    diffs = []
    for rel, digest in sorted(man.get("outputs", {}).items()):
        p = out_dir / rel
        if not p.exists() or container.sha256_file(p) != digest:
            diffs.append(rel)
    if diffs:
        raise RuntimeError("replay outputs differ: " + ", ".join(diffs))
    return 0


# ---------------------------------------------------------------------------
# parser and entry point

_HANDLERS = {
    "phantom": _cmd_phantom,
    "quantify": _cmd_quantify,
    "train": _cmd_train,
    "cluster": _cmd_cluster,
    "predict": _cmd_predict,
    "stats": _cmd_stats,
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog=PROG,
        description="OCTA phantom generation, vascular quantification, embedding "
        "learning, subtype clustering, retrieval, and statistics with replayable manifests.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="generate a phantom volume or cohort with ground truth")
    ph.add_argument("--spec", required=True, help="JSON spec (kind: single or cohort)")
    ph.add_argument("--out", required=True)

    q = sub.add_parser("quantify", help="compute the six metrics per ROI")
    q.add_argument("--in", dest="inputs", nargs="+", required=True, help="volume files or one cohort manifest")
    q.add_argument("--out", required=True)
    q.add_argument("--config", help="pipeline config JSON")
    q.add_argument("--slab", help="en-face slab override 'top:bottom' in um")
    q.add_argument("--pairing", action="store_true", help="add lesion-vs-normal percent-change rows")

    tr = sub.add_parser("train", help="fit the embedding model on a cohort")
    tr.add_argument("--in", dest="inp", required=True, help="cohort manifest JSON")
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", help="JSON with pipeline/encoder/n_frames sections")
    tr.add_argument("--seed", type=int, help="override the encoder seed")

    cl = sub.add_parser("cluster", help="cluster lesion embeddings into ranked types")
    cl.add_argument("--in", dest="inp", required=True, help="latent blob or cohort manifest")
    cl.add_argument("--ckpt", help="checkpoint (required with a manifest input)")
    cl.add_argument("--out", required=True)
    cl.add_argument("--config", help="JSON with pipeline/n_frames sections")
    cl.add_argument("--k", type=int, default=5)
    cl.add_argument("--knn", type=int, default=5)
    cl.add_argument("--seed", type=int, default=0)

    pr = sub.add_parser("predict", help="k-NN type probabilities for query samples")
    pr.add_argument("--in", dest="inp", required=True, help="latent blob or cohort manifest")
    pr.add_argument("--model", required=True, help="cluster model blob")
    pr.add_argument("--ckpt", help="checkpoint (required with a manifest input)")
    pr.add_argument("--out", required=True)
    pr.add_argument("--config", help="JSON with pipeline/n_frames sections")
    pr.add_argument("--knn", type=int, help="override the stored k_nn")

    st = sub.add_parser("stats", help="ANOVA + Tukey tables and an SVG bar chart")
    st.add_argument("--in", dest="inp", required=True, help="summaries CSV or per-ROI metrics CSV")
    st.add_argument("--out", required=True)
    st.add_argument("--group", help="grouping column for long-form input (default 'group')")

    rp = sub.add_parser("replay", help="re-run a manifest and verify byte-identical outputs")
    rp.add_argument("--manifest", required=True)
    rp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else [str(a) for a in argv]
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as e:
        code = e.code if isinstance(e.code, int) else 2
        return 0 if code == 0 else 2
    try:
        if args.command == "replay":
            return _cmd_replay(args)
        return _run_command(args, argv)
    except UsageError as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 2
    except (PhantomSpecError, ContainerError) as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - boundary of the process
        print(f"{PROG}: {type(e).__name__}: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
