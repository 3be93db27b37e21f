"""Command-line harness binding the library into reproducible experiments.

Every subcommand is fully determined by (config, seed); outputs are CSV
files whose bodies are byte-identical across repeated runs. Config files
are flat ``key = value`` text; command-line flags override file values.

Exit codes: 0 success, 2 input/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from . import gan as G
from . import matcher as M
from . import pad as P
from . import quality as Q

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

_METRIC_RANGES = {
    "circularity": (0.0, 1.0),
    "pupil_contrast": (0.0, 1.0),
    "pupil_iris_ratio": (0.0, 1.0),
    "concentricity_offset": (0.0, 1.0),
    "sharpness": (0.0, 100.0),
    "overall": (0.0, 1.0),
}
_CHI2_BINS = 50


class InputError(Exception):
    pass


def _out_dir(args) -> Path:
    if args.out:
        p = Path(args.out)
    else:
        p = Path(os.environ.get("IRISYNTH_OUT", "."))
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_config_file(path) -> dict:
    cfg = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise InputError(f"cannot read config file {path}: {e}") from e
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        cfg[key] = value
    return cfg


_GAN_KEYS = {
    "image_size": int,
    "latent_dim": int,
    "base_channels": int,
    "batch_size": int,
    "learning_rate": float,
    "steps": int,
    "seed": int,
    "quality_gate": lambda v: v.lower() in ("1", "true", "yes", "on"),
    "noise_dist": str,
    "beta1": float,
    "beta2": float,
    "dtype": str,
    "gate_retries": int,
}


def _gan_config(args) -> G.GanConfig:
    values = {}
    if args.config:
        for key, raw in _load_config_file(args.config).items():
            if key not in _GAN_KEYS:
                raise InputError(f"invalid config key {key!r} in {args.config}")
            values[key] = _GAN_KEYS[key](raw)
    for key in _GAN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        return G.GanConfig(**values)
    except ValueError as e:
        raise InputError(str(e)) from e


def _meta_lines(seed, config: dict) -> list[str]:
    blob = ";".join(f"{k}={config[k]}" for k in sorted(config))
    digest = hashlib.sha256(blob.encode()).hexdigest()[:16]
    return [
        f"# irisynth_version={__version__}",
        f"# seed={seed}",
        f"# config_sha256={digest}",
    ]


def _write_csv(path, meta: list[str], header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in meta:
            fh.write(line + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(c) for c in row) + "\n")


def _manifest_or_dir(path) -> list[D.ManifestEntry]:
    p = Path(path)
    if not p.exists():
        raise InputError(f"missing input path {p}")
    if p.is_dir():
        images = sorted(
            q for q in p.iterdir() if q.suffix.lower() in (".pgm", ".png")
        )
        if not images:
            raise InputError(f"no .pgm/.png images in directory {p}")
        return [D.ManifestEntry(q, q.stem, "real", "") for q in images]
    try:
        return D.load_manifest(p)
    except (ValueError, FileNotFoundError) as e:
        raise InputError(str(e)) from e


# -- subcommands -----------------------------------------------------------


def cmd_synth_data(args) -> int:
    out = _out_dir(args)
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 10]))
    entries = []
    for ident in range(args.identities):
        id_seed = int(rng.integers(0, 2**31))
        for k in range(args.per_identity + args.attack_per_identity):
            attack = k >= args.per_identity
            irf = float(rng.uniform(0.36, 0.44))
            ratio = float(rng.uniform(0.32, 0.55))
            dil = float(rng.uniform(0.92, 1.08))
            spec = D.ToyIrisSpec(
                identity_seed=id_seed,
                pupil_radius_frac=ratio * irf / dil,
                iris_radius_frac=irf,
                center_offset=(float(rng.uniform(-1.5, 1.5)), float(rng.uniform(-1.5, 1.5))),
                dilation=dil,
                blur_sigma=float(rng.uniform(1.5, 2.5)) if attack else float(rng.uniform(0.0, 0.8)),
                noise_amplitude=float(rng.uniform(0.04, 0.08)) if attack else float(rng.uniform(0.0, 0.02)),
                occlusion_fraction=float(rng.uniform(0.0, 0.12)),
            )
            img, _ = D.toy_iris(spec, args.size)
            cls = "attack" if attack else "real"
            name = f"id{ident:03d}_{'atk' if attack else 'img'}{k:02d}.pgm"
            D.write_image(out / name, img)
            entries.append(D.ManifestEntry(out / name, f"id{ident:03d}", cls, ""))
    D.save_manifest(out / "manifest.csv", entries)
    print(f"wrote {len(entries)} images and manifest.csv to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _gan_config(args)
    entries = [e for e in _manifest_or_dir(args.data) if e.cls == "real"]
    if not entries:
        raise InputError(f"no real-class images in {args.data}")
    pool = []
    for e in entries:
        img = D.read_image(e.path)
        if img.pixels.shape != (cfg.image_size, cfg.image_size):
            raise InputError(
                f"{e.path}: image is {img.pixels.shape}, config wants "
                f"{cfg.image_size}x{cfg.image_size}"
            )
        pool.append(img)
    quality_fn = lambda im: Q.quality_report(im).overall
    gen, _disc, log = G.train(cfg, pool, quality_fn)
    out = _out_dir(args)
    ckpt = out / args.checkpoint_name
    G.save_generator(ckpt, gen)
    meta = _meta_lines(cfg.seed, asdict(cfg))
    log_path = out / args.log_name
    with open(log_path, "w", newline="") as fh:
        for line in meta:
            fh.write(line + "\n")
        log.write_csv(fh)
    print(f"trained {cfg.steps} steps; checkpoint {ckpt}, log {log_path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    try:
        gen = G.load_generator(args.checkpoint)
    except (OSError, ValueError, KeyError) as e:
        raise InputError(f"cannot load checkpoint {args.checkpoint}: {e}") from e
    images = G.generate(gen, args.n, args.seed)
    out = _out_dir(args)
    entries = []
    for i, img in enumerate(images):
        name = f"synth{i:05d}.pgm"
        D.write_image(out / name, img)
        entries.append(D.ManifestEntry(out / name, f"synth{i:05d}", "synthetic", ""))
    D.save_manifest(out / "manifest.csv", entries)
    print(f"wrote {len(images)} synthetic images to {out}")
    return EXIT_OK


def _quality_rows(entries):
    for e in entries:
        img = D.read_image(e.path)
        try:
            seg = Q.segment(img)
        except Q.SegmentationError:
            seg = None
        rep = Q.quality_report(img, seg) if seg else Q.quality_report(img)
        segvals = (
            [seg.pupil_center[0], seg.pupil_center[1], seg.pupil_radius,
             seg.iris_center[0], seg.iris_center[1], seg.iris_radius]
            if seg
            else [""] * 6
        )
        yield [
            e.path.name,
            repr(rep.circularity),
            repr(rep.pupil_contrast),
            repr(rep.pupil_iris_ratio),
            repr(rep.concentricity_offset),
            repr(rep.sharpness),
            repr(rep.overall),
            *segvals,
        ]


def cmd_quality(args) -> int:
    entries = _manifest_or_dir(args.input)
    out = _out_dir(args)
    path = out / args.csv_name
    _write_csv(
        path,
        _meta_lines(args.seed, {"input": args.input}),
        [
            "filename", "circularity", "pupil_contrast", "pupil_iris_ratio",
            "concentricity_offset", "sharpness", "overall",
            "pupil_x", "pupil_y", "pupil_r", "iris_x", "iris_y", "iris_r",
        ],
        _quality_rows(entries),
    )
    print(f"wrote quality scores for {len(entries)} images to {path}")
    return EXIT_OK


def _read_quality_csv(path) -> dict[str, np.ndarray]:
    try:
        lines = [l for l in Path(path).read_text().splitlines() if not l.startswith("#")]
    except OSError as e:
        raise InputError(f"cannot read quality CSV {path}: {e}") from e
    header = lines[0].split(",")
    cols = {name: [] for name in _METRIC_RANGES}
    for line in lines[1:]:
        parts = line.split(",")
        for name in cols:
            cols[name].append(float(parts[header.index(name)]))
    return {name: np.array(vals) for name, vals in cols.items()}


def _svg_histogram(path, metric_rows) -> None:
    """Minimal grouped-bar SVG, one panel per metric."""
    width, panel_h, pad = 640, 120, 30
    total_h = (panel_h + pad) * len(metric_rows) + pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}">'
    ]
    for pi, (name, edges, ha, hb) in enumerate(metric_rows):
        top = pad + pi * (panel_h + pad)
        peak = max(float(np.max(ha)), float(np.max(hb)), 1e-12)
        bw = (width - 2 * pad) / len(ha)
        parts.append(
            f'<text x="{pad}" y="{top - 8}" font-size="12">{name}</text>'
        )
        for i in range(len(ha)):
            x = pad + i * bw
            for off, h, color in ((0, ha[i], "#4477aa"), (bw / 2, hb[i], "#cc6677")):
                bar = panel_h * float(h) / peak
                parts.append(
                    f'<rect x="{x + off:.1f}" y="{top + panel_h - bar:.1f}" '
                    f'width="{bw / 2:.1f}" height="{bar:.1f}" fill="{color}"/>'
                )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts))


def cmd_chi2_report(args) -> int:
    a = _read_quality_csv(args.csv_a)
    b = _read_quality_csv(args.csv_b)
    out = _out_dir(args)
    rows = []
    hist_rows = []
    svg_rows = []
    for name, rng_ in _METRIC_RANGES.items():
        ha = Q.histogram(a[name], _CHI2_BINS, rng_)
        hb = Q.histogram(b[name], _CHI2_BINS, rng_)
        rows.append([name, repr(Q.chi2_distance(ha, hb))])
        edges = np.linspace(rng_[0], rng_[1], _CHI2_BINS + 1)
        svg_rows.append((name, edges, ha, hb))
        for i in range(_CHI2_BINS):
            hist_rows.append([name, repr(edges[i]), repr(edges[i + 1]), repr(ha[i]), repr(hb[i])])
    meta = _meta_lines(args.seed, {"a": args.csv_a, "b": args.csv_b})
    _write_csv(out / args.report_name, meta, ["metric", "chi2_distance"], rows)
    _write_csv(
        out / args.hist_name, meta,
        ["metric", "bin_lo", "bin_hi", "freq_a", "freq_b"], hist_rows,
    )
    if args.svg:
        _svg_histogram(out / args.svg, svg_rows)
    print(f"wrote chi2 report to {out / args.report_name}")
    return EXIT_OK


_FALLBACK_SEG_PUPIL = 0.14
_FALLBACK_SEG_IRIS = 0.40


def _template(img):
    """Encode one image; fall back to a centered default segmentation so
    that every image (synthetic ones included) yields a template."""
    try:
        seg = Q.segment(img)
        fallback = False
    except Q.SegmentationError:
        h, w = img.pixels.shape
        s = min(h, w)
        seg = Q.Segmentation(
            ((w - 1) / 2, (h - 1) / 2), _FALLBACK_SEG_PUPIL * s,
            ((w - 1) / 2, (h - 1) / 2), _FALLBACK_SEG_IRIS * s,
        )
        fallback = True
    return M.encode(M.normalize(img, seg)), fallback


def cmd_match_eval(args) -> int:
    entries = _manifest_or_dir(args.manifest)
    real = [e for e in entries if e.cls == "real"]
    synth = [e for e in entries if e.cls == "synthetic"]
    if not real:
        raise InputError("manifest has no real-class images")
    if not synth:
        raise InputError("manifest has no synthetic-class images")
    fallbacks = 0
    by_id: dict[str, list] = {}
    for e in sorted(real, key=lambda e: str(e.path)):
        t, fb = _template(D.read_image(e.path))
        fallbacks += fb
        by_id.setdefault(e.identity, []).append((t, e.identity))
    gallery, probes = [], []
    for ident in sorted(by_id):
        gallery.append(by_id[ident][0])
        probes.extend(by_id[ident][1:])
    synth_templates = []
    for e in sorted(synth, key=lambda e: str(e.path)):
        t, fb = _template(D.read_image(e.path))
        fallbacks += fb
        synth_templates.append(t)
    report = M.attack_eval(gallery, probes, synth_templates)

    out = _out_dir(args)
    meta = _meta_lines(args.seed, {"manifest": args.manifest})
    score_rows = (
        [("genuine", s) for s in report.scores.genuine]
        + [("real_impostor", s) for s in report.scores.real_impostor]
        + [("synthetic_impostor", s) for s in report.scores.synthetic_impostor]
    )
    _write_csv(
        out / args.scores_name, meta, ["label", "dissimilarity"],
        ([lbl, repr(s)] for lbl, s in score_rows),
    )
    summary = [
        ["eer_real", repr(report.eer_real)],
        ["eer_synthetic", repr(report.eer_synth)],
        ["frr_at_zero_synth_far", repr(report.frr_at_zero_synth_far)],
        ["synth_far_at_zero_frr", repr(report.synth_far_at_zero_frr)],
        ["n_genuine", len(report.scores.genuine)],
        ["n_real_impostor", len(report.scores.real_impostor)],
        ["n_synthetic_impostor", len(report.scores.synthetic_impostor)],
        ["n_unmatchable", report.scores.unmatchable],
        ["n_segmentation_fallback", fallbacks],
        ["reference_note", report.reference_note.replace(",", ";")],
    ]
    _write_csv(out / args.summary_name, meta, ["key", "value"], summary)
    print(f"wrote match scores to {out / args.scores_name}")
    return EXIT_OK


def _pad_features(entries):
    feats, idents = [], []
    for e in sorted(entries, key=lambda e: str(e.path)):
        img = D.read_image(e.path)
        try:
            seg = Q.segment(img)
        except Q.SegmentationError:
            h, w = img.pixels.shape
            s = min(h, w)
            seg = Q.Segmentation(
                ((w - 1) / 2, (h - 1) / 2), _FALLBACK_SEG_PUPIL * s,
                ((w - 1) / 2, (h - 1) / 2), _FALLBACK_SEG_IRIS * s,
            )
        feats.append(P.feature_vector(img, seg))
        idents.append(e.identity)
    return np.array(feats), idents


def cmd_pad_train(args) -> int:
    entries = _manifest_or_dir(args.manifest)
    real = [e for e in entries if e.cls == "real"]
    attack = [e for e in entries if e.cls in ("attack", "synthetic")]
    if not real or not attack:
        raise InputError(
            f"pad-train needs real and attack/synthetic classes, got "
            f"{len(real)} real and {len(attack)} attack"
        )
    fr, ir_ = _pad_features(real)
    fa, ia_ = _pad_features(attack)
    report = P.train_pad(
        fr, fa, folds=args.folds, seed=args.seed,
        real_identities=ir_, attack_identities=ia_,
    )
    out = _out_dir(args)
    meta = _meta_lines(args.seed, {"manifest": args.manifest, "folds": args.folds})
    fold_rows = [[r.fold, repr(r.accuracy), repr(r.eer)] for r in report.folds]
    fold_rows.append(["aggregate", repr(report.mean_accuracy), repr(report.mean_eer)])
    _write_csv(out / args.folds_name, meta, ["fold", "accuracy", "eer"], fold_rows)
    roc_rows = []
    for r in report.folds:
        for thr, far, frr in r.roc:
            roc_rows.append([r.fold, repr(thr), repr(far), repr(frr)])
    _write_csv(out / args.roc_name, meta, ["fold", "threshold", "far", "frr"], roc_rows)
    final = P._fit(
        np.concatenate([fr, fa]),
        np.concatenate([np.zeros(len(fr)), np.ones(len(fa))]),
        seed=args.seed, epochs=200, lr=1e-3, hidden=32,
    )
    D.save_checkpoint(
        out / args.model_name, final.state_tensors(),
        {"model": "pad", "seed": args.seed, "folds": args.folds},
    )
    print(
        f"pad-train: accuracy {report.mean_accuracy:.4f}, EER {report.mean_eer:.4f}; "
        f"outputs in {out}"
    )
    return EXIT_OK


def cmd_pad_eval(args) -> int:
    try:
        tensors, config = D.load_checkpoint(args.model)
    except (OSError, ValueError) as e:
        raise InputError(f"cannot load PAD model {args.model}: {e}") from e
    if config.get("model") != "pad":
        raise InputError(f"{args.model} is not a PAD model checkpoint")
    model = P.load_pad_model(tensors)
    entries = _manifest_or_dir(args.manifest)
    feats, _ = _pad_features(entries)
    probs = model.predict(feats)
    out = _out_dir(args)
    meta = _meta_lines(args.seed, {"manifest": args.manifest, "model": args.model})
    ordered = sorted(entries, key=lambda e: str(e.path))
    rows = [
        [e.path.name, e.cls, repr(float(p)), "attack" if p >= 0.5 else "real"]
        for e, p in zip(ordered, probs)
    ]
    _write_csv(
        out / args.csv_name, meta,
        ["filename", "class", "attack_probability", "prediction"], rows,
    )
    print(f"wrote PAD scores for {len(entries)} images to {out / args.csv_name}")
    return EXIT_OK


# -- argument parsing ------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irisynth",
        description="quality-gated iris synthesis, quality analysis, "
        "match-attack evaluation and attack detection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory (default $IRISYNTH_OUT or .)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="flat key=value config file")

    p = sub.add_parser("synth-data", help="generate a toy iris dataset")
    common(p)
    p.add_argument("--identities", type=int, default=20)
    p.add_argument("--per-identity", type=int, default=4)
    p.add_argument("--attack-per-identity", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the quality-gated adversarial model")
    common(p)
    p.add_argument("--data", required=True, help="manifest CSV or image directory")
    p.add_argument("--checkpoint-name", default="generator.ckpt")
    p.add_argument("--log-name", default="trainlog.csv")
    for key, conv in _GAN_KEYS.items():
        if key == "seed":
            continue
        p.add_argument(
            f"--{key.replace('_', '-')}",
            dest=key,
            type=conv if conv in (int, float, str) else str,
        )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample images from a trained generator")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=64)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("quality", help="score images with the six quality metrics")
    common(p)
    p.add_argument("--input", required=True, help="manifest CSV or image directory")
    p.add_argument("--csv-name", default="quality.csv")
    p.set_defaults(func=cmd_quality)

    p = sub.add_parser("chi2-report", help="chi-squared distance between two score sets")
    common(p)
    p.add_argument("csv_a")
    p.add_argument("csv_b")
    p.add_argument("--report-name", default="chi2.csv")
    p.add_argument("--hist-name", default="chi2_hist.csv")
    p.add_argument("--svg", help="optional SVG histogram file name")
    p.set_defaults(func=cmd_chi2_report)

    p = sub.add_parser("match-eval", help="gallery/probe attack evaluation")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--scores-name", default="match_scores.csv")
    p.add_argument("--summary-name", default="match_summary.csv")
    p.set_defaults(func=cmd_match_eval)

    p = sub.add_parser("pad-train", help="train the attack detector with cross validation")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--folds-name", default="pad_folds.csv")
    p.add_argument("--roc-name", default="pad_roc.csv")
    p.add_argument("--model-name", default="pad_model.ckpt")
    p.set_defaults(func=cmd_pad_train)

    p = sub.add_parser("pad-eval", help="score images with a trained attack detector")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--csv-name", default="pad_scores.csv")
    p.set_defaults(func=cmd_pad_eval)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"irisynth: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as e:
        print(f"irisynth: missing input: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (FloatingPointError, ZeroDivisionError, Q.SegmentationError) as e:
        print(f"irisynth: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"irisynth: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
