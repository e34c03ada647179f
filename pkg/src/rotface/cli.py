"""Command-line interface: ``rotface {synth,train,detect,eval,denoise}``.

Exit codes: 0 success, 2 bad flags, 3 I/O failure, 4 dimension or label
errors in training data, 5 corrupt model file.
"""

import argparse
import json
import logging
import os
from pathlib import Path
import sys
import time

import numpy as np

from . import detector, evaluation, grnn, model, rprop
from .image import ImageError, read_pgm, write_pgm
from .wavelet import FAMILIES, BOUNDARIES, ThresholdRule, WaveletError, WaveletSpec, denoise

log = logging.getLogger("rotface")

JOBS_ENV = "ROTFACE_JOBS"
MANIFEST = "manifest.json"


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def default_jobs():
    try:
        return max(1, int(os.environ[JOBS_ENV]))
    except (KeyError, ValueError):
        return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def cmd_synth(args):
    out = Path(args.out_dir)
    angle_range = (args.angle_min, args.angle_max)
    if not -90.0 <= args.angle_min <= args.angle_max <= 90.0:
        raise CliError(2, "angle range must satisfy -90 <= min <= max <= 90")
    if args.count < 0 or args.patches < 0:
        raise CliError(2, "counts must be non-negative")
    template = evaluation.make_template(args.window)
    patches, angles = evaluation.synth_patches(
        args.seed, args.patches, template, angle_range, args.noise, args.jitter)
    scenes = evaluation.synth_dataset(
        args.seed + 1, args.count, template, angle_range, args.noise,
        (args.scene_width, args.scene_height), args.jitter)
    manifest = {
        "format": "rotface-dataset",
        "version": 1,
        "seed": args.seed,
        "params": {"angle_range": list(angle_range), "noise": args.noise,
                   "jitter": args.jitter, "window": args.window,
                   "scene_size": [args.scene_width, args.scene_height]},
        "template": "template.pgm",
        "patches": [],
        "scenes": [],
    }
    try:
        (out / "patches").mkdir(parents=True, exist_ok=True)
        (out / "scenes").mkdir(parents=True, exist_ok=True)
        write_pgm(out / "template.pgm", template)
        for i, (p, a) in enumerate(zip(patches, angles)):
            name = f"patches/patch_{i:04d}.pgm"
            write_pgm(out / name, p)
            manifest["patches"].append({"file": name, "angle": float(a)})
        for scene in scenes:
            name = f"scenes/scene_{scene.index:04d}.pgm"
            write_pgm(out / name, scene.image)
            manifest["scenes"].append({
                "file": name,
                "boxes": [{"x": b.x, "y": b.y, "size": b.size, "angle": b.angle}
                          for b in scene.boxes]})
        (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    except OSError as exc:
        raise CliError(3, f"cannot write dataset to {out}: {exc}") from exc
    print(f"wrote {len(scenes)} scenes and {len(patches)} patches to {out}")
    return 0


# ---------------------------------------------------------------------------
# data loading
# ---------------------------------------------------------------------------

def _manifest_path(path):
    p = Path(path)
    return p / MANIFEST if p.is_dir() else p


def load_manifest(path):
    p = _manifest_path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise CliError(3, f"cannot read manifest {p}: {exc}") from exc
    except ValueError as exc:
        raise CliError(4, f"{p}: malformed manifest: {exc}") from exc
    return p.parent, doc


def _read_image(path, code=3):
    try:
        return read_pgm(path)
    except OSError as exc:
        raise CliError(3, f"cannot read {path}: {exc}") from exc
    except ImageError as exc:
        raise CliError(code, f"{path}: {exc}") from exc


def load_patches(data, window):
    """Labelled patches from a manifest, or a directory with ``labels.csv``."""
    p = Path(data)
    if p.is_dir() and not (p / MANIFEST).exists() and (p / "labels.csv").exists():
        base = p
        entries = []
        for line in (p / "labels.csv").read_text().splitlines():
            if not line.strip() or line.startswith("file"):
                continue
            name, angle = line.rsplit(",", 1)
            entries.append({"file": name.strip(), "angle": angle.strip()})
    else:
        base, doc = load_manifest(data)
        entries = doc.get("patches", [])
    patches, angles = [], []
    for entry in entries:
        f = base / entry["file"]
        img = _read_image(f, code=4)
        if img.shape != (window, window):
            raise CliError(4, f"{f}: patch is {img.shape[1]}x{img.shape[0]}, "
                              f"window is {window}x{window}")
        try:
            angle = float(entry["angle"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CliError(4, f"{f}: bad angle label") from exc
        if not -90.0 <= angle <= 90.0:
            raise CliError(4, f"{f}: angle {angle} outside [-90, 90]")
        patches.append(img)
        angles.append(angle)
    if not patches:
        raise CliError(4, f"{data}: no training patches")
    return np.array(patches), np.array(angles)


def load_scenes(path):
    base, doc = load_manifest(path)
    scenes = []
    for i, entry in enumerate(doc.get("scenes", [])):
        img = _read_image(base / entry["file"])
        boxes = [evaluation.GroundTruth(int(b["x"]), int(b["y"]), int(b["size"]),
                                        float(b["angle"])) for b in entry["boxes"]]
        scenes.append(evaluation.LabeledScene(img, boxes, doc.get("seed", 0), i))
    return scenes, doc


def load_model(path):
    try:
        return model.load(path)
    except OSError as exc:
        raise CliError(3, f"cannot read model {path}: {exc}") from exc
    except (model.ModelFormatError, ValueError) as exc:
        raise CliError(5, f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# train / detect / eval / denoise
# ---------------------------------------------------------------------------

def _rule(args):
    if args.fixed_t is not None:
        return ThresholdRule.fixed(args.fixed_t, args.mode)
    if args.selection == "fixed":
        raise CliError(2, "--selection fixed needs --fixed-t")
    return ThresholdRule(args.mode, "universal")


def cmd_train(args):
    patches, angles = load_patches(args.data, args.window)
    spread = None if args.spread in (None, "auto") else float(args.spread)
    try:
        bundle = model.train(
            patches, angles, window=args.window, k=args.pca_k,
            variance=args.variance, max_k=args.max_k, spread=spread,
            wavelet=WaveletSpec(args.family, args.boundary),
            denoise_levels=args.levels, rule=_rule(args), theta=args.theta,
            metadata={"seed": args.seed, "data": str(args.data)})
    except (model.TrainingDataError, ValueError) as exc:
        raise CliError(4, f"{args.data}: {exc}") from exc
    try:
        model.save(args.out, bundle)
    except OSError as exc:
        raise CliError(3, f"cannot write model {args.out}: {exc}") from exc
    print(f"trained on {len(angles)} patches: k={bundle.pca.k} "
          f"spread={bundle.grnn.spread:.6g} theta={bundle.theta:.6g} -> {args.out}")
    return 0


def _scan_config(bundle, args):
    overrides = dict(stride=args.stride, scale_factor=args.scale_factor,
                     max_levels=args.pyramid_levels, nms_overlap=args.nms,
                     denoise_mode=args.denoise_mode, jobs=args.jobs)
    if args.max_scale is not None:
        overrides["max_scale"] = args.max_scale
    if args.theta is not None:
        overrides["theta"] = args.theta
    try:
        return bundle.scan_config(**overrides)
    except ValueError as exc:
        raise CliError(2, str(exc)) from exc


def cmd_detect(args):
    bundle = load_model(args.model)
    img = _read_image(args.image)
    cfg = _scan_config(bundle, args)
    dets = detector.scan(img, bundle.pca, bundle.grnn, cfg)
    text = detector.detections_json(Path(args.image).name, cfg.window, dets)
    try:
        if args.json_out:
            Path(args.json_out).write_text(text)
        else:
            sys.stdout.write(text)
        if args.annotate_out:
            write_pgm(args.annotate_out, detector.annotate(img, dets))
    except OSError as exc:
        raise CliError(3, f"cannot write output: {exc}") from exc
    return 0


def _oracle_detections(scene):
    return [detector.Detection(b.x, b.y, b.size, b.angle, 1.0) for b in scene.boxes]


def cmd_eval(args):
    scenes, _ = load_scenes(args.manifest)
    if args.oracle:
        bundle = None
        dets = [_oracle_detections(s) for s in scenes]
    else:
        if not args.model:
            raise CliError(2, "--model is required unless --oracle is given")
        bundle = load_model(args.model)
        cfg = _scan_config(bundle, args)
        dets = [detector.scan(s.image, bundle.pca, bundle.grnn, cfg) for s in scenes]
    report = evaluation.detection_rates(scenes, dets)
    text = report.render()

    timing_rows = []
    metric_rows = []
    if bundle is not None:
        patches, angles = load_patches(args.manifest, bundle.window)
        feats = bundle.features(patches)
        values, _ = grnn.predict_batch(bundle.grnn, feats)
        t0 = time.perf_counter()
        grnn.fit(feats, angles, bundle.grnn.spread)
        grnn_time = time.perf_counter() - t0
        fm = evaluation.fit_metrics(angles, values)
        metric_rows.append(("grnn", fm, evaluation.misclassification_rate(angles, values)))
        timing_rows.append({"model": "grnn", "train_seconds": grnn_time, "epochs": 0,
                            "final_mse": float(np.mean((values - angles) ** 2)) / 90.0 ** 2,
                            "m": fm.m, "b": fm.b, "r": fm.r,
                            "misclassification": metric_rows[-1][2]})
        if args.baseline:
            init = rprop.mlp_init(feats.shape[1], args.hidden, seed=args.seed)
            cfg = rprop.RpropConfig(max_epochs=args.max_epochs)
            t0 = time.perf_counter()
            res = rprop.rprop_train(init, feats, angles / rprop.ANGLE_SCALE, cfg)
            rp_time = time.perf_counter() - t0
            out = rprop.mlp_predict_degrees(res.model, feats)
            fm = evaluation.fit_metrics(angles, out)
            metric_rows.append(("rprop", fm, evaluation.misclassification_rate(angles, out)))
            timing_rows.append({"model": "rprop", "train_seconds": rp_time,
                                "epochs": res.epochs, "final_mse": res.history[-1],
                                "m": fm.m, "b": fm.b, "r": fm.r,
                                "misclassification": metric_rows[-1][2]})
            if args.history_csv:
                _write(args.history_csv, evaluation.history_csv(res.history))

    _write(args.report, text) if args.report else sys.stdout.write(text)
    if args.metrics_csv and metric_rows:
        lines = ["model,m,b,r,misclassification"]
        lines += [f"{n},{f.m!r},{f.b!r},{f.r!r},{mis!r}" for n, f, mis in metric_rows]
        _write(args.metrics_csv, "\n".join(lines) + "\n")
    if args.timing_csv and timing_rows:
        _write(args.timing_csv, evaluation.timing_report(timing_rows))
    return 0


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise CliError(3, f"cannot write {path}: {exc}") from exc


def cmd_denoise(args):
    img = _read_image(args.input)
    try:
        out = denoise(img, WaveletSpec(args.family, args.boundary), args.levels,
                      _rule(args), args.backend)
    except WaveletError as exc:
        raise CliError(2, str(exc)) from exc
    try:
        write_pgm(args.output, out)
    except OSError as exc:
        raise CliError(3, f"cannot write {args.output}: {exc}") from exc
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_wavelet_flags(p, levels):
    p.add_argument("--family", choices=FAMILIES, default="haar")
    p.add_argument("--boundary", choices=BOUNDARIES, default="periodic")
    p.add_argument("--levels", type=int, default=levels)
    p.add_argument("--mode", choices=("soft", "hard"), default="soft")
    p.add_argument("--selection", choices=("universal", "fixed"), default="universal")
    p.add_argument("--fixed-t", type=float, default=None,
                   help="fixed threshold (implies --selection fixed)")


def _add_scan_flags(p):
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--scale-factor", type=float, default=1.2)
    p.add_argument("--levels", "--pyramid-levels", dest="pyramid_levels", type=int,
                   default=None,
                   help="maximum number of pyramid levels")
    p.add_argument("--max-scale", type=float, default=None)
    p.add_argument("--theta", type=float, default=None,
                   help="override the model's density threshold")
    p.add_argument("--nms", type=float, default=0.3)
    p.add_argument("--denoise-mode", choices=("window", "image", "none"),
                   default="window")
    p.add_argument("--jobs", type=int, default=default_jobs())


def build_parser():
    parser = argparse.ArgumentParser(prog="rotface", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="flat JSON file of flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=10, help="number of scenes")
    p.add_argument("--patches", type=int, default=120, help="number of training patches")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--angle-min", type=float, default=-90.0)
    p.add_argument("--angle-max", type=float, default=90.0)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--jitter", type=float, default=0.15)
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--scene-width", type=int, default=64)
    p.add_argument("--scene-height", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="fit PCA + GRNN on labelled patches")
    p.add_argument("--data", required=True, help="manifest, dataset dir or labels.csv dir")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--window", type=int, default=15)
    p.add_argument("--pca-k", type=int, default=None)
    p.add_argument("--variance", type=float, default=model.TRAIN_VARIANCE)
    p.add_argument("--max-k", type=int, default=model.TRAIN_MAX_K)
    p.add_argument("--spread", default="auto")
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_wavelet_flags(p, model.PATCH_DENOISE_LEVELS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="scan an image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--json-out")
    p.add_argument("--annotate-out")
    _add_scan_flags(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="detection rates and fit metrics")
    p.add_argument("--model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report")
    p.add_argument("--metrics-csv")
    p.add_argument("--timing-csv")
    p.add_argument("--history-csv")
    p.add_argument("--oracle", action="store_true",
                   help="score ground truth as detections")
    p.add_argument("--baseline", action="store_true",
                   help="also train the Rprop MLP baseline")
    p.add_argument("--hidden", type=int, default=10)
    p.add_argument("--max-epochs", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    _add_scan_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("denoise", help="wavelet de-noise a PGM image")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--backend", choices=("dwt", "swt"), default="dwt")
    _add_wavelet_flags(p, 3)
    p.set_defaults(func=cmd_denoise)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        values = json.loads(Path(known.config).read_text())
    except OSError as exc:
        raise CliError(3, f"cannot read config {known.config}: {exc}") from exc
    except ValueError as exc:
        raise CliError(2, f"{known.config}: malformed config: {exc}") from exc
    if not isinstance(values, dict):
        raise CliError(2, f"{known.config}: config must be a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            dests = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in values.items() if k in dests})


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CliError as exc:
        print(f"rotface: error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2


if __name__ == "__main__":
    sys.exit(main())
