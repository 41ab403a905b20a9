"""Command-line interface: attack, evaluate, and plot subcommands.

Exit codes: 0 success, 2 usage or configuration problems, 3 runtime numeric
or backend failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .attack import attack_sweep, generate_adversarial
from .core import AttackConfig
from .errors import (
    AnnotationParseError,
    BackendError,
    BoxAttackError,
    ConfigurationError,
    NumericError,
    UnsupportedFormatError,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=0,
                        help="seed for toy detector builds and scene generation (default 0)")
    parser.add_argument("--model-dir", default=None,
                        help="directory with detector weight files (or set BOXATTACK_MODEL_DIR)")
    parser.add_argument("--config", default=None,
                        help="JSON config file; explicit flags override its values")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="boxattack",
        description="Distortion-aware adversarial attacks on object detector bounding boxes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    attack = sub.add_parser("attack", help="generate adversarial images")
    attack.add_argument("--adapter", required=True, help="detector adapter name (e.g. toy)")
    attack.add_argument("--image", default=None, help="attack a single image file")
    attack.add_argument("--dataset", default=None,
                        help="attack a dataset: 'synthetic', a COCO JSON file, or a VOC XML directory")
    attack.add_argument("--image-root", default=None,
                        help="image directory for annotation-file datasets")
    attack.add_argument("--dataset-size", type=int, default=20,
                        help="scene count for --dataset synthetic (default 20)")
    attack.add_argument("--step-size", type=float, default=0.01,
                        help="gradient ascent step size (default 0.01)")
    attack.add_argument("--max-iter", type=int, default=500,
                        help="iteration cap (default 500)")
    attack.add_argument("--target-distortion", type=float, default=None,
                        help="stop once distortion reaches this budget (in [0, 1])")
    attack.add_argument("--target-success", type=float, default=None,
                        help="stop once the per-image success rate reaches this value (in [0, 1])")
    attack.add_argument("--conf", type=float, default=0.50,
                        help="detector confidence threshold (default 0.50)")
    attack.add_argument("--mask-mode", choices=["binary", "additive"], default="binary",
                        help="how overlapping boxes combine in the mask (default binary)")
    attack.add_argument("--grad-norm", choices=["max-abs", "sign", "raw"], default="sign",
                        help="gradient normalization (default sign)")
    attack.add_argument("--targets-from-annotations", action="store_true",
                        help="use dataset ground truth as loss targets instead of the "
                             "detector's own initial detections")
    attack.add_argument("--workers", type=int, default=1,
                        help="parallel worker processes for batch runs (default 1)")
    attack.add_argument("--resume", action="store_true",
                        help="skip dataset rows already present in the output manifest")
    attack.add_argument("--sweep-distortion", type=_float_list, default=None,
                        help="comma-separated ascending distortion budgets; runs one "
                             "attack per budget and writes the sweep series")
    attack.add_argument("--sweep-threshold", type=_float_list, default=None,
                        help="comma-separated confidence thresholds; runs one batch per "
                             "threshold and writes the threshold/distortion series")
    _add_common(attack)
    attack.set_defaults(func=cmd_attack)

    evaluate = sub.add_parser("evaluate", help="cross-model evaluation of stored attacks")
    evaluate.add_argument("--manifest", action="append", required=True,
                          help="attack manifest file or run directory (repeatable)")
    evaluate.add_argument("--target", action="append", required=True,
                          help="victim adapter as name[:seed] (repeatable)")
    evaluate.add_argument("--dataset", required=True,
                          help="ground truth: a COCO JSON file or a VOC XML directory")
    evaluate.add_argument("--image-root", default=None,
                          help="image directory for the dataset")
    evaluate.add_argument("--conf", type=float, default=0.50,
                          help="detector confidence threshold (default 0.50)")
    evaluate.add_argument("--iou-protocol", choices=["coco", "voc"], default="coco",
                          help="mAP protocol: IoU 0.50:0.05:0.95 or single 0.50 (default coco)")
    evaluate.add_argument("--label-map", default=None,
                          help="JSON file mapping dataset class names to adapter class names "
                               "(defaults to the built-in VOC-to-COCO table when names differ)")
    _add_common(evaluate)
    evaluate.set_defaults(func=cmd_evaluate)

    plot = sub.add_parser("plot", help="emit figure series files and plots")
    plot.add_argument("--figure", required=True,
                      help="figure id: loss_convergence, rate_vs_distortion, conf_vs_distortion")
    plot.add_argument("--input", required=True,
                      help="input series: a trace CSV, sweep CSV, or threshold CSV")
    plot.add_argument("--no-render", action="store_true", help="write the series file only")
    _add_common(plot)
    plot.set_defaults(func=cmd_plot)

    return parser, {"attack": attack, "evaluate": evaluate, "plot": plot}


def _parse_with_config(
    parser: argparse.ArgumentParser,
    subparsers: dict[str, argparse.ArgumentParser],
    argv: list[str],
) -> argparse.Namespace:
    """Apply --config values as subcommand defaults; explicit flags override."""
    probe = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if known.config:
        try:
            with open(known.config) as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config file {known.config}: {exc}")
        if not isinstance(values, dict):
            parser.error(f"config file {known.config} must hold a JSON object")
        defaults = {key.replace("-", "_"): value for key, value in values.items()}
        command = next((tok for tok in argv if tok in subparsers), None)
        if command is not None:
            subparsers[command].set_defaults(**defaults)
    return parser.parse_args(argv)


def _resolve_out(args, default_name: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(args, out: Path) -> None:
    payload = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    payload = {k: (str(v) if isinstance(v, Path) else v) for k, v in payload.items()}
    with open(out / "run_config.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def _parse_target(token: str) -> tuple[str, int]:
    name, _, seed = token.partition(":")
    return name, int(seed) if seed else 0


def _load_dataset(args, out: Path):
    from .harness import build_synthetic_dataset, load_coco_annotations, load_voc_annotations

    spec = args.dataset
    if spec == "synthetic":
        return build_synthetic_dataset(out / "dataset", count=args.dataset_size, seed=args.seed)
    path = Path(spec)
    if not path.exists():
        raise ConfigurationError(f"dataset {spec!r} not found")
    if path.is_dir():
        root = Path(args.image_root) if args.image_root else path.parent / "images"
        return load_voc_annotations(path, root)
    root = Path(args.image_root) if args.image_root else path.parent
    return load_coco_annotations(path, root)


def _build_attack_config(args, *, threshold=None, target_distortion=None) -> AttackConfig:
    return AttackConfig(
        step_size=args.step_size,
        max_iterations=args.max_iter,
        target_distortion=(
            target_distortion if target_distortion is not None else args.target_distortion
        ),
        target_success_rate=args.target_success,
        confidence_threshold=threshold if threshold is not None else args.conf,
        mask_mode=args.mask_mode,
        gradient_normalization=args.grad_norm,
    )


def cmd_attack(args) -> int:
    from .detector.registry import get_adapter
    from .harness import emit_figure_series, run_attack_batch
    from .harness.batch import AdapterSpec
    from .image_io import load_image, save_image
    from .metrics import distortion

    if (args.image is None) == (args.dataset is None):
        raise ConfigurationError("pass exactly one of --image or --dataset")
    if args.sweep_distortion and args.sweep_threshold:
        raise ConfigurationError("--sweep-distortion and --sweep-threshold are exclusive")
    out = _resolve_out(args, "attack")
    _echo_config(args, out)

    if args.image is not None:
        adapter = get_adapter(args.adapter, seed=args.seed, model_dir=args.model_dir)
        image = load_image(args.image)
        if args.sweep_distortion:
            points = attack_sweep(adapter, image, args.sweep_distortion,
                                  _build_attack_config(args))
            paths = emit_figure_series(points, "rate_vs_distortion", out)
            print(f"sweep of {len(points)} budgets written to {paths['series']}")
            return EXIT_OK
        result = generate_adversarial(adapter, image, _build_attack_config(args))
        if result.stop_reason.value == "no_detections" and result.iterations_run == 0:
            print("no detections on the input image; image unchanged")
        adv_path = out / (Path(args.image).stem + ".adv.png")
        save_image(result.adversarial_image, adv_path)
        final_d = distortion(image, result.adversarial_image) if result.iterations_run else 0.0
        final_success = result.trace[-1].success_rate if result.trace else None
        print(
            f"stop={result.stop_reason.value} iterations={result.iterations_run} "
            f"distortion={final_d:.4f} success={final_success} -> {adv_path}"
        )
        return EXIT_OK

    dataset = _load_dataset(args, out)
    spec = AdapterSpec(args.adapter, seed=args.seed, model_dir=args.model_dir)

    if args.sweep_threshold:
        series = []
        for threshold in args.sweep_threshold:
            config = _build_attack_config(args, threshold=threshold)
            manifest = run_attack_batch(
                spec, dataset, config, out / f"T{threshold:g}",
                workers=args.workers, resume=args.resume,
                use_annotation_targets=args.targets_from_annotations,
            )
            dists = [r.distortion for r in manifest.rows
                     if r.status == "ok" and r.success_rate is not None]
            if dists:
                series.append((threshold, sum(dists) / len(dists)))
        paths = emit_figure_series(series, "conf_vs_distortion", out)
        print(f"threshold sweep written to {paths['series']}")
        return EXIT_OK

    if args.sweep_distortion:
        adapter = spec.build()
        points = []
        for entry in dataset.entries:
            points.extend(
                attack_sweep(adapter, load_image(entry.image_path),
                             args.sweep_distortion, _build_attack_config(args))
            )
        paths = emit_figure_series(points, "rate_vs_distortion", out)
        print(f"sweep series written to {paths['series']}")
        return EXIT_OK

    manifest = run_attack_batch(
        spec, dataset, _build_attack_config(args), out,
        workers=args.workers, resume=args.resume,
        use_annotation_targets=args.targets_from_annotations,
    )
    ok = sum(1 for r in manifest.rows if r.status == "ok")
    mean_success = manifest.mean_success()
    print(
        f"{ok}/{len(manifest.rows)} images attacked; mean success "
        f"{mean_success if mean_success is None else round(mean_success, 4)}; "
        f"manifest at {out / 'manifest.jsonl'}"
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .detector.registry import get_adapter
    from .harness import evaluate_cross_model, load_coco_annotations, load_voc_annotations
    from .harness.batch import BatchManifest
    from .metrics import COCO_IOU_THRESHOLDS, VOC_IOU_THRESHOLDS

    out = _resolve_out(args, "evaluate")
    _echo_config(args, out)

    manifests = []
    for token in args.manifest:
        path = Path(token)
        if not path.exists():
            raise ConfigurationError(f"manifest {token!r} not found")
        manifests.append(BatchManifest.load(path))

    targets = []
    for token in args.target:
        name, seed = _parse_target(token)
        targets.append(get_adapter(name, seed=seed, model_dir=args.model_dir))

    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        raise ConfigurationError(f"dataset {args.dataset!r} not found")
    if dataset_path.is_dir():
        root = Path(args.image_root) if args.image_root else dataset_path.parent / "images"
        dataset = load_voc_annotations(dataset_path, root)
    else:
        root = Path(args.image_root) if args.image_root else dataset_path.parent
        dataset = load_coco_annotations(dataset_path, root)

    name_mapping = None
    if args.label_map:
        with open(args.label_map) as fh:
            name_mapping = json.load(fh)
    else:
        from .harness import VOC_TO_COCO_LABELS

        if any(name in VOC_TO_COCO_LABELS for name in dataset.class_names):
            name_mapping = VOC_TO_COCO_LABELS

    protocol = COCO_IOU_THRESHOLDS if args.iou_protocol == "coco" else VOC_IOU_THRESHOLDS
    matrix = evaluate_cross_model(
        manifests, targets, dataset, threshold=args.conf,
        iou_thresholds=protocol, name_mapping=name_mapping,
    )
    matrix.save(out)
    for source in matrix.source_models:
        for target in matrix.target_models:
            rate = matrix.success_rate(source, target)
            print(
                f"{source} -> {target}: mAP {matrix.cells[(source, target)]:.4f} "
                f"(baseline {matrix.baseline[target]:.4f}), success rate {rate:.2f}%"
            )
    print(f"matrix written to {out / 'matrix.csv'}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .harness import FIGURE_IDS, emit_figure_series
    from .core import IterationRecord

    if args.figure not in FIGURE_IDS:
        raise ConfigurationError(
            f"unknown figure id {args.figure!r}; valid ids: {', '.join(FIGURE_IDS)}"
        )
    path = Path(args.input)
    if not path.is_file():
        raise ConfigurationError(f"input file {args.input!r} not found")

    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ConfigurationError(f"input file {args.input!r} holds no data rows")

    if args.figure == "loss_convergence":
        data = [
            IterationRecord(
                loss_total=float(r["loss"]), distortion=0.0,
                detection_count=0, success_rate=0.0,
            )
            for r in rows
        ]
    elif args.figure == "rate_vs_distortion":
        data = [(float(r["target_distortion"]), float(r["success_rate"])) for r in rows]
    else:
        data = [
            (float(r["confidence_threshold"]), float(r["mean_distortion"])) for r in rows
        ]

    out = _resolve_out(args, "plots")
    _echo_config(args, out)
    paths = emit_figure_series(data, args.figure, out, render=not args.no_render)
    emitted = ", ".join(str(p) for p in paths.values())
    print(f"{len(rows)} input rows -> {emitted}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subparsers = build_parser()
    args = _parse_with_config(parser, subparsers, argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        import torch

        torch.set_num_threads(max(1, torch.get_num_threads() // 2))
    except ImportError:
        pass
    try:
        return args.func(args)
    except (ConfigurationError, AnnotationParseError, UnsupportedFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, BackendError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except BoxAttackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
