"""Command-line front end.

Subcommands: identify, bench, degrade, detect, train-weights, make-synth.
Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from .bench import BenchConfig, DegradeSpec, load_dataset, make_synth, run_benchmark, train_block_weights
from .detect import DetectParams, detect_faces, load_cascade
from .features import load_weight_map, save_weight_map
from .imagecore import load_image, resize_bilinear, save_image, CHIP_SIZE
from .recognizer import MODES, RecognizerConfig, recognize_biefr, recognize_birfr, recognize_brfr
from .tsfopt import SolverConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


_CONFIG_KEYS = {
    "tsf_radius": int,
    "beta": float,
    "max_iters": int,
    "rel_tol": float,
    "outer_iters": int,
    "blocks_x": int,
    "blocks_y": int,
    "decision": str,
    "fer_strength": float,
}


def _load_config(path) -> dict:
    """Parse `key = value` lines; `#` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _CONFIG_KEYS:
            raise UsageError(f"{path}: line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CONFIG_KEYS[key](value)
        except ValueError:
            raise UsageError(f"{path}: line {lineno}: bad value for {key!r}") from None
    return values


def _recognizer_config(args, overrides: dict) -> RecognizerConfig:
    solver = SolverConfig(
        beta=overrides.get("beta"),
        max_iters=overrides.get("max_iters", 200),
        rel_tol=overrides.get("rel_tol", 1e-7),
        outer_iters=overrides.get("outer_iters", 9),
    )
    fer_strength = overrides.get("fer_strength", 1.0)
    if getattr(args, "fer_strength", None) is not None:
        fer_strength = args.fer_strength
    tsf_radius = overrides.get("tsf_radius", 5)
    if getattr(args, "tsf_radius", None) is not None:
        tsf_radius = args.tsf_radius
    cfg = RecognizerConfig(
        solver=solver,
        tsf_radius=tsf_radius,
        blocks_x=overrides.get("blocks_x", 8),
        blocks_y=overrides.get("blocks_y", 8),
        decision=overrides.get("decision", "lbp"),
        fer_strength=fer_strength,
    )
    weights_path = getattr(args, "weights", None)
    if weights_path:
        cfg.weight_map = load_weight_map(weights_path)
    return cfg


def _degrade_spec(args) -> DegradeSpec | None:
    spec = DegradeSpec(
        gaussian_sigma=args.sigma,
        tsf_radius=args.degrade_tsf_radius,
        tsf_mode=args.tsf_mode,
        relight_on=args.relight,
        fer_perturb=args.fer_perturb,
        seed=args.seed,
    )
    return None if spec.is_identity else spec


def _print_match(result, fmt: str, verbose: bool):
    if fmt == "json":
        payload = {
            "best_class": result.best_class,
            "mode": result.mode,
            "per_class": [
                {"class": s.class_id, "lbp_distance": s.lbp_distance, "residual": s.residual}
                for s in result.per_class
            ],
        }
        print(json.dumps(payload, indent=2))
    elif fmt == "csv":
        print("class,lbp_distance,residual")
        for s in result.per_class:
            print(f"{s.class_id},{s.lbp_distance:.9g},{s.residual:.9g}")
        print(f"best,{result.best_class},")
    else:
        width = max(len(s.class_id) for s in result.per_class)
        print(f"{'class':<{width}}  lbp_distance      residual")
        for s in result.per_class:
            marker = " *" if s.class_id == result.best_class else ""
            print(f"{s.class_id:<{width}}  {s.lbp_distance:12.5f}  {s.residual:12.6g}{marker}")
        print(f"best match ({result.mode}): {result.best_class}")
    if verbose:
        for s in result.per_class:
            mass = float(s.tsf.weights.sum())
            print(f"# {s.class_id}: tsf mass {mass:.4f}", file=sys.stderr)


def _gallery_from_dir(path, cfg) -> list:
    root = Path(path)
    dataset_root = root.parent if root.name == "gallery" else root
    if (root / "gallery").is_dir():
        dataset_root = root
    ds = load_dataset(dataset_root)
    return ds.gallery


def _cmd_identify(args, overrides) -> int:
    cfg = _recognizer_config(args, overrides)
    gallery = _gallery_from_dir(args.gallery, cfg)
    probe = load_image(args.probe)
    if (probe.width, probe.height) != (CHIP_SIZE, CHIP_SIZE):
        probe = resize_bilinear(probe, CHIP_SIZE, CHIP_SIZE)
    recognize = {"brfr": recognize_brfr, "birfr": recognize_birfr, "biefr": recognize_biefr}[args.algo]
    result = recognize(probe, gallery, cfg)
    _print_match(result, args.format, args.verbose)
    return 0


def _cmd_bench(args, overrides) -> int:
    cfg = BenchConfig(
        recognizer=_recognizer_config(args, overrides),
        degrade=_degrade_spec(args),
        threads=args.threads,
        scramble=args.scramble,
        seed=args.seed,
    )
    dataset = load_dataset(args.root, strict=not args.lenient)
    report = run_benchmark(dataset, args.algo, cfg)
    sys.stdout.write(report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    return 0


def _cmd_degrade(args, _overrides) -> int:
    spec = DegradeSpec(
        gaussian_sigma=args.sigma,
        tsf_radius=args.degrade_tsf_radius,
        tsf_mode=args.tsf_mode,
        relight_on=args.relight,
        fer_perturb=args.fer_perturb,
        seed=args.seed,
    )
    img = load_image(args.input)
    save_image(bench_mod.degrade(img, spec), args.output)
    return 0


def _cmd_detect(args, _overrides) -> int:
    model = load_cascade(args.cascade)
    img = load_image(args.image)
    params = DetectParams(
        scale_step=args.scale_step, window_stride=args.stride, min_overlap=args.min_overlap
    )
    for box in detect_faces(img, model, params):
        print(f"{box.x} {box.y} {box.w} {box.h}")
    return 0


def _cmd_train_weights(args, _overrides) -> int:
    dataset = load_dataset(args.root)
    wmap = train_block_weights(dataset, sigma=args.sigma, grid=(args.blocks, args.blocks))
    if args.out:
        save_weight_map(wmap, args.out)
    else:
        for row in wmap.weights:
            print(" ".join(f"{v:g}" for v in row))
    return 0


def _cmd_make_synth(args, _overrides) -> int:
    make_synth(args.output, classes=args.classes, seed=args.seed, probes_per_class=args.probes_per_class)
    print(f"wrote {args.classes} classes under {args.output}")
    return 0


def _add_degrade_flags(p):
    p.add_argument("--sigma", type=float, default=0.0, help="Gaussian blur sigma (0 = off)")
    p.add_argument("--tsf-mode", choices=["none", "random-line", "random-sparse"], default="none")
    p.add_argument("--degrade-tsf-radius", type=int, default=3, metavar="K",
                   help="translation radius of the random TSF")
    p.add_argument("--relight", action="store_true", help="random harmonic relighting")
    p.add_argument("--fer-perturb", type=float, default=0.0, help="checkerboard detail amplitude")


def build_parser() -> _Parser:
    parser = _Parser(prog="robustface", description=__doc__)
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("identify", help="identify one probe image against a gallery")
    p.add_argument("probe")
    p.add_argument("--gallery", required=True, help="dataset root or gallery directory")
    p.add_argument("--algo", choices=list(MODES), default="birfr")
    p.add_argument("--format", choices=["table", "csv", "json"], default="table")
    p.add_argument("--tsf-radius", type=int, default=None)
    p.add_argument("--fer-strength", type=float, default=None)
    p.add_argument("--weights", help="block weight map file")
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("bench", help="run a recognition-rate benchmark")
    p.add_argument("root")
    p.add_argument("--algo", choices=list(MODES), default="birfr")
    p.add_argument("--csv", help="write the machine-readable report here")
    p.add_argument("--tsf-radius", type=int, default=None)
    p.add_argument("--fer-strength", type=float, default=None)
    p.add_argument("--weights", help="block weight map file")
    p.add_argument("--scramble", action="store_true", help="permute probe labels (sanity check)")
    p.add_argument("--lenient", action="store_true", help="skip unreadable images with a warning")
    _add_degrade_flags(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("degrade", help="degrade one image deterministically")
    p.add_argument("input")
    p.add_argument("output")
    _add_degrade_flags(p)
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("detect", help="detect faces with a cascade file")
    p.add_argument("image")
    p.add_argument("--cascade", required=True)
    p.add_argument("--scale-step", type=float, default=1.25)
    p.add_argument("--stride", type=int, default=2)
    p.add_argument("--min-overlap", type=float, default=0.3)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("train-weights", help="learn block weights from a dataset")
    p.add_argument("root")
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--blocks", type=int, default=8)
    p.add_argument("--out", help="write the weight map here instead of stdout")
    p.set_defaults(func=_cmd_train_weights)

    p = sub.add_parser("make-synth", help="emit a synthetic benchmark corpus")
    p.add_argument("output")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--probes-per-class", type=int, default=1)
    p.set_defaults(func=_cmd_make_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("robustface: a subcommand is required (see --help)")
        overrides = _load_config(args.config) if args.config else {}
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    try:
        return args.func(args, overrides)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
