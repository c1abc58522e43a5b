"""Command-line entry point: train, map, detect, track, render."""
from __future__ import annotations

import argparse
import os
import sys
import tempfile

from . import __version__
from .config import Config, parse_config
from .detector import (ProbabilityMap, build_tracks, detect, format_detections, format_probability_csv,
                       map_image, parse_detections, parse_probability_csv, render_overlay)
from .errors import (ConfigError, FormatError, GridSightError, IncompatibleModel, InsufficientData,
                     InvalidInput, InvalidParameter, NonConvergence, UnknownClass)
from .imagecore import encode_ppm, load_image
from .svm import FORMAT, load_bundle, train_bundle
from .synth import assemble_training_set, read_labels

EXIT_USAGE, EXIT_INPUT, EXIT_TRAIN = 2, 3, 4

FORMATS_EPILOG = f"""\
file formats:
  config            TOML, sections grid/recipes/sweep/svm/mrmr/sampling/detect/track
  labels            text, one '<image-path> <class> <x> <y>' per line, '#' comments
  model bundle      JSON, format "{FORMAT}"
  probability map   CSV v1, header frame,gx,gy,x,y,p_<class>...
  detections/track  JSON Lines v1, {{frame, class, rect, centroid, n_points, interpolated}}
  images            PGM (P2/P5) and PPM (P3/P6) in, PPM (P6) out
"""


class _UsageError(Exception):
    pass


def _write_atomic(path: str, data: str | bytes) -> None:
    """Write to a temp file beside ``path`` and rename it into place."""
    directory = os.path.dirname(os.path.abspath(path))
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_text(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _maybe_config(path) -> Config | None:
    return parse_config(path) if path else None


def cmd_train(args) -> None:
    cfg = parse_config(args.config)
    if cfg.sampling.seed is None:
        raise ConfigError(f"{args.config}: sampling.seed is required for training")
    layout = cfg.layout
    points = read_labels(args.labels)
    if not points:
        raise FormatError(f"{args.labels}: no labeled points")
    ts = assemble_training_set(points, layout, cfg.grid, cfg.sampling.negative_ratio, cfg.sampling.seed)
    try:
        bundle = train_bundle(ts, layout, cfg.grid, C=cfg.svm.C, gamma=cfg.svm.gamma, tol=cfg.svm.tol,
                              max_iter=cfg.svm.max_iter, k=cfg.mrmr.k, t_mi=cfg.mrmr.t_mi,
                              t_corr=cfg.mrmr.t_corr, bins=cfg.mrmr.bins)
    except InvalidParameter as exc:
        raise InvalidInput(str(exc)) from exc
    _write_atomic(args.out, bundle.to_json())


def _map_all(bundle, images, jobs) -> list[ProbabilityMap]:
    return [map_image(load_image(path), bundle, frame=i, jobs=jobs) for i, path in enumerate(images)]


def cmd_map(args) -> None:
    bundle = load_bundle(args.model)
    _write_atomic(args.out, format_probability_csv(_map_all(bundle, args.images, args.jobs)))


def _infer_stride(pm: ProbabilityMap) -> int:
    if pm.grid is not None:
        return pm.grid.stride
    for a in pm.positions:
        for b in pm.positions:
            if b.gx != a.gx:
                return abs(b.x - a.x) // abs(b.gx - a.gx)
    return 1


def cmd_detect(args) -> None:
    cfg = _maybe_config(args.config)
    if args.map:
        if args.images:
            raise _UsageError("give either --map or --model with images, not both")
        maps = parse_probability_csv(_read_text(args.map), args.map)
    else:
        if not args.model or not args.images:
            raise _UsageError("detect needs --map, or --model and at least one image")
        maps = _map_all(load_bundle(args.model), args.images, args.jobs)
    p_min = args.p_min if args.p_min is not None else (cfg.detect.p_min if cfg else 0.5)
    out = []
    for pm in maps:
        if args.link_distance is not None:
            link = args.link_distance
        elif cfg and cfg.detect.link_distance is not None:
            link = cfg.detect.link_distance
        else:
            link = 1.5 * (cfg.grid.stride if cfg else _infer_stride(pm))
        out.extend(detect(pm, p_min, link, args.classes or None))
    _write_atomic(args.out, format_detections(out))


def cmd_track(args) -> None:
    cfg = _maybe_config(args.config)
    max_gap = args.max_gap if args.max_gap is not None else (cfg.track.max_gap if cfg else 3)
    if max_gap < 0:
        raise _UsageError("--max-gap must be >= 0")
    dets = parse_detections(_read_text(args.detections), args.detections)
    _write_atomic(args.out, format_detections(build_tracks(dets, max_gap)))


def cmd_render(args) -> None:
    img = load_image(args.image)
    dets = parse_detections(_read_text(args.detections), args.detections) if args.detections else []
    if args.frame is not None:
        dets = [d for d in dets if d.frame == args.frame]
    _write_atomic(args.out, encode_ppm(render_overlay(img, dets)))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridsight", description="Grid-based object localization through local texture classification.",
        epilog=FORMATS_EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="worker threads for grid mapping (default: number of processors)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model bundle from labeled points")
    p.add_argument("--config", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="model bundle (JSON)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("map", help="write per-grid-position class probabilities")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="probability map CSV")
    p.add_argument("images", nargs="+", help="frames, numbered from 0 in the given order")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("detect", help="threshold and cluster probability maps into detections")
    p.add_argument("--map", help="probability map CSV")
    p.add_argument("--model", help="model bundle, used with images instead of --map")
    p.add_argument("--config")
    p.add_argument("--p-min", type=float)
    p.add_argument("--link-distance", type=float)
    p.add_argument("--class", dest="classes", action="append", help="class to analyze (repeatable)")
    p.add_argument("--out", required=True, help="detections JSONL")
    p.add_argument("images", nargs="*")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("track", help="keep the largest detection per class and frame, fill short gaps")
    p.add_argument("--detections", required=True)
    p.add_argument("--config")
    p.add_argument("--max-gap", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("render", help="draw detections over an image")
    p.add_argument("--image", required=True)
    p.add_argument("--detections")
    p.add_argument("--frame", type=int)
    p.add_argument("--out", required=True, help="overlay PPM")
    p.set_defaults(func=cmd_render)
    return parser


def _fail(code: int, msg: str) -> int:
    print(f"gridsight: error: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.jobs < 1:
        return _fail(EXIT_USAGE, "--jobs must be >= 1")
    try:
        args.func(args)
    except _UsageError as exc:
        return _fail(EXIT_USAGE, str(exc))
    except (NonConvergence, InsufficientData, InvalidInput) as exc:
        return _fail(EXIT_TRAIN, f"training failed: {exc}")
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        return _fail(EXIT_INPUT, f"cannot access {name}: {exc.strerror or exc}")
    except (ConfigError, FormatError, IncompatibleModel, UnknownClass, InvalidParameter, GridSightError) as exc:
        return _fail(EXIT_INPUT, str(exc).strip("'\""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
