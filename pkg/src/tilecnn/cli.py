"""Command-line front end: ``subdivide``, ``synth``, ``train``, ``predict``, ``eval``.

Exit status is 0 on success, 1 on runtime failure and 2 on usage errors.
Any option may also come from ``--config FILE.json`` (keys are option names
with dashes or underscores); options given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .dataset import LabeledTileSet, SynthSpec
from .image_io import from_float, load_image, save_image, to_float, to_grayscale, to_rgb
from .mapping import (
    class_fraction,
    overlay,
    predict_tiles,
    render_heatmap,
    threshold,
    write_scores_csv,
)
from .nn import ArchSpec, TrainConfig, TrainingDiverged, evaluate, init_model, train
from .persistence import ModelFileError, load_model, save_model
from .tiling import TileExportError, export_tiles, subdivide

log = logging.getLogger("tilecnn")


class UsageError(Exception):
    pass


def _add_train_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int, default=30)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--lr", type=float, default=0.01, help="learning rate")
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-shuffle", action="store_true", help="keep sample order fixed across epochs")
    g.add_argument("--train-fraction", type=float, default=0.8)
    g.add_argument("--depth", type=int, default=3, help="number of conv blocks (default 3: 8/16/32 filters)")
    g.add_argument("--grayscale", action="store_true", help="convert inputs to one luminance channel")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file supplying option values")
    common.add_argument("-q", "--quiet", action="store_true", help="suppress per-epoch log lines")

    parser = argparse.ArgumentParser(prog="tilecnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("subdivide", parents=[common], help="cut an image into tiles")
    p.add_argument("input", nargs="?", type=Path)
    p.add_argument("--tile", type=int, help="tile height (and width unless --tile-w)")
    p.add_argument("--tile-w", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--grayscale", action="store_true")
    subs["subdivide"] = p

    p = sub.add_parser("synth", parents=[common], help="write synthetic fixture images")
    p.add_argument("--kind", choices=["color", "texture", "mixture"], default="color")
    p.add_argument("--base", choices=["color", "texture"], default="color",
                   help="image pair a mixture is drawn from")
    p.add_argument("--height", type=int, default=200)
    p.add_argument("--width", type=int, default=200)
    p.add_argument("--fraction", type=float, default=0.5, help="mixture fraction in [0, 1]")
    p.add_argument("--noise", type=float, default=0.05, help="Gaussian pixel noise std")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tile", type=int, default=20, help="mixture cell size")
    p.add_argument("--out", type=Path)
    subs["synth"] = p

    p = sub.add_parser("train", parents=[common], help="train a model on class tiles")
    p.add_argument("classes", nargs="*", type=Path,
                   help="one tile directory or source image per class, in class order")
    p.add_argument("--names", help="comma-separated class names")
    p.add_argument("--tile", type=int, help="tile size when classes are given as images")
    p.add_argument("--out", type=Path, help="model path (.pcnn)")
    _add_train_options(p)
    subs["train"] = p

    p = sub.add_parser("predict", parents=[common], help="map a trained model over an image")
    p.add_argument("model", nargs="?", type=Path)
    p.add_argument("image", nargs="?", type=Path)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--display-class", type=int, default=1, help="class shown on the heatmap")
    p.add_argument("--mask-class", type=int, default=1, help="class marked on the overlay")
    p.add_argument("--scores", type=Path, help="write per-tile scores CSV")
    p.add_argument("--map", type=Path, help="write heatmap PNG")
    p.add_argument("--overlay", type=Path, help="write overlay PNG")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--color", default="255,0,0", help="overlay color as R,G,B")
    subs["predict"] = p

    p = sub.add_parser("eval", parents=[common], help="score a model, or sweep settings")
    p.add_argument("--model", type=Path)
    p.add_argument("--tiles", nargs="+", type=Path, help="labeled tile directories, in class order")
    p.add_argument("--truth", type=Path, help="mixture truth-mask CSV")
    p.add_argument("--image", type=Path, help="mixture image matching --truth")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--mask-class", type=int, default=1)
    p.add_argument("--sweep", help="e.g. tile=10,20,40 or depth=2,3")
    p.add_argument("--class-images", nargs="+", type=Path, help="source image per class for --sweep")
    p.add_argument("--tile", type=int, default=20, help="tile size for a depth sweep")
    _add_train_options(p)
    subs["eval"] = p
    return parser, subs


def _apply_config(parser, subs, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    sub = subs[args.command]
    try:
        cfg = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        sub.error(f"config file not found: {args.config}")
    except json.JSONDecodeError as exc:
        sub.error(f"config file is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        sub.error("config file must hold a JSON object")
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in known or dest in ("help", "config"):
            sub.error(f"unknown config key {key!r}")
        action = known[dest]
        if action.type is Path and value is not None:
            value = [Path(v) for v in value] if isinstance(value, list) else Path(value)
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise UsageError(message)


def _validate_train_options(args) -> None:
    _require(args.epochs >= 1, "--epochs must be >= 1")
    _require(args.batch_size >= 1, "--batch-size must be >= 1")
    _require(args.lr >= 0, "--lr must be >= 0")
    _require(0 <= args.momentum < 1, "--momentum must be in [0, 1)")
    _require(0 < args.train_fraction < 1, "--train-fraction must be in (0, 1)")
    _require(args.depth >= 1, "--depth must be >= 1")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        momentum=args.momentum, seed=args.seed, shuffle_each_epoch=not args.no_shuffle,
    )


def _read_float_image(path: Path, grayscale: bool) -> np.ndarray:
    img = to_float(load_image(path))
    return to_grayscale(img) if grayscale else img


def _gray_tiles(tiles: np.ndarray) -> np.ndarray:
    if tiles.shape[3] == 1:
        return tiles
    return np.stack([to_grayscale(t.astype(np.float64)) for t in tiles]).astype(np.float32)


def _dataset_from_sources(sources, names, tile, grayscale) -> LabeledTileSet:
    """Class inputs may be tile directories or whole images (subdivided with ``tile``)."""
    if all(Path(s).is_dir() for s in sources):
        ds = ds_mod.build_dataset(sources, names)
        if grayscale:
            ds = LabeledTileSet(_gray_tiles(ds.tiles), ds.labels, ds.class_names)
        return ds
    if tile is None:
        raise UsageError("--tile is required when classes are given as images")
    grids = []
    for s in sources:
        if Path(s).is_dir():
            raise UsageError("mix of tile directories and images; give one kind")
        grids.append(subdivide(_read_float_image(Path(s), grayscale), tile))
    return LabeledTileSet.from_grids(grids, names)


def _train_one(ds: LabeledTileSet, args, depth: int):
    train_set, val_set = ds_mod.split(ds, args.train_fraction, args.seed)
    h, w, c = ds.tile_shape
    arch = ArchSpec.with_depth(h, w, c, ds.num_classes, depth)
    model, report = train(init_model(arch, args.seed), train_set, val_set, _train_config(args))
    return model, report, train_set, val_set


def _arch_dict(arch: ArchSpec) -> dict:
    return {
        "input": [arch.input_h, arch.input_w, arch.input_c],
        "num_classes": arch.num_classes,
        "blocks": [{"filters": b.filters, "pool": b.pool} for b in arch.blocks],
    }


def report_path(model_path: Path) -> Path:
    return Path(model_path).with_suffix(".json")


# -- commands -----------------------------------------------------------------


def cmd_subdivide(args) -> int:
    _require(args.input is not None, "an input image is required")
    _require(args.out is not None, "--out is required")
    _require(args.tile is not None and args.tile >= 1, "--tile must be >= 1")
    tile_w = args.tile if args.tile_w is None else args.tile_w
    _require(tile_w >= 1, "--tile-w must be >= 1")
    img = _read_float_image(args.input, args.grayscale)
    grid = subdivide(img, args.tile, tile_w)
    n = export_tiles(grid, args.out)
    print(f"{grid.rows} x {grid.cols} = {n} tiles written")
    return 0


def cmd_synth(args) -> int:
    _require(args.out is not None, "--out is required")
    _require(0.0 <= args.fraction <= 1.0, "--fraction must be in [0, 1]")
    _require(args.noise >= 0, "--noise must be >= 0")
    _require(args.height >= 1 and args.width >= 1, "--height and --width must be >= 1")
    _require(args.tile >= 1, "--tile must be >= 1")
    _require(args.seed >= 0, "--seed must be >= 0")
    kind = args.base if args.kind == "mixture" else args.kind
    spec = SynthSpec(kind, args.height, args.width, args.fraction, args.noise, args.seed)
    img_a, img_b = ds_mod.make_pair(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = ("porous", "fibrous") if kind == "texture" else ("a", "b")
    if args.kind != "mixture":
        for name, img in zip(names, (img_a, img_b)):
            save_image(from_float(img), out / f"{name}.png")
            print(f"wrote {out / f'{name}.png'}")
        return 0
    mix, truth = ds_mod.make_mixture(spec, img_a, img_b, args.tile)
    save_image(from_float(mix), out / "mix.png")
    ds_mod.write_truth_csv(truth, out / "truth.csv")
    print(f"wrote {out / 'mix.png'} and {out / 'truth.csv'}")
    print(f"realized fraction: {truth.mean():.4f} ({int(truth.sum())} of {truth.size} tiles)")
    return 0


def cmd_train(args) -> int:
    _require(len(args.classes) >= 2, "need ≥2 classes")
    _require(args.out is not None, "--out is required")
    _validate_train_options(args)
    names = args.names.split(",") if args.names else [Path(c).stem for c in args.classes]
    _require(len(names) == len(args.classes), "--names must list one name per class")
    for c in args.classes:
        if not Path(c).exists():
            raise FileNotFoundError(f"file not found: {c}")
    ds = _dataset_from_sources(args.classes, names, args.tile, args.grayscale)
    log.info("%d tiles of %s, class counts %s", len(ds), ds.tile_shape, ds.class_counts().tolist())
    model, report, _, _ = _train_one(ds, args, args.depth)
    save_model(model, args.out)
    payload = {
        "class_names": names,
        "arch": _arch_dict(model.arch),
        "config": {
            "epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr,
            "momentum": args.momentum, "seed": args.seed, "shuffle_each_epoch": not args.no_shuffle,
            "train_fraction": args.train_fraction,
        },
        "report": report.to_dict(),
    }
    report_path(args.out).write_text(json.dumps(payload, indent=2))
    print(f"model written to {args.out}")
    print(f"final validation accuracy: {report.val_accuracy:.4f}")
    return 0


def _class_names(model_path: Path, k: int) -> list[str]:
    try:
        names = json.loads(report_path(model_path).read_text())["class_names"]
        if len(names) == k:
            return names
    except (OSError, ValueError, KeyError, TypeError):
        pass
    return [str(i) for i in range(k)]


def _image_for_model(path: Path, model) -> tuple[np.ndarray, np.ndarray]:
    """Load ``path`` and reconcile its channels with the model; returns (8-bit, float)."""
    raw = load_image(path)
    img = to_float(raw)
    want = model.arch.input_c
    if img.shape[2] != want:
        if want == 1:
            img = to_grayscale(img)
            print("note: RGB image converted to grayscale for a 1-channel model")
        else:
            img = to_rgb(img)
            print("note: grayscale image replicated to 3 channels for an RGB model")
    return raw, img


def _parse_color(text: str) -> tuple[int, int, int]:
    try:
        rgb = tuple(int(v) for v in str(text).split(","))
    except ValueError:
        rgb = ()
    _require(len(rgb) == 3 and all(0 <= v <= 255 for v in rgb), "--color must be R,G,B with values 0-255")
    return rgb


def cmd_predict(args) -> int:
    _require(args.model is not None and args.image is not None, "a model and an image are required")
    _require(0.0 <= args.tau <= 1.0, "--tau must be in [0, 1]")
    _require(0.0 < args.alpha <= 1.0, "--alpha must be in (0, 1]")
    color = _parse_color(args.color)
    model = load_model(args.model)
    k = model.arch.num_classes
    _require(0 <= args.display_class < k, f"--display-class must be in [0, {k})")
    _require(0 <= args.mask_class < k, f"--mask-class must be in [0, {k})")
    raw, img = _image_for_model(args.image, model)
    grid = subdivide(img, model.arch.input_h, model.arch.input_w)
    _, pmap = predict_tiles(model, grid)

    failures = []
    outputs = [
        (args.scores, lambda p: write_scores_csv(pmap, p)),
        (args.map, lambda p: save_image(render_heatmap(pmap, args.display_class), p)),
        (args.overlay, lambda p: save_image(
            overlay(raw, threshold(pmap, args.mask_class, args.tau), color, args.alpha), p)),
    ]
    for path, write in outputs:
        if path is None:
            continue
        try:
            write(path)
            print(f"wrote {path}")
        except OSError as exc:
            failures.append(f"{path}: {exc}")

    names = _class_names(args.model, k)
    print(f"{grid.rows} x {grid.cols} tiles; class fractions at tau={args.tau}:")
    for c in range(k):
        print(f"  {c} {names[c]}: {class_fraction(threshold(pmap, c, args.tau)):.4f}")
    if failures:
        for f in failures:
            print(f"error: failed to write {f}", file=sys.stderr)
        return 1
    return 0


def _parse_sweep(text: str) -> tuple[str, list[int]]:
    key, _, values = str(text).partition("=")
    key = key.strip()
    _require(key in ("tile", "depth") and values, "--sweep must look like tile=10,20 or depth=2,3")
    try:
        vals = [int(v) for v in values.split(",") if v.strip()]
    except ValueError:
        raise UsageError("--sweep values must be integers") from None
    _require(vals and all(v >= 1 for v in vals), "--sweep values must be >= 1")
    return key, vals


def _run_sweep(args) -> int:
    key, values = _parse_sweep(args.sweep)
    _require(args.class_images and len(args.class_images) >= 2, "--sweep needs --class-images for ≥2 classes")
    _validate_train_options(args)
    names = [Path(p).stem for p in args.class_images]
    images = [_read_float_image(Path(p), args.grayscale) for p in args.class_images]
    print(f"{'tile':>5} {'depth':>5} {'train':>6} {'val':>5} {'train_acc':>9} {'val_acc':>8} {'seconds':>8}")
    for v in values:
        tile, depth = (v, args.depth) if key == "tile" else (args.tile, v)
        ds = LabeledTileSet.from_grids([subdivide(img, tile) for img in images], names)
        start = time.perf_counter()
        model, report, train_set, val_set = _train_one(ds, args, depth)
        print(
            f"{tile:>5} {depth:>5} {len(train_set):>6} {len(val_set):>5} "
            f"{evaluate(model, train_set):>9.4f} {report.val_accuracy:>8.4f} {time.perf_counter() - start:>8.2f}"
        )
    return 0


def cmd_eval(args) -> int:
    if args.sweep:
        return _run_sweep(args)
    _require(args.model is not None, "--model is required unless --sweep is given")
    _require(bool(args.tiles) != bool(args.truth), "give either --tiles or --truth (with --image)")
    model = load_model(args.model)
    k = model.arch.num_classes
    if args.tiles:
        _require(len(args.tiles) == k, f"model has {k} classes but {len(args.tiles)} tile directories were given")
        ds = ds_mod.build_dataset(args.tiles, _class_names(args.model, k))
        if model.arch.input_c == 1:
            ds = LabeledTileSet(_gray_tiles(ds.tiles), ds.labels, ds.class_names)
        print(f"accuracy: {evaluate(model, ds):.4f} on {len(ds)} tiles")
        return 0

    _require(args.image is not None, "--truth needs the mixture --image")
    _require(0 <= args.mask_class < k, f"--mask-class must be in [0, {k})")
    truth = ds_mod.read_truth_csv(args.truth) == 1
    _, img = _image_for_model(args.image, model)
    grid = subdivide(img, model.arch.input_h, model.arch.input_w)
    if (grid.rows, grid.cols) != truth.shape:
        raise ValueError(f"truth grid {truth.shape} does not match the image's {grid.rows}x{grid.cols} tiles")
    _, pmap = predict_tiles(model, grid)
    mask = threshold(pmap, args.mask_class, args.tau)
    f_pred, f_true = class_fraction(mask), float(truth.mean())
    print(f"tile error: {(mask.bits != truth).mean():.4f}")
    print(f"predicted fraction: {f_pred:.4f}  true fraction: {f_true:.4f}  fraction error: {abs(f_pred - f_true):.4f}")
    return 0


COMMANDS = {
    "subdivide": cmd_subdivide,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    parser, subs = build_parser()
    args = _apply_config(parser, subs, argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        subs[args.command].print_usage(sys.stderr)
        print(f"tilecnn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        msg = str(exc) if str(exc).startswith("file not found") else f"file not found: {exc.filename}"
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except (ModelFileError, TileExportError, TrainingDiverged, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
