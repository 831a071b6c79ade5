"""Command-line entry point: ``swinfuse {fuse,train,eval}``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from .config import ConfigError, ModelConfig, TrainConfig
from .metrics import METRIC_NAMES, evaluate
from .pipeline import (ImageIOError, SwinFuse, fuse_image_pair, load_image, make_tiles,
                       read_pixels, save_image)
from .tensor import ShapeError
from .training import LogRecord, train
from .weights import WeightFormatError, load_weights, save_weights

log = logging.getLogger("swinfuse")

IMAGE_SUFFIXES = {".png", ".pgm", ".pnm", ".ppm", ".bmp", ".jpg", ".jpeg", ".tif", ".tiff"}
MODES = {"row": "row_only", "col": "col_only", "both": "row_plus_col"}


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="swinfuse", description="Infrared/visible image fusion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fuse", help="fuse a registered infrared/visible pair")
    p.add_argument("--ir", required=True, type=Path)
    p.add_argument("--vis", required=True, type=Path)
    p.add_argument("--weights", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--mode", choices=sorted(MODES), default="both")
    p.add_argument("--tile", type=int, default=None)
    p.add_argument("--config", type=Path, default=None,
                   help="key=value architecture file (default: <weights>.cfg if present)")

    p = sub.add_parser("train", help="train the autoencoder on a directory of images")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--lambda", dest="lam", type=float, default=1e3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--no-residual", action="store_true")
    p.add_argument("--rstb", type=int, default=None, help="number of RSTBs (default 3)")
    p.add_argument("--stl", type=int, default=None, help="STLs per RSTB (default 6)")
    p.add_argument("--tile", type=int, default=None)
    p.add_argument("--log", type=Path, default=None, help="CSV loss log (default stdout)")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("eval", help="compute fusion metrics")
    p.add_argument("--ir", required=True, type=Path)
    p.add_argument("--vis", required=True, type=Path)
    p.add_argument("--fused", required=True, type=Path)
    p.add_argument("--csv", type=Path, default=None)
    return parser


@contextlib.contextmanager
def _atomic_path(path: Path):
    """Yield a temp path in the target directory, moved into place on success."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=path.suffix)
    os.close(fd)
    try:
        yield Path(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _thread_limit(n: int | None):
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(n)


def _model_config(config_path: Path | None, **overrides) -> ModelConfig:
    cfg = ModelConfig.load(config_path) if config_path else ModelConfig()
    changes = {k: v for k, v in overrides.items() if v is not None}
    return cfg.replace(**changes) if changes else cfg


# -- subcommands ----------------------------------------------------------------


def cmd_fuse(args) -> int:
    config_path = args.config
    sidecar = Path(str(args.weights) + ".cfg")
    if config_path is None and sidecar.exists():
        config_path = sidecar
    cfg = _model_config(config_path, tile=args.tile)
    ir, vis = load_image(args.ir), load_image(args.vis)
    if ir.shape != vis.shape:
        raise RuntimeFailure(f"size mismatch: --ir is {ir.shape[1]}x{ir.shape[0]}, "
                             f"--vis is {vis.shape[1]}x{vis.shape[0]}")
    model = SwinFuse.from_weights(load_weights(args.weights), cfg)
    t0 = time.perf_counter()
    fused = fuse_image_pair(ir, vis, model, MODES[args.mode])
    elapsed = time.perf_counter() - t0
    with _atomic_path(args.out) as tmp:
        save_image(fused, tmp)
    print(f"fused {fused.shape[1]}x{fused.shape[0]} mode={args.mode} "
          f"tile={cfg.tile} in {elapsed:.2f}s -> {args.out}")
    return 0


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir()
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_train(args) -> int:
    cfg = _model_config(args.config, rstb_count=args.rstb, stl_count=args.stl, tile=args.tile,
                        residual=False if args.no_residual else None)
    tcfg = TrainConfig(lr=args.lr, batch_size=args.batch, epochs=args.epochs, lam=args.lam,
                       seed=args.seed, max_iterations=args.max_iter)
    if not args.data.is_dir():
        raise RuntimeFailure(f"--data {args.data} is not a directory")
    files = _image_files(args.data)
    if not files:
        raise RuntimeFailure(f"no images found in {args.data}")
    tiles = []
    for f in files:
        tiles.extend(make_tiles(load_image(f), cfg.tile)[1])

    with contextlib.ExitStack() as stack:
        sink = stack.enter_context(open(args.log, "w")) if args.log else sys.stdout
        print(LogRecord.CSV_HEADER, file=sink)

        def on_log(rec: LogRecord) -> None:
            print(rec.csv(), file=sink)

        with _thread_limit(args.threads):
            store = train(tiles, tcfg, cfg, on_log=on_log)
    with _atomic_path(args.out) as tmp:
        save_weights(store, tmp)
    cfg.save(str(args.out) + ".cfg")
    log.info("wrote %d tensors to %s", len(store), args.out)
    return 0


def _triples(ir: Path, vis: Path, fused: Path) -> list[tuple[str, Path, Path, Path]]:
    kinds = [p.is_dir() for p in (ir, vis, fused)]
    if not any(kinds):
        return [(fused.stem, ir, vis, fused)]
    if not all(kinds):
        raise UsageError("--ir, --vis and --fused must all be files or all be directories")
    maps = [{p.stem: p for p in _image_files(d)} for d in (ir, vis, fused)]
    common = set(maps[0]) & set(maps[1]) & set(maps[2])
    orphans = sorted(str(p) for m in maps for stem, p in m.items() if stem not in common)
    if orphans:
        raise RuntimeFailure("unpaired files: " + ", ".join(orphans))
    return [(s, maps[0][s], maps[1][s], maps[2][s]) for s in sorted(common)]


def cmd_eval(args) -> int:
    triples = _triples(args.ir, args.vis, args.fused)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("name",) + METRIC_NAMES)
    for name, ir_path, vis_path, fused_path in triples:
        a, b, f = read_pixels(ir_path), read_pixels(vis_path), read_pixels(fused_path)
        if not (a.shape == b.shape == f.shape):
            raise RuntimeFailure(f"{name}: image sizes differ {a.shape}, {b.shape}, {f.shape}")
        report = evaluate(f, a, b).as_dict()
        writer.writerow([name] + [f"{report[k]:.10g}" for k in METRIC_NAMES])
    if args.csv:
        with _atomic_path(args.csv) as tmp:
            tmp.write_text(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return 0


COMMANDS = {"fuse": cmd_fuse, "train": cmd_train, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"swinfuse: error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeFailure, ImageIOError, WeightFormatError, ShapeError, ConfigError,
            ValueError, OSError) as exc:
        print(f"swinfuse: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
