"""Headless entry points: scripted acquisition plus standalone pipeline stages.

Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.
Stage commands operate on directories of files following the package's
naming convention; files belonging to other stages are ignored, anything
else is reported as an offender.
"""

from __future__ import annotations

import argparse
import re
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .config import load_config, require_acquire_fields
from .engine import AcquisitionEngine
from .errors import ConfigError, ParameterError
from .flatfield import (
    apply_flattening,
    create_flattening,
    load_flatfield,
    save_flatfield,
)
from .imaging import Channel
from .microscope import VirtualMicroscope
from .naming import (
    parse_stabilized_filename,
    parse_stitched_filename,
    parse_tile_filename,
    stitched_filename,
)
from .planner import StitchMode
from .stabilizer import cumulative_correction, run_stabilization
from .stitcher import stitch
from .tiffio import read_tiff, write_tiff
from .imaging import Translation, warp_translate

MODE_FLAGS = {
    "no-overlap": StitchMode.NO_OVERLAP,
    "grid-bf": StitchMode.GRID_BF,
    "grid-pc": StitchMode.GRID_PC,
}


def _fail(message: str, code: int) -> int:
    print(message, file=sys.stderr)
    return code


def _config_fail(exc: ConfigError) -> int:
    print("invalid configuration:", file=sys.stderr)
    for field_name, message in exc.errors.items():
        print(f"  {field_name or '<document>'}: {message}", file=sys.stderr)
    return 2


def _classify_tiffs(directory: Path):
    """Split *.tif files into tiles, stitched, stabilized, and offenders."""
    tiles, stitched, stabilized, offenders = [], [], [], []
    for path in sorted(directory.glob("*.tif")):
        for parser, bucket in (
            (parse_tile_filename, tiles),
            (parse_stitched_filename, stitched),
            (parse_stabilized_filename, stabilized),
        ):
            try:
                bucket.append((parser(path.name), path))
                break
            except ParameterError:
                continue
        else:
            offenders.append(path.name)
    return tiles, stitched, stabilized, offenders


def cmd_acquire(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.simulator.seed = args.seed
        require_acquire_fields(cfg)
    except ConfigError as exc:
        return _config_fail(exc)
    except OSError as exc:
        return _fail(f"cannot read config: {exc}", 2)

    out_dir = Path(args.out) if args.out else Path(cfg.data_root) / cfg.name
    mic = VirtualMicroscope(cfg.simulator)
    engine = AcquisitionEngine(mic, out_dir, name=cfg.name)
    try:
        engine.set_params(cfg.params)
        engine.use_retained_overview(cfg.overview)
        engine.set_rois(list(cfg.rois))
        if cfg.params.apply_flattening:
            engine.create_flattening()
        record = engine.run_timelapse()
    except ConfigError as exc:
        return _config_fail(exc)
    except ParameterError as exc:
        return _fail(f"invalid configuration: {exc}", 2)
    except Exception as exc:  # noqa: BLE001 — partial outputs stay on disk
        return _fail(f"acquisition aborted: {exc}", 1)

    n_stitched = sum(len(v) for v in record.stitched.values())
    print(
        f"acquired {record.tile_count} tiles over "
        f"{record.timesteps_completed} timesteps, {n_stitched} stitched frames "
        f"-> {out_dir}"
    )
    return 0


def cmd_stitch(args: argparse.Namespace) -> int:
    directory = Path(args.tile_dir)
    if not directory.is_dir():
        return _fail(f"not a directory: {directory}", 2)
    mode = MODE_FLAGS[args.mode]
    if not 0 <= args.overlap < 1:
        return _fail(f"overlap must be in [0, 1), got {args.overlap}", 2)
    tiles, _, _, offenders = _classify_tiffs(directory)
    if offenders:
        return _fail(
            "files not matching any naming convention:\n  " + "\n  ".join(offenders), 2
        )
    if not tiles:
        return _fail(f"no tile images found in {directory}", 2)

    # Group by (name, timestep); keep the z slice closest to the stack middle.
    z_values = sorted({parsed.z for parsed, _ in tiles})
    z_keep = z_values[len(z_values) // 2]
    groups: dict[tuple[str, int], dict[Channel, dict[tuple[int, int], Path]]] = defaultdict(
        lambda: defaultdict(dict)
    )
    for parsed, path in tiles:
        if parsed.z != z_keep:
            continue
        groups[(parsed.name, parsed.t)][parsed.channel][(parsed.r, parsed.c)] = path

    written = 0
    for (name, timestep), by_channel in sorted(groups.items()):
        rows = 1 + max(r for cells in by_channel.values() for r, _ in cells)
        cols = 1 + max(c for cells in by_channel.values() for _, c in cells)
        grids = {}
        for channel, cells in by_channel.items():
            grid = [[None] * cols for _ in range(rows)]
            for (r, c), path in cells.items():
                grid[r][c] = read_tiff(path)
            if mode is not StitchMode.NO_OVERLAP and any(
                cell is None for row in grid for cell in row
            ):
                missing = [
                    f"r{r}c{c}" for r in range(rows) for c in range(cols)
                    if grid[r][c] is None
                ]
                return _fail(
                    f"{name} t{timestep} {channel.value}: incomplete grid "
                    f"(missing {', '.join(missing)})", 2,
                )
            grids[channel] = grid
        try:
            panoramas = stitch(grids, mode, args.overlap, timestep=timestep)
        except ParameterError as exc:
            return _fail(f"{name} t{timestep}: {exc}", 2)
        for channel, pano in panoramas.items():
            out = directory / stitched_filename(name, timestep, channel)
            write_tiff(out, pano.image)
            written += 1
    print(f"wrote {written} stitched frames to {directory}")
    return 0


def cmd_flatten(args: argparse.Namespace) -> int:
    directory = Path(args.dir)
    if not directory.is_dir():
        return _fail(f"not a directory: {directory}", 2)
    tiles, _, _, offenders = _classify_tiffs(directory)
    if offenders:
        return _fail(
            "files not matching any naming convention:\n  " + "\n  ".join(offenders), 2
        )
    if not tiles:
        return _fail(f"no tile images found in {directory}", 2)

    by_channel: dict[Channel, list[Path]] = defaultdict(list)
    for parsed, path in tiles:
        by_channel[parsed.channel].append(path)

    if args.action == "create":
        for channel, paths in sorted(by_channel.items()):
            images = [read_tiff(p) for p in paths]
            ff = create_flattening(
                images, objective=args.objective, exposure_ms=args.exposure,
            )
            save_flatfield(ff, directory / "resume")
            print(f"{channel.value}: reference from {len(images)} tiles "
                  f"(mean level {ff.mean_level:.1f})")
        return 0

    # apply
    out_dir = directory / "flattened"
    out_dir.mkdir(exist_ok=True)
    corrected = 0
    for channel, paths in sorted(by_channel.items()):
        try:
            ff = load_flatfield(directory / "resume", channel, args.objective)
        except (FileNotFoundError, ParameterError) as exc:
            return _fail(f"{channel.value}: cannot load flattening reference: {exc}", 2)
        for path in paths:
            img = read_tiff(path)
            try:
                result = apply_flattening(img, ff)
            except ParameterError as exc:
                return _fail(f"{path.name}: {exc}", 2)
            write_tiff(out_dir / path.name, result)
            corrected += 1
    print(f"wrote {corrected} corrected tiles to {out_dir}")
    return 0


def cmd_stabilize(args: argparse.Namespace) -> int:
    directory = Path(args.stitched_dir)
    if not directory.is_dir():
        return _fail(f"not a directory: {directory}", 2)
    match = re.fullmatch(r"(\d+)x(\d+)", args.grid)
    if not match:
        return _fail(f"--grid must look like RxC (e.g. 5x5), got {args.grid!r}", 2)
    grid = (int(match.group(1)), int(match.group(2)))

    _, stitched, _, offenders = _classify_tiffs(directory)
    if offenders:
        return _fail(
            "files not matching any naming convention:\n  " + "\n  ".join(offenders), 2
        )
    if not stitched:
        return _fail(f"no stitched frames found in {directory}", 2)

    series: dict[tuple[str, Channel], dict[int, Path]] = defaultdict(dict)
    for parsed, path in stitched:
        series[(parsed.name, parsed.channel)][parsed.t] = path

    names = sorted({name for name, _ in series})
    out_dir = directory / "Stabilized"
    rng = np.random.default_rng(args.seed)
    for name in names:
        channels = [ch for (n, ch) in series if n == name]
        driver = (
            Channel(args.channel) if args.channel
            else next(ch for ch in (Channel.PC, Channel.BF, Channel.FL) if ch in channels)
        )
        if driver not in channels:
            return _fail(f"{name}: no {driver.value} frames to stabilize on", 2)
        frames_by_t = series[(name, driver)]
        timesteps = sorted(frames_by_t)
        if timesteps != list(range(len(timesteps))):
            return _fail(f"{name} {driver.value}: timesteps are not contiguous from 0", 2)
        frames = [frames_by_t[t] for t in timesteps]
        if len(frames) < 2:
            return _fail(f"{name} {driver.value}: need at least 2 frames", 2)
        try:
            _, frame_drift, group = run_stabilization(
                frames, grid, out_dir=out_dir, name=name, channel=driver, rng=rng,
            )
        except ParameterError as exc:
            return _fail(f"{name}: {exc}", 2)
        corrections = cumulative_correction(frame_drift)
        for channel in channels:
            if channel == driver:
                continue
            other = series[(name, channel)]
            for t in sorted(other):
                img = read_tiff(other[t])
                if 0 < t < len(corrections):
                    img = warp_translate(
                        img, Translation(-corrections[t, 0], -corrections[t, 1])
                    )
                write_tiff(out_dir / other[t].name.replace("_stitched", "_stabilized"), img)
        print(
            f"{name}: stabilized {len(frames)} frames on {driver.value}, "
            f"group of {len(group.tiles)} tiles -> {out_dir}"
        )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _config_fail(exc)
    except OSError as exc:
        return _fail(f"cannot read config: {exc}", 2)
    if args.port is not None:
        cfg.port = args.port
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.simulator.seed = args.seed
    from .service import run_server

    print(f"serving on http://{args.host}:{cfg.port}")
    run_server(cfg, host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tilescope",
        description="Automated time-lapse tile acquisition, stitching, "
                    "flattening, and stabilization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("acquire", help="run a full scripted acquisition from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: <data_root>/<name>)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.set_defaults(func=cmd_acquire)

    p = sub.add_parser("stitch", help="stitch tile images in a directory")
    p.add_argument("tile_dir")
    p.add_argument("--mode", choices=sorted(MODE_FLAGS), default="grid-pc")
    p.add_argument("--overlap", type=float, default=0.2)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("flatten", help="create or apply flat-field references")
    p.add_argument("action", choices=("create", "apply"))
    p.add_argument("dir")
    p.add_argument("--objective", default="10X")
    p.add_argument("--exposure", type=float, default=33.0)
    p.set_defaults(func=cmd_flatten)

    p = sub.add_parser("stabilize", help="remove shared drift from stitched frames")
    p.add_argument("stitched_dir")
    p.add_argument("--grid", required=True, help="tile grid as RxC, e.g. 5x5")
    p.add_argument("--channel", choices=[c.value for c in Channel],
                   help="channel whose drift drives the correction")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stabilize)

    p = sub.add_parser("serve", help="start the HTTP control service")
    p.add_argument("--config", required=True)
    p.add_argument("--port", type=int)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
