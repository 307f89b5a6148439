"""Command line interface.

Exit codes: 0 ok, 2 input error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import InputError, NumericalError
from .events import ContrastThresholds, EventStream, Frame, FrameSequence, simulate_events
from .integrator import estimate_contrast, latent_frames
from .losses import format_report, psnr, ssim
from .pipeline import DEFAULT_THRESHOLD, DecompressionConfig, Decompressor
from .testbed import SceneSpec, render
from .voxel import build_volume, normalize_volume

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


def _times(args, t_begin: float = 0.0, t_end: float | None = None) -> np.ndarray:
    if args.times:
        try:
            t = np.array([float(s) for s in args.times.split(",") if s.strip()])
        except ValueError:
            raise InputError(f"bad --times list {args.times!r}")
    elif args.fps is not None and args.duration is not None:
        if args.fps <= 0 or args.duration < 0:
            raise InputError("--fps must be > 0 and --duration >= 0")
        n = int(np.floor(args.duration * args.fps + 1e-9))
        t = t_begin + np.arange(n + 1) / args.fps
    else:
        raise InputError("give --times or both --fps and --duration")
    if t_end is not None:
        t = np.where(np.abs(t - t_end) < 1e-9, t_end, t)
    return t


def _config(args) -> dict:
    return io.read_config(args.config) if getattr(args, "config", None) else {}


def _thresholds(kv: dict, args) -> ContrastThresholds:
    c_pos = args.c_pos if args.c_pos is not None else float(kv.get("c_pos", DEFAULT_THRESHOLD))
    c_neg = args.c_neg if args.c_neg is not None else float(kv.get("c_neg", c_pos))
    return ContrastThresholds(c_pos, c_neg)


def _load_initial(path) -> Frame | None:
    """Manifests carry the timestamp; bare PGM/PPM files get it from the stream."""
    p = Path(path)
    if p.suffix == ".txt":
        f = io.read_frames(p)[0]
        return Frame(f.values, f.timestamp)
    return None


def _load_pair(args):
    """Initial frame and stream with a consistent span.

    EVS1 files carry no span: it starts at ``--t-begin``, else the initial
    frame's timestamp, else the first event, and ends at ``--t-end``, else
    the last event (extended to the latest query time, with a warning).
    """
    initial = _load_initial(args.initial)
    t_begin = args.t_begin if args.t_begin is not None else (
        initial.timestamp if initial is not None else None)
    stream = io.read_events(args.events, t_begin=t_begin, t_end=args.t_end)
    if initial is None:
        initial = io.read_pnm(args.initial, stream.t_begin)
    return initial, stream


def _extend_to(stream, times):
    last = float(np.max(times))
    if last > stream.t_end:
        logging.getLogger("evdecomp").warning(
            "extending stream end %.6g to the last query time %.6g", stream.t_end, last)
        return EventStream(stream.t, stream.x, stream.y, stream.p, stream.width, stream.height,
                           stream.t_begin, last)
    return stream


def _write_events(path, stream):
    if str(path).endswith(".csv") or str(path).endswith(".txt"):
        io.write_events_csv(path, stream)
    else:
        io.write_events_bin(path, stream)


def cmd_synth_scene(args):
    kv = _config(args)
    spec = SceneSpec.from_config(kv)
    seq = render(spec, _times(args, 0.0, spec.duration))
    out = Path(args.out)
    io.write_frames(out, seq, args.format)
    for i, f in enumerate(seq.flows):
        io.write_flow(out / f"gtflow_{i:05d}.flo", f)
    (out / "scene.cfg").write_text(spec.to_config())
    print(f"wrote {len(seq)} frames to {out}")


def cmd_simulate(args):
    kv = _config(args)
    seq = io.read_frames(args.frames)
    if seq.frames.ndim == 4:
        seq = FrameSequence([Frame(f.luminance(), f.timestamp) for f in seq], seq.times)
    log_eps = float(kv.get("log_eps", 1e-3))
    stream = simulate_events(seq, _thresholds(kv, args), log_eps)
    _write_events(args.out, stream)
    print(f"wrote {len(stream)} events to {args.out}")


def cmd_voxelize(args):
    stream = io.read_events(args.events)
    t0 = stream.t_begin if args.t0 is None else args.t0
    t1 = stream.t_end if args.t1 is None else args.t1
    vol = build_volume(stream, t0, t1, args.bins, not args.signed)
    if args.normalize:
        vol = normalize_volume(vol)
    io.write_volume(args.out, vol)
    print(f"wrote volume {vol.data.shape} to {args.out}")


def cmd_integrate(args):
    kv = _config(args)
    initial, stream = _load_pair(args)
    gray = Frame(initial.luminance(), initial.timestamp)
    times = _times(args, stream.t_begin)
    if args.t_end is None:
        stream = _extend_to(stream, times)
    seq = latent_frames(gray, stream, times, _thresholds(kv, args), float(kv.get("log_eps", 1e-3)))
    io.write_frames(args.out, seq, args.format)
    print(f"wrote {len(seq)} frames to {args.out}")


def cmd_decompress(args):
    kv = _config(args)
    if args.seq:
        kv["seq"] = "true"
    for key in ("c_pos", "c_neg"):
        if getattr(args, key) is not None:
            kv[key] = getattr(args, key)
    cfg = DecompressionConfig.from_config(kv)
    initial, stream = _load_pair(args)
    pairs = None
    if args.calib:
        cal = list(io.read_frames(args.calib))
        pairs = [(Frame(a.luminance(), a.timestamp), Frame(b.luminance(), b.timestamp))
                 for a, b in zip(cal[:-1], cal[1:])]
    if args.times or args.fps is not None:
        times = _times(args, stream.t_begin)
    elif cfg.times is not None:
        times = np.array(cfg.times)
    else:
        raise InputError("no query times: give --times, --fps/--duration or times= in the config")
    if args.t_end is None:
        stream = _extend_to(stream, times)
    dec = Decompressor(initial, stream, cfg, pairs)
    result = dec.run(times)
    result.save(args.out, args.format)
    print(f"fitted in {result.timing['fit_seconds']:.3f} s, "
          f"{len(times)} frames in {sum(result.timing['query_seconds']):.3f} s -> {args.out}")


def cmd_evaluate(args):
    pred = io.read_frames(args.pred)
    gt = io.read_frames(args.gt)
    rows = []
    b = args.border
    for f in pred:
        j = np.flatnonzero(np.abs(gt.times - f.timestamp) <= 1e-9)
        if j.size == 0:
            raise InputError(f"no ground-truth frame at t={f.timestamp!r}")
        g = gt.frames[int(j[0])]
        p = f.values
        if b:
            p, g = p[b:-b, b:-b], g[b:-b, b:-b]
        rows.append({"t": f.timestamp, "psnr": psnr(p, g), "ssim": ssim(p, g)})
    mean = {"mean_psnr": float(np.mean([r["psnr"] for r in rows])),
            "mean_ssim": float(np.mean([r["ssim"] for r in rows])), "frames": len(rows)}
    text = format_report(mean, rows)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_calibrate(args):
    kv = _config(args)
    seq = io.read_frames(args.frames)
    stream = io.read_events(args.events)
    frames = [Frame(f.luminance(), f.timestamp) for f in seq]
    pairs = list(zip(frames[:-1], frames[1:]))
    th = estimate_contrast(pairs, stream, float(kv.get("log_eps", 1e-3)), args.method)
    sys.stdout.write(f"c_pos={th.c_pos!r}\nc_neg={th.c_neg!r}\n"
                     f"defaulted={th.defaulted or 'none'}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evdecomp", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def timeargs(p):
        p.add_argument("--times", help="comma separated query times (s)")
        p.add_argument("--fps", type=float)
        p.add_argument("--duration", type=float)

    def span(p):
        p.add_argument("--t-begin", type=float, help="stream start (EVS1 carries none)")
        p.add_argument("--t-end", type=float, help="stream end")

    def thresh(p):
        p.add_argument("--c-pos", type=float)
        p.add_argument("--c-neg", type=float)

    p = sub.add_parser("synth-scene", help="render an analytic scene to frames + manifest")
    p.add_argument("--config", required=True)
    timeargs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("pgm", "ppm"))
    p.set_defaults(func=cmd_synth_scene)

    p = sub.add_parser("simulate", help="frames -> events")
    p.add_argument("--frames", required=True, help="frame manifest")
    p.add_argument("--config")
    thresh(p)
    p.add_argument("--out", required=True, help=".csv for text, anything else EVS1")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("voxelize", help="events -> EVV1 volume")
    p.add_argument("--events", required=True)
    p.add_argument("--t0", type=float)
    p.add_argument("--t1", type=float)
    p.add_argument("--bins", type=int, default=60)
    p.add_argument("--signed", action="store_true", help="single signed plane")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("integrate", help="initial frame + events -> frames by direct integration")
    p.add_argument("--initial", required=True, help="PGM/PPM or a manifest (first frame)")
    p.add_argument("--events", required=True)
    p.add_argument("--config")
    thresh(p)
    timeargs(p)
    span(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("pgm", "ppm"))
    p.set_defaults(func=cmd_integrate)

    p = sub.add_parser("decompress", help="initial frame + events -> frames, flows, report")
    p.add_argument("--initial", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--config")
    p.add_argument("--calib", help="manifest of frames for threshold calibration")
    thresh(p)
    timeargs(p)
    span(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("pgm", "ppm"))
    p.add_argument("--seq", action="store_true", help="force sequential, deterministic mode")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("evaluate", help="PSNR/SSIM of predicted vs ground-truth frames")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--border", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("calibrate", help="frames + events -> contrast thresholds")
    p.add_argument("--frames", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--config")
    p.add_argument("--method", choices=("events", "window"), default="events")
    p.set_defaults(func=cmd_calibrate)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (InputError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
