"""File formats: events (CSV / EVS1), frames (PGM / PPM + manifest), event
volumes (EVV1), K-plane checkpoints (KPF1), trajectory fields (TRJ1), flows
(FLO1) and ``key=value`` configs.

All binary formats are little-endian.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import InputError
from .events import EventStream, Frame, FrameSequence
from .kplanes import AXES, FeaturePlane, KPlaneField
from .trajectory import MotionBasis, TrajectoryField
from .voxel import EventVolume

__all__ = ["read_config", "write_config", "read_events", "write_events_csv", "read_events_csv",
           "write_events_bin", "read_events_bin", "write_pnm", "read_pnm", "write_frames",
           "read_frames", "write_volume", "read_volume", "write_kplanes", "read_kplanes",
           "write_trajectory", "read_trajectory", "write_flow", "read_flow"]

_EV_REC = np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


def _open_failed(path, err):
    return InputError(f"cannot read {path}: {err}")


# ---------------------------------------------------------------- config

def read_config(path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise _open_failed(path, e)
    return parse_config(text)


def parse_config(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {n}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_config(path, kv: dict) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in kv.items()))


# ---------------------------------------------------------------- events

def write_events_csv(path, stream: EventStream) -> None:
    """One ``t x y p`` line per event under a ``#`` geometry header."""
    with open(path, "w") as fh:
        fh.write(f"# width={stream.width} height={stream.height} "
                 f"t_begin={stream.t_begin!r} t_end={stream.t_end!r}\n")
        for t, x, y, p in zip(stream.t.tolist(), stream.x.tolist(), stream.y.tolist(),
                              stream.p.tolist()):
            fh.write(f"{t!r} {x} {y} {p}\n")


def read_events_csv(path, width: int | None = None, height: int | None = None,
                    t_begin: float | None = None, t_end: float | None = None) -> EventStream:
    """Geometry and span come from the header unless given explicitly."""
    meta = {}
    rows = []
    try:
        fh = open(path)
    except OSError as e:
        raise _open_failed(path, e)
    with fh:
        for n, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                for tok in s[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            parts = s.split()
            if len(parts) != 4:
                raise InputError(f"{path}:{n}: expected 't x y p', got {s!r}")
            try:
                rows.append((float(parts[0]), int(parts[1]), int(parts[2]), int(parts[3])))
            except ValueError:
                raise InputError(f"{path}:{n}: malformed event {s!r}")
    width = width if width is not None else meta.get("width")
    height = height if height is not None else meta.get("height")
    if width is None or height is None:
        raise InputError(f"{path}: sensor geometry missing (no header, none given)")
    if t_begin is None and "t_begin" in meta:
        t_begin = float(meta["t_begin"])
    if t_end is None and "t_end" in meta:
        t_end = float(meta["t_end"])
    a = np.array(rows, dtype=np.float64).reshape(-1, 4)
    return EventStream(a[:, 0], a[:, 1].astype(np.int64), a[:, 2].astype(np.int64),
                       a[:, 3].astype(np.int8), int(width), int(height), t_begin, t_end)


def write_events_bin(path, stream: EventStream) -> None:
    rec = np.empty(len(stream), dtype=_EV_REC)
    rec["t"], rec["x"], rec["y"], rec["p"] = stream.t, stream.x, stream.y, stream.p
    with open(path, "wb") as fh:
        fh.write(b"EVS1" + struct.pack("<IIQ", stream.width, stream.height, len(stream)))
        fh.write(rec.tobytes())


def read_events_bin(path, t_begin: float | None = None, t_end: float | None = None) -> EventStream:
    """The format carries no span; it defaults to the first/last event time."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise _open_failed(path, e)
    if data[:4] != b"EVS1" or len(data) < 20:
        raise InputError(f"{path}: not an EVS1 event file")
    width, height, count = struct.unpack("<IIQ", data[4:20])
    if len(data) != 20 + count * _EV_REC.itemsize:
        raise InputError(f"{path}: truncated EVS1 file ({count} events declared)")
    rec = np.frombuffer(data, dtype=_EV_REC, count=count, offset=20)
    return EventStream(rec["t"].astype(np.float64), rec["x"].astype(np.int64),
                       rec["y"].astype(np.int64), rec["p"].astype(np.int8), width, height,
                       t_begin, t_end)


def read_events(path, **kw) -> EventStream:
    """Dispatch on content: EVS1 magic means binary, anything else CSV."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(4)
    except OSError as e:
        raise _open_failed(path, e)
    if head == b"EVS1":
        kw.pop("width", None)
        kw.pop("height", None)
        return read_events_bin(path, **kw)
    return read_events_csv(path, **kw)


# ---------------------------------------------------------------- frames

def write_pnm(path, frame: Frame | np.ndarray) -> None:
    """16-bit binary PGM (P5) or PPM (P6); values in [0, 1] map to 0..65535."""
    v = frame.values if isinstance(frame, Frame) else np.asarray(frame, dtype=np.float64)
    magic = b"P5" if v.ndim == 2 else b"P6"
    q = np.rint(np.clip(v, 0.0, 1.0) * 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{v.shape[1]} {v.shape[0]}\n65535\n".encode())
        fh.write(q.tobytes())


def _pnm_tokens(data: bytes, count: int):
    toks, pos = [], 0
    while len(toks) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError("truncated PNM header")
        toks.append(data[start:pos])
    return toks, pos + 1


def read_pnm(path, timestamp: float = 0.0) -> Frame:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise _open_failed(path, e)
    if data[:2] not in (b"P5", b"P6"):
        raise InputError(f"{path}: only binary PGM (P5) / PPM (P6) are supported")
    (magic, w, h, maxval), off = _pnm_tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    ch = 1 if magic == b"P5" else 3
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    n = w * h * ch
    if len(data) - off < n * dt.itemsize:
        raise InputError(f"{path}: truncated pixel data")
    v = np.frombuffer(data, dtype=dt, count=n, offset=off).astype(np.float64) / maxval
    return Frame(v.reshape((h, w) if ch == 1 else (h, w, 3)), timestamp)


def write_frames(out_dir, frames, fmt: str | None = None, prefix: str = "frame",
                 manifest: str = "manifest.txt") -> Path:
    """Write frames plus an ``index timestamp filename`` manifest; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = list(frames)
    lines = []
    for i, f in enumerate(frames):
        ext = fmt or ("pgm" if f.channels == 1 else "ppm")
        if ext not in ("pgm", "ppm"):
            raise InputError(f"unknown frame format {ext!r}")
        if (ext == "pgm") != (f.channels == 1):
            f = Frame(f.luminance() if ext == "pgm" else np.repeat(f.values[..., None], 3, -1),
                      f.timestamp)
        name = f"{prefix}_{i:05d}.{ext}"
        write_pnm(out / name, f)
        lines.append(f"{i} {f.timestamp!r} {name}\n")
    path = out / manifest
    path.write_text("".join(lines))
    return path


def read_frames(manifest_path) -> FrameSequence:
    path = Path(manifest_path)
    try:
        text = path.read_text()
    except OSError as e:
        raise _open_failed(path, e)
    frames = []
    for n, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        if len(parts) != 3:
            raise InputError(f"{path}:{n}: expected 'index timestamp filename'")
        frames.append((int(parts[0]), float(parts[1]), parts[2]))
    if not frames:
        raise InputError(f"{path}: empty manifest")
    frames.sort()
    loaded = [read_pnm(path.parent / name, t) for _, t, name in frames]
    return FrameSequence(loaded, [f.timestamp for f in loaded])


# ---------------------------------------------------------------- binaries

def _read_magic(path, magic: bytes) -> bytes:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise _open_failed(path, e)
    if data[:4] != magic:
        raise InputError(f"{path}: not a {magic.decode()} file")
    return data


def _f32(data: bytes, off: int, n: int, path) -> tuple[np.ndarray, int]:
    if len(data) < off + 4 * n:
        raise InputError(f"{path}: truncated data")
    return np.frombuffer(data, "<f4", n, off).astype(np.float64), off + 4 * n


def write_volume(path, vol: EventVolume) -> None:
    p, b, h, w = vol.data.shape
    with open(path, "wb") as fh:
        fh.write(b"EVV1" + struct.pack("<IIII", p, b, h, w))
        fh.write(vol.data.astype("<f4").tobytes())


def read_volume(path) -> EventVolume:
    """Window and normalisation state are not stored; window reads as ``(0, 1)``."""
    data = _read_magic(path, b"EVV1")
    p, b, h, w = struct.unpack("<IIII", data[4:20])
    v, _ = _f32(data, 20, p * b * h * w, path)
    return EventVolume(v.reshape(p, b, h, w), (0.0, 1.0), polarity_separated=(p == 2))


def write_kplanes(path, fld: KPlaneField) -> None:
    """``KPF1``, u32 scale count, u32 (Ra, Rb, F) per plane, u32 (out, din, hidden),
    then every parameter as f32 in :meth:`KPlaneField.parameters` order."""
    head = [struct.pack("<I", len(fld.scales))]
    for triple in fld.scales:
        for pl in triple:
            head.append(struct.pack("<III", *pl.values.shape))
    hidden = 0 if fld.w_hidden is None else fld.w_hidden.shape[0]
    din = fld.features * len(fld.scales)
    head.append(struct.pack("<III", fld.out_channels, din, hidden))
    with open(path, "wb") as fh:
        fh.write(b"KPF1" + b"".join(head))
        for arr in fld.parameters().values():
            fh.write(np.asarray(arr, dtype="<f4").tobytes())


def read_kplanes(path) -> KPlaneField:
    data = _read_magic(path, b"KPF1")
    (n_scales,), off = struct.unpack_from("<I", data, 4), 8
    dims = []
    for _ in range(3 * n_scales):
        dims.append(struct.unpack_from("<III", data, off))
        off += 12
    out_ch, din, hidden = struct.unpack_from("<III", data, off)
    off += 12
    scales = []
    for s in range(n_scales):
        triple = []
        for a, d in zip(AXES, dims[3 * s:3 * s + 3]):
            v, off = _f32(data, off, int(np.prod(d)), path)
            triple.append(FeaturePlane(a, v.reshape(d)))
        scales.append(tuple(triple))
    w_h = b_h = None
    if hidden:
        w_h, off = _f32(data, off, hidden * din, path)
        b_h, off = _f32(data, off, hidden, path)
        w_h = w_h.reshape(hidden, din)
    width = hidden or din
    weight, off = _f32(data, off, out_ch * width, path)
    bias, off = _f32(data, off, out_ch, path)
    return KPlaneField(scales, weight.reshape(out_ch, width), bias, w_h, b_h)


def write_trajectory(path, fld: TrajectoryField, basis_path=None) -> None:
    """``TRJ1``, u32 H, u32 W, u32 K, f64 t0, f64 t1, f32 coefficients (H, W, 2K).

    The basis descriptor goes to ``basis_path`` (default: ``<path>.basis``).
    """
    h, w = fld.shape
    with open(path, "wb") as fh:
        fh.write(b"TRJ1" + struct.pack("<IIIdd", h, w, fld.K, fld.t0, fld.t1))
        fh.write(fld.coefficients.astype("<f4").tobytes())
    Path(basis_path or f"{os.fspath(path)}.basis").write_text(fld.basis.describe())


def read_trajectory(path, basis_path=None) -> TrajectoryField:
    data = _read_magic(path, b"TRJ1")
    h, w, k, t0, t1 = struct.unpack_from("<IIIdd", data, 4)
    coef, _ = _f32(data, 32, h * w * 2 * k, path)
    bp = Path(basis_path or f"{os.fspath(path)}.basis")
    basis = MotionBasis.parse(bp.read_text()) if bp.exists() else MotionBasis("polynomial", k)
    if basis.K != k:
        raise InputError(f"{bp}: basis has K={basis.K}, coefficients K={k}")
    return TrajectoryField(basis, coef.reshape(h, w, 2 * k), t0, t1)


def write_flow(path, flow: np.ndarray) -> None:
    """``FLO1``, u32 H, u32 W, then f32 ``(dx, dy)`` pairs row-major."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise InputError("flow must be (H, W, 2)")
    with open(path, "wb") as fh:
        fh.write(b"FLO1" + struct.pack("<II", *flow.shape[:2]))
        fh.write(flow.astype("<f4").tobytes())


def read_flow(path) -> np.ndarray:
    data = _read_magic(path, b"FLO1")
    h, w = struct.unpack_from("<II", data, 4)
    v, _ = _f32(data, 12, h * w * 2, path)
    return v.reshape(h, w, 2)
