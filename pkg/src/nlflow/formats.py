"""Serialization: NLFIELD fields, PGM masks, dual dumps, CSV, configs.

Text is ASCII with '.' decimals and LF line endings; binary payloads are
little-endian 64-bit IEEE floats, row-major, so that bin64 round-trips
are bit-identical.  All writers go through a temp file plus rename.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .errors import ConfigError, FormatError
from .frac_energy import FracDual, FracEnergyParams, pair_graph
from .grid import GridSpec, ScalarField, SetMask, ball_offsets, fitting_windows
from .osc_energy import OscDual


def atomic_write(path: str, payload: bytes):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-nlflow-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _spec_header(spec: GridSpec) -> str:
    dims = " ".join(str(n) for n in spec.dims)
    return "%d %s %s %d" % (spec.ndim, dims, repr(float(spec.dx)), spec.halo)


def _parse_spec_line(line: str) -> GridSpec:
    parts = line.split()
    try:
        nd = int(parts[0])
        dims = tuple(int(x) for x in parts[1:1 + nd])
        dx = float(parts[1 + nd])
        halo = int(parts[2 + nd])
    except (ValueError, IndexError) as exc:
        raise FormatError("bad grid header %r" % line) from exc
    return GridSpec(dims, dx, halo)


def write_field(path: str, field: ScalarField, mode: str = "bin64"):
    if mode not in ("bin64", "ascii"):
        raise ValueError("mode must be bin64 or ascii")
    head = "NLFIELD v1\n%s\n%s\n" % (_spec_header(field.spec), mode)
    if mode == "bin64":
        payload = head.encode("ascii") + field.values.astype("<f8").tobytes()
    else:
        body = "\n".join("%.17g" % v for v in field.values.ravel())
        payload = (head + body + "\n").encode("ascii")
    atomic_write(path, payload)


def read_field(path: str) -> ScalarField:
    with open(path, "rb") as f:
        data = f.read()
    try:
        l1, rest = data.split(b"\n", 1)
        l2, rest = rest.split(b"\n", 1)
        l3, rest = rest.split(b"\n", 1)
    except ValueError as exc:
        raise FormatError("truncated NLFIELD file") from exc
    if l1.strip() != b"NLFIELD v1":
        raise FormatError("not an NLFIELD v1 file")
    spec = _parse_spec_line(l2.decode("ascii"))
    mode = l3.strip().decode("ascii")
    n = spec.n_cells
    if mode == "bin64":
        vals = np.frombuffer(rest[: 8 * n], dtype="<f8")
        if vals.shape[0] != n:
            raise FormatError("NLFIELD payload has %d of %d values" % (vals.shape[0], n))
    elif mode == "ascii":
        vals = np.array([float(x) for x in rest.split()], dtype=np.float64)
        if vals.shape[0] != n:
            raise FormatError("NLFIELD payload has %d of %d values" % (vals.shape[0], n))
    else:
        raise FormatError("unknown NLFIELD mode %r" % mode)
    return ScalarField(spec, vals.reshape(spec.dims).copy())


def write_mask_pgm(path: str, mask: SetMask, mode: str = "P5"):
    """Plain or binary PGM; member cells are 255.  2-D masks only."""
    if mask.spec.ndim != 2:
        raise FormatError("PGM export is two-dimensional")
    if mode not in ("P2", "P5"):
        raise ValueError("mode must be P2 or P5")
    h, w = mask.spec.dims
    vals = np.where(mask.member, 255, 0).astype(np.uint8)
    head = "%s\n%d %d\n255\n" % (mode, w, h)
    if mode == "P5":
        payload = head.encode("ascii") + vals.tobytes()
    else:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in vals)
        payload = (head + body + "\n").encode("ascii")
    atomic_write(path, payload)


def read_mask_pgm(path: str, spec: GridSpec | None = None) -> SetMask:
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    # header: magic, width, height, maxval; comments allowed
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic = tokens[0].decode("ascii")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == "P5":
        pos += 1  # single whitespace after maxval
        vals = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    elif magic == "P2":
        vals = np.array([int(x) for x in data[pos:].split()], dtype=np.int64)
    else:
        raise FormatError("unsupported PGM magic %r" % magic)
    if vals.shape[0] != w * h:
        raise FormatError("PGM payload has %d of %d samples" % (vals.shape[0], w * h))
    member = vals.reshape(h, w) > maxval // 2
    if spec is None:
        spec = GridSpec((h, w), 1.0, 0)
    elif spec.dims != (h, w):
        raise FormatError("PGM size %r does not match spec %r" % ((h, w), spec.dims))
    return SetMask(spec, member.copy())


def write_osc_dual(path: str, dual: OscDual):
    head = "NLDUAL-OSC v1\n%s\n%d %s\n" % (
        _spec_header(dual.spec), dual.stencil.size, repr(float(dual.stencil.radius)))
    body = np.concatenate([dual.a, dual.b], axis=1).astype("<f8").tobytes()
    atomic_write(path, head.encode("ascii") + body)


def read_osc_dual(path: str) -> OscDual:
    with open(path, "rb") as f:
        data = f.read()
    try:
        l1, rest = data.split(b"\n", 1)
        l2, rest = rest.split(b"\n", 1)
        l3, rest = rest.split(b"\n", 1)
    except ValueError as exc:
        raise FormatError("truncated NLDUAL-OSC file") from exc
    if l1.strip() != b"NLDUAL-OSC v1":
        raise FormatError("not an NLDUAL-OSC v1 file")
    spec = _parse_spec_line(l2.decode("ascii"))
    parts = l3.split()
    size = int(parts[0])
    radius = float(parts[1])
    stencil = ball_offsets(spec, radius)
    if stencil.size != size:
        raise FormatError("stencil size mismatch: header %d, derived %d" % (size, stencil.size))
    centers, _ = fitting_windows(spec, stencil)
    w = centers.shape[0]
    vals = np.frombuffer(rest[: 8 * 2 * size * w], dtype="<f8")
    if vals.shape[0] != 2 * size * w:
        raise FormatError("NLDUAL-OSC payload size mismatch")
    ab = vals.reshape(w, 2 * size)
    return OscDual(spec, stencil, ab[:, :size].copy(), ab[:, size:].copy())


def write_frac_dual(path: str, dual: FracDual):
    p = dual.graph.params
    head = "NLDUAL-FRAC v1\n%s\n%s %s\n" % (
        _spec_header(dual.graph.spec), repr(float(p.s)), repr(float(p.cutoff)))
    atomic_write(path, head.encode("ascii") + dual.z.astype("<f8").tobytes())


def read_frac_dual(path: str) -> FracDual:
    with open(path, "rb") as f:
        data = f.read()
    try:
        l1, rest = data.split(b"\n", 1)
        l2, rest = rest.split(b"\n", 1)
        l3, rest = rest.split(b"\n", 1)
    except ValueError as exc:
        raise FormatError("truncated NLDUAL-FRAC file") from exc
    if l1.strip() != b"NLDUAL-FRAC v1":
        raise FormatError("not an NLDUAL-FRAC v1 file")
    spec = _parse_spec_line(l2.decode("ascii"))
    parts = l3.split()
    s = float(parts[0])
    cutoff = float(parts[1])
    params = FracEnergyParams.create(spec, s, cutoff)
    graph = pair_graph(spec, params)
    vals = np.frombuffer(rest[: 8 * graph.n_pairs], dtype="<f8")
    if vals.shape[0] != graph.n_pairs:
        raise FormatError("NLDUAL-FRAC payload size mismatch")
    return FracDual(graph, vals.copy())


CSV_COLUMNS = ("t", "area", "perimeter", "equiv_radius", "min_u", "max_u",
               "solver_iters", "residual")


def write_flow_csv(path: str, trajectory):
    lines = [",".join(CSV_COLUMNS)]
    for s in trajectory.steps:
        st = s.stats
        lines.append(",".join([
            "%.17g" % st.t, "%.17g" % st.area, "%.17g" % st.perimeter,
            "%.17g" % st.equiv_radius, "%.17g" % st.min_u, "%.17g" % st.max_u,
            str(st.solver_iters), "%.17g" % st.residual]))
    atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


_CONFIG_KEYS = {
    "energy": str, "r": float, "s": float, "cutoff": float, "h": float,
    "t_max": float, "dims": str, "dx": float, "halo": int, "tol": float,
    "max_iter": int, "seed": int, "levels": str, "outdir": str,
    "record_certificates": bool, "calibration": float,
    "frac_tail_compensation": bool, "dump_masks": bool,
    "radii": str, "weights": str,
}


def parse_config(text: str) -> dict:
    """Flat key=value config; '#' comments; unknown keys are rejected."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError("line %d is not key=value: %r" % (lineno, raw))
        key = key.strip()
        val = val.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError("unknown config key %r" % key)
        typ = _CONFIG_KEYS[key]
        if typ is bool:
            if val.lower() not in ("true", "false", "0", "1"):
                raise ConfigError("key %r wants a boolean, got %r" % (key, val))
            out[key] = val.lower() in ("true", "1")
        elif typ in (int, float):
            try:
                out[key] = typ(val)
            except ValueError as exc:
                raise ConfigError("key %r: bad value %r" % (key, val)) from exc
        else:
            out[key] = val
    return out


def format_config(cfg: dict) -> str:
    lines = []
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, bool):
            val = "true" if val else "false"
        elif isinstance(val, float):
            val = "%.17g" % val
        lines.append("%s=%s" % (key, val))
    return "\n".join(lines) + "\n"
