"""State files, CSV/JSON outputs and a small SVG line-chart writer."""

from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .analysis import ENTROPY_HEADER, OVERLAP_HEADER, SWEEP_HEADER

MAGIC = b"SGNC"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")
SCHEMA_VERSION = 1


class StateFileError(ValueError):
    pass


def write_states(path, vectors, n_sites: int, n_up: int) -> None:
    """Write ``vectors`` (dim,) or (dim, count) as little-endian (re, im) float64 pairs."""
    V = np.asarray(vectors)
    if V.ndim == 1:
        V = V[:, None]
    body = np.empty((V.shape[1], V.shape[0], 2), dtype="<f8")
    body[..., 0] = np.real(V).T
    body[..., 1] = np.imag(V).T if np.iscomplexobj(V) else 0.0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, n_sites, n_up, V.shape[1]))
        fh.write(body.tobytes())


def read_states(path):
    """Return ``(vectors (dim, count) complex128, n_sites, n_up)``."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise StateFileError("truncated header")
    magic, version, n_sites, n_up, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise StateFileError(f"bad magic {magic!r}")
    if version != VERSION:
        raise StateFileError(f"unsupported version {version}")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    dim = math.comb(n_sites, n_up)
    if data.size != 2 * dim * count:
        raise StateFileError(f"expected {count} vectors of dimension {dim}")
    pairs = data.reshape(count, dim, 2)
    out = np.empty((dim, count), dtype=np.complex128)
    # assign parts separately: re + 1j * im would turn -0.0 into +0.0
    out.real = pairs[..., 0].T
    out.imag = pairs[..., 1].T
    return out, n_sites, n_up


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, rows, meta=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            w.writerow([_fmt(x) for x in row])
    if meta is not None:
        write_meta(path, meta)


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, list(r)


def write_meta(path, meta) -> Path:
    side = Path(str(path) + ".meta.json")
    side.write_text(json.dumps({"schema_version": SCHEMA_VERSION, **meta}, indent=2, default=str) + "\n")
    return side


def write_sweep_csv(path, table, meta=None) -> None:
    write_csv(path, SWEEP_HEADER, [r.csv_fields() for r in table.rows], meta)


def write_entropy_csv(path, rows, meta=None) -> None:
    write_csv(path, ENTROPY_HEADER, rows, meta)


def write_overlap_csv(path, rows, meta=None) -> None:
    write_csv(path, OVERLAP_HEADER, rows, meta)


def write_search_json(path, result, meta=None) -> None:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "n_evaluated": result.n_evaluated,
        "n_skipped_nonreal": result.n_skipped_nonreal,
        "wall_time": result.wall_time,
        "search": result.meta,
        "ranked": result.to_records(),
        "config": meta or {},
    }
    Path(path).write_text(json.dumps(doc, indent=2, default=str) + "\n")


# --------------------------------------------------------------------------
# SVG
# --------------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    first = math.ceil(lo / step - 1e-9) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def svg_line_chart(series, xlabel="J2", ylabel="<Sign>", title="", width=640, height=420) -> str:
    """``series`` maps a legend label to ``(xs, ys)``; NaN points are skipped."""
    pts = [(x, y) for xs, ys in series.values() for x, y in zip(xs, ys) if np.isfinite(y)]
    if not pts:
        raise ValueError("nothing to plot")
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
    if x1 == x0:
        x1 = x0 + 1
    pad = 0.05 * (y1 - y0 or 1)
    y0, y1 = y0 - pad, y1 + pad
    L, R, T, B = 60, 130, 30, 50
    pw, ph = width - L - R, height - T - B

    def sx(x):
        return L + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return T + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="12">',
           '<rect width="100%" height="100%" fill="white"/>',
           f'<rect x="{L}" y="{T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{sx(t):.1f}" y1="{T + ph}" x2="{sx(t):.1f}" y2="{T + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(t):.1f}" y="{T + ph + 18}" text-anchor="middle">{t:g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{L - 5}" y1="{sy(t):.1f}" x2="{L}" y2="{sy(t):.1f}" stroke="black"/>')
        out.append(f'<text x="{L - 8}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{L + pw / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{T + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 15 {T + ph / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{L + pw / 2}" y="18" text-anchor="middle">{escape(title)}</text>')
    for n, (label, (xs, ys)) in enumerate(series.items()):
        color = _COLORS[n % len(_COLORS)]
        path = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(xs, ys) if np.isfinite(y))
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = T + 15 + 18 * n
        out.append(f'<line x1="{L + pw + 10}" y1="{ly}" x2="{L + pw + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{L + pw + 35}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, series, **kwargs) -> None:
    Path(path).write_text(svg_line_chart(series, **kwargs))
