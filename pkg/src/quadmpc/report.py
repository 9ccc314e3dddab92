"""Output artifacts: trajectory CSV, summary CSVs, run manifests and static SVG line charts."""
import csv
import json
import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .model import INPUT_NAMES, NX, STATE_NAMES

CSV_SCHEMA_VERSION = 1
TRAJECTORY_COLUMNS = ["k", "t"] + list(STATE_NAMES) + list(INPUT_NAMES) + ["status", "solve_ms"]
ESTIMATE_COLUMNS = ([f"xh{i}" for i in range(1, NX + 2)] + [f"xr{i}" for i in range(1, NX + 1)]
                    + [f"ur{i}" for i in range(1, len(INPUT_NAMES) + 1)])


def fmt(v):
    """17 significant digits so that values round-trip exactly; None becomes an empty cell."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    return "%.17g" % v


def trajectory_rows(lg):
    """Header plus one row per logged state; the last row has no input and status ``final``."""
    with_est = lg.xhat is not None
    header = TRAJECTORY_COLUMNS + (ESTIMATE_COLUMNS if with_est else [])
    rows = [header]
    for k in range(lg.x.shape[0]):
        last = k == lg.steps
        row = [fmt(k), fmt(lg.t[k])] + [fmt(v) for v in lg.x[k]]
        if last:
            row += [""] * len(INPUT_NAMES) + ["final", ""]
        else:
            row += [fmt(v) for v in lg.u[k]] + [lg.status[k], fmt(1e3 * lg.solve_time[k])]
        if with_est:
            row += [fmt(v) for v in lg.xhat[k]]
            if last:
                row += [""] * (NX + len(INPUT_NAMES))
            else:
                row += [fmt(v) for v in lg.x_ref[k]] + [fmt(v) for v in lg.u_ref[k]]
        rows.append(row)
    return rows


def write_csv(path, rows):
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for r in rows:
            writer.writerow([fmt(v) if not isinstance(v, str) else v for v in r])
    return path


def write_trajectory(path, lg):
    return write_csv(path, trajectory_rows(lg))


def read_csv(path):
    with Path(path).open(newline="") as fh:
        return list(csv.reader(fh))


def write_manifest(path, data):
    path = Path(path)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


# ---------------------------------------------------------------- SVG plots

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _nice_ticks(lo, hi, count=5):
    if not np.isfinite(lo) or not np.isfinite(hi):
        return [0.0]
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-9 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


def line_chart(path, x, series, title="", xlabel="t [s]", ylabel="", width=720, height=400):
    """Write a static SVG line chart. ``series`` maps legend labels to y arrays."""
    left, right, top, bottom = 70, 150, 40, 50
    pw, ph = width - left - right, height - top - bottom
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    finite = [v[np.isfinite(v)] for v in ys.values()]
    finite = [f for f in finite if f.size]
    ylo = min((float(f.min()) for f in finite), default=-1.0)
    yhi = max((float(f.max()) for f in finite), default=1.0)
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = (float(x.min()), float(x.max())) if x.size else (0.0, 1.0)
    if xhi - xlo < 1e-12:
        xhi = xlo + 1.0

    def px(v):
        return left + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return top + (yhi - v) / (yhi - ylo) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
           f'{escape(title)}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for tx in _nice_ticks(xlo, xhi):
        X = px(tx)
        out.append(f'<line x1="{X:.2f}" y1="{top + ph}" x2="{X:.2f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{X:.2f}" y="{top + ph + 18}" text-anchor="middle">{tx:g}</text>')
    for ty in _nice_ticks(ylo, yhi):
        Y = py(ty)
        out.append(f'<line x1="{left - 5}" y1="{Y:.2f}" x2="{left + pw}" y2="{Y:.2f}" '
                   f'stroke="#dddddd"/>')
        out.append(f'<text x="{left - 8}" y="{Y + 4:.2f}" text-anchor="end">{ty:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 10}" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, y) in enumerate(ys.items()):
        color = _PALETTE[i % len(_PALETTE)]
        n = min(len(x), len(y))
        pts = [f"{px(x[j]):.2f},{py(y[j]):.2f}" for j in range(n) if np.isfinite(y[j])]
        if pts:
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                       f'points="{" ".join(pts)}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 36}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 42}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def plot_states(path, lg, title="states"):
    series = {name: lg.x[:, i] for i, name in enumerate(STATE_NAMES[:6])}
    return line_chart(path, lg.t, series, title=title, ylabel="pose [m, rad]")


def plot_inputs(path, lg, title="inputs"):
    series = {name: lg.u[:, i] for i, name in enumerate(INPUT_NAMES)}
    return line_chart(path, lg.t[:-1], series, title=title, ylabel="input [N, N m]")
