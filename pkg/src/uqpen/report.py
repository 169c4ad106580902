"""Standalone SVG figures written as plain text.

Numbers are printed with fixed precision and nothing time-dependent is
embedded, so the same inputs always give byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .calibration import ReliabilityData
from .uncertainty import SweepRow

# sequential colormap anchors (dark blue -> teal -> yellow)
_ANCHORS = np.array([
    [68, 1, 84],
    [59, 82, 139],
    [33, 145, 140],
    [94, 201, 98],
    [253, 231, 37],
], dtype=np.float64)


def _f(x: float) -> str:
    return f"{x:.3f}"


def color_for(value: float, vmin: float, vmax: float) -> str:
    t = 0.5 if vmax <= vmin else (value - vmin) / (vmax - vmin)
    t = min(max(t, 0.0), 1.0) * (len(_ANCHORS) - 1)
    i = min(int(math.floor(t)), len(_ANCHORS) - 2)
    rgb = _ANCHORS[i] + (t - i) * (_ANCHORS[i + 1] - _ANCHORS[i])
    return "#{:02x}{:02x}{:02x}".format(*(int(round(c)) for c in rgb))


def _doc(width: int, height: int, body: list[str], title: str, attrs: str = "") -> str:
    head = (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}"{attrs}>\n'
        f"<title>{escape(title)}</title>\n"
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


def _text(x, y, s, size=11, anchor="middle", extra=""):
    return (
        f'<text x="{_f(x)}" y="{_f(y)}" font-family="sans-serif" font-size="{size}" '
        f'text-anchor="{anchor}"{extra}>{escape(str(s))}</text>'
    )


def reliability_svg(rel: ReliabilityData, title: str = "Reliability diagram") -> str:
    """Accuracy bars per confidence bin over the identity line, histogram below."""
    left, top, size, hist_h, gap = 60, 40, 300, 100, 40
    body = [_text(left + size / 2, 22, title, 13)]
    sx = lambda v: left + v * size  # noqa: E731
    sy = lambda v: top + (1 - v) * size  # noqa: E731
    body.append(f'<rect x="{left}" y="{top}" width="{size}" height="{size}" fill="none" stroke="black"/>')
    for lo, hi, h, empty, conf in zip(rel.lower, rel.upper, rel.bar_height, rel.empty, rel.mean_confidence):
        x0, x1 = sx(lo), sx(hi)
        if empty:
            body.append(
                f'<rect class="bar empty" x="{_f(x0)}" y="{_f(sy(0))}" width="{_f(x1 - x0)}" height="0" '
                f'fill="none" stroke="#999" data-lower="{_f(lo)}" data-upper="{_f(hi)}" data-empty="true"/>'
            )
            continue
        body.append(
            f'<rect class="bar" x="{_f(x0)}" y="{_f(sy(h))}" width="{_f(x1 - x0)}" height="{_f(size * h)}" '
            f'fill="#3b528b" stroke="white" data-lower="{_f(lo)}" data-upper="{_f(hi)}" '
            f'data-accuracy="{h:.6f}" data-confidence="{conf:.6f}"/>'
        )
    body.append(
        f'<line class="bisector" x1="{_f(sx(0))}" y1="{_f(sy(0))}" x2="{_f(sx(1))}" y2="{_f(sy(1))}" '
        f'stroke="#d62728" stroke-dasharray="5,4"/>'
    )
    for v in (0.0, 0.5, 1.0):
        body.append(_text(sx(v), top + size + 14, f"{v:.1f}", 10))
        body.append(_text(left - 6, sy(v) + 4, f"{v:.1f}", 10, "end"))
    body.append(_text(left - 40, top + size / 2, "accuracy", 11, "middle",
                      f' transform="rotate(-90 {_f(left - 40)} {_f(top + size / 2)})"'))

    htop = top + size + gap
    peak = max(int(rel.histogram.max()), 1)
    body.append(f'<rect x="{left}" y="{htop}" width="{size}" height="{hist_h}" fill="none" stroke="black"/>')
    for lo, hi, c in zip(rel.lower, rel.upper, rel.histogram):
        hh = hist_h * c / peak
        body.append(
            f'<rect class="hist" x="{_f(sx(lo))}" y="{_f(htop + hist_h - hh)}" width="{_f(sx(hi) - sx(lo))}" '
            f'height="{_f(hh)}" fill="#21918c" stroke="white" data-count="{int(c)}"/>'
        )
    body.append(_text(left + size / 2, htop + hist_h + 16, "confidence", 11))
    body.append(_text(left - 6, htop + 10, str(peak), 10, "end"))
    return _doc(left + size + 30, htop + hist_h + 30, body, title)


def heatmap_svg(matrix, class_names, vmin: float, vmax: float, title: str) -> str:
    m = np.asarray(matrix, dtype=np.float64)
    k = m.shape[0]
    cell = max(8, min(28, 420 // k))
    left, top = 60, 40
    body = [_text(left + k * cell / 2, 22, title, 13)]
    for i in range(k):
        for j in range(k):
            body.append(
                f'<rect x="{left + j * cell}" y="{top + i * cell}" width="{cell}" height="{cell}" '
                f'fill="{color_for(m[i, j], vmin, vmax)}" data-value="{m[i, j]:.6g}"/>'
            )
    step = 1 if k <= 26 else 2
    for i in range(0, k, step):
        body.append(_text(left - 4, top + i * cell + cell * 0.7, class_names[i], 9, "end"))
        body.append(_text(left + i * cell + cell / 2, top + k * cell + 12, class_names[i], 9))
    # legend
    lx = left + k * cell + 20
    lh = k * cell
    n_steps = 50
    for s in range(n_steps):
        v = vmax - (vmax - vmin) * (s + 0.5) / n_steps
        body.append(
            f'<rect x="{lx}" y="{_f(top + lh * s / n_steps)}" width="14" height="{_f(lh / n_steps + 0.5)}" '
            f'fill="{color_for(v, vmin, vmax)}"/>'
        )
    body.append(_text(lx + 18, top + 8, f"{vmax:.4g}", 10, "start", ' class="legend-max"'))
    body.append(_text(lx + 18, top + lh, f"{vmin:.4g}", 10, "start", ' class="legend-min"'))
    attrs = f' data-vmin="{vmin:.6g}" data-vmax="{vmax:.6g}"'
    return _doc(lx + 70, top + k * cell + 30, body, title, attrs)


def per_class_bars_svg(per_class, class_names, title: str = "Uncertainty per class (bits)") -> str:
    """Grouped TU/AU/EU bars per true class."""
    vals = np.nan_to_num(np.asarray(per_class, dtype=np.float64))
    k = vals.shape[0]
    group = 30
    left, top, height = 50, 40, 220
    width = k * group
    peak = max(float(vals.max()), 1e-9)
    colors = ("#440154", "#21918c", "#fde725")
    body = [_text(left + width / 2, 22, title, 13)]
    body.append(f'<line x1="{left}" y1="{top + height}" x2="{left + width}" y2="{top + height}" stroke="black"/>')
    for c in range(k):
        for m in range(3):
            h = height * vals[c, m] / peak
            body.append(
                f'<rect x="{left + c * group + 3 + m * 8}" y="{_f(top + height - h)}" width="8" '
                f'height="{_f(h)}" fill="{colors[m]}" data-value="{vals[c, m]:.6g}"/>'
            )
        body.append(_text(left + c * group + group / 2, top + height + 12, class_names[c], 9))
    for m, name in enumerate(("TU", "AU", "EU")):
        y = top + 12 * m
        body.append(f'<rect x="{left + width + 10}" y="{y}" width="10" height="10" fill="{colors[m]}"/>')
        body.append(_text(left + width + 24, y + 9, name, 10, "start"))
    body.append(_text(left - 6, top + 8, f"{peak:.3g}", 10, "end"))
    return _doc(left + width + 60, top + height + 30, body, title)


def sweep_svg(rows: list[SweepRow], markers=(), title: str = "Accuracy around an entropy threshold") -> str:
    left, top, w, h = 60, 40, 360, 240
    taus = [r.threshold for r in rows]
    tmax = max(taus) if taus and max(taus) > 0 else 1.0
    sx = lambda t: left + w * t / tmax  # noqa: E731
    sy = lambda a: top + h * (1 - a)  # noqa: E731
    body = [_text(left + w / 2, 22, title, 13)]
    body.append(f'<rect x="{left}" y="{top}" width="{w}" height="{h}" fill="none" stroke="black"/>')
    for attr, color, label in (("acc_above", "#3b528b", "TU < threshold"), ("acc_below", "#d62728", "TU >= threshold")):
        pts = [f"{_f(sx(r.threshold))},{_f(sy(getattr(r, attr)))}" for r in rows if not math.isnan(getattr(r, attr))]
        if pts:
            body.append(f'<polyline class="{attr}" points="{" ".join(pts)}" fill="none" stroke="{color}" stroke-width="2"/>')
        y = top + 14 + (0 if attr == "acc_above" else 14)
        body.append(f'<line x1="{left + 8}" y1="{y - 4}" x2="{left + 24}" y2="{y - 4}" stroke="{color}" stroke-width="2"/>')
        body.append(_text(left + 28, y, label, 10, "start"))
    for t in markers:
        body.append(
            f'<line class="marker" x1="{_f(sx(t))}" y1="{top}" x2="{_f(sx(t))}" y2="{top + h}" '
            f'stroke="black" stroke-dasharray="4,3" data-threshold="{t:.3f}"/>'
        )
    for v in (0.0, 0.5, 1.0):
        body.append(_text(left - 6, sy(v) + 4, f"{v:.1f}", 10, "end"))
    body.append(_text(left, top + h + 14, "0", 10))
    body.append(_text(left + w, top + h + 14, f"{tmax:.2f}", 10))
    body.append(_text(left + w / 2, top + h + 28, "entropy threshold (bits)", 11))
    return _doc(left + w + 30, top + h + 40, body, title)


def write_svg(text: str, path) -> None:
    Path(path).write_text(text, encoding="utf-8", newline="\n")
