"""Rect-based SVG bar chart of mean-IoU per variant."""
from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np


def bar_chart(labels, values, title="mean-IoU per variant", width=640, height=360):
    """Return SVG text with one bar per label; values are clipped to [0, 1]."""
    labels = [str(x) for x in labels]
    values = [float(v) for v in values]
    left, right, top, bottom = 50, 20, 40, 90
    plot_w = width - left - right
    plot_h = height - top - bottom
    n = max(len(values), 1)
    slot = plot_w / n
    bar = slot * 0.7
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="22" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
    ]
    for tick in np.linspace(0.0, 1.0, 6):
        y = top + plot_h * (1.0 - tick)
        out.append(f'<line x1="{left}" y1="{y:.1f}" x2="{left + plot_w}" y2="{y:.1f}" '
                   f'stroke="#ddd" stroke-width="1"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10">{tick:.1f}</text>')
    for i, (name, v) in enumerate(zip(labels, values)):
        h = plot_h * min(max(v, 0.0), 1.0) if np.isfinite(v) else 0.0
        x = left + i * slot + (slot - bar) / 2
        cx = x + bar / 2
        out.append(f'<rect x="{x:.1f}" y="{top + plot_h - h:.1f}" width="{bar:.1f}" height="{h:.1f}" '
                   f'fill="#4878a8"><title>{escape(name)}: {v:.4f}</title></rect>')
        out.append(f'<text x="{cx:.1f}" y="{top + plot_h - h - 4:.1f}" text-anchor="middle" '
                   f'font-family="sans-serif" font-size="10">{v:.3f}</text>')
        ly = top + plot_h + 12
        out.append(f'<text x="{cx:.1f}" y="{ly}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="10" transform="rotate(-40 {cx:.1f} {ly})">{escape(name)}</text>')
    out.append(f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" '
               f'stroke="black" stroke-width="1"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def variant_means(rows):
    """Average ``mean_iou`` of CSV rows per variant, in first-seen order."""
    acc = {}
    for r in rows:
        acc.setdefault(r["variant"], []).append(float(r["mean_iou"]))
    return list(acc), [float(np.mean(v)) for v in acc.values()]
