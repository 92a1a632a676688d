"""Dependency-free grouped bar charts as standalone SVG.

Output is a pure function of the rows, so charts regenerate byte-identically
from the sweep CSV.
"""
from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def grouped_bars(groups: list[str], series: dict[str, list[float]], title: str,
                 y_label: str, y_min: float = 0.0, y_max: float = 1.0,
                 width: int = 720, height: int = 360) -> str:
    """``series`` maps a legend name to one value per group; NaN draws nothing."""
    left, right, top, bottom = 60, 20, 40, 70
    plot_w = width - left - right
    plot_h = height - top - bottom
    n_series = max(1, len(series))
    group_w = plot_w / max(1, len(groups))
    bar_w = group_w * 0.8 / n_series

    def y_of(v):
        v = min(max(v, y_min), y_max)
        return top + plot_h * (1 - (v - y_min) / (y_max - y_min))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for i in range(6):
        v = y_min + (y_max - y_min) * i / 5
        y = y_of(v)
        out.append(f'<line x1="{left}" x2="{width - right}" y1="{y:.1f}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.1f}" text-anchor="end">{v:.2f}</text>')
    out.append(
        f'<text x="14" y="{top + plot_h / 2:.1f}" transform="rotate(-90 14 {top + plot_h / 2:.1f})" '
        f'text-anchor="middle">{escape(y_label)}</text>'
    )
    for s, (name, values) in enumerate(series.items()):
        color = PALETTE[s % len(PALETTE)]
        for g, v in enumerate(values):
            if v != v:  # NaN
                continue
            x = left + g * group_w + group_w * 0.1 + s * bar_w
            y = y_of(v)
            out.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{top + plot_h - y:.1f}" '
                f'fill="{color}"><title>{escape(name)}: {v:.4f}</title></rect>'
            )
        lx = left + s * 150
        out.append(f'<rect x="{lx}" y="{height - 22}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{lx + 14}" y="{height - 13}">{escape(name)}</text>')
    for g, name in enumerate(groups):
        x = left + (g + 0.5) * group_w
        out.append(f'<text x="{x:.1f}" y="{top + plot_h + 16}" text-anchor="middle">{escape(name)}</text>')
    out.append(f'<line x1="{left}" x2="{width - right}" y1="{top + plot_h}" y2="{top + plot_h}" stroke="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
