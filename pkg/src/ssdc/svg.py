"""Hand-rolled SVG line plots (polyline + axes, no dependencies, no timestamps)."""

from __future__ import annotations

WIDTH, HEIGHT = 640, 400
MARGIN = 54
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _extent(series):
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        return 0.0, 1.0, 0.0, 1.0
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x0 == x1:
        x1 = x0 + 1.0
    if y0 == y1:
        y1 = y0 + 1.0
    return x0, x1, y0, y1


def line_plot(series: dict, path, title: str = "", x_label: str = "", y_label: str = ""):
    """Write one SVG with a polyline per (name -> [(x, y), ...]) entry."""
    x0, x1, y0, y1 = _extent(series)
    inner_w = WIDTH - 2 * MARGIN
    inner_h = HEIGHT - 2 * MARGIN

    def sx(x):
        return MARGIN + (x - x0) / (x1 - x0) * inner_w

    def sy(y):
        return HEIGHT - MARGIN - (y - y0) / (y1 - y0) * inner_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" '
        f'y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    if title:
        parts.append(f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
                     f'font-size="15" font-family="sans-serif">{title}</text>')
    if x_label:
        parts.append(f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
                     f'font-size="12" font-family="sans-serif">{x_label}</text>')
    if y_label:
        parts.append(f'<text x="16" y="{HEIGHT / 2:.1f}" text-anchor="middle" font-size="12" '
                     f'font-family="sans-serif" transform="rotate(-90 16 {HEIGHT / 2:.1f})">{y_label}</text>')
    for tick in range(5):
        xv = x0 + (x1 - x0) * tick / 4
        yv = y0 + (y1 - y0) * tick / 4
        parts.append(f'<text x="{sx(xv):.1f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" '
                     f'font-size="10" font-family="sans-serif">{xv:.4g}</text>')
        parts.append(f'<text x="{MARGIN - 6}" y="{sy(yv):.1f}" text-anchor="end" '
                     f'font-size="10" font-family="sans-serif">{yv:.4g}</text>')
    for i, (name, pts) in enumerate(series.items()):
        if not pts:
            continue
        color = PALETTE[i % len(PALETTE)]
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        parts.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{WIDTH - MARGIN + 4}" y="{MARGIN + 14 * i + 10}" font-size="11" '
                     f'font-family="sans-serif" fill="{color}">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
