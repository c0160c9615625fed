"""SVG line charts of a metrics table, one panel per loss column."""

from xml.sax.saxutils import escape

PANEL_W, PANEL_H, PAD = 360, 200, 40
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _panel(x0, y0, title, xs, ys, color):
    out = [f'<g transform="translate({x0},{y0})">']
    out.append(f'<text x="{PANEL_W / 2}" y="14" text-anchor="middle" font-size="12">{escape(title)}</text>')
    w, h = PANEL_W - 2 * PAD, PANEL_H - 2 * PAD
    out.append(f'<rect x="{PAD}" y="{PAD}" width="{w}" height="{h}" fill="none" stroke="#999"/>')
    if xs:
        xlo, xhi = min(xs), max(xs)
        ylo, yhi = min(ys), max(ys)
        xspan = (xhi - xlo) or 1.0
        yspan = (yhi - ylo) or 1.0
        pts = [(PAD + w * (x - xlo) / xspan, PAD + h - h * (y - ylo) / yspan) for x, y in zip(xs, ys)]
        path = " ".join(f"{px:.2f},{py:.2f}" for px, py in pts)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for px, py in pts:
            out.append(f'<circle class="point" cx="{px:.2f}" cy="{py:.2f}" r="2" fill="{color}"/>')
        out.append(f'<text x="{PAD}" y="{PANEL_H - 12}" font-size="10">step {xlo:g}</text>')
        out.append(f'<text x="{PAD + w}" y="{PANEL_H - 12}" font-size="10" text-anchor="end">{xhi:g}</text>')
        out.append(f'<text x="{PAD - 4}" y="{PAD + 4}" font-size="10" text-anchor="end">{yhi:.3g}</text>')
        out.append(f'<text x="{PAD - 4}" y="{PAD + h}" font-size="10" text-anchor="end">{ylo:.3g}</text>')
    out.append("</g>")
    return out


def metrics_svg(rows, columns=("l_rgb", "l_flow", "l_rf", "l_lmc", "total")):
    """``rows`` are metric tuples (step, lr, l_rgb, l_flow, l_rf, l_lmc, total)."""
    from .training import METRIC_COLUMNS

    steps = [r[0] for r in rows]
    ncol = 2
    nrow = (len(columns) + ncol - 1) // ncol
    width, height = ncol * PANEL_W, nrow * PANEL_H
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for i, name in enumerate(columns):
        j = METRIC_COLUMNS.index(name)
        ys = [r[j] for r in rows]
        out += _panel((i % ncol) * PANEL_W, (i // ncol) * PANEL_H, name, steps, ys, COLORS[i % len(COLORS)])
    out.append("</svg>")
    return "\n".join(out) + "\n"
