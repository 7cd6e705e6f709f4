"""SVG 1.1 rendering of a floorplan with tile states, devices and air paths."""

from __future__ import annotations

from typing import Optional
from xml.sax.saxutils import escape, quoteattr

from .geometry import Floorplan

SCALE = 60.0  # px per meter
MARGIN = 40.0
LEGEND_W = 190.0
TICK = 6.0

FN_COLORS = {
    "STEER": "#2ca02c",
    "ABSORB": "#d62728",
    "FOCUS": "#ff7f0e",
    "SPECULAR": "#7f7f7f",
}
PATH_COLORS = {
    "LINK_OPTIMIZE": "#2ca02c",
    "SECURE_LINK": "#9467bd",
    "POWER_TRANSFER": "#ff7f0e",
    "BLOCK": "#d62728",
}
ROLE_COLORS = {
    "TX": "#1f77b4",
    "RX": "#17becf",
    "EAVESDROPPER": "#9467bd",
    "BLOCKED": "#d62728",
    "IDLE": "#bcbd22",
}


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def render_svg(plan: Floorplan, report: Optional[dict] = None) -> str:
    """Deterministic SVG text for ``plan`` annotated with ``report`` (if any)."""
    report = report or {}
    pts = [p for w in plan.walls for p in (w.a, w.b)] + [d.position for d in plan.devices]
    if pts:
        xmin = min(p.x for p in pts)
        xmax = max(p.x for p in pts)
        ymin = min(p.y for p in pts)
        ymax = max(p.y for p in pts)
    else:
        xmin = ymin = 0.0
        xmax = ymax = 1.0
    xmax = max(xmax, xmin + 1.0)
    ymax = max(ymax, ymin + 1.0)
    plot_w = (xmax - xmin) * SCALE
    plot_h = (ymax - ymin) * SCALE
    width = plot_w + 2 * MARGIN + LEGEND_W
    height = max(plot_h + 2 * MARGIN, 220.0)

    def X(x):
        return _f(MARGIN + (x - xmin) * SCALE)

    def Y(y):
        return _f(MARGIN + (ymax - y) * SCALE)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_f(width)}" '
        f'height="{_f(height)}" viewBox="0 0 {_f(width)} {_f(height)}">',
        f'<rect class="canvas" x="0" y="0" width="{_f(width)}" height="{_f(height)}" fill="#ffffff"/>',
    ]

    if plan.walls:
        out.append('<g class="walls">')
        for w in plan.walls:
            cls = "wall coated" if w.coated else "wall uncoated"
            dash = "" if w.coated else ' stroke-dasharray="4 3"'
            out.append(f'<line class="{cls}" data-id="{w.id}" x1="{X(w.a.x)}" y1="{Y(w.a.y)}" '
                       f'x2="{X(w.b.x)}" y2="{Y(w.b.y)}" stroke="#222222" stroke-width="3"{dash}/>')
        out.append("</g>")

    states = report.get("tile_states", {})
    coated = [t for t in plan.tiles if plan.is_coated(t.id)]
    if coated:
        out.append('<g class="tiles">')
        for t in coated:
            kind = states.get(str(t.id), "SPECULAR")
            x0, y0 = t.center
            x1 = x0 + t.normal[0] * TICK / SCALE
            y1 = y0 + t.normal[1] * TICK / SCALE
            out.append(f'<line class="tile fn-{kind.lower()}" data-id="{t.id}" x1="{X(x0)}" '
                       f'y1="{Y(y0)}" x2="{X(x1)}" y2="{Y(y1)}" stroke="{FN_COLORS[kind]}" '
                       f'stroke-width="2"/>')
        out.append("</g>")

    polylines = []
    for entry in report.get("objectives", []):
        path = entry.get("path")
        if not path:
            continue
        kind = entry["objective"]["kind"]
        coords = []
        for node in path["nodes"]:
            p = plan.tile(node).center if isinstance(node, int) else plan.device(node).position
            coords.append(f"{X(p[0])},{Y(p[1])}")
        polylines.append(
            f'<polyline class="airpath kind-{kind.lower()}" data-objective={quoteattr(entry["name"])} '
            f'points="{" ".join(coords)}" fill="none" stroke="{PATH_COLORS[kind]}" '
            f'stroke-width="2" stroke-dasharray="6 3"/>')
    if polylines:
        out.append('<g class="airpaths">')
        out.extend(polylines)
        out.append("</g>")

    if plan.devices:
        out.append('<g class="devices">')
        for d in plan.devices:
            role = d.role.value
            out.append(f'<circle class="device role-{role.lower()}" data-id={quoteattr(d.id)} '
                       f'cx="{X(d.position.x)}" cy="{Y(d.position.y)}" r="6" '
                       f'fill="{ROLE_COLORS[role]}"/>')
            out.append(f'<text class="label" x="{_f(float(X(d.position.x)) + 9)}" '
                       f'y="{_f(float(Y(d.position.y)) - 9)}" font-family="sans-serif" '
                       f'font-size="11">{escape(d.id)} ({role})</text>')
        out.append("</g>")

    lx = plot_w + 2 * MARGIN
    out.append('<g class="legend">')
    row = 0
    out.append(f'<text x="{_f(lx)}" y="{_f(MARGIN)}" font-family="sans-serif" font-size="12" '
               f'font-weight="bold">Tile function</text>')
    for kind, color in FN_COLORS.items():
        row += 1
        y = MARGIN + row * 16
        out.append(f'<rect class="legend-fn fn-{kind.lower()}" x="{_f(lx)}" y="{_f(y - 9)}" '
                   f'width="12" height="10" fill="{color}"/>')
        out.append(f'<text x="{_f(lx + 18)}" y="{_f(y)}" font-family="sans-serif" '
                   f'font-size="11">{kind}</text>')
    row += 2
    out.append(f'<text x="{_f(lx)}" y="{_f(MARGIN + row * 16)}" font-family="sans-serif" '
               f'font-size="12" font-weight="bold">Air path</text>')
    for kind, color in PATH_COLORS.items():
        row += 1
        y = MARGIN + row * 16
        out.append(f'<line class="legend-path kind-{kind.lower()}" x1="{_f(lx)}" y1="{_f(y - 4)}" '
                   f'x2="{_f(lx + 12)}" y2="{_f(y - 4)}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_f(lx + 18)}" y="{_f(y)}" font-family="sans-serif" '
                   f'font-size="11">{kind}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
