"""SVG drawing of a compiled intersection.

Layers, bottom to top: guideways (one colour per movement), conflict zones,
blind zones, and occlusion shadows for an optional viewpoint. When a
`movement` is selected, its zones and blind zones go in their own group
``<g id="zones-<movement>">`` so a viewer can toggle them.
"""

from __future__ import annotations

import colorsys
import hashlib
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Optional, Sequence

from shapely.geometry import Polygon

from .geom import shadow_region
from .intersection import CompiledIntersection

SVG_NS = "http://www.w3.org/2000/svg"
MARGIN = 20.0


@dataclass
class RenderOptions:
    movement: Optional[str] = None          # guideway id whose conflicts are highlighted
    viewpoint: Optional[tuple] = None
    obstacles: Sequence[Polygon] = field(default_factory=tuple)
    scale: float = 2.0                      # pixels per foot
    show_blind_zones: bool = True
    shadow_extent: float = 400.0


def movement_color(gid: str) -> str:
    """Stable, well-spread colour for a guideway id."""
    h = int(hashlib.sha1(gid.encode()).hexdigest()[:6], 16) / 0xFFFFFF
    r, g, b = colorsys.hls_to_rgb(h, 0.45, 0.65)
    return "#{:02x}{:02x}{:02x}".format(round(r * 255), round(g * 255), round(b * 255))


def _path(poly) -> str:
    """SVG path data for a (multi)polygon, y flipped so north is up."""
    parts = []
    for p in getattr(poly, "geoms", [poly]):
        if p.is_empty or p.geom_type != "Polygon":
            continue
        for ring in [p.exterior, *p.interiors]:
            pts = [f"{x:.2f},{-y:.2f}" for x, y in ring.coords[:-1]]
            parts.append("M" + " L".join(pts) + " Z")
    return " ".join(parts)


def _add_poly(parent, poly, cls: str, ident: str, **attrs) -> None:
    d = _path(poly)
    if not d:
        return
    el = ET.SubElement(parent, "path", {"id": ident, "class": cls, "d": d})
    for k, v in sorted(attrs.items()):
        el.set(k.replace("_", "-"), str(v))


def _bounds(c: CompiledIntersection, extra: Sequence[Polygon]) -> tuple:
    geoms = [g.polygon for g in c.guideways] + list(extra)
    if not geoms:
        return (-50.0, -50.0, 50.0, 50.0)
    xs0, ys0, xs1, ys1 = zip(*(g.bounds for g in geoms))
    return min(xs0), min(ys0), max(xs1), max(ys1)


def render_svg(c: CompiledIntersection, options: Optional[RenderOptions] = None) -> str:
    """Deterministic SVG text for `c`."""
    o = options or RenderOptions()
    x0, y0, x1, y1 = _bounds(c, o.obstacles)
    x0, y0, x1, y1 = x0 - MARGIN, y0 - MARGIN, x1 + MARGIN, y1 + MARGIN
    w, h = x1 - x0, y1 - y0
    ET.register_namespace("", SVG_NS)
    svg = ET.Element("svg", {"xmlns": SVG_NS, "version": "1.1",
                             "width": f"{w * o.scale:.0f}", "height": f"{h * o.scale:.0f}",
                             "viewBox": f"{x0:.2f} {-y1:.2f} {w:.2f} {h:.2f}"})
    ET.SubElement(svg, "title").text = f"intersection {c.id}"
    ET.SubElement(svg, "rect", {"x": f"{x0:.2f}", "y": f"{-y1:.2f}", "width": f"{w:.2f}",
                                "height": f"{h:.2f}", "fill": "#f4f4f0"})

    g_gw = ET.SubElement(svg, "g", {"id": "guideways", "fill-opacity": "0.25"})
    for gw in c.guideways:
        col = movement_color(gw.id)
        _add_poly(g_gw, gw.polygon, "guideway", f"gw:{gw.id}", fill=col, stroke=col,
                  stroke_width=0.3, data_movement=gw.movement.mode + ":" + gw.movement.turn)

    if o.movement is None:
        labelled = [(f"CZ{i}", z) for i, z in enumerate(c.zones, 1)]
        layer_id = "zones"
    else:
        ego = c.guideway(o.movement)
        labelled = c.labelled_zones(ego)
        layer_id = f"zones-{o.movement}"
    g_z = ET.SubElement(svg, "g", {"id": layer_id, "fill": "#d62728", "fill-opacity": "0.55"})
    for label, z in labelled:
        _add_poly(g_z, z.polygon, "conflict-zone", f"cz:{z.id}", data_label=label)

    if o.show_blind_zones:
        if o.movement is None:
            bzs = list(c.blind_zones)
        else:
            bzs = c.blind_zones_of(c.guideway(o.movement))
        g_b = ET.SubElement(svg, "g", {"id": "blind-zones", "fill": "#ff7f0e",
                                       "fill-opacity": "0.3"})
        for b in bzs:
            _add_poly(g_b, b.polygon, "blind-zone", f"bz:{b.id}")

    if o.obstacles:
        g_o = ET.SubElement(svg, "g", {"id": "obstacles", "fill": "#333333"})
        for i, ob in enumerate(o.obstacles):
            _add_poly(g_o, ob, "obstacle", f"obstacle:{i}")

    if o.viewpoint is not None:
        g_s = ET.SubElement(svg, "g", {"id": "shadows", "fill": "#000000", "fill-opacity": "0.2"})
        shadow = shadow_region(tuple(o.viewpoint), list(o.obstacles), o.shadow_extent)
        _add_poly(g_s, shadow.geometry, "shadow", "shadow:0")
        vx, vy = o.viewpoint
        ET.SubElement(g_s, "circle", {"id": "viewpoint", "cx": f"{vx:.2f}", "cy": f"{-vy:.2f}",
                                      "r": "2", "fill": "#1f77b4", "fill-opacity": "1"})
    ET.indent(svg)
    return ET.tostring(svg, encoding="unicode", xml_declaration=False) + "\n"
