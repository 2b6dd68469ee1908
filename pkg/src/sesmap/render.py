"""Map rendering: unit choropleths and circle-value maps as standalone SVG.

Everything here is pure string assembly over the local planar frame, so a
given (geometry, values, options) triple always produces byte-identical
output. Units with no value are painted gray rather than dropped.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .geometry import CircleGrid, GeoPolygon, LocalFrame, build_local_frame, project_polygon

logger = logging.getLogger(__name__)

MISSING_COLOR = "#b0b0b0"
SCALE_MODES = ("linear", "quantile")

# viridis anchor colors, evenly spaced in [0, 1]
_RAMP: tuple[tuple[int, int, int], ...] = (
    (68, 1, 84),
    (72, 40, 120),
    (62, 73, 137),
    (49, 104, 142),
    (38, 130, 142),
    (31, 158, 137),
    (53, 183, 121),
    (110, 206, 88),
    (253, 231, 37),
)


class RenderError(ValueError):
    """Raised when a map cannot be drawn from the given inputs."""


def ramp_color(t: float) -> str:
    """Hex color at position t in [0, 1] on the sequential ramp (clamped)."""
    t = min(1.0, max(0.0, float(t)))
    pos = t * (len(_RAMP) - 1)
    lo = min(int(pos), len(_RAMP) - 2)
    frac = pos - lo
    r0, g0, b0 = _RAMP[lo]
    r1, g1, b1 = _RAMP[lo + 1]
    r = round(r0 + frac * (r1 - r0))
    g = round(g0 + frac * (g1 - g0))
    b = round(b0 + frac * (b1 - b0))
    return f"#{r:02x}{g:02x}{b:02x}"


@dataclass(frozen=True)
class ColorScale:
    """Maps values to ramp positions, linearly or by empirical quantile."""

    mode: str
    vmin: float
    vmax: float
    sorted_values: tuple[float, ...]

    @property
    def degenerate(self) -> bool:
        return self.vmax == self.vmin

    def position(self, value: float) -> float:
        if self.degenerate:
            return 0.5
        if self.mode == "linear":
            t = (value - self.vmin) / (self.vmax - self.vmin)
            return min(1.0, max(0.0, t))
        # quantile: mid-rank of the tied block among all reference values
        vs = np.asarray(self.sorted_values)
        less = float(np.searchsorted(vs, value, side="left"))
        upto = float(np.searchsorted(vs, value, side="right"))
        rank = less + (upto - less - 1.0) / 2.0 if upto > less else less
        return min(1.0, max(0.0, rank / (len(vs) - 1)))

    def color(self, value: float) -> str:
        return ramp_color(self.position(value))


def make_color_scale(values: Sequence[float], mode: str = "linear") -> ColorScale:
    if mode not in SCALE_MODES:
        raise RenderError(f"unknown color scale mode {mode!r}; expected one of {SCALE_MODES}")
    vals = [float(v) for v in values]
    if not vals:
        raise RenderError("empty value set: nothing to build a color scale from")
    arr = np.asarray(vals)
    if not np.isfinite(arr).all():
        raise RenderError("non-finite value in color scale input")
    return ColorScale(
        mode=mode,
        vmin=float(arr.min()),
        vmax=float(arr.max()),
        sorted_values=tuple(sorted(vals)),
    )


# ---------------------------------------------------------------------------
# svg assembly


def _fmt(x: float) -> str:
    # fixed two-decimal pixels keep the output stable across platforms
    s = f"{x:.2f}"
    return "0.00" if s == "-0.00" else s


def _fmt_value(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.4g}"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Canvas:
    """Shared fit-to-viewport plumbing for both map styles."""

    def __init__(self, bounds: tuple[float, float, float, float], width: int, title: str | None):
        if width < 160:
            raise RenderError("viewport width must be at least 160 px")
        xmin, ymin, xmax, ymax = bounds
        span_x = max(xmax - xmin, 1e-9)
        span_y = max(ymax - ymin, 1e-9)
        self.pad = 12.0
        self.scale = (width - 2 * self.pad) / span_x
        self.xmin = xmin
        self.ymax = ymax
        self.width = width
        self.map_h = span_y * self.scale
        self.title = title
        self.band_h = 66.0 if title else 52.0
        self.height = self.map_h + 2 * self.pad + self.band_h
        self.body: list[str] = []

    def to_px(self, x: float, y: float) -> tuple[float, float]:
        return self.pad + (x - self.xmin) * self.scale, self.pad + (self.ymax - y) * self.scale

    def ring_path(self, ring: Sequence[tuple[float, float]]) -> str:
        pts = [self.to_px(x, y) for x, y in ring]
        head = f"M {_fmt(pts[0][0])} {_fmt(pts[0][1])}"
        rest = " ".join(f"L {_fmt(px)} {_fmt(py)}" for px, py in pts[1:-1])
        return f"{head} {rest} Z"

    def add_legend(self, scale: ColorScale) -> None:
        y0 = self.map_h + 2 * self.pad
        if self.title:
            self.body.append(
                f'<text x="{_fmt(self.pad)}" y="{_fmt(y0 + 10)}" font-family="sans-serif" '
                f'font-size="13" fill="#222222">{_esc(self.title)}</text>'
            )
            y0 += 16.0
        bar_w = min(240.0, self.width - 2 * self.pad)
        bar_h = 12.0
        if scale.degenerate:
            self.body.append(
                f'<rect x="{_fmt(self.pad)}" y="{_fmt(y0 + 4)}" width="{_fmt(bar_w)}" '
                f'height="{_fmt(bar_h)}" fill="{ramp_color(0.5)}" stroke="#555555" stroke-width="0.5"/>'
            )
        else:
            steps = 48
            step_w = bar_w / steps
            for i in range(steps):
                self.body.append(
                    f'<rect x="{_fmt(self.pad + i * step_w)}" y="{_fmt(y0 + 4)}" '
                    f'width="{_fmt(step_w + 0.5)}" height="{_fmt(bar_h)}" '
                    f'fill="{ramp_color(i / (steps - 1))}"/>'
                )
        label_y = y0 + 4 + bar_h + 14
        self.body.append(
            f'<text x="{_fmt(self.pad)}" y="{_fmt(label_y)}" font-family="sans-serif" '
            f'font-size="11" fill="#222222">{_esc(_fmt_value(scale.vmin))}</text>'
        )
        self.body.append(
            f'<text x="{_fmt(self.pad + bar_w)}" y="{_fmt(label_y)}" font-family="sans-serif" '
            f'font-size="11" fill="#222222" text-anchor="end">{_esc(_fmt_value(scale.vmax))}</text>'
        )

    def render(self) -> str:
        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{_fmt(self.height)}" viewBox="0 0 {self.width} {_fmt(self.height)}">',
            f'<rect x="0" y="0" width="{self.width}" height="{_fmt(self.height)}" fill="#ffffff"/>',
            *self.body,
            "</svg>",
        ]
        return "\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# public renderers


def render_choropleth(
    units: Sequence[GeoPolygon],
    values: Mapping[str, float],
    *,
    frame: LocalFrame | None = None,
    scale_mode: str = "linear",
    title: str | None = None,
    width: int = 720,
) -> str:
    """Draw one filled polygon per unit part, colored by ``values[id]``.

    Units absent from ``values`` get a gray fill. The color of a unit
    depends only on its id and the value set, never on list order: parts
    are drawn sorted by id, so any permutation of the inputs produces the
    same bytes. Returns the SVG document as text.
    """
    if not units:
        raise RenderError("no units to draw")
    scale = make_color_scale(list(values.values()), scale_mode)
    if frame is None:
        frame = build_local_frame(list(units))
    known = {u.id for u in units}
    extra = sorted(set(values) - known)
    if extra:
        logger.warning("%d value ids match no unit (first: %s)", len(extra), extra[0])

    order = sorted(range(len(units)), key=lambda i: (units[i].id, i))
    planar = [project_polygon(units[i], frame) for i in order]
    xs = [b for p in planar for b in (p.bbox()[0], p.bbox()[2])]
    ys = [b for p in planar for b in (p.bbox()[1], p.bbox()[3])]
    canvas = _Canvas((min(xs), min(ys), max(xs), max(ys)), width, title)
    for poly in planar:
        fill = scale.color(float(values[poly.id])) if poly.id in values else MISSING_COLOR
        d = " ".join(canvas.ring_path(ring) for ring in poly.rings())
        canvas.body.append(
            f'<path d="{d}" fill="{fill}" fill-rule="evenodd" '
            f'stroke="#ffffff" stroke-width="1"/>'
        )
    canvas.add_legend(scale)
    return canvas.render()


def render_circle_map(
    grid: CircleGrid,
    values: Mapping[int, float],
    *,
    units: Sequence[GeoPolygon] | None = None,
    scale_mode: str = "linear",
    title: str | None = None,
    width: int = 720,
) -> str:
    """Draw the query circles colored by a per-circle value.

    Optionally overlays the unit outlines (unfilled) underneath so the
    circle pattern can be read against the administrative map. Circles
    absent from ``values`` get a gray fill.
    """
    if not grid.circles:
        raise RenderError("no circles to draw")
    scale = make_color_scale(list(values.values()), scale_mode)
    bxs: list[float] = []
    bys: list[float] = []
    planar = []
    if units:
        planar = [project_polygon(u, grid.frame) for u in sorted(units, key=lambda u: u.id)]
        for p in planar:
            x0, y0, x1, y1 = p.bbox()
            bxs.extend((x0, x1))
            bys.extend((y0, y1))
    for c in grid.circles:
        x0, y0, x1, y1 = c.bbox()
        bxs.extend((x0, x1))
        bys.extend((y0, y1))
    canvas = _Canvas((min(bxs), min(bys), max(bxs), max(bys)), width, title)
    for poly in planar:
        d = " ".join(canvas.ring_path(ring) for ring in poly.rings())
        canvas.body.append(
            f'<path d="{d}" fill="none" stroke="#888888" stroke-width="1"/>'
        )
    for c in sorted(grid.circles, key=lambda c: c.id):
        fill = scale.color(float(values[c.id])) if c.id in values else MISSING_COLOR
        px, py = canvas.to_px(c.x, c.y)
        canvas.body.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{_fmt(c.radius * canvas.scale)}" '
            f'fill="{fill}" fill-opacity="0.85" stroke="#ffffff" stroke-width="0.5"/>'
        )
    canvas.add_legend(scale)
    return canvas.render()


# ---------------------------------------------------------------------------
# value-annotated geojson companions


def choropleth_geojson(
    units: Sequence[GeoPolygon], values: Mapping[str, float], value_name: str = "value"
) -> dict:
    """FeatureCollection with each unit part carrying its mapped value.

    Missing units get a JSON null so consumers can distinguish "no data"
    from zero. Features are sorted by id (input order breaks ties between
    parts of one multi-part unit).
    """
    if not units:
        raise RenderError("no units to export")
    features = []
    for i in sorted(range(len(units)), key=lambda i: (units[i].id, i)):
        u = units[i]
        val = float(values[u.id]) if u.id in values else None
        coords = [[list(p) for p in u.exterior]] + [[list(p) for p in h] for h in u.holes]
        features.append(
            {
                "type": "Feature",
                "properties": {"id": u.id, value_name: val},
                "geometry": {"type": "Polygon", "coordinates": coords},
            }
        )
    return {"type": "FeatureCollection", "features": features}


def circle_map_geojson(
    grid: CircleGrid, values: Mapping[int, float], value_name: str = "value"
) -> dict:
    """Point FeatureCollection of circle centers (WGS84) with values."""
    if not grid.circles:
        raise RenderError("no circles to export")
    features = []
    for c in sorted(grid.circles, key=lambda c: c.id):
        lon, lat = grid.frame.inverse(c.x, c.y)
        val = float(values[c.id]) if c.id in values else None
        features.append(
            {
                "type": "Feature",
                "properties": {"id": c.id, value_name: val, "radius_m": c.radius},
                "geometry": {"type": "Point", "coordinates": [lon, lat]},
            }
        )
    return {"type": "FeatureCollection", "features": features}
