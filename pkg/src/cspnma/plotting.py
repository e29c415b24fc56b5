"""Static SVG figures drawn from their JSON sidecars.

``*_doc`` builds the sidecar (every number that ends up on the canvas, plus
the pixel layout); :func:`render_svg` draws a sidecar and nothing else. One
SVG unit is one pixel: figures are sized in points at 72 dpi.
"""

from __future__ import annotations

import io
import math

import matplotlib
from matplotlib.figure import Figure

from .diagnostics import ForestRow, TensionRow
from .report import ARROW, clean, target_str

WIDTH = 1200
ROW = 40
TOP = 80
BOTTOM = 80
AX_LEFT = 380
AX_RIGHT = 940
FONT = ["DejaVu Sans"]
MAX_SIDE = 22.0  # px side of the heaviest square marker
MAX_STROKE = 16.0  # px stroke of a unit-weight path

RC = {
    "svg.hashsalt": "cspnma",
    "svg.fonttype": "none",
    "font.family": "sans-serif",
    "font.sans-serif": FONT,
    "font.size": 11,
    "path.simplify": False,
}

COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"]


def height(rows: int) -> int:
    return ROW * rows + TOP + BOTTOM


def _xlim(lo: float, hi: float) -> list[float]:
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    span = hi - lo
    if span <= 0:
        return [lo - 1.0, hi + 1.0]
    return [lo - 0.05 * span, hi + 0.05 * span]


def _layout(rows: int) -> dict:
    h = height(rows)
    return {"width": WIDTH, "height": h, "axes_px": [AX_LEFT, TOP, AX_RIGHT, h - BOTTOM], "rows": rows}


def data_to_px(doc: dict, x: float, y_row: float) -> tuple[float, float]:
    """Pixel position (origin top-left) of value ``x`` at fractional row ``y_row``."""
    x0, y0, x1, _ = doc["axes_px"]
    lo, hi = doc["xlim"]
    return x0 + (x - lo) / (hi - lo) * (x1 - x0), y0 + y_row * ROW


# ---------------------------------------------------------------------------
# sidecars

def forest_doc(rows: list[ForestRow], target, alpha: float) -> dict:
    comps = [r for r in rows if r.kind in ("direct_study", "indirect_path")]
    wmax = max((r.weight for r in comps), default=1.0) or 1.0
    items = []
    for r in rows:
        if r.kind in ("direct_study", "indirect_path"):
            marker, side = "s", MAX_SIDE * math.sqrt(r.weight / wmax)
        else:
            marker, side = "D", 14.0
        items.append({
            "kind": r.kind,
            "label": r.label,
            "estimate": r.estimate,
            "ci_low": r.ci_low,
            "ci_high": r.ci_high,
            "weight": r.weight,
            "weight_pct": r.weight_pct,
            "variance": r.variance,
            "contribution": r.contribution,
            "contribution_ci_low": r.contribution_ci_low,
            "contribution_ci_high": r.contribution_ci_high,
            "marker": marker,
            "marker_side": side,
        })
    network = next(r for r in rows if r.kind == "network")
    doc = {"kind": "forest", "target": target_str(target), "alpha": alpha}
    doc.update(_layout(len(rows)))
    doc["xlim"] = _xlim(min(r.ci_low for r in rows), max(r.ci_high for r in rows))
    doc["nma_estimate"] = network.estimate
    doc["items"] = items
    return clean(doc)


def _tpoint(p, side):
    if p is None:
        return None
    return {"estimate": p.estimate, "ci_low": p.ci_low, "ci_high": p.ci_high, "weight": p.weight, "marker_side": side}


TENSION_OFFSETS = {"dir": -0.25, "ind": 0.0, "nma": 0.25}


def tension_doc(rows: list[TensionRow], baseline: str, alpha: float) -> dict:
    items = []
    lo, hi = math.inf, -math.inf
    for r in rows:
        item = {
            "target": target_str(r.target),
            "dir": _tpoint(r.dir, None if r.dir is None else 16.0 * math.sqrt(r.dir.weight)),
            "ind": _tpoint(r.ind, None if r.ind is None else 16.0 * math.sqrt(r.ind.weight)),
            "nma": _tpoint(r.nma, 10.0),
            "independence_approximate": r.independence_approximate,
        }
        for p in (r.dir, r.ind, r.nma):
            if p is not None:
                lo, hi = min(lo, p.ci_low), max(hi, p.ci_high)
        items.append(item)
    doc = {"kind": "tension", "baseline": baseline, "alpha": alpha}
    doc.update(_layout(max(len(rows), 1)))
    doc["xlim"] = _xlim(lo if items else -1.0, hi if items else 1.0)
    doc["offsets"] = TENSION_OFFSETS
    doc["items"] = items
    return clean(doc)


def paths_doc(dec, top_n: int | None = None) -> dict:
    paths = dec.paths if top_n is None else dec.paths[:top_n]
    a, b = dec.target
    rows = max(len(paths) + 1, 8)
    h = height(rows)
    cx, cy = 330.0, h / 2.0
    radius = min(260.0, h / 2.0 - 70.0)
    others = sorted({v for p in paths for v in p.nodes} - {a, b})
    n_up = (len(others) + 1) // 2
    pos = {a: (cx - radius, cy), b: (cx + radius, cy)}
    for j, v in enumerate(others):
        if j < n_up:
            ang = math.pi - (j + 1) * math.pi / (n_up + 1)
            pos[v] = (cx + radius * math.cos(ang), cy - radius * math.sin(ang))
        else:
            k = j - n_up
            ang = math.pi + (k + 1) * math.pi / (len(others) - n_up + 1)
            pos[v] = (cx + radius * math.cos(ang), cy - radius * math.sin(ang))

    def polyline(nodes, shift):
        return [[pos[v][0], pos[v][1] + shift] for v in nodes]

    items = []
    if dec.direct:
        pts = polyline([a, b], 0.0)
        items.append({
            "kind": "direct",
            "nodes": [a, b],
            "studies": [c.study_id for c in dec.direct],
            "weight": dec.w_dir,
            "stroke": MAX_STROKE * dec.w_dir,
            "points": pts,
            "label_at": _midpoint(pts),
            "color": "#000000",
        })
    for k, p in enumerate(paths):
        shift = 5.0 * ((k % 2) * 2 - 1) * (k // 2 + 1)
        pts = polyline(p.nodes, shift)
        items.append({
            "kind": "path",
            "nodes": list(p.nodes),
            "studies": list(p.segment_studies),
            "weight": p.weight,
            "delta": p.delta,
            "stroke": MAX_STROKE * p.weight,
            "points": pts,
            "label_at": _midpoint(pts),
            "color": COLORS[k % len(COLORS)],
        })
    doc = {
        "kind": "paths",
        "target": target_str(dec.target),
        "width": WIDTH,
        "height": h,
        "rows": rows,
        "nodes": [{"label": v, "xy": list(pos[v])} for v in [a, b] + others],
        "items": items,
        "n_paths": len(dec.paths),
    }
    return clean(doc)


def _midpoint(pts):
    segs = [math.dist(p, q) for p, q in zip(pts, pts[1:])]
    half = 0.5 * sum(segs)
    for (p, q), d in zip(zip(pts, pts[1:]), segs):
        if half <= d and d > 0:
            t = half / d
            return [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
        half -= d
    return list(pts[-1])


# ---------------------------------------------------------------------------
# drawing

def _figure(doc):
    fig = Figure(figsize=(doc["width"] / 72.0, doc["height"] / 72.0), dpi=72)
    return fig


def _data_axes(fig, doc):
    x0, y0, x1, y1 = doc["axes_px"]
    W, H = doc["width"], doc["height"]
    ax = fig.add_axes([x0 / W, 1.0 - y1 / H, (x1 - x0) / W, (y1 - y0) / H])
    ax.set_xlim(*doc["xlim"])
    ax.set_ylim(doc["rows"], 0)
    ax.set_yticks([])
    for side in ("left", "right", "top"):
        ax.spines[side].set_visible(False)
    return ax


def _text_px(fig, doc, x, y, s, **kw):
    fig.text(x / doc["width"], 1.0 - y / doc["height"], s, va="center", **kw)


def _draw_forest(fig, doc):
    ax = _data_axes(fig, doc)
    lo, hi = doc["xlim"]
    if lo < 0 < hi:
        ax.axvline(0.0, color="#999999", linewidth=0.8, gid="null-line")
    ax.axvline(doc["nma_estimate"], color="red", linestyle="--", linewidth=1.2, gid="nma-line")
    for i, it in enumerate(doc["items"]):
        y = i + 0.5
        ax.plot([it["ci_low"], it["ci_high"]], [y, y], color="black", linewidth=1.0, gid=f"ci-{i}")
        color = "black" if it["kind"] == "network" else ("#1f77b4" if it["kind"].startswith("direct") else "#ff7f0e")
        ax.plot([it["estimate"]], [y], marker=it["marker"], markersize=it["marker_side"], linestyle="none",
                color=color, markeredgewidth=0, gid=f"marker-{i}")
        _, ypx = data_to_px(doc, 0.0, y)
        weight = "" if it["kind"] == "network" else f"   {it['weight_pct']:.1f}%"
        bold = "bold" if it["kind"] in ("direct_summary", "indirect_summary", "network") else "normal"
        _text_px(fig, doc, 20, ypx, it["label"], ha="left", fontweight=bold)
        _text_px(fig, doc, AX_RIGHT + 20, ypx,
                 f"{it['estimate']:.3f} [{it['ci_low']:.3f}, {it['ci_high']:.3f}]{weight}", ha="left")
    _text_px(fig, doc, 20, 30, f"{doc['target']}  ({100 * (1 - doc['alpha']):.0f}% CI)", ha="left", fontsize=14)


def _draw_tension(fig, doc):
    ax = _data_axes(fig, doc)
    ax.axvline(0.0, color="#555555", linestyle=":", linewidth=1.0, gid="zero-line")
    style = {"dir": ("o", "#1f77b4"), "ind": ("s", "#ff7f0e"), "nma": ("D", "black")}
    for i, it in enumerate(doc["items"]):
        _, ypx = data_to_px(doc, 0.0, i + 0.5)
        _text_px(fig, doc, 20, ypx, it["target"], ha="left")
        for key in ("dir", "ind", "nma"):
            p = it[key]
            if p is None:
                continue
            y = i + 0.5 + doc["offsets"][key]
            marker, color = style[key]
            ax.plot([p["ci_low"], p["ci_high"]], [y, y], color=color, linewidth=1.0, gid=f"{key}-ci-{i}")
            ax.plot([p["estimate"]], [y], marker=marker, markersize=p["marker_side"], linestyle="none",
                    color=color, markeredgewidth=0, gid=f"{key}-{i}")
    _text_px(fig, doc, 20, 30, f"Baseline {doc['baseline']}: direct (circle), indirect (square), network (diamond)",
             ha="left", fontsize=14)


def _draw_paths(fig, doc):
    W, H = doc["width"], doc["height"]
    ax = fig.add_axes([0, 0, 1, 1])
    ax.set_xlim(0, W)
    ax.set_ylim(H, 0)
    ax.set_axis_off()
    for k, it in enumerate(doc["items"]):
        xs = [p[0] for p in it["points"]]
        ys = [p[1] for p in it["points"]]
        gid = "direct" if it["kind"] == "direct" else f"path-{k}"
        ax.plot(xs, ys, color=it["color"], linewidth=it["stroke"], alpha=0.75, solid_capstyle="butt", gid=gid)
        for (px, py), (qx, qy) in zip(it["points"], it["points"][1:]):
            ax.annotate("", xy=(px + 0.56 * (qx - px), py + 0.56 * (qy - py)),
                        xytext=(px + 0.44 * (qx - px), py + 0.44 * (qy - py)),
                        arrowprops={"arrowstyle": "-|>", "color": "#333333", "linewidth": 1.0,
                                    "mutation_scale": 22})
        lx, ly = it["label_at"]
        ax.text(lx, ly - 8, f"{it['weight']:.4f}", ha="center", va="bottom", fontsize=10, color=it["color"])
        label = "direct (" + "/".join(it["studies"]) + ")" if it["kind"] == "direct" else \
            f"{ARROW.join(it['nodes'])} ({'/'.join(it['studies'])})"
        ax.text(720, TOP + ROW * k + ROW / 2, f"{it['weight']:.4f}  {label}", ha="left", va="center",
                color=it["color"])
    for j, n in enumerate(doc["nodes"]):
        x, y = n["xy"]
        ax.plot([x], [y], marker="o", markersize=26, color="white", markeredgecolor="black", linestyle="none",
                gid=f"node-{j}")
        ax.text(x, y, n["label"], ha="center", va="center", fontsize=11)
    ax.text(20, 30, f"Paths for {doc['target']}", ha="left", va="center", fontsize=14)


DRAW = {"forest": _draw_forest, "tension": _draw_tension, "paths": _draw_paths}


def render_svg(doc: dict) -> str:
    with matplotlib.rc_context(RC):
        fig = _figure(doc)
        DRAW[doc["kind"]](fig, doc)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()
