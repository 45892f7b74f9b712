"""Attention visualization: render a scene and its prediction as standalone SVG.

Color scheme: map paths gray, other agents dark blue, main-agent history
yellow, ground truth red, prediction green. Attention over map paths and
agents is shown as opacity, 0.15 + 0.85 * score / max_score, so unattended
elements stay faintly visible. Raw scores are embedded as data-score
attributes and their total as data-attention-sum on the root element.
Coordinates are in the normalized agent frame.
"""

from __future__ import annotations

import numpy as np

from .dataset import Batch, NormalizedSample
from .svg import serialize_path

COLORS = {
    "path": "#888888",
    "agent": "#00008b",
    "main": "#ffd700",
    "gt": "#d62728",
    "pred": "#2ca02c",
}

OPACITY_FLOOR = 0.15


def _poly_d(points: np.ndarray) -> str:
    parts = [f"M {float(points[0][0])!r} {float(points[0][1])!r}"]
    for x, y in points[1:]:
        parts.append(f"L {float(x)!r} {float(y)!r}")
    return " ".join(parts)


def _opacity(score: float, max_score: float) -> float:
    rel = score / max_score if max_score > 0 else 0.0
    return OPACITY_FLOOR + (1.0 - OPACITY_FLOOR) * rel


def render_attention_svg(sample: NormalizedSample, batch: Batch,
                         entries: list[tuple[str, str, float]],
                         prediction: np.ndarray | None = None) -> str:
    """Build the SVG text for one sample (batch must hold exactly it)."""
    (ox, oy), (w, h) = sample.scene_svg.viewport.origin, sample.scene_svg.viewport.extent
    path_scores = {key: score for kind, key, score in entries if kind == "path"}
    agent_scores = {key: score for kind, key, score in entries if kind == "agent"}
    total = sum(score for _, _, score in entries)
    max_score = max((s for s in list(path_scores.values()) + list(agent_scores.values())),
                    default=0.0)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="{ox} {oy} {w} {h}" '
        f'data-attention-sum="{total!r}">',
    ]
    for path in sample.scene_svg.paths:
        score = path_scores.get(path.id, 0.0)
        lines.append(
            f'  <path id="{path.id}" d="{serialize_path(path)}" fill="none" '
            f'stroke="{COLORS["path"]}" stroke-width="0.6" '
            f'opacity="{_opacity(score, max_score):.4f}" data-score="{score!r}"/>')

    for hist, valid, aid in zip(sample.other_histories, sample.other_valid,
                                sample.other_ids):
        pts = hist[valid]
        if len(pts) < 2:
            continue
        score = agent_scores.get(aid, 0.0)
        lines.append(
            f'  <path id="agent-{aid}" d="{_poly_d(pts)}" fill="none" '
            f'stroke="{COLORS["agent"]}" stroke-width="0.5" '
            f'opacity="{_opacity(score, max_score):.4f}" data-score="{score!r}"/>')

    main_score = next((s for kind, _, s in entries if kind == "main"), 0.0)
    lines.append(
        f'  <path id="main-history" d="{_poly_d(sample.main_history)}" fill="none" '
        f'stroke="{COLORS["main"]}" stroke-width="0.6" data-score="{main_score!r}"/>')
    if sample.target is not None:
        lines.append(
            f'  <path id="ground-truth" d="{_poly_d(sample.target)}" fill="none" '
            f'stroke="{COLORS["gt"]}" stroke-width="0.5"/>')
    if prediction is not None:
        lines.append(
            f'  <path id="prediction" d="{_poly_d(np.asarray(prediction))}" fill="none" '
            f'stroke="{COLORS["pred"]}" stroke-width="0.5"/>')

    lines.append(_legend(ox, oy, w))
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _legend(ox: float, oy: float, w: float) -> str:
    items = [("map path", COLORS["path"]), ("other agents", COLORS["agent"]),
             ("main history", COLORS["main"]), ("ground truth", COLORS["gt"]),
             ("prediction", COLORS["pred"])]
    rows = ['  <g id="legend" font-size="2.4" font-family="sans-serif">']
    for i, (label, color) in enumerate(items):
        y = oy + 3.0 + 3.0 * i
        rows.append(f'    <rect x="{ox + 2.0}" y="{y - 1.6}" width="2.4" height="1.6" '
                    f'fill="{color}"/>')
        rows.append(f'    <text x="{ox + 5.2}" y="{y}" fill="#333333">{label}</text>')
    rows.append("  </g>")
    return "\n".join(rows)
