"""Static SVG timelines of ground-truth and predicted action segments."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

from .evaluation import DetectionSegment

_TRACK_H = 26
_GAP = 10
_LEFT = 70
_LEGEND_H = 24


def class_color(cls: int) -> str:
    """Deterministic class -> color mapping (golden-angle hue walk)."""
    hue = (cls * 137.508) % 360.0
    return f"hsl({hue:.1f}, 70%, 55%)"


def render_timeline_svg(
    gt: list[DetectionSegment],
    detections: list[DetectionSegment],
    num_windows: int,
    class_names=(),
    width: int = 900,
    title: str = "",
) -> str:
    """Two stacked tracks (GT on top, predictions below) of colored bars on a
    shared window-index axis."""
    if num_windows < 1:
        raise ValueError("need at least one window")
    scale = (width - _LEFT - 10) / num_windows
    height = 2 * (_TRACK_H + _GAP) + _LEGEND_H + 30
    classes = sorted({s.cls for s in gt} | {s.cls for s in detections})
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="sans-serif" font-size="12">',
        f'<text x="{_LEFT}" y="14">{escape(title)}</text>' if title else "",
    ]

    def bars(segments, y):
        rows = []
        for seg in segments:
            x = _LEFT + seg.start * scale
            w = max((seg.end - seg.start) * scale, 1.0)
            rows.append(
                f'<rect x="{x:.2f}" y="{y}" width="{w:.2f}" height="{_TRACK_H}" '
                f'fill="{class_color(seg.cls)}"><title>class {seg.cls} '
                f"[{seg.start},{seg.end}) conf {seg.confidence:.2f}</title></rect>"
            )
        return rows

    y_gt = 24
    y_pred = y_gt + _TRACK_H + _GAP
    parts.append(f'<text x="4" y="{y_gt + 17}">GT</text>')
    parts.append(f'<text x="4" y="{y_pred + 17}">pred</text>')
    for y in (y_gt, y_pred):
        parts.append(
            f'<rect x="{_LEFT}" y="{y}" width="{num_windows * scale:.2f}" '
            f'height="{_TRACK_H}" fill="#eee"/>'
        )
    parts.extend(bars(gt, y_gt))
    parts.extend(bars(detections, y_pred))

    y_leg = y_pred + _TRACK_H + _GAP + 6
    x = _LEFT
    for cls in classes:
        name = class_names[cls] if cls < len(class_names) else f"class {cls}"
        parts.append(f'<rect x="{x}" y="{y_leg}" width="14" height="14" fill="{class_color(cls)}"/>')
        parts.append(f'<text x="{x + 18}" y="{y_leg + 12}">{escape(str(name))}</text>')
        x += 18 + 8 * (len(str(name)) + 2)
    parts.append("</svg>")
    return "\n".join(p for p in parts if p)


def write_timeline_svg(path, gt, detections, num_windows, class_names=(), title="") -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(
        render_timeline_svg(gt, detections, num_windows, class_names, title=title)
    )
