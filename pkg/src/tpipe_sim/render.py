"""Gantt renderers: SVG (10 px per T_unit) and plain text (one column per T_unit)."""
from __future__ import annotations

import math
from fractions import Fraction

from .core import DomainError, TaskKind, UnknownFormat
from .sim import Timeline

PX_PER_UNIT = 10
ROW_H = 20
LEFT = 40

_FILLS = {
    (TaskKind.FORWARD, 1): "#4e79a7",
    (TaskKind.FORWARD, 0): "#a0cbe8",
    (TaskKind.BACKWARD, 1): "#e15759",
    (TaskKind.BACKWARD, 0): "#ff9d9a",
    (TaskKind.RECOMPUTE, 1): "#59a14f",
    (TaskKind.RECOMPUTE, 0): "#8cd17d",
}


def _num(x: Fraction) -> str:
    if x.denominator == 1:
        return str(x.numerator)
    return f"{float(x):.3f}".rstrip("0").rstrip(".")


def _rows(tl: Timeline) -> list:
    if not tl.tasks:
        raise DomainError("cannot render an empty timeline")
    return [tl.stage_tasks(s) for s in range(tl.p)]


def render_text(tl: Timeline, t_unit: Fraction) -> str:
    """Upper case marks odd chunks, lower case even chunks; '.' is idle."""
    rows = _rows(tl)
    width = math.ceil(tl.total_time / t_unit)
    lines = []
    for s, row in enumerate(rows):
        cells = ["."] * width
        for a, b, t in row:
            lo = math.floor(a * tl.tick / t_unit)
            hi = max(lo + 1, math.ceil(b * tl.tick / t_unit))
            ch = t.kind.value[0]
            ch = ch.upper() if t.chunk % 2 else ch.lower()
            for c in range(lo, min(hi, width)):
                cells[c] = ch
        lines.append(f"S{s:<3}|" + "".join(cells) + "|")
    return "\n".join(lines) + "\n"


def render_svg(tl: Timeline, t_unit: Fraction) -> str:
    rows = _rows(tl)
    scale = Fraction(PX_PER_UNIT) / t_unit
    width = LEFT + tl.total_time * scale + 10
    height = ROW_H * tl.p + 10
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_num(width)}" height="{height}" '
        f'font-family="monospace" font-size="10">',
        '<defs><pattern id="hatch" width="4" height="4" patternUnits="userSpaceOnUse" '
        'patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="4" stroke="#222" stroke-width="1"/>'
        '</pattern></defs>',
    ]
    for s, row in enumerate(rows):
        y = 5 + s * ROW_H
        out.append(f'<text x="2" y="{y + 14}">S{s}</text>')
        for a, b, t in row:
            x = LEFT + a * tl.tick * scale
            w = (b - a) * tl.tick * scale
            fill = _FILLS.get((t.kind, t.chunk % 2), "#bab0ac")
            out.append(
                f'<rect x="{_num(x)}" y="{y}" width="{_num(w)}" height="{ROW_H - 2}" '
                f'fill="{fill}" stroke="#333" stroke-width="0.5"><title>{t.label()}</title></rect>'
            )
            if t.kind is TaskKind.RECOMPUTE:
                out.append(f'<rect x="{_num(x)}" y="{y}" width="{_num(w)}" height="{ROW_H - 2}" fill="url(#hatch)"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render(tl: Timeline, t_unit: Fraction, fmt: str) -> str:
    if fmt == "svg":
        return render_svg(tl, t_unit)
    if fmt == "text":
        return render_text(tl, t_unit)
    raise UnknownFormat(f"unknown render format {fmt!r}; expected svg or text")
