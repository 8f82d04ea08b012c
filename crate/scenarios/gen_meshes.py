#!/usr/bin/env python3
"""Regenerate the wall meshes used by the scenario fixtures.

Each wall is an axis-aligned box from z=0 to z=HEIGHT written as six quads.
"""
from pathlib import Path

HEIGHT = 2.5
T = 0.1


def box(x0, y0, x1, y1):
    return (x0, y0, x1, y1)


def outer(w, h):
    return [box(0, 0, w, T), box(0, h - T, w, h), box(0, 0, T, h), box(w - T, 0, w, h)]


def write_obj(path, boxes):
    lines = [f"# {len(boxes)} wall boxes"]
    faces = []
    for i, (x0, y0, x1, y1) in enumerate(boxes):
        base = 8 * i + 1
        for z in (0.0, HEIGHT):
            for x, y in ((x0, y0), (x1, y0), (x1, y1), (x0, y1)):
                lines.append(f"v {x:.3f} {y:.3f} {z:.3f}")
        b, t = base, base + 4
        faces += [
            (b, b + 3, b + 2, b + 1),
            (t, t + 1, t + 2, t + 3),
            (b, b + 1, t + 1, t),
            (b + 1, b + 2, t + 2, t + 1),
            (b + 2, b + 3, t + 3, t + 2),
            (b + 3, b, t, t + 3),
        ]
    lines += ["f " + " ".join(map(str, f)) for f in faces]
    Path(path).write_text("\n".join(lines) + "\n")


here = Path(__file__).parent
write_obj(here / "single_room.obj", outer(10.0, 8.0))
write_obj(
    here / "two_rooms.obj",
    outer(12.0, 8.0) + [box(8.05, 0.0, 8.15, 3.3), box(8.05, 4.1, 8.15, 8.0)],
)
