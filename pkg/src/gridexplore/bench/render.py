"""Map and trajectory images as binary PPM/PGM or SVG."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..mapping import FREE, OBSTACLE, UNEXPLORED

STATE_GREY = {UNEXPLORED: 0, FREE: 128, OBSTACLE: 255}
EXPLORED_RGB = (0, 160, 0)
WALL_RGB = (255, 255, 255)


def state_image(states: np.ndarray) -> np.ndarray:
    """Grey levels for an occupancy-state grid (row 0 = lowest y)."""
    img = np.zeros(states.shape, np.uint8)
    for s, g in STATE_GREY.items():
        img[states == s] = g
    return img[::-1]


def time_colors(n: int) -> np.ndarray:
    """(n, 3) uint8 ramp from blue (early) to red (late)."""
    if n <= 0:
        return np.zeros((0, 3), np.uint8)
    f = np.linspace(0.0, 1.0, n)
    rgb = np.stack([f, 0.2 * np.ones(n), 1.0 - f], axis=1)
    return (rgb * 255).round().astype(np.uint8)


def trajectory_image(occupancy: np.ndarray, seen: np.ndarray, path_xy) -> np.ndarray:
    """RGB image: unexplored black, explored green, obstacles white, path coloured by time."""
    h, w = occupancy.shape
    img = np.zeros((h, w, 3), np.uint8)
    img[seen & ~occupancy] = EXPLORED_RGB
    img[occupancy] = WALL_RGB
    path = np.asarray(path_xy, dtype=np.int64).reshape(-1, 2)
    cols = time_colors(len(path))
    ok = (path[:, 0] >= 0) & (path[:, 0] < w) & (path[:, 1] >= 0) & (path[:, 1] < h)
    img[path[ok, 1], path[ok, 0]] = cols[ok]
    return img[::-1]


def upscale(img: np.ndarray, k: int) -> np.ndarray:
    if k <= 1:
        return img
    return np.repeat(np.repeat(img, k, axis=0), k, axis=1)


def write_pnm(path, img: np.ndarray) -> None:
    """P5 for 2-D uint8 arrays, P6 for (h, w, 3)."""
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim == 2:
        magic = b"P5"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError("expected a (h, w) or (h, w, 3) array")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(img.tobytes())


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    magic, w, h, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise ValueError("unsupported pixmap")
    body = parts[4]
    if magic == b"P5":
        return np.frombuffer(body, np.uint8, w * h).reshape(h, w)
    return np.frombuffer(body, np.uint8, w * h * 3).reshape(h, w, 3)


def write_svg(path, img: np.ndarray, scale: int = 4) -> None:
    """One rect per horizontal run of equal colour."""
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    h, w = img.shape[:2]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * scale}" height="{h * scale}" '
           f'shape-rendering="crispEdges">']
    for r in range(h):
        row = img[r]
        c = 0
        while c < w:
            e = c + 1
            while e < w and (row[e] == row[c]).all():
                e += 1
            col = "#%02x%02x%02x" % tuple(int(v) for v in row[c])
            out.append(f'<rect x="{c * scale}" y="{r * scale}" width="{(e - c) * scale}" '
                       f'height="{scale}" fill="{col}"/>')
            c = e
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def save_image(path, img: np.ndarray, scale: int = 4) -> None:
    path = Path(path)
    if path.suffix == ".svg":
        write_svg(path, img, scale)
    else:
        write_pnm(path, upscale(img, scale))
