"""Binary PPM (P6) output for escape-time images: grayscale
floor(255 * iter / max_iter) replicated into RGB."""

from __future__ import annotations

import numpy as np

from ..errors import BadArgsError


def render_ppm(pixels, width: int, height: int, max_iter: int = 256) -> bytes:
    counts = np.asarray(pixels, dtype=np.uint64).reshape(-1)
    if counts.size != width * height:
        raise BadArgsError(
            f"{counts.size} pixels do not fill a {width}x{height} image"
        )
    gray = (counts * 255 // max_iter).astype(np.uint8)
    rgb = np.repeat(gray, 3)
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + rgb.tobytes()


def write_image(pixels, width: int, height: int, path, max_iter: int = 256) -> None:
    data = render_ppm(pixels, width, height, max_iter)
    with open(path, "wb") as fh:
        fh.write(data)
