"""Per-frame optical-flow operators.

Flows are ``(..., H, W, 2)`` arrays of (u, v) displacements in pixels, u
along the width axis and v along the height axis. Everything here is plain
numpy: these maps feed the sampler and the encoder inputs, never the
gradient path.
"""

import math

import numpy as np

# standard colour-wheel segment lengths (red-yellow, yellow-green, ...)
_SEGMENTS = (15, 6, 4, 11, 13, 6)


def color_wheel():
    """Return the ``(55, 3)`` optical-flow colour wheel with entries in [0, 1]."""
    ry, yg, gc, cb, bm, mr = _SEGMENTS
    wheel = np.zeros((sum(_SEGMENTS), 3))
    i = 0
    wheel[i : i + ry, 0] = 1.0
    wheel[i : i + ry, 1] = np.arange(ry) / ry
    i += ry
    wheel[i : i + yg, 0] = 1.0 - np.arange(yg) / yg
    wheel[i : i + yg, 1] = 1.0
    i += yg
    wheel[i : i + gc, 1] = 1.0
    wheel[i : i + gc, 2] = np.arange(gc) / gc
    i += gc
    wheel[i : i + cb, 1] = 1.0 - np.arange(cb) / cb
    wheel[i : i + cb, 2] = 1.0
    i += cb
    wheel[i : i + bm, 0] = np.arange(bm) / bm
    wheel[i : i + bm, 2] = 1.0
    i += bm
    wheel[i : i + mr, 0] = 1.0
    wheel[i : i + mr, 2] = 1.0 - np.arange(mr) / mr
    return wheel


_WHEEL = color_wheel()


def max_magnitude(flow):
    return float(np.sqrt((np.asarray(flow, dtype=np.float64) ** 2).sum(axis=-1)).max())


def flow_to_rgb(flow, radius=None):
    """Map flow vectors to colours on the standard wheel.

    Hue encodes direction, saturation encodes ``|flow| / radius`` clipped
    to 1, and zero flow is white. ``radius`` defaults to the maximum
    magnitude in ``flow`` (per clip when a whole clip is passed).
    """
    flow = np.asarray(flow, dtype=np.float64)
    u, v = flow[..., 0], flow[..., 1]
    mag = np.sqrt(u * u + v * v)
    if radius is None:
        radius = float(mag.max()) if mag.size else 0.0
    elif radius <= 0:
        raise ValueError(f"saturation radius must be positive, got {radius}")
    if radius == 0.0:
        return np.ones(flow.shape[:-1] + (3,))
    rad = np.minimum(mag / radius, 1.0)
    ncols = _WHEEL.shape[0]
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1.0) / 2.0 * (ncols - 1)
    k0 = np.floor(fk).astype(np.int64)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = (1.0 - f) * _WHEEL[k0] + f * _WHEEL[k1]
    return 1.0 - rad[..., None] * (1.0 - col)


def saturation(rgb):
    """HSV-style saturation ``max - min`` over the colour axis."""
    rgb = np.asarray(rgb)
    return rgb.max(axis=-1) - rgb.min(axis=-1)


def rotate_flow(flow, theta):
    """Rotate every motion vector by ``theta``; pixel positions stay put."""
    flow = np.asarray(flow, dtype=np.float64)
    c, s = math.cos(theta), math.sin(theta)
    u, v = flow[..., 0], flow[..., 1]
    return np.stack([c * u - s * v, s * u + c * v], axis=-1)


def sample_angle(alpha, rng):
    """Draw a rotation angle uniformly from ``[alpha, 2*pi - alpha]``."""
    if not 0.0 < alpha < math.pi:
        raise ValueError(f"alpha must lie in (0, pi), got {alpha}")
    return float(rng.uniform(alpha, 2.0 * math.pi - alpha))


def hflip_flow(flow):
    """Mirror a flow field left-right; the horizontal component changes sign."""
    out = np.asarray(flow)[..., ::-1, :].copy()
    out[..., 0] = -out[..., 0]
    return out


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def _filter3x3(img, kernel):
    H, W = img.shape
    p = np.pad(img, 1, mode="edge")
    out = np.zeros((H, W))
    for i in range(3):
        for j in range(3):
            if kernel[i, j] != 0.0:
                out += kernel[i, j] * p[i : i + H, j : j + W]
    return out


def sobel_boundary(flow):
    """Motion-boundary strength of an ``(H, W, 2)`` flow field.

    Per channel gradient magnitude from the 3x3 Sobel pair (replicate
    borders), summed over the two channels.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[-1] != 2:
        raise ValueError(f"expected an (H, W, 2) flow field, got {flow.shape}")
    H, W = flow.shape[:2]
    if H < 3 or W < 3:
        raise ValueError(f"Sobel needs H, W >= 3, got {H}x{W}")
    total = np.zeros((H, W))
    for ch in range(2):
        gx = _filter3x3(flow[..., ch], _SOBEL_X)
        gy = _filter3x3(flow[..., ch], _SOBEL_Y)
        total += np.sqrt(gx * gx + gy * gy)
    return total


def coarsen(m, r):
    """Average-pool over ``r x r`` blocks (ragged at the border) and broadcast back."""
    if r <= 0:
        raise ValueError(f"coarsening stride must be >= 1, got {r}")
    m = np.asarray(m, dtype=np.float64)
    if r == 1:
        return m.copy()
    H, W = m.shape
    hb, wb = -(-H // r), -(-W // r)
    out = np.empty_like(m)
    for i in range(hb):
        for j in range(wb):
            block = m[i * r : (i + 1) * r, j * r : (j + 1) * r]
            out[i * r : (i + 1) * r, j * r : (j + 1) * r] = block.mean()
    return out


def default_block(height):
    """Coarsening stride scaled from 28 px at 112 px input."""
    return max(1, round(28 * height / 112))


def _softmax_all(m):
    e = np.exp(m - m.max())
    return e / e.sum()


def weight_map(flow, r):
    """Foreground weight map: softmax of the coarsened Sobel boundary map."""
    return _softmax_all(coarsen(sobel_boundary(flow), r))


def write_ppm(path, rgb):
    """Binary P6 dump of an (H, W, 3) image with values in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got {rgb.shape}")
    pixels = np.round(np.clip(rgb, 0.0, 1.0) * 255).astype(np.uint8)
    H, W = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{W} {H}\n255\n".encode("ascii") + pixels.tobytes())


def read_ppm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6" or parts[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit P6 image")
    W, H = int(parts[1]), int(parts[2])
    body = raw[len(raw) - 3 * W * H :]
    return np.frombuffer(body, dtype=np.uint8).reshape(H, W, 3) / 255.0
