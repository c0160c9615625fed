"""Motion differential sampling (MDS).

A candidate clip is scored by how much the foreground-weighted flow
visualisation changes between consecutive clip frames; the sampler keeps
the clips scoring strictly above the per-video median.
"""

from dataclasses import dataclass

import numpy as np

from .flow_ops import default_block, flow_to_rgb, max_magnitude, weight_map
from .synth import valid_starts


@dataclass(frozen=True)
class ClipScore:
    start: int
    score: float


def motion_differential(o_t, o_next, r=None, radius=None, rgb_t=None, rgb_next=None):
    """Foreground motion change between two flow fields.

    Each flow is visualised with the colour wheel, weighted by its own
    foreground map, and the per-pixel Euclidean colour distance is summed
    over the frame. ``radius`` is the colour-wheel saturation radius; when
    omitted the larger of the two maxima is used. Precomputed colour images
    may be passed through ``rgb_t`` / ``rgb_next``.
    """
    o_t = np.asarray(o_t, dtype=np.float64)
    o_next = np.asarray(o_next, dtype=np.float64)
    if o_t.shape != o_next.shape:
        raise ValueError(f"flow extents differ: {o_t.shape} vs {o_next.shape}")
    if r is None:
        r = default_block(o_t.shape[0])
    if radius is None:
        radius = max(max_magnitude(o_t), max_magnitude(o_next))
    if rgb_t is None:
        rgb_t = flow_to_rgb(o_t, radius or None)
    if rgb_next is None:
        rgb_next = flow_to_rgb(o_next, radius or None)
    a_t = rgb_t * weight_map(o_t, r)[..., None]
    a_next = rgb_next * weight_map(o_next, r)[..., None]
    return float(np.sqrt(((a_t - a_next) ** 2).sum(axis=-1)).sum())


def score_clips(flows, T, stride=1, r=None):
    """Score every valid clip start of a video's flow sequence.

    The colour-wheel radius is the maximum flow magnitude over the clip's
    own frames, and the score is the mean differential over the clip's
    ``T - 1`` consecutive frame pairs.
    """
    flows = np.asarray(flows, dtype=np.float64)
    starts = valid_starts(flows.shape[0], T, stride)
    if r is None:
        r = default_block(flows.shape[1])
    weights = {}
    mags = np.sqrt((flows**2).sum(axis=-1)).reshape(flows.shape[0], -1).max(axis=1)
    scores = []
    for start in starts:
        idx = start + stride * np.arange(T)
        radius = float(mags[idx].max())
        rgb = flow_to_rgb(flows[idx], radius or None)
        z = []
        for j in range(T - 1):
            for k in (idx[j], idx[j + 1]):
                if k not in weights:
                    weights[k] = weight_map(flows[k], r)
            a = rgb[j] * weights[idx[j]][..., None]
            b = rgb[j + 1] * weights[idx[j + 1]][..., None]
            z.append(np.sqrt(((a - b) ** 2).sum(axis=-1)).sum())
        scores.append(ClipScore(start, float(np.mean(z)) if z else 0.0))
    return scores


def mds_select(scores):
    """Starts scoring strictly above the median; all starts if none do."""
    if not scores:
        return []
    values = np.array([s.score for s in scores])
    med = np.median(values)
    chosen = [s.start for s in scores if s.score > med]
    return chosen or [s.start for s in scores]
