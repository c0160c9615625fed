"""Synthetic moving-shape videos with exact optical flow.

Each video shows one rigid shape translating over a static textured
background. The shape's centre follows a motion program ``p(t)``; the flow
stored at index ``t`` is the displacement ``p(t + s) - p(t)`` on pixels
covered by the shape at frame ``t`` and exactly zero elsewhere. Shape,
colours and texture are drawn independently of the motion class.
"""

import hashlib
import logging
import math
import shutil
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"MSCLVID1"
HEADER = struct.Struct("<8s5I4x")  # 32 bytes
MANIFEST_COLUMNS = ("path", "label", "frames", "height", "width", "stride", "checksum")
KINDS = ("linear", "circular", "oscillation", "accelerating")
SHAPES = ("square", "disk", "diamond")


@dataclass(frozen=True)
class MotionClass:
    """A motion program. ``speed`` is the nominal pixels/frame."""

    id: int
    kind: str
    speed: float = 0.8
    angle: float = 0.0  # direction (linear, accelerating) or axis (oscillation)
    period: float = 12.0  # frames per cycle (circular, oscillation)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown motion kind {self.kind!r}")


def default_classes(n=4):
    """The standard class catalogue: one class per motion kind, then variants."""
    catalogue = [
        # the first four differ in flow direction as well as dynamics, and
        # stay distinct under horizontal flips
        MotionClass(0, "linear", speed=0.8, angle=0.0),
        MotionClass(1, "circular", speed=1.2, period=16.0),
        MotionClass(2, "oscillation", speed=1.2, angle=math.pi / 2, period=12.0),
        MotionClass(3, "accelerating", speed=0.8, angle=math.pi / 4),
        MotionClass(4, "linear", speed=0.8, angle=math.pi / 2),
        MotionClass(5, "circular", speed=-1.2, period=16.0),
        MotionClass(6, "oscillation", speed=1.2, angle=0.0, period=12.0),
        MotionClass(7, "accelerating", speed=0.8, angle=3 * math.pi / 4),
    ]
    if not 1 <= n <= len(catalogue):
        raise ValueError(f"between 1 and {len(catalogue)} classes are available, asked for {n}")
    return catalogue[:n]


def linear_direction_classes(n=4, speed=0.8):
    return [MotionClass(i, "linear", speed=speed, angle=2 * math.pi * i / n) for i in range(n)]


@dataclass
class SyntheticVideo:
    frames: np.ndarray  # (F, H, W, 3) float32 in [0, 1]
    flows: np.ndarray  # (F, H, W, 2) float32, index t holds t -> t+stride
    label: int
    stride: int = 1
    seed: int = 0

    @property
    def num_frames(self):
        return self.frames.shape[0]


def trajectory(mc, F, stride, rng, extent, half):
    """Centre positions ``(F + stride, 2)`` as (x, y) for one video.

    The path is placed so it stays inside ``[half, extent - 1 - half]`` when
    it can; otherwise coordinates are folded back by reflection.
    """
    t = np.arange(F + stride, dtype=np.float64)
    if mc.kind == "linear":
        d = mc.speed * t
        offs = np.stack([d * math.cos(mc.angle), d * math.sin(mc.angle)], axis=1)
    elif mc.kind == "accelerating":
        # starts at 10% of nominal speed, reaches ~1.9x nominal at the end
        v0 = 0.1 * mc.speed
        acc = 2 * (mc.speed - v0) / max(F - 1, 1)
        d = v0 * t + 0.5 * acc * t * t
        offs = np.stack([d * math.cos(mc.angle), d * math.sin(mc.angle)], axis=1)
    elif mc.kind == "circular":
        omega = 2 * math.pi / mc.period * (1.0 if mc.speed >= 0 else -1.0)
        rho = abs(mc.speed) / abs(omega)
        phase = rng.uniform(0, 2 * math.pi)
        ang = phase + omega * t
        offs = rho * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:  # oscillation
        omega = 2 * math.pi / mc.period
        amp = mc.speed / omega
        phase = rng.uniform(0, 2 * math.pi)
        d = amp * np.sin(phase + omega * t)
        offs = np.stack([d * math.cos(mc.angle), d * math.sin(mc.angle)], axis=1)

    lo, hi = half, extent - 1 - half
    start = np.empty(2)
    for ax in range(2):
        span_lo, span_hi = offs[:, ax].min(), offs[:, ax].max()
        room = (hi - lo) - (span_hi - span_lo)
        if room >= 0:
            start[ax] = lo - span_lo + rng.uniform(0, room)
        else:
            start[ax] = lo - span_lo
    return _reflect(start + offs, lo, hi)


def _reflect(p, lo, hi):
    width = hi - lo
    if width <= 0:
        return np.full_like(p, lo)
    q = np.mod(p - lo, 2 * width)
    return lo + np.where(q > width, 2 * width - q, q)


def _shape_mask(shape, cx, cy, half, H, W):
    ys, xs = np.mgrid[0:H, 0:W].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    if shape == "square":
        return (np.abs(dx) <= half) & (np.abs(dy) <= half)
    if shape == "disk":
        return dx * dx + dy * dy <= half * half
    return np.abs(dx) + np.abs(dy) <= half * 1.3


def render(positions, F, stride, H, W, rng, half=None, shape=None):
    """Rasterise a centre path into ``(frames, flows)`` as float32 arrays."""
    if shape is None:
        shape = SHAPES[int(rng.integers(len(SHAPES)))]
    if half is None:
        half = float(rng.uniform(4.5, 6.0))
    background = rng.uniform(0.0, 1.0, size=3)
    fg = rng.uniform(0.0, 1.0, size=3)
    # keep the shape visible against the background
    while np.abs(fg - background).sum() < 0.6:
        fg = rng.uniform(0.0, 1.0, size=3)
    texture = rng.uniform(-0.08, 0.08, size=(H, W, 1))
    base = np.clip(background[None, None, :] + texture, 0.0, 1.0)

    frames = np.empty((F, H, W, 3), dtype=np.float32)
    flows = np.zeros((F, H, W, 2), dtype=np.float32)
    for t in range(F):
        cx, cy = positions[t]
        mask = _shape_mask(shape, cx, cy, half, H, W)
        img = base.copy()
        img[mask] = fg
        frames[t] = img
        flows[t][mask] = positions[t + stride] - positions[t]
    return frames, flows


def generate_video(mc, F=24, H=32, W=32, stride=1, seed=0):
    """Render one video of motion class ``mc``; deterministic in ``seed``."""
    if F < 2:
        raise ValueError(f"a video needs at least 2 frames, got F={F}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    rng = np.random.default_rng(seed)
    half = float(rng.uniform(4.5, 6.0))
    if 2 * half + 1 > min(H, W):
        raise ValueError(f"shape of half-size {half:.1f} does not fit a {H}x{W} frame")
    shape = SHAPES[int(rng.integers(len(SHAPES)))]
    pos = trajectory(mc, F, stride, rng, min(H, W), half + 1)
    frames, flows = render(pos, F, stride, H, W, rng, half=half, shape=shape)
    return SyntheticVideo(frames, flows, mc.id, stride, seed)


def hflip_clip(frames, flows):
    """Mirror a clip left-right in both modalities (u flips sign)."""
    from .flow_ops import hflip_flow

    return np.ascontiguousarray(frames[..., ::-1, :]), hflip_flow(flows)


# ------------------------------------------------------------------ storage


def write_video(path, video):
    F, H, W, _ = video.frames.shape
    header = HEADER.pack(MAGIC, F, H, W, video.label, video.stride)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(video.frames, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(video.flows, dtype="<f4").tobytes())


def read_video(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read video {path}: {exc}") from exc
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, F, H, W, label, stride = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    n_frames, n_flows = F * H * W * 3, F * H * W * 2
    if len(raw) != HEADER.size + 4 * (n_frames + n_flows):
        raise ValueError(f"{path}: size {len(raw)} does not match header {F}x{H}x{W}")
    body = np.frombuffer(raw, dtype="<f4", offset=HEADER.size)
    frames = body[:n_frames].reshape(F, H, W, 3).astype(np.float32)
    flows = body[n_frames:].reshape(F, H, W, 2).astype(np.float32)
    return SyntheticVideo(frames, flows, int(label), int(stride))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    frames: int
    height: int
    width: int
    stride: int
    checksum: str

    @property
    def split(self):
        return self.path.split("/", 1)[0]


def generate_corpus(
    root,
    classes=None,
    per_class=50,
    train_fraction=0.8,
    frames=24,
    size=32,
    stride=1,
    seed=0,
    force=False,
):
    """Write a stratified train/test corpus under ``root`` and return its manifest."""
    root = Path(root)
    classes = default_classes(4) if classes is None else classes
    if root.exists() and any(root.iterdir()):
        if not force:
            raise FileExistsError(f"output directory {root} exists and is not empty")
        shutil.rmtree(root)
    n_train = int(round(per_class * train_fraction))
    entries = []
    seeds = np.random.SeedSequence(seed).spawn(len(classes) * per_class)
    for ci, mc in enumerate(classes):
        for i in range(per_class):
            split = "train" if i < n_train else "test"
            rel = f"{split}/c{mc.id}_{i:04d}.bin"
            vseed = int(seeds[ci * per_class + i].generate_state(1, dtype=np.uint64)[0])
            video = generate_video(mc, frames, size, size, stride, vseed)
            dest = root / rel
            try:
                dest.parent.mkdir(parents=True, exist_ok=True)
                write_video(dest, video)
            except OSError as exc:
                raise OSError(f"failed writing {dest}: {exc}") from exc
            entries.append(ManifestEntry(rel, mc.id, frames, size, size, stride, _sha256(dest)))
    write_manifest(root, entries)
    log.info("wrote %d videos to %s", len(entries), root)
    return entries


def write_manifest(root, entries):
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for e in entries:
        lines.append("\t".join(str(getattr(e, c)) for c in MANIFEST_COLUMNS))
    Path(root, "manifest.tsv").write_text("\n".join(lines) + "\n")


def read_manifest(root):
    path = Path(root, "manifest.tsv")
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc}") from exc
    rows = text.splitlines()
    if not rows or tuple(rows[0].split("\t")) != MANIFEST_COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[:1]}")
    entries = []
    for row in rows[1:]:
        if not row:
            continue
        p, label, f, h, w, s, checksum = row.split("\t")
        entries.append(ManifestEntry(p, int(label), int(f), int(h), int(w), int(s), checksum))
    return entries


def load_split(root, split, verify=False):
    """Load every video of ``split`` ("train" or "test") from a corpus."""
    out = []
    for e in read_manifest(root):
        if e.split != split:
            continue
        path = Path(root, e.path)
        if verify and _sha256(path) != e.checksum:
            raise ValueError(f"{path}: checksum mismatch")
        out.append(read_video(path))
    return out


def corpus_checksum(root):
    """Digest of the manifest, which pins every video checksum."""
    return hashlib.sha256(Path(root, "manifest.tsv").read_bytes()).hexdigest()


# ----------------------------------------------------------------- sampling


def valid_starts(num_frames, T, stride):
    """Clip starts whose every frame has its forward flow inside the video."""
    n = num_frames - T * stride
    if n < 1:
        raise ValueError(
            f"video of {num_frames} frames is too short for T={T}, stride={stride} "
            f"(needs at least {T * stride + stride})"
        )
    return list(range(n))


@dataclass
class ClipPair:
    frames_q: np.ndarray  # (T, H, W, 3)
    flows_q: np.ndarray  # (T, H, W, 2)
    frames_k: np.ndarray
    flows_k: np.ndarray
    start_q: int
    start_k: int


def clip_at(video, start, T, stride):
    idx = start + stride * np.arange(T)
    return video.frames[idx], video.flows[idx]


def sample_clip_pair(video, T, stride, rng, selector="uniform", candidates=None):
    """Draw query and key windows from one video.

    ``selector`` is ``"uniform"`` (all valid starts) or ``"mds"`` (starts
    above the per-video median motion score). ``candidates`` overrides the
    pool, e.g. with a cached MDS selection.
    """
    if candidates is None:
        if selector == "uniform":
            candidates = valid_starts(video.num_frames, T, stride)
        elif selector == "mds":
            from .motion_sampling import mds_select, score_clips

            candidates = mds_select(score_clips(video.flows, T, stride))
        else:
            raise ValueError(f"unknown selector {selector!r}")
    sq = int(candidates[int(rng.integers(len(candidates)))])
    sk = int(candidates[int(rng.integers(len(candidates)))])
    fq, oq = clip_at(video, sq, T, stride)
    fk, ok = clip_at(video, sk, T, stride)
    return ClipPair(fq, oq, fk, ok, sq, sk)
