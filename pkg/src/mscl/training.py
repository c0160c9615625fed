"""Optimizer, schedule and the dual-pathway contrastive pre-training loop."""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .config import TrainConfig
from .contrastive import global_infonce, inter_modal_loss, lmcl, lmcl_fra, total_loss
from .encoders import FlowEncoder, RGBEncoder
from .flow_ops import default_block, flow_to_rgb, hflip_flow, max_magnitude, rotate_flow, sample_angle
from .moco import MemoryBank, ema_update
from .motion_sampling import mds_select, score_clips
from .synth import sample_clip_pair, valid_starts

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("step", "lr", "l_rgb", "l_flow", "l_rf", "l_lmc", "total")


class NumericalError(RuntimeError):
    """Raised when a gradient or loss stops being finite."""


def cosine_lr(step, total_steps, lr0):
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr0
    return lr0 * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


class SGD:
    """Heavy-ball SGD with coupled weight decay: ``v = mu v + g + wd p; p -= lr v``."""

    def __init__(self, momentum=0.9, weight_decay=1e-4):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {}

    def step(self, params, grads, lr):
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(p)
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {name}")
            if g.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            v = self.velocity.get(name)
            v = g + self.weight_decay * p if v is None else self.momentum * v + g + self.weight_decay * p
            self.velocity[name] = v
            p -= lr * v


def sgd_step(params, grads, lr, momentum, weight_decay, velocity):
    """Functional form of :meth:`SGD.step`; updates ``params`` and ``velocity`` in place."""
    opt = SGD(momentum, weight_decay)
    opt.velocity = velocity
    opt.step(params, grads, lr)
    return params


class MSCLModel:
    """Query encoders, their momentum key copies and the two key banks."""

    def __init__(self, config):
        self.config = config
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        rgb_seed, flow_seed = (int(s.generate_state(1)[0]) for s in seeds)
        self.rgb = RGBEncoder(config.width, config.embed_dim, seed=rgb_seed)
        self.flow = FlowEncoder(config.width, config.embed_dim, mode=config.flow_encoder, seed=flow_seed)
        self.rgb_key = RGBEncoder(config.width, config.embed_dim, seed=rgb_seed)
        self.flow_key = FlowEncoder(config.width, config.embed_dim, mode=config.flow_encoder, seed=flow_seed)
        for enc in (self.rgb_key, self.flow_key):
            for p in enc.params.values():
                p.requires_grad = False
        self.rgb_bank = MemoryBank(config.bank_size, config.embed_dim)
        self.flow_bank = MemoryBank(config.bank_size, config.embed_dim)

    def named_arrays(self):
        out = {}
        for prefix, enc in (("rgb.", self.rgb), ("flow.", self.flow), ("key.rgb.", self.rgb_key), ("key.flow.", self.flow_key)):
            for k, v in enc.arrays().items():
                out[prefix + k] = v
        for prefix, bank in (("bank.rgb.", self.rgb_bank), ("bank.flow.", self.flow_bank)):
            out[prefix + "vectors"] = bank.vectors
            out[prefix + "state"] = np.array([bank.cursor, bank.fill], dtype=np.float64)
        return out

    def load_named_arrays(self, arrays):
        groups = {"rgb.": {}, "flow.": {}, "key.rgb.": {}, "key.flow.": {}}
        for name, v in arrays.items():
            if name.startswith("bank."):
                continue
            for prefix in ("key.rgb.", "key.flow.", "rgb.", "flow."):
                if name.startswith(prefix):
                    groups[prefix][name[len(prefix):]] = v
                    break
            else:
                raise KeyError(f"unexpected checkpoint entry {name!r}")
        self.rgb.load_arrays(groups["rgb."])
        self.flow.load_arrays(groups["flow."])
        self.rgb_key.load_arrays(groups["key.rgb."] or groups["rgb."])
        self.flow_key.load_arrays(groups["key.flow."] or groups["flow."])
        for prefix, bank in (("bank.rgb.", self.rgb_bank), ("bank.flow.", self.flow_bank)):
            if prefix + "vectors" in arrays:
                cursor, fill = arrays[prefix + "state"]
                bank.load_state(arrays[prefix + "vectors"], int(cursor), int(fill))

    def momentum_update(self, m):
        for q, k in ((self.rgb, self.rgb_key), (self.flow, self.flow_key)):
            ema_update(k.arrays(), q.arrays(), m)


@dataclass
class MetricsLog:
    rows: list = field(default_factory=list)  # (step, lr, l_rgb, l_flow, l_rf, l_lmc, total)
    evals: list = field(default_factory=list)  # (epoch, name, value)
    wall_clock: float = 0.0

    def append(self, step, lr, breakdown):
        if self.rows and step <= self.rows[-1][0]:
            raise ValueError(f"step {step} is not after {self.rows[-1][0]}")
        self.rows.append((step, lr) + breakdown.row())

    def totals(self):
        return [r[-1] for r in self.rows]

    def to_tsv(self):
        lines = ["\t".join(METRIC_COLUMNS)]
        for r in self.rows:
            lines.append("\t".join([str(r[0])] + [repr(float(v)) for v in r[1:]]))
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_tsv())


def read_metrics(path):
    with open(path) as fh:
        rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    if not rows or tuple(rows[0]) != METRIC_COLUMNS:
        raise ValueError(f"{path}: not a metrics TSV")
    return [(int(r[0]),) + tuple(float(v) for v in r[1:]) for r in rows[1:]]


# ----------------------------------------------------------------- batching


def _flow_images(flows, radius=None):
    """(T, H, W, 2) -> colour-coded (T, H, W, 3) using the clip's max magnitude."""
    return flow_to_rgb(flows, radius)


def _to_bcthw(clips):
    return tn.Tensor(np.ascontiguousarray(np.stack(clips).transpose(0, 4, 1, 2, 3), dtype=np.float64))


@dataclass
class Batch:
    rgb_q: tn.Tensor
    flow_q: tn.Tensor
    rgb_k: tn.Tensor
    flow_k: tn.Tensor
    flow_rot: tn.Tensor = None
    angles: list = None


def make_batch(videos, config, rng, candidates=None):
    """Sample, flip and colour-code one query/key clip pair per video."""
    T, s = config.clip_len, config.stride
    rq, fq, rk, fk, fr, angles = [], [], [], [], [], []
    for i, video in enumerate(videos):
        cands = None if candidates is None else candidates[i]
        pair = sample_clip_pair(video, T, s, rng, candidates=cands)
        frames_q, flows_q = pair.frames_q, pair.flows_q
        if rng.random() < 0.5:
            frames_q, flows_q = frames_q[:, :, ::-1], hflip_flow(flows_q)
        frames_k, flows_k = pair.frames_k, pair.flows_k
        if rng.random() < 0.5:
            frames_k, flows_k = frames_k[:, :, ::-1], hflip_flow(flows_k)
        rq.append(frames_q)
        rk.append(frames_k)
        radius = max_magnitude(flows_q)
        fq.append(_flow_images(flows_q, radius or None))
        fk.append(_flow_images(flows_k))
        if config.fra:
            theta = sample_angle(config.alpha, rng)
            angles.append(theta)
            fr.append(_flow_images(rotate_flow(flows_q, theta), radius or None))
    return Batch(
        _to_bcthw(rq), _to_bcthw(fq), _to_bcthw(rk), _to_bcthw(fk),
        _to_bcthw(fr) if fr else None, angles or None,
    )


def mds_candidates(videos, config):
    """Per-video MDS start pools (scores are computed once; flows never change)."""
    r = config.block or default_block(videos[0].flows.shape[1])
    return [mds_select(score_clips(v.flows, config.clip_len, config.stride, r)) for v in videos]


# ----------------------------------------------------------------- training


def forward_losses(model, batch, config):
    """Query/key forward passes and the combined objective for one batch."""
    tau = config.tau
    rgb_g, rgb_lc = model.rgb.forward(batch.rgb_q, local=True)
    if batch.flow_rot is not None:
        both = tn.Tensor(np.concatenate([batch.flow_q.data, batch.flow_rot.data]))
        m5 = model.flow.stages(both)
        B = batch.flow_q.shape[0]
        m5_q = tn.getitem(m5, slice(0, B))
        rot_lc = model.flow.local_feature(tn.getitem(m5, slice(B, 2 * B)))
    else:
        m5_q = model.flow.stages(batch.flow_q)
        rot_lc = None
    flow_g = model.flow.global_feature(m5_q)
    flow_lc = model.flow.local_feature(m5_q)

    with tn.no_grad():
        key_rgb = model.rgb_key.forward(batch.rgb_k, local=False)[0]
        key_flow = model.flow_key.forward(batch.flow_k, local=False)[0]

    parts = {
        "l_rgb": global_infonce(rgb_g, key_rgb, model.rgb_bank, tau),
        "l_flow": global_infonce(flow_g, key_flow, model.flow_bank, tau),
    }
    if config.use_rf:
        parts["l_rf"] = inter_modal_loss(rgb_g, key_flow, model.flow_bank, flow_g, key_rgb, model.rgb_bank, tau)
    if rot_lc is not None:
        parts["l_lmc"] = lmcl_fra(rgb_lc, flow_lc, rot_lc, tau)
    else:
        parts["l_lmc"] = lmcl(rgb_lc, flow_lc, tau)
    lam = config.lam if config.use_lmc else 0.0
    return total_loss(parts, lam), key_rgb.data, key_flow.data


def pretrain(config, videos, on_step=None):
    """Run contrastive pre-training; returns ``(model, MetricsLog)``.

    ``on_step(step, breakdown)`` is called after every optimizer step.
    """
    config = config.validate()
    if not videos:
        raise ValueError("pre-training needs at least one video")
    shapes = {v.frames.shape[1:] for v in videos}
    if len(shapes) != 1:
        raise ValueError(f"videos have mixed frame shapes {sorted(shapes)}")
    H, W = videos[0].frames.shape[1:3]
    if H % 8 or W % 8:
        raise ValueError(f"frame size {H}x{W} must be divisible by 8")
    for v in videos:
        valid_starts(v.num_frames, config.clip_len, config.stride)
    if config.batch_size > len(videos):
        raise ValueError(f"batch_size {config.batch_size} exceeds the {len(videos)} training videos")

    t0 = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    model = MSCLModel(config)
    candidates = mds_candidates(videos, config) if config.sampler == "mds" else None

    def pools(idx):
        return None if candidates is None else [candidates[i] for i in idx]

    # warm the banks with one batch of key embeddings before the first loss
    warm = rng.permutation(len(videos))[: config.batch_size]
    batch = make_batch([videos[i] for i in warm], config, rng, pools(warm))
    with tn.no_grad():
        model.rgb_bank.enqueue(model.rgb_key.forward(batch.rgb_k, local=False)[0].data)
        model.flow_bank.enqueue(model.flow_key.forward(batch.flow_k, local=False)[0].data)

    steps_per_epoch = len(videos) // config.batch_size
    total_steps = steps_per_epoch * config.epochs
    opt = SGD(config.momentum, config.weight_decay)
    metrics = MetricsLog()
    query_params = {**{"rgb." + k: v for k, v in model.rgb.arrays().items()},
                    **{"flow." + k: v for k, v in model.flow.arrays().items()}}
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(videos))
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = make_batch([videos[i] for i in idx], config, rng, pools(idx))
            lr = cosine_lr(step, total_steps, config.lr)
            breakdown, key_rgb, key_flow = forward_losses(model, batch, config)
            if not math.isfinite(breakdown.total):
                raise NumericalError(f"loss became {breakdown.total} at step {step}")
            model.rgb.zero_grad()
            model.flow.zero_grad()
            tn.backward(breakdown.graph)
            breakdown.graph = None
            grads = {}
            for prefix, enc in (("rgb.", model.rgb), ("flow.", model.flow)):
                for k, p in enc.params.items():
                    grads[prefix + k] = p.grad
            opt.step(query_params, grads, lr)
            model.momentum_update(config.ema)
            model.rgb_bank.enqueue(key_rgb)
            model.flow_bank.enqueue(key_flow)
            metrics.append(step, lr, breakdown)
            if on_step is not None:
                on_step(step, breakdown)
            step += 1
        log.info("epoch %d/%d total=%.4f", epoch + 1, config.epochs, metrics.rows[-1][-1])
    metrics.wall_clock = time.perf_counter() - t0
    return model, metrics
