"""Toy dual-pathway encoders.

The RGB pathway is a three-stage 3D CNN (spatial stride 2 per stage, no
temporal striding) whose stages are merged top-down into a frame-level map.
The flow pathway mirrors the topology with 2D convolutions at 1/8 width and
encodes each flow frame on its own, so a frame's local feature cannot see
its neighbours. ``flow_mode="3d-zero"`` / ``"3d-reflect"`` swaps in 3D
kernels for the ablation that shows why that matters.
"""

import math

import numpy as np

from . import tensor as tn

FLOW_MODES = ("2d", "3d-zero", "3d-reflect")


def _he(rng, shape, fan_in, gain=2.0):
    return rng.normal(0.0, math.sqrt(gain / fan_in), size=shape)


def linear(x, w, b):
    return tn.add(tn.matmul(x, tn.transpose(w, (1, 0))), b)


def mlp(x, params, prefix):
    h = tn.relu(linear(x, params[prefix + "fc1.w"], params[prefix + "fc1.b"]))
    return linear(h, params[prefix + "fc2.w"], params[prefix + "fc2.b"])


def _init_mlp(params, rng, prefix, d_in, d_out):
    params[prefix + "fc1.w"] = _he(rng, (d_out, d_in), d_in)
    params[prefix + "fc1.b"] = np.zeros(d_out)
    params[prefix + "fc2.w"] = _he(rng, (d_out, d_out), d_out, gain=1.0)
    # non-zero so an all-dead backbone still yields a normalisable embedding
    params[prefix + "fc2.b"] = rng.normal(0.0, 0.01, size=d_out)


class Encoder:
    """Parameter container; ``params`` maps names to leaf tensors."""

    def __init__(self, arrays):
        self.params = {k: tn.Tensor(v, requires_grad=True, name=k) for k, v in arrays.items()}

    def arrays(self):
        return {k: p.data for k, p in self.params.items()}

    def load_arrays(self, arrays):
        for k, v in arrays.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            if self.params[k].shape != np.shape(v):
                raise ValueError(f"{k}: shape {np.shape(v)} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def num_params(self, prefix=""):
        return sum(p.size for k, p in self.params.items() if k.startswith(prefix))


class RGBEncoder(Encoder):
    """3D CNN with stages of width (C, 2C, 4C) and a top-down pyramid merge."""

    def __init__(self, width=16, embed_dim=32, local_dim=None, temporal_kernel=3, seed=0, pad_mode="zeros"):
        self.width = width
        self.embed_dim = embed_dim
        self.local_dim = local_dim or max(1, 4 * width // 8)
        self.kt = temporal_kernel
        self.pad_mode = pad_mode
        rng = np.random.default_rng(seed)
        widths = (3, width, 2 * width, 4 * width)
        a = {}
        for i, name in enumerate(("stage3", "stage4", "stage5")):
            cin, cout = widths[i], widths[i + 1]
            a[name + ".w"] = _he(rng, (cout, cin, self.kt, 3, 3), cin * self.kt * 9)
            a[name + ".b"] = np.zeros(cout)
        for name, cin in zip(("lat3", "lat4", "lat5"), widths[1:]):
            a["tpn." + name + ".w"] = _he(rng, (self.local_dim, cin, 1, 1, 1), cin, gain=1.0)
        _init_mlp(a, rng, "head.", 4 * width, embed_dim)
        super().__init__(a)

    def stages(self, x):
        """``x`` is (B, 3, T, H, W); returns the three stage maps."""
        x = tn.as_tensor(x)
        if x.ndim != 5 or x.shape[1] != 3:
            raise ValueError(f"expected a (B, 3, T, H, W) clip, got {x.shape}")
        if x.shape[3] % 8 or x.shape[4] % 8:
            raise ValueError(f"H and W must be divisible by 8, got {x.shape[3]}x{x.shape[4]}")
        p = self.params
        outs = []
        h = x
        for name in ("stage3", "stage4", "stage5"):
            h = tn.conv3d(
                h, p[name + ".w"], p[name + ".b"], stride=(1, 2, 2),
                padding=(self.kt // 2, 1, 1), pad_mode=self.pad_mode,
            )
            h = tn.relu(h)
            outs.append(h)
        return tuple(outs)

    def tpn(self, v3, v4, v5, all_levels=False):
        """Lateral 1x1x1 projections merged top-down by nearest upsampling."""
        for deep, shallow in ((v4, v3), (v5, v4)):
            if deep.shape[2] != shallow.shape[2] or shallow.shape[3] != 2 * deep.shape[3]:
                raise ValueError(f"pyramid stages do not nest: {shallow.shape} vs {deep.shape}")
        p = self.params
        l5 = tn.conv3d(v5, p["tpn.lat5.w"])
        l4 = tn.add(tn.conv3d(v4, p["tpn.lat4.w"]), tn.upsample_nearest(l5, (1, 2, 2)))
        l3 = tn.add(tn.conv3d(v3, p["tpn.lat3.w"]), tn.upsample_nearest(l4, (1, 2, 2)))
        return (l3, l4, l5) if all_levels else l3

    def global_feature(self, v5):
        return mlp(tn.spatiotemporal_pool(v5), self.params, "head.")

    def backbone_feature(self, x):
        """Pooled last-stage feature without the projection head."""
        return tn.spatiotemporal_pool(self.stages(x)[2])

    def forward(self, x, local=True):
        """Returns ``(global (B, D), local (B, T, L) or None)``."""
        v3, v4, v5 = self.stages(x)
        g = self.global_feature(v5)
        if not local:
            return g, None
        lc = tn.spatial_pool(self.tpn(v3, v4, v5))  # (B, L, T)
        return g, tn.transpose(lc, (0, 2, 1))


class FlowEncoder(Encoder):
    """Flow-image encoder with stage widths 1/8 of the RGB pathway."""

    def __init__(self, rgb_width=16, embed_dim=32, mode="2d", seed=1):
        if mode not in FLOW_MODES:
            raise ValueError(f"unknown flow encoder mode {mode!r}; expected one of {FLOW_MODES}")
        self.mode = mode
        base = max(1, rgb_width // 8)
        self.widths = (base, 2 * base, 4 * base)
        self.embed_dim = embed_dim
        rng = np.random.default_rng(seed)
        chans = (3,) + self.widths
        kt = 1 if mode == "2d" else 3
        a = {}
        for i, name in enumerate(("stage3", "stage4", "stage5")):
            cin, cout = chans[i], chans[i + 1]
            shape = (cout, cin, 3, 3) if mode == "2d" else (cout, cin, kt, 3, 3)
            a[name + ".w"] = _he(rng, shape, cin * kt * 9)
            a[name + ".b"] = np.zeros(cout)
        _init_mlp(a, rng, "head.", self.widths[-1], embed_dim)
        super().__init__(a)

    @property
    def local_dim(self):
        return self.widths[-1]

    def stages(self, x):
        """``x`` is (B, 3, T, H, W) colour-coded flow; returns m5 (B, C5, T, h, w)."""
        x = tn.as_tensor(x)
        if x.ndim != 5 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, T, H, W) flow images, got {x.shape}")
        p = self.params
        B, _, T, H, W = x.shape
        if self.mode == "2d":
            # fold time into the batch: every frame is encoded on its own
            h = tn.reshape(tn.transpose(x, (0, 2, 1, 3, 4)), (B * T, 3, H, W))
            for name in ("stage3", "stage4", "stage5"):
                h = tn.relu(tn.conv2d(h, p[name + ".w"], p[name + ".b"], stride=2, padding=1))
            _, C5, h5, w5 = h.shape
            return tn.transpose(tn.reshape(h, (B, T, C5, h5, w5)), (0, 2, 1, 3, 4))
        pad_mode = "zeros" if self.mode == "3d-zero" else "reflect"
        h = x
        for name in ("stage3", "stage4", "stage5"):
            h = tn.relu(
                tn.conv3d(h, p[name + ".w"], p[name + ".b"], stride=(1, 2, 2), padding=1, pad_mode=pad_mode)
            )
        return h

    def local_feature(self, m5):
        return tn.transpose(tn.spatial_pool(m5), (0, 2, 1))

    def global_feature(self, m5):
        return mlp(tn.spatiotemporal_pool(m5), self.params, "head.")

    def forward(self, x, local=True):
        m5 = self.stages(x)
        g = self.global_feature(m5)
        return g, (self.local_feature(m5) if local else None)


def clip_to_tensor(frames):
    """(T, H, W, 3) or (B, T, H, W, 3) arrays -> (B, 3, T, H, W) tensor."""
    a = np.asarray(frames, dtype=np.float64)
    if a.ndim == 4:
        a = a[None]
    return tn.Tensor(np.ascontiguousarray(a.transpose(0, 4, 1, 2, 3)))
