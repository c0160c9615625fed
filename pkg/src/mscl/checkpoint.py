"""Binary checkpoints: a config echo followed by named float32 blobs.

Layout (little-endian)::

    b"MSCLCKPT"
    u32 config length, config text (utf-8, ``key = value`` lines)
    u32 blob count
    per blob: u32 name length, name, u32 ndim, ndim x u32 shape, f32 data
"""

import struct

import numpy as np

from .config import TrainConfig, parse_config_text

MAGIC = b"MSCLCKPT"
_U32 = struct.Struct("<I")


def write_checkpoint(path, config, arrays):
    parts = [MAGIC]
    text = config.to_text().encode("utf-8")
    parts += [_U32.pack(len(text)), text, _U32.pack(len(arrays))]
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        if not np.all(np.isfinite(a)):
            raise ValueError(f"refusing to checkpoint non-finite values in {name}")
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(a.ndim)]
        parts += [_U32.pack(d) for d in a.shape]
        parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return _U32.unpack(self.take(4))[0]


def read_checkpoint(path):
    """Returns ``(TrainConfig, {name: float64 array})``."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    text = r.take(r.u32()).decode("utf-8")
    config = TrainConfig(**parse_config_text(text, source=f"{path} config")).validate()
    arrays = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        shape = tuple(r.u32() for _ in range(r.u32()))
        n = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(r.take(4 * n), dtype="<f4").reshape(shape).astype(np.float64)
    if r.pos != len(r.buf):
        raise ValueError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    return config, arrays


def save_model(path, model):
    write_checkpoint(path, model.config, model.named_arrays())


def load_model(path):
    """Rebuild an ``MSCLModel`` (encoders, key encoders, banks) from disk."""
    from .training import MSCLModel

    config, arrays = read_checkpoint(path)
    model = MSCLModel(config)
    for prefix in ("bank.rgb.", "bank.flow."):
        v = arrays.get(prefix + "vectors")
        if v is not None:
            # float32 storage drifts off the unit sphere; restore the invariant
            n = np.linalg.norm(v, axis=1, keepdims=True)
            arrays[prefix + "vectors"] = np.where(n > 0, v / np.where(n > 0, n, 1.0), 0.0)
    model.load_named_arrays(arrays)
    return model
