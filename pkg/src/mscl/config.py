"""Training configuration and the flat ``key = value`` config format."""

import dataclasses
import math
import re
from dataclasses import dataclass, fields
from pathlib import Path

SAMPLERS = ("uniform", "mds")
FLOW_ENCODERS = ("2d", "3d-zero", "3d-reflect")


@dataclass
class TrainConfig:
    tau: float = 0.07
    alpha: float = math.pi / 3
    lam: float = 1.0
    bank_size: int = 512
    ema: float = 0.999
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    epochs: int = 30
    batch_size: int = 16
    clip_len: int = 8
    stride: int = 1
    seed: int = 0
    sampler: str = "mds"
    fra: bool = True
    use_rf: bool = True
    use_lmc: bool = True
    flow_encoder: str = "2d"
    width: int = 16
    embed_dim: int = 32
    block: int = 0  # coarsening stride for MDS; 0 picks it from the frame size

    def validate(self):
        for name in ("tau", "lr", "epochs", "batch_size", "clip_len", "stride", "bank_size", "width", "embed_dim"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("momentum", "weight_decay", "lam", "block"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 < self.alpha < math.pi:
            raise ValueError(f"alpha must lie in (0, pi), got {self.alpha}")
        if not 0.0 <= self.ema <= 1.0:
            raise ValueError(f"ema must lie in [0, 1], got {self.ema}")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.flow_encoder not in FLOW_ENCODERS:
            raise ValueError(f"flow_encoder must be one of {FLOW_ENCODERS}, got {self.flow_encoder!r}")
        if self.width % 8:
            raise ValueError(f"width must be a multiple of 8 so the flow pathway gets width/8, got {self.width}")
        if self.batch_size > self.bank_size:
            raise ValueError(f"batch_size {self.batch_size} exceeds bank_size {self.bank_size}")
        return self

    def replace(self, **kw):
        return dataclasses.replace(self, **kw).validate()

    def to_text(self):
        return "".join(f"{f.name} = {format_value(getattr(self, f.name))}\n" for f in fields(self))


def format_value(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_PI = re.compile(r"^\s*(?:([-+]?[0-9.]+)\s*\*\s*)?pi\s*(?:/\s*([0-9.]+))?\s*$")


def _coerce(name, kind, raw):
    raw = raw.strip()
    if kind is bool:
        low = raw.lower()
        if low in ("1", "true", "on", "yes"):
            return True
        if low in ("0", "false", "off", "no"):
            return False
        raise ValueError(f"{name}: expected on/off, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        m = _PI.match(raw)
        if m:
            num = float(m.group(1)) if m.group(1) else 1.0
            den = float(m.group(2)) if m.group(2) else 1.0
            return num * math.pi / den
        return float(raw)
    return raw


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def parse_overrides(pairs, source="config"):
    """Typed values for ``{key: raw_string}``; unknown keys are rejected."""
    out = {}
    for key, raw in pairs.items():
        key = key.strip().replace("-", "_")
        if key not in _TYPES:
            raise ValueError(f"{source}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, _TYPES[key], raw)
        except ValueError as exc:
            raise ValueError(f"{source}: bad value for {key}: {exc}") from None
    return out


def parse_config_text(text, source="config"):
    """Parse flat ``key = value`` lines (``#`` comments allowed)."""
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected key = value")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v
    return parse_overrides(pairs, source=source)


def read_config_file(path):
    return parse_config_text(Path(path).read_text(), source=str(path))


def build_config(file_path=None, overrides=None, base=None):
    """Defaults < config file < explicit overrides."""
    values = dataclasses.asdict(base or TrainConfig())
    if file_path is not None:
        values.update(read_config_file(file_path))
    if overrides:
        values.update(overrides)
    return TrainConfig(**values).validate()


# Rows of the loss/policy ablation: (use_rf, use_lmc, fra, mds, 3d flow encoder)
ABLATION_ROWS = {
    1: (False, False, False, False, False),
    2: (True, False, False, False, False),
    3: (True, False, False, False, True),
    4: (False, True, False, False, False),
    5: (True, True, False, False, False),
    6: (True, True, True, False, False),
    7: (True, True, False, True, False),
    8: (True, True, True, True, False),
}


def ablation_config(row, base=None):
    use_rf, use_lmc, fra, mds, three_d = ABLATION_ROWS[row]
    base = base or TrainConfig()
    return base.replace(
        use_rf=use_rf,
        use_lmc=use_lmc,
        fra=fra,
        sampler="mds" if mds else "uniform",
        flow_encoder="3d-zero" if three_d else "2d",
    )
