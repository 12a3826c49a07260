"""Network and training configuration.

Config files are flat ``key = value`` text; ``#`` starts a comment and
unknown keys are errors. Recognised keys:

    task            classification | segmentation | correspondence | matching
    blocks          number of FCResNet blocks
    width           tangent channel width inside the blocks
    lift_width      channels produced by the gradient lift (default 16)
    radial_nodes    N, radial interpolation nodes per filter
    band_limit      B, highest angular frequency
    epsilon         filter support radius on the unit-area mesh
    echo_d, echo_h  ECHO descriptor channels and samples per descriptor
    mlp             comma-separated hidden widths after the ECHO block
    descriptor_dim  matching descriptor size (default 16)
    lr, epochs, smoothing, dropout, seed
    input           invariant | xyz  (per-vertex input scalars, see data.input_features)
    pairs           sampled (non-)correspondences per mesh pair and epoch
    samples         farthest-point samples per mesh for matching
    accumulate      meshes per optimizer step (default 1)
    rotate          random rotation augmentation, true | false
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError

TASKS = ("classification", "segmentation", "correspondence", "matching")

_DEFAULTS = {
    "classification": dict(blocks=2, width=32, radial_nodes=6, band_limit=2, epsilon=0.2, epochs=30, smoothing=0.0),
    "segmentation": dict(blocks=4, width=32, radial_nodes=6, band_limit=2, epsilon=0.2, epochs=15, smoothing=0.2,
                         echo_d=32, echo_h=33, mlp=(256, 124)),
    "correspondence": dict(blocks=8, width=32, radial_nodes=3, band_limit=1, epsilon=0.05, epochs=30, smoothing=0.0,
                           echo_d=12, echo_h=13, mlp=(124, 64, 32), dropout=0.5),
    "matching": dict(blocks=8, width=32, radial_nodes=6, band_limit=1, epsilon=0.1, epochs=30, smoothing=0.0),
}


@dataclass
class NetConfig:
    task: str = "classification"
    blocks: int = 2
    width: int = 32
    lift_width: int = 16
    radial_nodes: int = 6
    band_limit: int = 2
    epsilon: float = 0.2
    echo_d: int = 0
    echo_h: int = 0
    mlp: tuple = ()
    descriptor_dim: int = 16
    lr: float = 0.01
    epochs: int = 30
    smoothing: float = 0.0
    dropout: float = 0.0
    seed: int = 0
    input: str = "invariant"
    pairs: int = 512
    samples: int = 256
    accumulate: int = 1
    rotate: bool = True

    @classmethod
    def for_task(cls, task: str, **overrides) -> "NetConfig":
        if task not in TASKS:
            raise ConfigError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
        values = dict(_DEFAULTS[task])
        values.update(overrides)
        cfg = cls(task=task, **values)
        cfg.validate()
        return cfg

    @property
    def residual_period(self) -> int:
        """Blocks between the extra long-range residual joins (0 = none)."""
        return 2 if self.blocks >= 3 else 0

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.task in TASKS, f"unknown task {self.task!r}")
        need(self.blocks >= 0, "blocks must be >= 0")
        need(self.width >= 1 and self.lift_width >= 1, "widths must be positive")
        need(self.radial_nodes >= 1, "radial_nodes must be >= 1")
        need(self.band_limit >= 0, "band_limit must be >= 0")
        need(self.epsilon > 0, "epsilon must be positive")
        need(self.lr > 0, "lr must be positive")
        need(self.epochs >= 0, "epochs must be >= 0")
        need(0 <= self.smoothing < 1, "smoothing must lie in [0, 1)")
        need(0 <= self.dropout < 1, "dropout must lie in [0, 1)")
        need(self.input in ("invariant", "xyz"), "input must be 'invariant' or 'xyz'")
        need(self.accumulate >= 1, "accumulate must be >= 1")
        need(self.pairs >= 1 and self.samples >= 2, "pairs and samples must be positive")
        if self.task in ("segmentation", "correspondence"):
            need(self.echo_d >= 1 and self.echo_h >= 2, f"{self.task} needs echo_d >= 1 and echo_h >= 2")
        if self.task == "correspondence":
            need(len(self.mlp) >= 1, "correspondence needs the ECHO MLP widths")
        if self.task == "matching":
            need(self.descriptor_dim >= 1, "descriptor_dim must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mlp"] = list(self.mlp)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        unknown = set(d) - _FIELDS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d["mlp"] = tuple(d.get("mlp", ()))
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def dumps(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if k == "mlp":
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name for f in dataclasses.fields(NetConfig)}
_TYPES = {f.name: f.type for f in dataclasses.fields(NetConfig)}


def _convert(key: str, raw: str, lineno: int):
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "tuple":
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        return raw
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None


def parse_config(text: str) -> NetConfig:
    """Parse ``key = value`` lines. Keys not given take the task defaults."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw, lineno)
    task = values.pop("task", None)
    if task is None:
        raise ConfigError("config must set 'task'")
    return NetConfig.for_task(task, **values)


def load_config(path) -> NetConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
