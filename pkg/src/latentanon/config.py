"""Run configuration: a flat ``key = value`` file overridden by command-line flags.

Schema (all keys optional; defaults shown)::

    backend         = synthetic        # synthetic | synthetic:<world.cfg> | onnx:<dir>
    data            =                  # image directory (empty: sample from the backend)
    labels          =                  # labels CSV for the data directory
    anonymized      =                  # evaluate: name=dir[,name=dir...] of anonymized images
    cache           =                  # latent cache directory
    out             = out
    seed            = 0
    mode            = layers           # layers | channels | mask | swapper
    alpha           = 1.0
    beta            = 1.25
    gamma           = 0.9
    theta           = 0.5
    use_logit       = false
    layers          = 5,6,7            # swap layers / identity mask rows
    blocks          =                  # layer:start:length,... for mode=channels
    regions         = face             # mask regions, comma separated (empty: none)
    operands        = source-random    # source-random | source-mask
    color           = false
    checkpoint      =                  # swapper checkpoint (.npz)
    n_pairs         = 200              # pairs sampled when no data directory is given
    m_values        = 1-18
    scan_layers     = 5,6,7
    block_size      = 32
    budget          =
    threshold       =
    epochs          = 50
    learning_rate   = 0.1
    lambda_l2       = 1.0
    lambda_id       = 0.1
    batch_size      = 16
    split           = 0.9
    identity_sign   = push
    pass_mode       = pass
    workers         = 1
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from latentanon.errors import ConfigError
from latentanon.latent import ChannelBlock

MODES = ("layers", "channels", "mask", "swapper")


def parse_int_list(text: str) -> tuple[int, ...]:
    """``"5,6,7"`` or ``"5-7"`` or a mix."""
    out = []
    for part in filter(None, (p.strip() for p in str(text).split(","))):
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def parse_blocks(text: str) -> tuple[ChannelBlock, ...]:
    out = []
    for part in filter(None, (p.strip() for p in str(text).split(","))):
        try:
            l, s, n = (int(v) for v in part.split(":"))
        except ValueError as exc:
            raise ConfigError(f"bad channel block {part!r}; expected layer:start:length") from exc
        out.append(ChannelBlock(l, s, n))
    return tuple(out)


def parse_names(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in str(text).split(",") if p.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class RunConfig:
    backend: str = "synthetic"
    data: str = ""
    labels: str = ""
    anonymized: str = ""
    cache: str = ""
    out: str = "out"
    seed: int = 0
    mode: str = "layers"
    alpha: float = 1.0
    beta: float = 1.25
    gamma: float = 0.9
    theta: float = 0.5
    use_logit: bool = False
    layers: str = "5,6,7"
    blocks: str = ""
    regions: str = "face"
    operands: str = "source-random"
    color: bool = False
    checkpoint: str = ""
    n_pairs: int = 200
    m_values: str = "1-18"
    scan_layers: str = "5,6,7"
    block_size: int = 32
    budget: str = ""
    threshold: str = ""
    epochs: int = 50
    learning_rate: float = 0.1
    lambda_l2: float = 1.0
    lambda_id: float = 0.1
    batch_size: int = 16
    split: float = 0.9
    identity_sign: str = "push"
    pass_mode: str = "pass"
    workers: int = 1

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        cfg = cls()
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                if kind in ("int", int):
                    val = int(raw)
                elif kind in ("float", float):
                    val = float(raw)
                elif kind in ("bool", bool):
                    val = _bool(raw)
                else:
                    val = str(raw).strip()
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
            setattr(cfg, key, val)
        return cfg

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = {}
        if path:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
            parser.optionxform = str
            try:
                parser.read_string("[run]\n" + p.read_text())
            except configparser.Error as exc:
                raise ConfigError(f"cannot parse {p}: {exc}") from exc
            values.update(parser["run"])
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(values)

    def to_text(self) -> str:
        lines = []
        for k in self.keys():
            v = getattr(self, k)
            lines.append(f"{k} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.keys()}

    # -- typed accessors ---------------------------------------------------
    @property
    def layer_tuple(self) -> tuple[int, ...]:
        return parse_int_list(self.layers)

    @property
    def scan_layer_tuple(self) -> tuple[int, ...]:
        return parse_int_list(self.scan_layers)

    @property
    def m_tuple(self) -> tuple[int, ...]:
        return parse_int_list(self.m_values)

    @property
    def block_tuple(self) -> tuple[ChannelBlock, ...]:
        return parse_blocks(self.blocks)

    @property
    def region_tuple(self) -> tuple[str, ...]:
        return parse_names(self.regions)

    @property
    def budget_value(self) -> int | None:
        return int(self.budget) if str(self.budget).strip() else None

    @property
    def threshold_value(self) -> float | None:
        return float(self.threshold) if str(self.threshold).strip() else None

    def anonymized_dirs(self) -> dict[str, str]:
        out = {}
        for part in parse_names(self.anonymized):
            name, sep, path = part.partition("=")
            if not sep:
                name, path = Path(part).name, part
            if name in out:
                raise ConfigError(f"duplicate anonymized method name {name!r}")
            out[name] = path
        return out

    def validate(self, command: str | None = None) -> "RunConfig":
        """Check values and referenced paths; raises ConfigError before any output is written."""
        from latentanon import masking

        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("alpha and beta must be > 0")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.theta < 1.0:
            raise ConfigError("theta must lie in (0, 1)")
        if self.gamma <= 0:
            raise ConfigError("gamma must be > 0")
        if self.workers < 1 or self.n_pairs < 1:
            raise ConfigError("workers and n_pairs must be >= 1")
        kind, _, arg = self.backend.partition(":")
        if kind not in ("synthetic", "onnx"):
            raise ConfigError(f"unknown backend selector {self.backend!r}")
        if kind == "onnx" and not Path(arg).is_dir():
            raise ConfigError(f"backend path not found: {arg!r}")
        if kind == "synthetic" and arg and not Path(arg).is_file():
            raise ConfigError(f"backend config not found: {arg!r}")
        for key in ("data", "labels"):
            val = getattr(self, key)
            if val and not Path(val).exists():
                raise ConfigError(f"{key} path not found: {val}")
        for name, path in self.anonymized_dirs().items():
            if not Path(path).is_dir():
                raise ConfigError(f"anonymized directory for {name!r} not found: {path}")
        try:
            self.layer_tuple, self.scan_layer_tuple, self.m_tuple, self.block_tuple
            self.budget_value, self.threshold_value
        except ValueError as exc:
            raise ConfigError(f"malformed list value: {exc}") from exc
        unknown = set(self.region_tuple) - set(masking.REGIONS)
        if unknown:
            raise ConfigError(f"unknown regions {sorted(unknown)}")
        if self.operands not in masking.OPERAND_PAIRS:
            raise ConfigError(f"operands must be one of {masking.OPERAND_PAIRS}")
        if command == "anonymize" and self.mode == "swapper" and not Path(self.checkpoint).is_file():
            raise ConfigError(f"swapper checkpoint not found: {self.checkpoint!r}")
        if command == "anonymize" and self.mode == "channels" and not self.block_tuple:
            raise ConfigError("mode=channels needs blocks")
        if command == "evaluate" and not self.data:
            raise ConfigError("evaluate needs data (original images)")
        if command in ("anonymize", "evaluate") and not self.data:
            raise ConfigError(f"{command} needs a data directory")
        if command == "search-channels" and (self.budget_value is None) == (self.threshold_value is None):
            raise ConfigError("search-channels needs exactly one of budget or threshold")
        if self.identity_sign not in ("push", "literal"):
            raise ConfigError("identity_sign must be push or literal")
        if self.pass_mode not in ("pass", "low", "learn"):
            raise ConfigError("pass_mode must be pass, low or learn")
        return self
