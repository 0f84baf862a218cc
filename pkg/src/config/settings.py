"""
Experiment configuration: a flat key=value file plus command-line overrides.

Example file:

    # F_3 on 8 servers
    protocol = fk
    n = 1000
    s = 8
    k = 3
    eps = 0.1
    seeds = 1, 2, 0x2a

validate_config collects every violation before raising, so a bad file is
reported in one pass.
"""

import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Union

from protocols.correlations import G_REGISTRY
from protocols.functions import FnSpec
from protocols.randomness import Backend
from utils.errors import ConfigValidationError
from utils.seeds import parse_seed

logger = logging.getLogger(__name__)


class Protocol(Enum):
    """Experiment families."""
    SAMPLE = "sample"        # additive sampler
    FSUM = "fsum"            # sum of f over aggregated coordinates
    FK = "fk"                # frequency moment F_k
    HOC = "hoc"              # higher-order correlation
    EMBED = "embed"          # sketch subspace embedding
    REGRESS = "regress"      # l_p regression through a sketch
    LRA = "lra"              # low-rank approximation
    CONGEST = "congest"      # neighborhood propagation


class Generator(Enum):
    """Where instances come from."""
    RANDOM_UNIFORM = "random-uniform"
    RANDOM_GAUSSIAN = "random-gaussian"
    FILE = "file"


GRAPHS = ("path", "grid", "star", "diamond", "file")
SKETCH_PROTOCOLS = (Protocol.EMBED, Protocol.REGRESS, Protocol.LRA, Protocol.CONGEST)
VECTOR_PROTOCOLS = (Protocol.SAMPLE, Protocol.FSUM, Protocol.FK)


@dataclass
class ExperimentConfig:
    """Everything one experiment run needs."""
    protocol: Protocol = Protocol.FK
    generator: Generator = Generator.RANDOM_UNIFORM
    n: int = 1000                 # vector length, or row dimension for hoc
    s: int = 8                    # servers
    d: int = 8                    # sketch columns
    k: float = 3.0                # F_k exponent, hoc tuple order or LRA rank
    fn: str = "pow:3"             # fsum/hoc outer function
    g: str = "product"            # hoc tuple function
    p: float = 2.0                # sketch norm order
    eps: float = 0.1
    delta: float = 0.01
    delta_budget: Optional[float] = None   # per-merge delta for congest; None = 1/(10s) (2s)^-rounds
    rounds: int = 2               # propagation rounds Delta
    t: Optional[int] = None       # sketch merge budget; None = rounds + 1
    graph: str = "path"
    graph_size: int = 3           # nodes of path/star, side of grid
    rows: int = 200               # rows per dataset, per node or per hoc server
    overlap: float = 0.5          # share of rows a server duplicates from its neighbor
    noise: float = 0.01           # LRA / regression noise level
    scale: float = 100.0          # largest entry of random-uniform vectors
    input: Optional[str] = None   # server CSV, dataset CSV or edge list
    manifest: Optional[str] = None    # node dataset manifest for file graphs
    truth: bool = False           # brute-force ground truth for file inputs
    seeds: List[int] = field(default_factory=lambda: [0])
    trials: int = 10
    jobs: int = 1
    c_s: float = 1.0
    heavy_const: float = 4.0
    sample_const: float = 1.0
    mark_const: float = 66.0
    sketch_const: float = 1.0
    sign_const: float = 1.0
    max_retries: int = 16
    backend: Backend = Backend.FULL_RANDOM
    precision_bits: int = 48
    sweep_field: str = "s"
    sweep_values: List[float] = field(default_factory=list)
    csv: Optional[str] = None
    json: Optional[str] = None
    diagnostics: bool = False

    @property
    def merge_budget(self) -> int:
        return self.t if self.t is not None else self.rounds + 1

    def to_dict(self) -> Dict[str, Any]:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.value if isinstance(value, Enum) else value
        return out


def _to_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(convert: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str):
        return None if text.strip().lower() in ("", "none", "auto") else convert(text)
    return parse


def _list_of(convert: Callable[[str], Any]) -> Callable[[str], Any]:
    def parse(text: str):
        return [convert(item) for item in str(text).replace(",", " ").split()]
    return parse


def _number(text: str) -> float:
    return float(text)


def _integer(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


CONVERTERS: Dict[str, Callable[[str], Any]] = {
    "protocol": lambda v: Protocol(v.strip().lower()),
    "generator": lambda v: Generator(v.strip().lower()),
    "backend": lambda v: Backend(v.strip().lower()),
    "n": _integer, "s": _integer, "d": _integer, "rounds": _integer, "graph_size": _integer,
    "rows": _integer, "trials": _integer, "jobs": _integer, "max_retries": _integer,
    "precision_bits": _integer,
    "t": _optional(_integer),
    "delta_budget": _optional(_number),
    "k": _number, "p": _number, "eps": _number, "delta": _number, "overlap": _number,
    "noise": _number, "scale": _number, "c_s": _number, "heavy_const": _number,
    "sample_const": _number, "mark_const": _number, "sketch_const": _number, "sign_const": _number,
    "fn": str.strip, "g": str.strip, "graph": lambda v: v.strip().lower(), "sweep_field": str.strip,
    "input": _optional(str.strip), "manifest": _optional(str.strip),
    "csv": _optional(str.strip), "json": _optional(str.strip),
    "truth": _to_bool, "diagnostics": _to_bool,
    "seeds": _list_of(parse_seed),
    "sweep_values": _list_of(float),
}

NUMERIC_FIELDS = ("n", "s", "d", "k", "p", "eps", "delta", "rounds", "rows", "graph_size",
                  "overlap", "noise", "scale")


def parse_config_text(text: str) -> Dict[str, str]:
    """
    Split key=value lines; '#' starts a comment, keys are case-insensitive
    and '-' in keys reads as '_'.

    Raises:
        ConfigValidationError: On lines without '='
    """
    raw: Dict[str, str] = {}
    errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            errors.append(f"line {lineno}: expected key=value, got {line!r}")
            continue
        raw[key.strip().lower().replace("-", "_")] = value.strip()
    if errors:
        raise ConfigValidationError(errors)
    return raw


def _check_ranges(cfg: ExperimentConfig) -> List[str]:
    errors = []
    proto = cfg.protocol

    if not 0 < cfg.eps < 1:
        errors.append(f"eps out of range (0, 1): {cfg.eps}")
    elif proto == Protocol.SAMPLE and cfg.eps >= 0.25:
        errors.append(f"eps out of range for sample: must be < 0.25, got {cfg.eps}")
    elif proto in (Protocol.FSUM, Protocol.FK) and cfg.n >= 1 and cfg.eps < cfg.n ** -0.5:
        errors.append(f"eps out of range: must be >= n^-1/2 = {cfg.n ** -0.5:.4g}, got {cfg.eps}")
    if not 0 < cfg.delta < 1:
        errors.append(f"delta out of range (0, 1): {cfg.delta}")
    if cfg.delta_budget is not None and not 0 < cfg.delta_budget < 1:
        errors.append(f"delta_budget out of range (0, 1): {cfg.delta_budget}")

    for name in ("n", "s", "d", "trials", "jobs", "rows", "graph_size"):
        if getattr(cfg, name) < 1:
            errors.append(f"{name} must be >= 1, got {getattr(cfg, name)}")
    if cfg.rounds < 0:
        errors.append(f"rounds must be >= 0, got {cfg.rounds}")
    if cfg.max_retries < 0:
        errors.append(f"max_retries must be >= 0, got {cfg.max_retries}")
    if cfg.p < 1:
        errors.append(f"p must be >= 1, got {cfg.p}")
    if not 0 <= cfg.overlap <= 1:
        errors.append(f"overlap out of range [0, 1]: {cfg.overlap}")
    if cfg.k < 1:
        errors.append(f"k must be >= 1, got {cfg.k}")
    if not cfg.seeds:
        errors.append("seeds must name at least one seed")

    if proto in (Protocol.HOC, Protocol.LRA) and not float(cfg.k).is_integer():
        errors.append(f"k must be an integer for {proto.value}, got {cfg.k}")
    if proto == Protocol.HOC and cfg.k > cfg.n:
        errors.append(f"k={cfg.k:g} exceeds the row dimension n={cfg.n}")
    if proto == Protocol.LRA and cfg.k > cfg.d:
        errors.append(f"k={cfg.k:g} exceeds the column count d={cfg.d}")
    if proto == Protocol.REGRESS and cfg.d < 2:
        errors.append("regress needs d >= 2 (features plus a label column)")
    if proto in (Protocol.FSUM, Protocol.HOC):
        try:
            FnSpec.parse(cfg.fn)
        except (ValueError, TypeError) as exc:
            errors.append(f"fn: {exc}")
    if proto == Protocol.HOC and cfg.g not in G_REGISTRY:
        errors.append(f"g must be one of {sorted(G_REGISTRY)}, got {cfg.g!r}")

    if proto == Protocol.CONGEST:
        if cfg.graph not in GRAPHS:
            errors.append(f"graph must be one of {list(GRAPHS)}, got {cfg.graph!r}")
        if cfg.merge_budget <= cfg.rounds:
            errors.append(
                f"merge budget rule violated: t={cfg.merge_budget} must be >= rounds + 1 = {cfg.rounds + 1}"
            )
        if cfg.rounds and cfg.eps >= 1.0 / cfg.rounds:
            errors.append(f"eps out of range: congest needs eps < 1/rounds = {1.0 / cfg.rounds:.4g}")
        if cfg.graph == "file" and not (cfg.input and cfg.manifest):
            errors.append("graph=file needs input (edge list) and manifest")
    elif cfg.generator == Generator.FILE and not cfg.input:
        errors.append("generator=file needs an input path")

    if cfg.sweep_field not in NUMERIC_FIELDS:
        errors.append(f"sweep_field must be one of {list(NUMERIC_FIELDS)}, got {cfg.sweep_field!r}")
    return errors


def validate_config(raw: Union[str, Mapping[str, Any]],
                    overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    Build an ExperimentConfig from key=value text or a mapping.

    Args:
        raw: Config text, or a mapping of field name to value
        overrides: Values that win over raw (e.g. from command-line flags)

    Returns:
        Fully populated and validated ExperimentConfig

    Raises:
        ConfigValidationError: Listing every violation found
    """
    values = dict(parse_config_text(raw) if isinstance(raw, str) else raw)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})

    known = {f.name for f in fields(ExperimentConfig)}
    errors = []
    kwargs: Dict[str, Any] = {}
    for key, value in values.items():
        key = key.lower().replace("-", "_")
        if key not in known:
            errors.append(f"unknown key {key!r}")
            continue
        if isinstance(value, str):
            try:
                value = CONVERTERS[key](value)
            except (ValueError, KeyError) as exc:
                errors.append(f"{key}: invalid value {value!r} ({exc})")
                continue
        kwargs[key] = value

    cfg = ExperimentConfig(**kwargs)
    errors.extend(_check_ranges(cfg))
    if errors:
        for err in errors:
            logger.debug(f"Config error: {err}")
        raise ConfigValidationError(errors)
    return cfg


def load_config(path: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Read and validate a key=value config file."""
    return validate_config(Path(path).read_text(), overrides)


def format_config(cfg: ExperimentConfig) -> str:
    """key=value text that validate_config reads back to an equal config."""
    lines = []
    for name, value in cfg.to_dict().items():
        if value is None:
            text = "none"
        elif isinstance(value, list):
            text = ", ".join(str(v) for v in value)
        else:
            text = str(value)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"
