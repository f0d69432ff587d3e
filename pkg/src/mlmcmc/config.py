"""Run configuration: a sectioned ``key = value`` text format.

Example::

    [run]
    model = gaussian
    levels = 3

    [sampling]
    samples = 10000, 1000, 100
    subsampling = 25, 5, 0

Lists are comma separated (surrounding brackets are allowed). Optional
integers accept ``auto``. Unknown sections or keys are rejected so typos
cannot silently fall back to defaults. Every error carries the line number
it refers to.
"""

from __future__ import annotations

import configparser
import io
import re
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Tuple

MODELS = ("gaussian", "poisson", "delay")
TRANSPORTS = ("inprocess", "socket")
MODES = ("local", "remote")
GAUSSIAN_KINDS = ("converging", "identical")


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, path: str = "<config>"):
        self.line = line
        self.path = path
        where = f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + message)


@dataclass
class RunConfig:
    """Field order matches the serialized layout; ``FIELDS`` maps each
    attribute to its section, key and type. Per-level lists are stored
    expanded to the level count."""

    model: str
    levels: int
    samples: List[int]
    seed: int = 0
    output_dir: str = "mlmcmc-output"
    transport: str = "inprocess"
    timeout: float = 600.0
    trace: bool = True
    subsampling: List[int] = field(default_factory=list)
    burn_in: List[int] = field(default_factory=list)
    coarse_burn_in: int = 0
    proposal_cov: Optional[float] = None     # None: model default
    adaptive: bool = True
    am_interval: int = 100
    am_eps: float = 1e-6
    mode: str = "local"
    processes: Optional[int] = None
    groups: Optional[int] = None
    group_size: int = 1
    collectors: List[int] = field(default_factory=list)
    initial_groups: List[int] = field(default_factory=list)
    load_balancing: bool = True
    hysteresis: float = 4.0
    ema_alpha: float = 0.3
    store_limit: int = 2
    collector_window: int = 4
    gaussian_kind: str = "converging"
    gaussian_target: List[float] = field(default_factory=lambda: [1.0])
    gaussian_cov: float = 1.0
    poisson_data: str = ""
    poisson_data_seed: int = 0
    poisson_mesh_sizes: List[int] = field(default_factory=list)
    poisson_modes: int = 8
    poisson_sigma: float = 0.01
    poisson_qoi_width: float = 0.125
    poisson_prior_var: float = 4.0
    delay_runtimes: List[float] = field(default_factory=list)
    delay_jitter: float = 0.1
    delay_mean: List[float] = field(default_factory=lambda: [0.0])
    delay_cov: float = 1.0

    def to_text(self) -> str:
        out, section = [], None
        for sec, key, attr, kind in FIELDS:
            if sec != section:
                out.append(("\n" if out else "") + f"[{sec}]")
                section = sec
            out.append(f"{key} = {_format(getattr(self, attr), kind)}")
        return "\n".join(out) + "\n"

    def to_dict(self) -> Dict[str, Dict[str, object]]:
        d: Dict[str, Dict[str, object]] = {}
        for sec, key, attr, _ in FIELDS:
            v = getattr(self, attr)
            d.setdefault(sec, {})[key] = list(v) if isinstance(v, list) else v
        return d


# (section, key, attribute, kind)
FIELDS: Tuple[Tuple[str, str, str, str], ...] = (
    ("run", "model", "model", "choice:" + ",".join(MODELS)),
    ("run", "levels", "levels", "int"),
    ("run", "seed", "seed", "int"),
    ("run", "output_dir", "output_dir", "str"),
    ("run", "transport", "transport", "choice:" + ",".join(TRANSPORTS)),
    ("run", "timeout", "timeout", "float"),
    ("run", "trace", "trace", "bool"),
    ("sampling", "samples", "samples", "ints"),
    ("sampling", "subsampling", "subsampling", "ints"),
    ("sampling", "burn_in", "burn_in", "ints"),
    ("sampling", "coarse_burn_in", "coarse_burn_in", "int"),
    ("proposal", "cov", "proposal_cov", "optfloat"),
    ("proposal", "adaptive", "adaptive", "bool"),
    ("proposal", "am_interval", "am_interval", "int"),
    ("proposal", "am_eps", "am_eps", "float"),
    ("layout", "mode", "mode", "choice:" + ",".join(MODES)),
    ("layout", "processes", "processes", "optint"),
    ("layout", "groups", "groups", "optint"),
    ("layout", "group_size", "group_size", "int"),
    ("layout", "collectors", "collectors", "ints"),
    ("layout", "initial_groups", "initial_groups", "ints"),
    ("scheduler", "load_balancing", "load_balancing", "bool"),
    ("scheduler", "hysteresis", "hysteresis", "float"),
    ("scheduler", "ema_alpha", "ema_alpha", "float"),
    ("scheduler", "store_limit", "store_limit", "int"),
    ("scheduler", "collector_window", "collector_window", "int"),
    ("gaussian", "kind", "gaussian_kind", "choice:" + ",".join(GAUSSIAN_KINDS)),
    ("gaussian", "target", "gaussian_target", "floats"),
    ("gaussian", "cov", "gaussian_cov", "float"),
    ("poisson", "data", "poisson_data", "str"),
    ("poisson", "data_seed", "poisson_data_seed", "int"),
    ("poisson", "mesh_sizes", "poisson_mesh_sizes", "ints"),
    ("poisson", "modes", "poisson_modes", "int"),
    ("poisson", "sigma", "poisson_sigma", "float"),
    ("poisson", "qoi_width", "poisson_qoi_width", "float"),
    ("poisson", "prior_var", "poisson_prior_var", "float"),
    ("delay", "runtimes", "delay_runtimes", "floats"),
    ("delay", "jitter", "delay_jitter", "float"),
    ("delay", "mean", "delay_mean", "floats"),
    ("delay", "cov", "delay_cov", "float"),
)
REQUIRED = {"model", "levels", "samples"}
_BY_KEY = {(s, k): (a, t) for s, k, a, t in FIELDS}
SECTIONS = tuple(dict.fromkeys(s for s, _, _, _ in FIELDS))


def _format(v, kind: str) -> str:
    if v is None:
        return "auto"
    if kind == "bool":
        return "true" if v else "false"
    if kind in ("ints", "floats"):
        return ", ".join(repr(x) for x in v)
    if kind in ("float", "optfloat"):
        return repr(float(v))
    return str(v)


def _convert(raw: str, kind: str):
    s = raw.strip()
    if kind in ("optint", "optfloat") and s.lower() in ("auto", "none", ""):
        return None
    if kind in ("int", "optint"):
        return int(s)
    if kind in ("float", "optfloat"):
        return float(s)
    if kind == "bool":
        low = s.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"expected a boolean, got {s!r}")
    if kind in ("ints", "floats"):
        s = s.strip("[]() ")
        if not s:
            return []
        conv = int if kind == "ints" else float
        return [conv(x) for x in re.split(r"[,\s]+", s) if x]
    if kind.startswith("choice:"):
        options = kind[7:].split(",")
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s
    return s


def _line_map(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    """1-based line of each section header and each key."""
    lines: Dict[Tuple[str, Optional[str]], int] = {}
    section = None
    for n, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.fullmatch(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), n)
        elif section is not None:
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            lines.setdefault((section, key), n)
    return lines


def parse_config_text(text: str, path: str = "<config>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_file(io.StringIO(text), source=path)
    except configparser.Error as e:
        line = getattr(e, "lineno", None)
        raise ConfigError(str(e).splitlines()[0], line, path) from None
    lines = _line_map(text)
    values: Dict[str, object] = {}
    where: Dict[str, int] = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}] (known: {', '.join(SECTIONS)})",
                              lines.get((sec, None)), path)
        for key, raw in cp.items(sec):
            line = lines.get((sec, key))
            if (sec, key) not in _BY_KEY:
                known = ", ".join(k for s, k, _, _ in FIELDS if s == sec)
                raise ConfigError(f"unknown key '{key}' in [{sec}] (known: {known})", line, path)
            attr, kind = _BY_KEY[(sec, key)]
            try:
                values[attr] = _convert(raw, kind)
            except ValueError as e:
                raise ConfigError(f"[{sec}] {key}: {e}", line, path) from None
            where[attr] = line
    for sec, key, attr, _ in FIELDS:
        if attr in REQUIRED and attr not in values:
            raise ConfigError(f"missing required key '{key}' in [{sec}]", lines.get((sec, None)), path)
    cfg = RunConfig(**values)
    validate(cfg, where, path)
    return cfg


def parse_config(path) -> RunConfig:
    path = str(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", None, path) from None
    return parse_config_text(text, path)


def _key(attr: str) -> str:
    for s, k, a, _ in FIELDS:
        if a == attr:
            return f"[{s}] {k}"
    return attr


def validate(cfg: RunConfig, where: Optional[Dict[str, int]] = None, path: str = "<config>") -> RunConfig:
    """Check consistency and expand per-level defaults in place."""
    where = where or {}

    def fail(msg, *attrs):
        line = min((where[a] for a in attrs if where.get(a)), default=None)
        raise ConfigError(msg, line, path)

    L = cfg.levels
    if L < 1:
        fail("levels must be at least 1", "levels")
    per_level = {"subsampling": 0, "burn_in": 0, "collectors": 1,
                 "poisson_mesh_sizes": None, "delay_runtimes": None}
    for attr in ("subsampling", "burn_in", "collectors", "initial_groups",
                 "poisson_mesh_sizes", "delay_runtimes"):
        v = getattr(cfg, attr)
        if v and len(v) != len(cfg.samples):
            fail(f"{_key(attr)} has {len(v)} values but {_key('samples')} has {len(cfg.samples)}",
                 attr, "samples")
    if len(cfg.samples) != L:
        fail(f"{_key('samples')} lists {len(cfg.samples)} values but levels = {L}", "samples", "levels")
    for attr, default in per_level.items():
        if not getattr(cfg, attr) and default is not None:
            setattr(cfg, attr, [default] * L)
    if not cfg.poisson_mesh_sizes:
        cfg.poisson_mesh_sizes = [8 * 2 ** l for l in range(L)]
    if not cfg.delay_runtimes:
        cfg.delay_runtimes = [0.01 * 10.0 ** l for l in range(L)]
    for attr in ("samples", "subsampling", "burn_in", "collectors", "initial_groups", "poisson_mesh_sizes"):
        if any(x < 0 for x in getattr(cfg, attr)):
            fail(f"{_key(attr)} must not contain negative values", attr)
    for attr in ("coarse_burn_in", "store_limit"):
        if getattr(cfg, attr) < 0:
            fail(f"{_key(attr)} must not be negative", attr)
    if any(x < 1 for x in cfg.collectors):
        fail(f"{_key('collectors')} needs at least one collector per level", "collectors")
    if any(x < 0 for x in cfg.delay_runtimes):
        fail(f"{_key('delay_runtimes')} must not be negative", "delay_runtimes")
    for attr in ("group_size", "am_interval", "collector_window", "poisson_modes"):
        if getattr(cfg, attr) < 1:
            fail(f"{_key(attr)} must be at least 1", attr)
    for attr in ("processes", "groups"):
        v = getattr(cfg, attr)
        if v is not None and v < 1:
            fail(f"{_key(attr)} must be at least 1 or auto", attr)
    for n in cfg.poisson_mesh_sizes:
        if n < 4 or n & (n - 1):
            fail(f"{_key('poisson_mesh_sizes')}: {n} is not a power of two >= 4", "poisson_mesh_sizes")
    for attr in ("timeout", "gaussian_cov", "delay_cov", "poisson_sigma", "poisson_qoi_width",
                 "poisson_prior_var"):
        if not getattr(cfg, attr) > 0:
            fail(f"{_key(attr)} must be positive", attr)
    if cfg.proposal_cov is not None and not cfg.proposal_cov > 0:
        fail(f"{_key('proposal_cov')} must be positive", "proposal_cov")
    if not 0 < cfg.ema_alpha <= 1:
        fail(f"{_key('ema_alpha')} must lie in (0, 1]", "ema_alpha")
    if not cfg.gaussian_target:
        fail(f"{_key('gaussian_target')} must not be empty", "gaussian_target")
    if not cfg.delay_mean:
        fail(f"{_key('delay_mean')} must not be empty", "delay_mean")
    if cfg.mode == "local" and cfg.initial_groups:
        starved = [l for l in range(L) if cfg.samples[l] > 0 and cfg.initial_groups[l] == 0]
        if starved:
            fail(f"local mode needs a group on every level with samples (levels {starved})",
                 "initial_groups", "mode")
    if cfg.groups is not None and cfg.initial_groups and sum(cfg.initial_groups) != cfg.groups:
        fail(f"{_key('initial_groups')} sums to {sum(cfg.initial_groups)} but groups = {cfg.groups}",
             "initial_groups", "groups")
    return cfg


def config_fields() -> List[str]:
    return [f.name for f in fields(RunConfig)]
