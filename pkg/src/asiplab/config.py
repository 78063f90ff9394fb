"""Experiment configuration: TOML (or JSON) in, validated dataclasses out."""

from __future__ import annotations

import copy
import hashlib
import json
import re
import sys
from dataclasses import asdict, dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

from .dynamics import THREE_DISK_SPEC
from .errors import ConfigError

TESTS = ("variance", "greenkubo", "moments", "clt", "wip", "asclt", "lil",
         "targets", "mixing", "blocks", "budget")

DEFAULT_TOLERANCES = {
    "clt_ks": 0.05,
    "wip_abs": 0.05,
    "kappa2_range": [0.45, 0.55],
    "gk_vs_variance_rel": 0.10,
    "gk_expected": None,
    "gk_abs": 0.02,
    "gk_zero_lags": False,
    "asclt_ks": 0.1,
    "lil_band": [0.5, 1.3],
    "target_mean_z": 3.0,
    "target_slope": [0.4, 0.6],
    "target_ks": 0.05,
    "mixing_level": 0.95,
}


@dataclass
class SystemConfig:
    kind: str = "billiard"
    scatterers: list = field(default_factory=lambda: [
        [list(c), R] for c, R in THREE_DISK_SPEC])
    clearance: float = 0.01
    max_ring: int = 8


@dataclass
class ProcessConfig:
    mode: str = "stationary"
    n_max: int = 1000
    ensemble: int = 1000
    seed: int = 0
    warmup: int = 50
    exponent: float = 0.0
    moments_p: float = 4.0


@dataclass
class TargetConfig:
    gamma: float = 0.5
    c: float = 0.1
    mu0: float = 0.5


@dataclass
class GridConfig:
    start: int = 10
    points: int = 20


@dataclass
class LongOrbitConfig:
    length: int = 1_000_000
    lag: int | None = None
    max_lag: int = 200


@dataclass
class MixingConfig:
    depth: int = 1
    max_gap: int = 12
    samples: int = 1_000_000
    seeds: int = 5
    min_occupancy: int = 50


@dataclass
class BlocksConfig:
    eps: float = 0.5
    jmax: int = 64
    js: list = field(default_factory=lambda: [16, 64, 196, 361])
    samples: int = 400_000
    observable: dict = field(default_factory=lambda: {"kind": "TrigBoundary"})


@dataclass
class BudgetConfig:
    k2: float = 0.5
    kp: float = 0.5
    lam: float = 0.45


@dataclass
class ExperimentConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    observable: dict = field(default_factory=lambda: {"kind": "NegLogCosPhi",
                                                      "center": True})
    process: ProcessConfig = field(default_factory=ProcessConfig)
    targets: TargetConfig = field(default_factory=TargetConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    long_orbit: LongOrbitConfig = field(default_factory=LongOrbitConfig)
    mixing: MixingConfig = field(default_factory=MixingConfig)
    blocks: BlocksConfig = field(default_factory=BlocksConfig)
    budget: BudgetConfig = field(default_factory=BudgetConfig)
    tests: list = field(default_factory=lambda: ["variance", "clt"])
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output: str = "asiplab-out"

    def to_dict(self) -> dict:
        """Mapping in the file layout; ``from_dict(cfg.to_dict())`` gives
        back an equal config."""
        d = asdict(self)
        d["budget"]["lambda"] = d["budget"].pop("lam")
        d["tests"] = {"select": d.pop("tests"),
                      "tolerances": d.pop("tolerances")}
        d["output"] = {"dir": d.pop("output")}
        return d

    def digest(self) -> str:
        """sha256 of the config without the output location, so reruns
        written elsewhere share a digest."""
        d = self.to_dict()
        del d["output"]
        blob = json.dumps(d, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


_SECTIONS = {
    "system": SystemConfig, "process": ProcessConfig, "targets": TargetConfig,
    "grid": GridConfig, "long_orbit": LongOrbitConfig,
    "mixing": MixingConfig, "blocks": BlocksConfig, "budget": BudgetConfig,
}


def _line_of(text, key):
    if not text:
        return None
    pat = re.compile(rf"^\s*{re.escape(key)}\s*[=:]", re.M)
    m = pat.search(text)
    if m is None:
        pat = re.compile(rf'"{re.escape(key)}"\s*:')
        m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(msg, fld, text):
    raise ConfigError(msg, field=fld, line=_line_of(text, fld.split(".")[-1]))


def _positive_int(v, fld, text, minimum=1):
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        _fail(f"must be an integer >= {minimum}, got {v!r}", fld, text)


def _number(v, fld, text):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        _fail(f"must be a number, got {v!r}", fld, text)


def from_dict(data: dict, text: str | None = None) -> ExperimentConfig:
    """Validate a parsed mapping. ``text`` (the raw file) is only used to
    attach line numbers to errors."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be a table")
    data = copy.deepcopy(data)
    cfg = ExperimentConfig()
    known = set(_SECTIONS) | {"observable", "tests", "output"}
    for key in data:
        if key not in known:
            _fail(f"unknown section {key!r}", key, text)
    for name, cls in _SECTIONS.items():
        sec = data.get(name, {})
        if not isinstance(sec, dict):
            _fail("must be a table", name, text)
        if name == "budget" and "lambda" in sec:
            sec["lam"] = sec.pop("lambda")
        base = getattr(cfg, name)
        for k, v in sec.items():
            if not hasattr(base, k):
                _fail(f"unknown key {k!r}", f"{name}.{k}", text)
            setattr(base, k, v)
    if "observable" in data:
        if not isinstance(data["observable"], dict) or \
                "kind" not in data["observable"]:
            _fail("needs a 'kind'", "observable", text)
        cfg.observable = data["observable"]
    tests = data.get("tests", {})
    if isinstance(tests, list):
        tests = {"select": tests}
    if not isinstance(tests, dict):
        _fail("must be a table or a list", "tests", text)
    cfg.tests = list(tests.get("select", cfg.tests))
    tol = dict(DEFAULT_TOLERANCES)
    for k, v in tests.get("tolerances", {}).items():
        if k not in DEFAULT_TOLERANCES:
            _fail(f"unknown tolerance {k!r}", f"tests.tolerances.{k}", text)
        tol[k] = v
    cfg.tolerances = tol
    out = data.get("output", {})
    if isinstance(out, dict):
        cfg.output = str(out.get("dir", cfg.output))
    else:
        cfg.output = str(out)
    _validate(cfg, text)
    return cfg


def _validate(cfg, text):
    s = cfg.system
    if s.kind not in ("billiard", "catmap"):
        _fail(f"must be 'billiard' or 'catmap', got {s.kind!r}", "system.kind",
              text)
    if s.kind == "billiard":
        if not isinstance(s.scatterers, list) or not s.scatterers:
            _fail("needs a non-empty list of [[cx, cy], radius]",
                  "system.scatterers", text)
        for item in s.scatterers:
            ok = (isinstance(item, (list, tuple)) and len(item) == 2
                  and isinstance(item[0], (list, tuple)) and len(item[0]) == 2)
            if not ok:
                _fail(f"entry {item!r} is not [[cx, cy], radius]",
                      "system.scatterers", text)
        _number(s.clearance, "system.clearance", text)
        if s.clearance <= 0:
            _fail("must be positive", "system.clearance", text)
    p = cfg.process
    if p.mode not in ("stationary", "targets", "modulated"):
        _fail(f"must be stationary, targets or modulated, got {p.mode!r}",
              "process.mode", text)
    _positive_int(p.n_max, "process.n_max", text)
    _positive_int(p.ensemble, "process.ensemble", text)
    _positive_int(p.warmup, "process.warmup", text, 0)
    if isinstance(p.seed, bool) or not isinstance(p.seed, int) \
            or not 0 <= p.seed < 2 ** 64:
        _fail(f"seed must be an unsigned 64-bit integer, got {p.seed!r}",
              "process.seed", text)
    _number(p.exponent, "process.exponent", text)
    t = cfg.targets
    _number(t.gamma, "targets.gamma", text)
    if p.mode == "targets" or "targets" in cfg.tests:
        if s.kind != "billiard":
            _fail("targets need the billiard", "system.kind", text)
        if not 0 < t.gamma < 0.75:
            _fail(f"γ ∈ (0, 3/4) required, got {t.gamma}", "targets.gamma",
                  text)
        if not t.c > 0:
            _fail("must be positive", "targets.c", text)
        if not 0 < t.mu0 <= 0.5:
            _fail("μ₀ ∈ (0, 1/2] required", "targets.mu0", text)
    _positive_int(cfg.grid.start, "grid.start", text)
    _positive_int(cfg.grid.points, "grid.points", text, 2)
    _positive_int(cfg.long_orbit.length, "long_orbit.length", text)
    _positive_int(cfg.mixing.depth, "mixing.depth", text, 0)
    _positive_int(cfg.mixing.max_gap, "mixing.max_gap", text, 2)
    _positive_int(cfg.mixing.samples, "mixing.samples", text)
    _positive_int(cfg.mixing.seeds, "mixing.seeds", text)
    _number(cfg.blocks.eps, "blocks.eps", text)
    if not 0 < cfg.blocks.eps <= 1:
        _fail("ε ∈ (0, 1] required", "blocks.eps", text)
    _positive_int(cfg.blocks.jmax, "blocks.jmax", text)
    for k in ("k2", "kp", "lam"):
        _number(getattr(cfg.budget, k), f"budget.{k}", text)
    if not isinstance(cfg.tests, list):
        _fail("must be a list", "tests.select", text)
    for name in cfg.tests:
        if name not in TESTS:
            _fail(f"unknown test {name!r}; choose from {', '.join(TESTS)}",
                  "tests.select", text)


def load_config(path) -> ExperimentConfig:
    """Read a TOML file (or JSON when the name ends in ``.json``)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    text = raw.decode("utf-8", errors="replace")
    try:
        if str(path).endswith(".json"):
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno) from None
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(str(exc), line=int(m.group(1)) if m else None) from None
    return from_dict(data, text)
