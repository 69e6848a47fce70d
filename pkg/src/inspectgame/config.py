"""Experiment configuration: a nested YAML document mapped onto dataclasses.

Reference grammar (every key is optional; shown with its default)::

    model:
      d: 3                      # checked against len(levels) when given
      levels: [0, 1, 2]
      Q: 1.0
      F: 5.0
      sigma: 1.0
      L: 1.0
      T: 1.0
      x0: [0.5, 0.3, 0.2]
      detection: {family: exponential, p_max: 1.0, lam: 1.0}
      terminal: {family: zero, a: 0.0, b: 0.0}
    grid: {K: 200}
    solver: {tol: 1.0e-9, max_iter: 500, damping: 0.0}
    sim: {N: [50, 100, 200, 400, 800], R: 2000, seed: 20240601, dump: 3}
    epsnash:
      deviations: [STAY, MAX_UP, MAX_DOWN, CONSTANT(0.5), MOLLIFIED(0.1)]
      matrices: []              # e.g. [{name: lazy, q: [[0, 0.1, 0], [0, 0, 0], [0, 0, 0]]}]
      N: [50, 800]
      eta: [0.5, 0.25, 0.1, 0.01]
      rate_eta: 0.1
      rate_R: 4000
    output: {dir: out}
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import re
from dataclasses import dataclass, field

import numpy as np
import yaml

from .epsnash import BUNDLED, DeviationFamily
from .model import DetectionSpec, DomainError, ModelParams, TerminalSpec


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def default_x0(d: int) -> tuple[float, ...]:
    if d == 3:
        return (0.5, 0.3, 0.2)
    w = np.arange(d, 0, -1, dtype=float)
    return tuple(float(v) for v in w / w.sum())


@dataclass(frozen=True)
class ModelBlock:
    levels: tuple[float, ...] = (0.0, 1.0, 2.0)
    Q: float = 1.0
    F: float = 5.0
    sigma: float = 1.0
    L: float = 1.0
    T: float = 1.0
    x0: tuple[float, ...] | None = None
    detection: DetectionSpec = field(default_factory=DetectionSpec)
    terminal: TerminalSpec = field(default_factory=TerminalSpec)

    @property
    def d(self) -> int:
        return len(self.levels)

    @property
    def initial(self) -> tuple[float, ...]:
        return self.x0 if self.x0 is not None else default_x0(self.d)

    def params(self, T: float | None = None) -> ModelParams:
        return ModelParams(self.levels, self.Q, self.F, self.sigma, self.L,
                           self.T if T is None else T, self.detection, self.terminal)


@dataclass(frozen=True)
class GridBlock:
    K: int = 200


@dataclass(frozen=True)
class SolverBlock:
    tol: float = 1e-9
    max_iter: int = 500
    damping: float = 0.0


@dataclass(frozen=True)
class SimBlock:
    N: tuple[int, ...] = (50, 100, 200, 400, 800)
    R: int = 2000
    seed: int = 20240601
    dump: int = 3


@dataclass(frozen=True)
class EpsBlock:
    deviations: tuple[str, ...] = BUNDLED
    matrices: tuple = ()
    N: tuple[int, ...] = (50, 800)
    eta: tuple[float, ...] = (0.5, 0.25, 0.1, 0.01)
    rate_eta: float = 0.1
    rate_R: int = 4000

    def family(self) -> DeviationFamily:
        return DeviationFamily(self.deviations, tuple((m["name"], m["q"]) for m in self.matrices))


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "out"


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelBlock = field(default_factory=ModelBlock)
    grid: GridBlock = field(default_factory=GridBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    sim: SimBlock = field(default_factory=SimBlock)
    epsnash: EpsBlock = field(default_factory=EpsBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        """First 64 bits of the SHA-256 of the canonical JSON form (output dir excluded)."""
        data = self.to_dict()
        data.pop("output")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **blocks) -> "ExperimentConfig":
        return dataclasses.replace(self, **blocks)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


# -- parsing ---------------------------------------------------------------

_BLOCKS = {
    "model": ModelBlock,
    "grid": GridBlock,
    "solver": SolverBlock,
    "sim": SimBlock,
    "epsnash": EpsBlock,
    "output": OutputBlock,
}


_FLOAT = re.compile(r"^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")


class _Reader:
    def __init__(self):
        self.errors: list[str] = []

    def mapping(self, value, key):
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.errors.append(f"{key}: expected a mapping")
            return {}
        return value

    def number(self, value, key, kind=float, lo=None, lo_open=False, hi=None):
        if isinstance(value, str) and _FLOAT.match(value.strip()):
            # YAML 1.1 reads exponent forms without a dot (1e-9) as strings
            value = float(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.errors.append(f"{key}: expected a number, got {value!r}")
            return None
        if kind is int and not float(value).is_integer():
            self.errors.append(f"{key}: expected an integer, got {value!r}")
            return None
        v = kind(value)
        if lo is not None and (v <= lo if lo_open else v < lo):
            self.errors.append(f"{key}: must be {'>' if lo_open else '>='} {lo}, got {v!r}")
        if hi is not None and v > hi:
            self.errors.append(f"{key}: must be <= {hi}, got {v!r}")
        return v

    def numbers(self, value, key, kind=float, lo=None, lo_open=False):
        if not isinstance(value, (list, tuple)) or not value:
            self.errors.append(f"{key}: expected a non-empty list")
            return None
        out = [self.number(v, f"{key}[{i}]", kind, lo, lo_open) for i, v in enumerate(value)]
        return None if any(v is None for v in out) else tuple(out)

    def unknown(self, data, allowed, prefix):
        for k in data:
            if k not in allowed:
                self.errors.append(f"{prefix}{k}: unknown key")


def _read_model(rd: _Reader, data: dict) -> ModelBlock:
    rd.unknown(data, {f.name for f in dataclasses.fields(ModelBlock)} | {"d"}, "model.")
    kw = {}
    if "levels" in data:
        kw["levels"] = rd.numbers(data["levels"], "model.levels")
        lv = kw["levels"]
        if lv is not None and (min(lv) < 0 or any(b <= a for a, b in zip(lv, lv[1:]))):
            rd.errors.append("levels: must be non-negative and strictly increasing")
    levels = kw.get("levels") or ModelBlock.levels
    if "d" in data:
        d = rd.number(data["d"], "model.d", int, lo=1)
        if d is not None and d != len(levels):
            rd.errors.append(f"model.d: {d} does not match {len(levels)} levels")
    for name, lo_open in (("Q", True), ("F", True), ("sigma", True), ("L", True), ("T", True)):
        if name in data:
            kw[name] = rd.number(data[name], f"model.{name}", lo=0.0, lo_open=lo_open)
    if "x0" in data and data["x0"] is not None:
        x0 = rd.numbers(data["x0"], "model.x0", lo=0.0)
        if x0 is not None:
            if len(x0) != len(levels):
                rd.errors.append(f"model.x0: length {len(x0)} does not match {len(levels)} levels")
            elif abs(sum(x0) - 1.0) > 1e-9:
                rd.errors.append("model.x0: entries must sum to 1")
        kw["x0"] = x0
    for name, cls in (("detection", DetectionSpec), ("terminal", TerminalSpec)):
        if name in data:
            sub = rd.mapping(data[name], f"model.{name}")
            rd.unknown(sub, {f.name for f in dataclasses.fields(cls)}, f"model.{name}.")
            args = {}
            for k, v in sub.items():
                if k == "family":
                    args[k] = str(v)
                elif k in {f.name for f in dataclasses.fields(cls)}:
                    args[k] = rd.number(v, f"model.{name}.{k}")
            if None not in args.values():
                spec = cls(**args)
                rd.errors.extend(f"model.{e}" for e in spec.errors())
                kw[name] = spec
    kw = {k: v for k, v in kw.items() if v is not None}
    kw.setdefault("x0", default_x0(len(levels)))
    return ModelBlock(**kw)


def _read_flat(rd: _Reader, data: dict, block: str, specs: dict):
    cls = _BLOCKS[block]
    rd.unknown(data, set(specs), f"{block}.")
    kw = {}
    for k, reader in specs.items():
        if k in data:
            v = reader(data[k], f"{block}.{k}")
            if v is not None:
                kw[k] = v
    return cls(**kw)


def _read_eps(rd: _Reader, data: dict) -> EpsBlock:
    def deviations(v, key):
        if not isinstance(v, (list, tuple)):
            rd.errors.append(f"{key}: expected a list of names")
            return None
        try:
            DeviationFamily(tuple(str(x) for x in v))
        except ValueError as exc:
            rd.errors.append(f"{key}: {exc}")
            return None
        return tuple(str(x) for x in v)

    def matrices(v, key):
        if not isinstance(v, (list, tuple)):
            rd.errors.append(f"{key}: expected a list of {{name, q}} entries")
            return None
        out = []
        for i, m in enumerate(v):
            if not isinstance(m, dict) or set(m) != {"name", "q"}:
                rd.errors.append(f"{key}[{i}]: expected keys name and q")
                continue
            q = np.asarray(m["q"], dtype=float)
            if q.ndim != 2 or q.shape[0] != q.shape[1]:
                rd.errors.append(f"{key}[{i}].q: expected a square matrix")
                continue
            out.append({"name": str(m["name"]), "q": q.tolist()})
        return tuple(out)

    return _read_flat(rd, data, "epsnash", {
        "deviations": deviations,
        "matrices": matrices,
        "N": lambda v, k: rd.numbers(v, k, int, lo=1),
        "eta": lambda v, k: rd.numbers(v, k, lo=0.0, lo_open=True),
        "rate_eta": lambda v, k: rd.number(v, k, lo=0.0, lo_open=True),
        "rate_R": lambda v, k: rd.number(v, k, int, lo=2),
    })


def parse_config(data) -> ExperimentConfig:
    """Validate a parsed document, collecting every violation before raising."""
    rd = _Reader()
    data = rd.mapping(data, "<root>")
    rd.unknown(data, set(_BLOCKS), "")
    blocks = {b: rd.mapping(data.get(b), b) for b in _BLOCKS}
    model = _read_model(rd, blocks["model"])
    grid = _read_flat(rd, blocks["grid"], "grid", {"K": lambda v, k: rd.number(v, k, int, lo=2)})
    solver = _read_flat(rd, blocks["solver"], "solver", {
        "tol": lambda v, k: rd.number(v, k, lo=0.0, lo_open=True),
        "max_iter": lambda v, k: rd.number(v, k, int, lo=1),
        "damping": lambda v, k: rd.number(v, k, lo=0.0, hi=0.999999),
    })
    sim = _read_flat(rd, blocks["sim"], "sim", {
        "N": lambda v, k: rd.numbers(v, k, int, lo=1),
        "R": lambda v, k: rd.number(v, k, int, lo=2),
        "seed": lambda v, k: rd.number(v, k, int, lo=0, hi=2 ** 64 - 1),
        "dump": lambda v, k: rd.number(v, k, int, lo=0),
    })
    eps = _read_eps(rd, blocks["epsnash"])
    output = _read_flat(rd, blocks["output"], "output", {"dir": lambda v, k: str(v)})
    for i, m in enumerate(eps.matrices):
        if np.asarray(m["q"]).shape != (model.d, model.d):
            rd.errors.append(f"epsnash.matrices[{i}].q: expected a {model.d}x{model.d} matrix")
    if not rd.errors:
        try:
            model.params()
        except DomainError as exc:
            rd.errors.append(f"model: {exc}")
    if rd.errors:
        raise ConfigError(rd.errors)
    return ExperimentConfig(model, grid, solver, sim, eps, output)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError([f"parse error{where}: {getattr(exc, 'problem', exc)}"]) from exc
    return parse_config(data)


def dump_config(cfg: ExperimentConfig) -> str:
    data = cfg.to_dict()
    data["model"]["x0"] = list(cfg.model.initial)
    return yaml.safe_dump(data, sort_keys=False)
