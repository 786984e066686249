"""Experiment configuration: YAML tree -> coefficients + run settings.

The schema (see configs/default_ou.yaml for a complete example):

    coefficients:
      dim: 1
      period1: 1.0
      period2: 1.4142135623730951
      damping: [[1.0]]
      diffusion_const: [[0.5]]
      forcing:                       # additive trig terms, vector amplitude
        - {amplitude: [1.0], harmonic1: 1, harmonic2: 0, phase: 0.0}
      saturating_forcing: []         # scalar terms multiplying tanh(x_i)
      diffusion_saturating: [[0.0]]
      diffusion_modulation: []       # scalar terms modulating the S1 channel
      saturation: none               # none | tanh
      declared: {dissipativity_rate: 1.0, diffusion_lipschitz: 0.0,
                 origin_bound: 2.2, time_exponent: 1.0,
                 growth_order: 1.0, growth_scale: 2.2}
    run:
      dt: 0.001
      seed0: 90210
      n_samples: 2000
      tol: 1.0e-06
      max_levels: 12
      parallelism: auto

Parse errors report file and line; semantic errors report the dotted key
(plus its line when the document provides one).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from .coefficients import DeclaredBounds, QPCoefficients, TrigTerm
from .errors import ConfigError
from .noise import TimeGrid


@dataclass(frozen=True)
class RunSettings:
    """Execution knobs shared by the batch front-end and the tests."""

    dt: float = 1e-3
    seed0: int = 90210
    n_samples: int = 2000
    tol: float = 1e-6
    max_levels: int = 12
    parallelism: str | int = "auto"

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ConfigError("run.dt", "must be finite and > 0")
        object.__setattr__(self, "seed0", int(self.seed0))
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(self, "max_levels", int(self.max_levels))
        if self.n_samples < 1:
            raise ConfigError("run.n_samples", "must be >= 1")
        if not (math.isfinite(self.tol) and self.tol > 0):
            raise ConfigError("run.tol", "must be finite and > 0")
        if self.max_levels < 1:
            raise ConfigError("run.max_levels", "must be >= 1")
        p = self.parallelism
        if p != "auto":
            try:
                p = int(p)
            except (TypeError, ValueError):
                raise ConfigError("run.parallelism",
                                  f"expected 'auto' or integer, got {p!r}")
            if p < 1:
                raise ConfigError("run.parallelism", "must be >= 1")
            object.__setattr__(self, "parallelism", p)

    def grid(self) -> TimeGrid:
        return TimeGrid(dt=self.dt)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    coefficients: QPCoefficients
    run: RunSettings
    raw: dict
    source: str = "<memory>"


def _collect_lines(node, prefix: str, out: dict):
    # map dotted keys to 1-based line numbers from the composed node tree
    if isinstance(node, yaml.MappingNode):
        for key_node, val_node in node.value:
            dotted = f"{prefix}.{key_node.value}" if prefix else key_node.value
            out[dotted] = key_node.start_mark.line + 1
            _collect_lines(val_node, dotted, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, item in enumerate(node.value):
            _collect_lines(item, f"{prefix}[{i}]", out)


class _Tree:
    """Dict view that raises ConfigError with file, line, and dotted key."""

    def __init__(self, data: dict, lines: dict, source: str, prefix: str = ""):
        self.data = data if data is not None else {}
        self.lines = lines
        self.source = source
        self.prefix = prefix

    def _where(self, key: str) -> str:
        dotted = f"{self.prefix}.{key}" if self.prefix else key
        line = self.lines.get(dotted)
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc} ({dotted})"

    def fail(self, key: str, message: str):
        raise ConfigError(self._where(key), message)

    def get(self, key: str, default=None, required: bool = False):
        if key not in self.data:
            if required:
                self.fail(key, "missing required key")
            return default
        return self.data[key]

    def child(self, key: str, required: bool = False) -> "_Tree":
        sub = self.get(key, default={}, required=required)
        if not isinstance(sub, dict):
            self.fail(key, f"expected a mapping, got {type(sub).__name__}")
        dotted = f"{self.prefix}.{key}" if self.prefix else key
        return _Tree(sub, self.lines, self.source, dotted)

    def unknown_keys(self, known) -> list:
        return [k for k in self.data if k not in known]


def _term_list(tree: _Tree, key: str, dim: int, scalar: bool):
    raw = tree.get(key, default=[])
    if raw is None:
        raw = []
    if not isinstance(raw, list):
        tree.fail(key, "expected a list of trig terms")
    terms = []
    for i, item in enumerate(raw):
        if not isinstance(item, dict):
            tree.fail(key, f"term {i}: expected a mapping")
        for want in ("amplitude", "harmonic1", "harmonic2"):
            if want not in item:
                tree.fail(key, f"term {i}: missing {want}")
        amp = item["amplitude"]
        if not isinstance(amp, list):
            amp = [amp]
        want_len = 1 if scalar else dim
        if len(amp) != want_len:
            tree.fail(key, f"term {i}: amplitude needs {want_len} entries")
        try:
            terms.append(TrigTerm(tuple(float(a) for a in amp),
                                  int(item["harmonic1"]),
                                  int(item["harmonic2"]),
                                  float(item.get("phase", 0.0))))
        except (TypeError, ValueError) as exc:
            tree.fail(key, f"term {i}: {exc}")
    return tuple(terms)


def coefficients_from_tree(tree: _Tree) -> QPCoefficients:
    dim = tree.get("dim", required=True)
    if not isinstance(dim, int) or dim < 1:
        tree.fail("dim", f"expected a positive integer, got {dim!r}")

    def number(key, required=True, default=None):
        v = tree.get(key, default=default, required=required)
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            tree.fail(key, f"expected a number, got {v!r}")
        return float(v)

    def matrix(key, required=True, default=None):
        v = tree.get(key, default=default, required=required)
        if v is None:
            return None
        if isinstance(v, (int, float)) and dim == 1:
            v = [[float(v)]]
        if not isinstance(v, list):
            tree.fail(key, "expected a matrix (list of rows)")
        return v

    declared_tree = tree.child("declared", required=True)
    known_declared = {"dissipativity_rate", "diffusion_lipschitz",
                      "origin_bound", "time_exponent", "growth_order",
                      "growth_scale"}
    for k in declared_tree.unknown_keys(known_declared):
        declared_tree.fail(k, "unknown declared constant")
    try:
        declared = DeclaredBounds(
            dissipativity_rate=declared_tree.get("dissipativity_rate",
                                                 required=True),
            diffusion_lipschitz=declared_tree.get("diffusion_lipschitz",
                                                  required=True),
            origin_bound=declared_tree.get("origin_bound", required=True),
            time_exponent=declared_tree.get("time_exponent", default=1.0),
            growth_order=declared_tree.get("growth_order", default=1.0),
            growth_scale=declared_tree.get("growth_scale", default=None),
        )
    except ConfigError as exc:
        raise ConfigError(declared_tree._where(exc.path.split(".")[-1]),
                          str(exc)) from exc

    known = {"dim", "period1", "period2", "damping", "diffusion_const",
             "forcing", "saturating_forcing", "diffusion_saturating",
             "diffusion_modulation", "saturation", "declared"}
    for k in tree.unknown_keys(known):
        tree.fail(k, "unknown key")

    try:
        return QPCoefficients(
            dim=dim,
            period1=number("period1"),
            period2=number("period2"),
            damping=matrix("damping"),
            diffusion_const=matrix("diffusion_const"),
            declared=declared,
            forcing=_term_list(tree, "forcing", dim, scalar=False),
            saturating_forcing=_term_list(tree, "saturating_forcing", dim,
                                          scalar=True),
            diffusion_saturating=matrix("diffusion_saturating",
                                        required=False),
            diffusion_modulation=_term_list(tree, "diffusion_modulation",
                                            dim, scalar=True),
            saturation=tree.get("saturation", default="none"),
        )
    except ConfigError as exc:
        # construction re-validates; point its dotted key at the document
        key = exc.path.split(".")[0]
        raise ConfigError(tree._where(key), str(exc)) from exc


def config_from_dict(data: dict, lines: dict | None = None,
                     source: str = "<memory>") -> ExperimentConfig:
    root = _Tree(data, lines or {}, source)
    for k in root.unknown_keys({"coefficients", "run"}):
        root.fail(k, "unknown top-level key")
    coeffs = coefficients_from_tree(root.child("coefficients", required=True))
    run_tree = root.child("run")
    known_run = {"dt", "seed0", "n_samples", "tol", "max_levels",
                 "parallelism"}
    for k in run_tree.unknown_keys(known_run):
        run_tree.fail(k, "unknown key")
    try:
        run = RunSettings(
            dt=run_tree.get("dt", default=1e-3),
            seed0=run_tree.get("seed0", default=90210),
            n_samples=run_tree.get("n_samples", default=2000),
            tol=run_tree.get("tol", default=1e-6),
            max_levels=run_tree.get("max_levels", default=12),
            parallelism=run_tree.get("parallelism", default="auto"),
        )
    except ConfigError as exc:
        raise ConfigError(run_tree._where(exc.path.split(".")[-1]),
                          str(exc)) from exc
    return ExperimentConfig(coefficients=coeffs, run=run,
                            raw=copy.deepcopy(data), source=source)


def load_config(path) -> ExperimentConfig:
    """Read a YAML experiment file; every error names file and line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read: {exc}") from exc
    try:
        data = yaml.safe_load(text)
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ConfigError(f"{path}:{line}",
                          getattr(exc, "problem", None) or str(exc)) from exc
    if data is None:
        raise ConfigError(str(path), "empty document")
    if not isinstance(data, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    lines: dict = {}
    if node is not None:
        _collect_lines(node, "", lines)
    return config_from_dict(data, lines, source=str(path))


def apply_overrides(data: dict, assignments) -> dict:
    """Apply `--set a.b.c=value` style dotted overrides to a config tree."""
    out = copy.deepcopy(data)
    for raw in assignments:
        if "=" not in raw:
            raise ConfigError("--set", f"expected key=value, got {raw!r}")
        dotted, _, text = raw.partition("=")
        dotted = dotted.strip()
        if not dotted:
            raise ConfigError("--set", f"empty key in {raw!r}")
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(dotted, f"unparseable value {text!r}") from exc
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value
    return out


def ou_benchmark(dt: float = 1e-3, seed0: int = 90210,
                 n_samples: int = 2000) -> ExperimentConfig:
    """The default benchmark: 1-d linear pull with two-frequency forcing.

    drift(t, x) = -x + sin(2*pi*t) + 0.7*sin(2*pi*t/sqrt(2)), constant
    diffusion 0.5.  The Gaussian benchmark module reproduces its laws in
    closed form, which anchors most acceptance checks.
    """
    data = {
        "coefficients": {
            "dim": 1,
            "period1": 1.0,
            "period2": math.sqrt(2.0),
            "damping": [[1.0]],
            "diffusion_const": [[0.5]],
            "forcing": [
                {"amplitude": [1.0], "harmonic1": 1, "harmonic2": 0,
                 "phase": 0.0},
                {"amplitude": [0.7], "harmonic1": 0, "harmonic2": 1,
                 "phase": 0.0},
            ],
            "saturating_forcing": [],
            "diffusion_saturating": [[0.0]],
            "diffusion_modulation": [],
            "saturation": "none",
            "declared": {
                "dissipativity_rate": 1.0,
                "diffusion_lipschitz": 0.0,
                "origin_bound": 2.2,
                "time_exponent": 1.0,
                "growth_order": 1.0,
                "growth_scale": 2.2,
            },
        },
        "run": {
            "dt": dt,
            "seed0": seed0,
            "n_samples": n_samples,
            "tol": 1e-6,
            "max_levels": 12,
            "parallelism": "auto",
        },
    }
    return config_from_dict(data, source="<builtin:ou_benchmark>")
