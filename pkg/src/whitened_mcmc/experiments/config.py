"""Flat key = value experiment configuration.

Grammar, one entry per line::

    # comment
    key = value
    betas = 0.001, 0.01, 0.2     # comma list
    out = runs/fig1              # bare string

Blank lines and ``#`` comments (full-line or trailing) are ignored.  Values
are parsed as int, float, bool (true/false), a comma-separated list of those,
or left as a string.  Keys are case-sensitive identifiers.  Unknown keys are
rejected so that typos do not silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from ..errors import DomainError, FormatError

EXPERIMENTS = ("fig1_sweep", "convolution_acf", "darcy_hier", "graph_ssl", "active_learning")

# shared sampler/run keys and their defaults
COMMON = {
    "seed": 0,
    "out": "results",
    "steps": 20000,
    "burn_in": 2000,
    "thin": 1,
    "workers": 1,
}

DEFAULTS: Dict[str, Dict[str, Any]] = {
    "fig1_sweep": {
        "steps": 22000,
        "kernels": ["wpcn", "wmala", "rwm_white", "rwm_prior"],
        "N_values": [16, 64, 256, 1024, 4096],
        "betas": [1e-4, 1e-3, 3e-3, 0.01, 0.03, 0.1, 0.2, 0.5, 1.0],
        "truth_modes": 4096,
        "obs_per_axis": 4,
        "noise": 0.1,
        "besov_q": 1.0,
        "besov_kappa": 0.1,
        "besov_s": 1.0,
    },
    "convolution_acf": {
        "n_coeffs": 1024,
        "truth_coeffs": 4096,
        "obs_counts": [8, 32],
        "mean": 2.0,
        "damping": 0.1,
        "relative_noise": 0.04,
        "max_lag": 200,
        "target_wpcn": 0.3,
        "target_wmala": 0.6,
        "pilot_steps": 2000,
    },
    "darcy_hier": {
        "burn_in": 5000,
        "grid": 64,
        "tau_true": 15.0,
        "tau_fixed": 60.0,
        "tau_lower": 1.0,
        "tau_upper": 100.0,
        "tau_walk": 0.15,
        "sigma": 1.0,
        "regularity": 1.0,
        "perm_levels": [1.0, 4.0, 16.0],
        "thresholds": [-0.5, 0.5],
        "obs_per_axis": 6,
        "noise": 0.05,
        "source": 100.0,
        "beta": 0.1,
        "hist_bins": 20,
    },
    "graph_ssl": {
        "steps": 10000,
        "burn_in": 3000,
        "n_nodes": 200,
        "n_classes": 2,
        "feature_dim": 5,
        "separation": 4.0,
        "label_fraction": 0.05,
        "features": "",
        "labels": "",
        "pca_dim": 50,
        "knn": 7,
        "alpha_lower": 1.0,
        "alpha_upper": 100.0,
        "alpha_init": 10.0,
        "alpha_walk": 0.2,
        "M_upper": 100,
        "M_init": 20,
        "gamma": 1e-4,
        "beta": 0.2,
        "cache_dir": "",
    },
}
DEFAULTS["active_learning"] = dict(
    DEFAULTS["graph_ssl"],
    n_classes=4,
    separation=4.0,
    rounds=3,
    batch=10,
    modes=["most_uncertain", "most_certain"],
)

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


def _scalar(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_value(text: str):
    text = text.strip()
    if "," in text:
        return [_scalar(t.strip()) for t in text.split(",") if t.strip()]
    return _scalar(text)


def parse_config_text(text: str) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not _KEY.match(key):
            raise FormatError(f"line {lineno}: invalid key {key!r}")
        if key in out:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


@dataclass
class ExperimentConfig:
    experiment: str
    values: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise DomainError(f"unknown experiment {self.experiment!r}")
        merged = dict(COMMON)
        merged.update(DEFAULTS[self.experiment])
        unknown = set(self.values) - set(merged) - {"experiment"}
        if unknown:
            raise DomainError(f"unknown configuration keys: {sorted(unknown)}")
        merged.update({k: v for k, v in self.values.items() if k != "experiment"})
        self.values = merged
        if not self.steps > self.burn_in:
            raise DomainError("steps must exceed burn_in")
        if self.thin < 1 or self.workers < 1:
            raise DomainError("thin and workers must be at least 1")

    def __getattr__(self, name):
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def get_list(self, key):
        v = self.values[key]
        return list(v) if isinstance(v, (list, tuple)) else [v]

    def replace(self, **changes) -> "ExperimentConfig":
        vals = dict(self.values)
        vals.update(changes)
        return ExperimentConfig(self.experiment, vals)

    def canonical(self) -> str:
        lines = [f"experiment = {self.experiment}"]
        for k in sorted(self.values):
            if k in ("out", "workers"):
                continue  # do not change results
            v = self.values[k]
            if isinstance(v, (list, tuple)):
                v = ", ".join(repr(t) if isinstance(t, float) else str(t) for t in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:16]

    def header(self) -> str:
        return f"experiment={self.experiment} config_hash={self.config_hash()} seed={self.seed}"

    @property
    def out_dir(self) -> Path:
        p = Path(str(self.values["out"]))
        p.mkdir(parents=True, exist_ok=True)
        return p


def load_config(path=None, experiment: Optional[str] = None,
                overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """Read a config file (optional), apply overrides, fill defaults."""
    vals: Dict[str, Any] = {}
    if path is not None:
        vals.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    file_exp = vals.pop("experiment", None)
    exp = experiment or file_exp
    if exp is None:
        raise DomainError("no experiment given (config key 'experiment' or --experiment)")
    if file_exp is not None and experiment is not None and file_exp != experiment:
        raise DomainError(f"config is for {file_exp!r}, not {experiment!r}")
    vals.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig(exp, vals)
