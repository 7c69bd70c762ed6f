"""Run configuration: an INI document flattened into dotted keys.

Keys may appear before any section header, inside a section, or dotted.
Sections ``run``, ``model``, ``kernel``, ``likelihood``, ``optimize`` and
``bench`` are flattened (``[optimize] iters = 5`` sets ``iters``); any other
section prefixes its keys (``[hmc] step = 0.1`` sets ``hmc.step``).

=====================  ===================  ==================================
key                    default              meaning
=====================  ===================  ==================================
seed                   0                    seed for every random draw
model                  gpr                  gpr|sgpr|vgp|svgp|gpmc|sgpmc
kernel                 rbf                  kernel expression
likelihood             gaussian             gaussian|bernoulli|poisson|multiclass:C
jitter                 1e-6                 relative Cholesky jitter
whiten                 true                 whitened SVGP
inducing               10                   inducing point count m
minibatch              0                    SVGP minibatch size, 0 = full batch
iters                  1000                 optimiser iterations
rate                   0.01                 Adam learning rate
repeats                5                    benchmark repeats
threads                (unset)              BLAS thread cap; bench: sweep list
trace.timing           true                 include the seconds column in trace.csv
fixed                  (empty)              comma list of parameter-name globs to hold fixed
resume                 (empty)              artifact to continue fitting from
data.source            csv                  csv|idx|synthetic
data.path              (empty)              training CSV
data.label_column      -1                   label column index
data.header            true                 CSV has a header line
data.images            (empty)              IDX images file
data.labels            (empty)              IDX labels file
data.n                 1000                 synthetic row count
data.d                 64                   synthetic feature count
data.classes           10                   synthetic class count
hmc.step               0.05                 leapfrog step size
hmc.leapfrog           10                   leapfrog steps per proposal
hmc.samples            1000                 HMC iterations
hmc.burn               100                  discarded leading samples
init.<glob>            -                    initial constrained value for matching parameters
prior.<glob>           -                    ``gaussian(m, v)``, ``gamma(a, b)`` or ``uniform(lo, hi)``
=====================  ===================  ==================================

The ``bench`` command changes these defaults: model svgp, likelihood
multiclass:10, data.source synthetic, inducing 100, minibatch 200 (a comma
list is swept), iters 50, repeats 5, rate 0.001, threads 1,2,3,4,5,6.
"""

from __future__ import annotations

import configparser
import fnmatch
import re
from pathlib import Path

from ..params import Prior

DEFAULTS = {
    "seed": "0",
    "model": "gpr",
    "kernel": "rbf",
    "likelihood": "gaussian",
    "jitter": "1e-6",
    "whiten": "true",
    "inducing": "10",
    "minibatch": "0",
    "iters": "1000",
    "rate": "0.01",
    "repeats": "5",
    "threads": "",
    "trace.timing": "true",
    "fixed": "",
    "resume": "",
    "data.source": "csv",
    "data.path": "",
    "data.label_column": "-1",
    "data.header": "true",
    "data.images": "",
    "data.labels": "",
    "data.n": "1000",
    "data.d": "64",
    "data.classes": "10",
    "hmc.step": "0.05",
    "hmc.leapfrog": "10",
    "hmc.samples": "1000",
    "hmc.burn": "100",
}

BENCH_DEFAULTS = {
    "model": "svgp",
    "likelihood": "multiclass:10",
    "data.source": "synthetic",
    "inducing": "100",
    "minibatch": "200",
    "iters": "50",
    "repeats": "5",
    "rate": "0.001",
    "threads": "1,2,3,4,5,6",
}

FLAT_SECTIONS = {"run", "model", "kernel", "likelihood", "optimize", "bench"}
PATTERN_PREFIXES = ("init.", "prior.")
_TOP = "__top__"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class ConfigError(ValueError):
    pass


class Config:
    def __init__(self, values: dict[str, str] | None = None, command: str | None = None):
        self._defaults = dict(DEFAULTS)
        if command == "bench":
            self._defaults.update(BENCH_DEFAULTS)
        self._values: dict[str, str] = {}
        for k, v in (values or {}).items():
            self.set(k, v)

    @classmethod
    def from_text(cls, text: str, command: str | None = None) -> Config:
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read_string(f"[{_TOP}]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from None
        values = {}
        for section in parser.sections():
            for key, value in parser.items(section):
                if section == _TOP or section.lower() in FLAT_SECTIONS:
                    name = key
                else:
                    name = f"{section}.{key}"
                values[name] = value
        return cls(values, command)

    @classmethod
    def from_file(cls, path, command: str | None = None) -> Config:
        return cls.from_text(Path(path).read_text(), command)

    def set(self, key: str, value) -> None:
        key = key.strip()
        if key not in self._defaults and not key.startswith(PATTERN_PREFIXES):
            raise ConfigError(f"unknown config key {key!r}")
        self._values[key] = str(value).strip()

    def is_set(self, key: str) -> bool:
        return key in self._values

    def get(self, key: str) -> str:
        if key in self._values:
            return self._values[key]
        if key in self._defaults:
            return self._defaults[key]
        raise ConfigError(f"unknown config key {key!r}")

    def get_int(self, key: str) -> int:
        try:
            return int(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} must be an integer, got {self.get(key)!r}") from None

    def get_float(self, key: str) -> float:
        try:
            return float(self.get(key))
        except ValueError:
            raise ConfigError(f"{key} must be a number, got {self.get(key)!r}") from None

    def get_bool(self, key: str) -> bool:
        text = self.get(key).lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ConfigError(f"{key} must be true or false, got {text!r}")

    def get_int_list(self, key: str) -> list[int]:
        text = self.get(key)
        try:
            return [int(t) for t in text.split(",") if t.strip()]
        except ValueError:
            raise ConfigError(f"{key} must be a comma list of integers, got {text!r}") from None

    def get_list(self, key: str) -> list[str]:
        return [t.strip() for t in self.get(key).split(",") if t.strip()]

    def patterns(self, prefix: str) -> list[tuple[str, str]]:
        """``(glob, value)`` pairs for keys under ``prefix.``, in insertion order."""
        head = prefix + "."
        return [(k[len(head) :], v) for k, v in self._values.items() if k.startswith(head)]


_PRIOR_RE = re.compile(r"^\s*(gaussian|gamma|uniform)\s*\(\s*([^,]+?)\s*,\s*([^)]+?)\s*\)\s*$", re.IGNORECASE)


def parse_prior(text: str) -> Prior:
    m = _PRIOR_RE.match(text)
    if not m:
        raise ConfigError(f"bad prior {text!r}; use gaussian(m, v), gamma(a, b) or uniform(lo, hi)")
    try:
        return Prior(m.group(1).lower(), float(m.group(2)), float(m.group(3)))
    except ValueError as exc:
        raise ConfigError(f"bad prior {text!r}: {exc}") from None


def matching(names: list[str], pattern: str) -> list[str]:
    return [n for n in names if fnmatch.fnmatchcase(n, pattern)]
