"""Experiment configuration: a flat text format with typed, validated keys.

A config file holds one ``key = value`` pair per line; ``#`` starts a
comment.  Keys are grouped with dots (``mif.J``), values are ints, floats,
booleans (``true``/``false``), bare strings, or comma-separated numeric
lists.  Unknown keys are rejected, every problem is reported with the key
path and the expected type, and a mandatory seed keeps runs reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional

from .errors import ConfigError

PRESETS = ("depletion", "gompertz-bench", "gaussian-cloning", "measles-sim", "custom")

_GOMPERTZ_LIKE = ("gompertz-bench", "custom")


@dataclass(frozen=True)
class Field:
    type: str                      # int | float | bool | str | int-list | float-list
    default: object = None         # None with required=True means "must be given"
    required: bool = False
    presets: Optional[tuple] = None  # None = applies to every preset
    choices: Optional[tuple] = None
    minimum: Optional[float] = None


SCHEMA: dict[str, Field] = {
    "preset": Field("str", required=True, choices=PRESETS),
    "seed": Field("int", required=True, minimum=0),
    "out": Field("str", default=""),
    "threads": Field("int", default=1, minimum=1),

    # Panel geometry and the iterated-filter block.
    "U": Field("int", minimum=1,
               presets=("gompertz-bench", "custom", "depletion", "gaussian-cloning")),
    "N": Field("int", minimum=1, presets=("gompertz-bench", "custom", "depletion")),
    "mif.J": Field("int", default=1000, minimum=2,
                   presets=_GOMPERTZ_LIKE + ("depletion", "measles-sim")),
    "mif.M": Field("int", default=50, minimum=1, presets=_GOMPERTZ_LIKE + ("measles-sim",)),
    "mif.algorithms": Field("str", default="both", choices=("both", "mpif", "pif"),
                            presets=_GOMPERTZ_LIKE),
    "mif.n_starts": Field("int", default=10, minimum=1, presets=_GOMPERTZ_LIKE + ("measles-sim",)),
    "mif.sigma_dyn": Field("float", default=0.02, minimum=0.0,
                           presets=_GOMPERTZ_LIKE + ("depletion", "measles-sim")),
    "mif.sigma_ivp": Field("float", default=0.1, minimum=0.0,
                           presets=_GOMPERTZ_LIKE + ("depletion", "measles-sim")),
    "mif.eval_schedule": Field("int-list", default=(), presets=_GOMPERTZ_LIKE + ("measles-sim",)),
    "mif.eval_J": Field("int", default=1000, minimum=2, presets=_GOMPERTZ_LIKE + ("measles-sim",)),
    "mif.eval_reps": Field("int", default=3, minimum=1, presets=_GOMPERTZ_LIKE + ("measles-sim",)),
    "mif.diagnostics": Field("bool", default=False, presets=_GOMPERTZ_LIKE),
    "cooling.kind": Field("str", default="geometric", choices=("geometric", "polynomial"),
                          presets=_GOMPERTZ_LIKE + ("depletion", "measles-sim")),
    "cooling.factor": Field("float", default=0.5 ** (1.0 / 50.0),
                            presets=_GOMPERTZ_LIKE + ("depletion", "measles-sim")),
    "cooling.delta": Field("float", default=0.5, presets=_GOMPERTZ_LIKE + ("depletion", "measles-sim")),

    # Gompertz benchmark model values (also the simulation truth).
    "model.r": Field("float", default=0.1, presets=_GOMPERTZ_LIKE),
    "model.sigma_sq": Field("float", default=0.01, presets=_GOMPERTZ_LIKE),
    "model.tau_sq": Field("float", default=0.01, presets=_GOMPERTZ_LIKE),
    "exact_max.enabled": Field("bool", default=True, presets=_GOMPERTZ_LIKE),
    "exact_max.restarts": Field("int", default=20, minimum=0, presets=_GOMPERTZ_LIKE),

    # Depletion study (iid-normal toy, single u = 1 pass).
    "model.psi": Field("float-list", default=(1.0, -1.0), presets=("depletion",)),
    "prior.mean": Field("float", default=0.0, presets=("depletion",)),
    "prior.sd": Field("float", default=1.0, minimum=0.0, presets=("depletion",)),

    # Gaussian cloning study.
    "cloning.rho": Field("float", default=0.3, presets=("gaussian-cloning",)),
    "cloning.M": Field("int", default=10000, minimum=1, presets=("gaussian-cloning",)),
    "cloning.sigma1_sq": Field("float", default=1.0, minimum=0.0, presets=("gaussian-cloning",)),
    "cloning.delta": Field("float", default=0.5, presets=("gaussian-cloning",)),

    # Measles simulation study.
    "measles.variant": Field("str", default="7-shared",
                             choices=("c-shared", "iota-shared", "7-shared"),
                             presets=("measles-sim",)),
    "measles.populations": Field("float-list", default=(2e5, 5e5, 1e6), presets=("measles-sim",)),
    "measles.n_weeks": Field("int", default=104, minimum=2, presets=("measles-sim",)),
    "measles.t0": Field("float", default=1950.0, presets=("measles-sim",)),
    "measles.birth_rate": Field("float", default=0.018, minimum=0.0, presets=("measles-sim",)),
}

# Keys that do not affect computed outputs and stay out of the manifest hash.
_RUNTIME_KEYS = ("out", "threads")


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    seed: int
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    def normalized_text(self) -> str:
        lines = []
        for key in sorted(self.values):
            if key in _RUNTIME_KEYS:
                continue
            val = self.values[key]
            if isinstance(val, tuple):
                rendered = ",".join(repr(v) for v in val)
            else:
                rendered = repr(val) if not isinstance(val, str) else val
            lines.append(f"{key} = {rendered}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.normalized_text().encode("utf-8")).hexdigest()


def parse_config_text(text: str) -> dict:
    raw: dict[str, str] = {}
    problems = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            problems.append(f"line {lineno}: empty key")
        elif key in raw:
            problems.append(f"line {lineno}: duplicate key {key!r}")
        else:
            raw[key] = value
    if problems:
        raise ConfigError(problems)
    return raw


def _coerce(key: str, value: str, fld: Field, problems: list):
    try:
        if fld.type == "int":
            out = int(value)
        elif fld.type == "float":
            out = float(value)
        elif fld.type == "bool":
            low = value.lower()
            if low not in ("true", "false"):
                raise ValueError
            out = low == "true"
        elif fld.type == "int-list":
            out = tuple(int(v.strip()) for v in value.split(",") if v.strip()) if value else ()
        elif fld.type == "float-list":
            out = tuple(float(v.strip()) for v in value.split(",") if v.strip()) if value else ()
        else:
            out = value
    except ValueError:
        problems.append(f"{key}: expected {fld.type}, got {value!r}")
        return None
    if fld.choices is not None and out not in fld.choices:
        problems.append(f"{key}: must be one of {', '.join(map(str, fld.choices))}")
        return None
    if fld.minimum is not None and fld.type in ("int", "float") and out < fld.minimum:
        problems.append(f"{key}: must be >= {fld.minimum}")
        return None
    return out


def validate_config(path) -> ExperimentConfig:
    """Parse and validate a config file; raises :class:`ConfigError` with every problem."""
    with open(path, encoding="utf-8") as fh:
        raw = parse_config_text(fh.read())

    problems = []
    preset = raw.get("preset")
    if preset is None:
        problems.append("preset: missing required key (expected str)")
    elif preset not in PRESETS:
        problems.append(f"preset: must be one of {', '.join(PRESETS)}")
        preset = None

    values: dict = {}
    if preset is not None:
        values["preset"] = preset
    for key, value in raw.items():
        if key == "preset":
            continue          # already checked above
        fld = SCHEMA.get(key)
        if fld is None:
            problems.append(f"{key}: unknown key")
            continue
        if preset is not None and fld.presets is not None and preset not in fld.presets:
            problems.append(f"{key}: not a valid key for preset {preset!r}")
            continue
        out = _coerce(key, value, fld, problems)
        if out is not None:
            values[key] = out

    for key, fld in SCHEMA.items():
        if key in values:
            continue
        if preset is not None and fld.presets is not None and preset not in fld.presets:
            continue
        if fld.required:
            if key not in raw:
                problems.append(f"{key}: missing required key (expected {fld.type})")
        else:
            values[key] = fld.default

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(preset=values["preset"], seed=values["seed"], values=values)
