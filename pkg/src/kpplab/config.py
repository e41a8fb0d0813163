"""Run configuration: TOML schema, validation with line numbers, and round-trip serialization."""
from __future__ import annotations

import copy
import re
import sys
from dataclasses import dataclass, field as dc_field

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on the interpreter
    import tomli as tomllib
import tomli_w

from .errors import ConfigError

EXPERIMENTS = ("validate", "solve", "vlin", "sharpness", "subsolution", "wulff", "homogenize", "nonlocal")

# section -> key -> (type, default); type is a python type, "floats"/"ints" for lists, or "table"
_FIELD = {
    "dim": (int, 1), "diffusivity": (float, 1.0), "drift": ("floats", [0.0]), "time_period": (float, 0.0),
}
_REACTION = {
    "shape": (str, "logistic"), "rate": (float, 1.0), "rate_amplitude": (float, 0.0),
    "rate_wavenumber": (float, 1.0), "rate_time_amplitude": (float, 0.0), "time_period": (float, 1.0),
}
_GRID = {"lo": ("floats", [-100.0]), "hi": ("floats", [100.0]), "h": (float, 0.05),
         "boundary": (str, "dirichlet_zero")}
_INITIAL = {"kind": (str, "interval"), "lo": ("floats", [0.0]), "hi": ("floats", [1.0]),
            "center": ("floats", [0.0]), "radius": (float, 1.0), "value": (float, 1.0), "path": (str, "")}
_ENVIRONMENT = {"kind": (str, "checkerboard_smoothed"), "params": ("table", {}), "dim": (int, 2),
                "m": (float, 1.0), "M": (float, 2.0), "time_period": (float, 1.0), "time_amplitude": (float, 0.0),
                "diffusivity": (float, 1.0)}

SCHEMA = {
    "run": {"experiment": (str, ""), "seed": (int, 0), "seeds": ("ints", [0]), "out": (str, "kpplab-out"),
            "threads": (int, 1)},
    "field": _FIELD,
    "reaction": _REACTION,
    "grid": _GRID,
    "initial": _INITIAL,
    "environment": _ENVIRONMENT,
    "solve": {"t_end": (float, 10.0), "cadence": (float, 1.0), "theta": (float, 0.5), "snapshots": (bool, False)},
    "vlin": {"delta": (float, 0.25), "t_end": (float, 40.0), "cadence": (float, 1.0), "variant": (str, "sup"),
             "shift_rule": (str, "t_power_delta"), "cube_scale": (float, 1.0), "tau_delta": (float, 1.0),
             "monotone": (bool, False)},
    "sharpness": {"b_bar": (float, 3.0), "delta": (float, 0.5), "t_end": (float, 200.0), "h": (float, 0.02),
                  "t_min": (float, 20.0), "times": ("floats", [])},
    "subsolution": {"beta": (float, 1.0), "lam": (float, 1.0), "B": (float, 2.0), "v": (float, 0.01),
                    "v0": (float, 0.0), "k_max": (int, 5), "h": (float, 0.05)},
    "nonlocal": {"kernel": (str, "box"), "alpha": (float, 0.5), "s": (float, 0.5), "radius": (float, 1.0),
                 "t_end": (float, 40.0), "cadence": (float, 1.0), "eps_tail": (float, 1e-8),
                 "dt_fraction": (float, 1 / 32), "dt_halving": (bool, False)},
    "wulff": {"directions": (int, 8), "n_list": ("ints", list(range(8, 33))), "h": (float, 0.25),
              "halfplane_t_end": (float, 0.0), "window": (float, 3.0)},
    "homogenize": {"tau_laws": (bool, True), "lattice": (float, 6.0), "speeds": (bool, True),
                   "directions": (int, 8), "n_list": ("ints", list(range(8, 33))), "h": (float, 0.25),
                   "rescaled": (bool, False), "set": (str, "half_plane"), "set_radius": (float, 1.0),
                   "epsilons": ("floats", [1 / 16, 1 / 32]), "T_list": ("floats", [1.0]), "collar": (float, 0.3),
                   "heatmaps": (bool, False)},
}

# numeric ranges checked after defaults are filled: (section, key) -> (lo, hi, lo_open, hi_open)
_RANGES = {
    ("run", "threads"): (1, 256, False, False),
    ("grid", "h"): (0, None, True, False),
    ("vlin", "delta"): (0, 0.5, True, False),
    ("vlin", "t_end"): (0, None, True, False),
    ("vlin", "cadence"): (0, None, True, False),
    ("sharpness", "delta"): (0, 1, True, True),
    ("sharpness", "b_bar"): (0, None, False, False),
    ("solve", "t_end"): (0, None, True, False),
    ("solve", "cadence"): (0, None, True, False),
    ("nonlocal", "t_end"): (0, None, True, False),
    ("nonlocal", "dt_fraction"): (0, 1, True, False),
    ("environment", "m"): (0, None, True, False),
    ("environment", "time_amplitude"): (0, 1, False, False),
    ("wulff", "directions"): (8, None, False, False),
    ("homogenize", "collar"): (0, None, True, False),
}


@dataclass
class RunConfig:
    """Resolved configuration: every schema key present with its value."""

    experiment: str
    sections: dict = dc_field(default_factory=dict)

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    @property
    def seed(self) -> int:
        return int(self.sections["run"]["seed"])

    @property
    def seeds(self) -> list:
        return list(self.sections["run"]["seeds"])

    @property
    def out(self) -> str:
        return self.sections["run"]["out"]

    @property
    def threads(self) -> int:
        return int(self.sections["run"]["threads"])

    def replace(self, section: str, **values) -> "RunConfig":
        sec = copy.deepcopy(self.sections)
        sec[section].update(values)
        return RunConfig(self.experiment, sec)


def _line_of(text: str, section: str | None, key: str) -> int | None:
    """1-based line of ``key`` inside ``[section]`` (top level when section is None)."""
    current = None
    pat = re.compile(rf"^\s*(\"{re.escape(key)}\"|{re.escape(key)})\s*=")
    for i, line in enumerate(text.splitlines(), 1):
        head = re.match(r"^\s*\[([^\[\]]+)\]\s*(#.*)?$", line)
        if head:
            current = head.group(1).strip()
            continue
        if current == section and pat.match(line):
            return i
    return None


def _section_line(text: str, section: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if re.match(rf"^\s*\[{re.escape(section)}\]\s*(#.*)?$", line):
            return i
    return None


def _coerce(kind, value, where: str, line):
    if kind == "table":
        if not isinstance(value, dict):
            raise ConfigError(f"{where} must be a table", line)
        return dict(value)
    if kind in ("floats", "ints"):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list of numbers", line)
        return [_coerce(float if kind == "floats" else int, v, where, line) for v in value]
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false", line)
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer", line)
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number", line)
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{where} must be a string", line)
    return value


def _check_range(sec: str, key: str, value, line):
    bounds = _RANGES.get((sec, key))
    if bounds is None:
        return
    lo, hi, lo_open, hi_open = bounds
    bad = (lo is not None and (value <= lo if lo_open else value < lo)) or \
          (hi is not None and (value >= hi if hi_open else value > hi))
    if bad:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(f"{sec}.{key}={value!r} outside {lb}{lo}, {hi if hi is not None else 'inf'}{rb}", line)


def parse_config(text: str, experiment: str | None = None) -> RunConfig:
    """Parse TOML text into a RunConfig with defaults filled in.

    Top-level keys belong to the ``run`` section.  Unknown sections or keys,
    wrong types and out-of-range values raise ConfigError carrying the line.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"invalid TOML: {exc}", int(m.group(1)) if m else None) from None
    run_raw = {k: v for k, v in raw.items() if not isinstance(v, dict)}
    nested = {k: v for k, v in raw.items() if isinstance(v, dict)}
    if "run" in nested:
        run_raw.update(nested.pop("run"))
    sections = {}
    for sec, keys in SCHEMA.items():
        given = run_raw if sec == "run" else nested.get(sec, {})
        out = {}
        for key, value in given.items():
            line = _line_of(text, None if sec == "run" and key in raw else sec, key)
            if key not in keys:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", line)
            out[key] = _coerce(keys[key][0], value, f"{sec}.{key}", line)
            if not isinstance(out[key], (list, dict)):
                _check_range(sec, key, out[key], line)
        for key, (_, default) in keys.items():
            out.setdefault(key, copy.deepcopy(default))
        sections[sec] = out
    for sec in nested:
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", _section_line(text, sec))
    exp = sections["run"]["experiment"] or (experiment or "")
    if experiment and sections["run"]["experiment"] and experiment != sections["run"]["experiment"]:
        raise ConfigError(f"config is for experiment {sections['run']['experiment']!r}, not {experiment!r}",
                          _line_of(text, None, "experiment"))
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose one of {', '.join(EXPERIMENTS)}",
                          _line_of(text, None, "experiment"))
    sections["run"]["experiment"] = exp
    _cross_checks(sections)
    return RunConfig(exp, sections)


def _cross_checks(sec: dict) -> None:
    if len(sec["grid"]["lo"]) != len(sec["grid"]["hi"]):
        raise ConfigError("grid.lo and grid.hi differ in length")
    if sec["vlin"]["variant"] not in ("sup", "capped_sum"):
        raise ConfigError(f"vlin.variant must be 'sup' or 'capped_sum', got {sec['vlin']['variant']!r}")
    if sec["vlin"]["shift_rule"] not in ("t_power_delta", "delta_t"):
        raise ConfigError(f"unknown vlin.shift_rule {sec['vlin']['shift_rule']!r}")
    if sec["reaction"]["shape"] not in ("logistic", "template", "cubic"):
        raise ConfigError(f"unknown reaction.shape {sec['reaction']['shape']!r}")
    n = sec["wulff"]["n_list"]
    if len(n) < 3 or any(b <= a for a, b in zip(n, n[1:])):
        raise ConfigError("wulff.n_list needs at least three increasing radii")


def load_config(path, experiment: str | None = None) -> RunConfig:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not UTF-8: {exc}") from None
    return parse_config(text, experiment)


def dump_config(cfg: RunConfig) -> str:
    """Serialize to TOML; ``parse_config(dump_config(c)) == c``."""
    data = dict(cfg.sections["run"])
    for sec, vals in cfg.sections.items():
        if sec != "run":
            data[sec] = vals
    return tomli_w.dumps(data)
