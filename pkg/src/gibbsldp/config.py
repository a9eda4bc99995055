"""Experiment configuration: parsing, validation, canonical form.

Configs are JSON with one extension: wherever a number is expected, the
exact fraction string "p/q" is also accepted (and is required for
probability thresholds and coefficients consumed by exact tasks, where the
binary value of a decimal literal would silently change the event).
Unknown keys are rejected everywhere; every task names its inputs
explicitly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError, EngineError
from .ldp import Constraint, ConstraintSet, make_constraint_set
from .measures import MarkovMeasure
from .shift import Sft, build_sft
from .thermo import Potential, make_potential

_TASK_KINDS = ("pressure", "gibbs", "certify", "rate", "probability", "report")


def _number(value: Any, where: str, exact: bool = False) -> int | float | Fraction:
    """Parse a config number; "p/q" strings become Fractions.  ``exact``
    demands an integer or fraction (decimal floats rejected)."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number, got a boolean")
    if isinstance(value, int):
        return value
    if isinstance(value, float):
        if exact:
            raise ConfigError(
                f"{where}: exact tasks need integers or 'p/q' fractions, got {value}")
        return value
    if isinstance(value, str):
        try:
            return Fraction(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{where}: bad fraction {value!r}") from exc
    raise ConfigError(f"{where}: expected a number, got {type(value).__name__}")


def _require_keys(obj: Mapping, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, Mapping):
        raise ConfigError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _word(key: str, alphabet: int, where: str) -> tuple[int, ...]:
    if not key or not all(ch.isdigit() for ch in key):
        raise ConfigError(f"{where}: word keys must be digit strings, got {key!r}")
    w = tuple(int(ch) for ch in key)
    if any(x >= alphabet for x in w):
        raise ConfigError(f"{where}: word {key!r} outside alphabet of size {alphabet}")
    return w


@dataclass
class TaskSpec:
    kind: str
    name: str
    params: dict[str, Any]


@dataclass
class ExperimentConfig:
    """Validated experiment: shift space, named potentials and measures,
    and an ordered task list."""

    name: str
    sft: Sft
    potentials: dict[str, Potential]
    measure_specs: dict[str, dict]
    tasks: list[TaskSpec]
    seed: int
    output_dir: str | None
    raw: dict = field(repr=False)

    def canonical_dict(self) -> dict:
        """Semantically canonical form: fractions as 'p/q', defaults
        materialized, key order fixed by json sort."""
        return _canonicalize(self.raw)

    def config_hash(self) -> str:
        text = json.dumps(self.canonical_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _canonicalize(obj):
    if isinstance(obj, Mapping):
        return {k: _canonicalize(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [_canonicalize(v) for v in obj]
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, str):
        try:
            fr = Fraction(obj)
            return f"{fr.numerator}/{fr.denominator}"
        except (ValueError, ZeroDivisionError):
            return obj
    return obj


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a config document; raises ConfigError with the
    offending field named."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    _require_keys(raw, {"name", "sft", "potentials", "measures", "tasks",
                        "seed", "output_dir"},
                  {"sft", "tasks"}, "config")
    name = raw.get("name", "experiment")
    if not isinstance(name, str):
        raise ConfigError("config.name must be a string")

    sft_obj = raw["sft"]
    _require_keys(sft_obj, {"alphabet_size", "transitions", "name"},
                  {"alphabet_size", "transitions"}, "sft")
    try:
        sft = build_sft(sft_obj["alphabet_size"], np.asarray(sft_obj["transitions"]),
                        name=sft_obj.get("name", "sft"))
    except EngineError as exc:
        raise ConfigError(f"sft.transitions: {exc}") from exc

    potentials: dict[str, Potential] = {}
    for pname, pobj in (raw.get("potentials") or {}).items():
        _require_keys(pobj, {"range", "entries"}, {"range", "entries"},
                      f"potentials.{pname}")
        rng = pobj["range"]
        if not isinstance(rng, int) or rng < 1:
            raise ConfigError(f"potentials.{pname}.range must be a positive integer")
        table = {}
        for key, val in pobj["entries"].items():
            w = _word(key, sft.alphabet_size, f"potentials.{pname}.entries")
            table[w] = float(_number(val, f"potentials.{pname}.entries[{key}]"))
        try:
            potentials[pname] = make_potential(sft, rng, table, name=pname)
        except EngineError as exc:
            raise ConfigError(f"potentials.{pname}: {exc}") from exc

    measure_specs: dict[str, dict] = {}
    for mname, mobj in (raw.get("measures") or {}).items():
        if "gibbs_of" in mobj:
            _require_keys(mobj, {"gibbs_of"}, {"gibbs_of"}, f"measures.{mname}")
            if mobj["gibbs_of"] not in potentials:
                raise ConfigError(
                    f"measures.{mname}.gibbs_of: unknown potential {mobj['gibbs_of']!r}")
            measure_specs[mname] = {"gibbs_of": mobj["gibbs_of"]}
        else:
            _require_keys(mobj, {"block_order", "pi", "Q"}, {"pi", "Q"},
                          f"measures.{mname}")
            measure_specs[mname] = {
                "block_order": mobj.get("block_order", 1),
                "pi": [float(_number(v, f"measures.{mname}.pi")) for v in mobj["pi"]],
                "Q": [[float(_number(v, f"measures.{mname}.Q")) for v in row]
                      for row in mobj["Q"]],
            }

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("config.seed must be an integer")
    output_dir = raw.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("config.output_dir must be a string")

    tasks_raw = raw["tasks"]
    if not isinstance(tasks_raw, list) or not tasks_raw:
        raise ConfigError("config.tasks must be a nonempty list")
    tasks = []
    seen_names = set()
    for i, tobj in enumerate(tasks_raw):
        where = f"tasks[{i}]"
        if not isinstance(tobj, Mapping) or "task" not in tobj:
            raise ConfigError(f"{where}: missing 'task' kind")
        kind = tobj["task"]
        if kind not in _TASK_KINDS:
            raise ConfigError(f"{where}.task: unknown kind {kind!r}; "
                              f"expected one of {_TASK_KINDS}")
        tname = tobj.get("name", f"{kind}-{i}")
        if tname in seen_names:
            raise ConfigError(f"{where}.name: duplicate task name {tname!r}")
        seen_names.add(tname)
        params = _validate_task(kind, tobj, where, sft, potentials, measure_specs)
        tasks.append(TaskSpec(kind=kind, name=tname, params=params))

    return ExperimentConfig(name=name, sft=sft, potentials=potentials,
                            measure_specs=measure_specs, tasks=tasks, seed=seed,
                            output_dir=output_dir, raw=raw)


_TASK_KEYS = {
    "pressure": ({"task", "name", "potential", "tol"}, {"potential"}),
    "gibbs": ({"task", "name", "potential"}, {"potential"}),
    "certify": ({"task", "name", "measure", "potential", "deltas", "epsilons",
                 "m_max", "m_grid", "strong_tails"},
                {"measure", "potential", "deltas", "epsilons", "m_max"}),
    "rate": ({"task", "name", "potential", "constraints", "method", "tol"},
             {"potential", "constraints"}),
    "probability": ({"task", "name", "measure", "constraints", "m", "method",
                     "n_samples", "seed", "tilt"},
                    {"measure", "constraints", "m", "method"}),
    "report": ({"task", "name", "measure", "potential", "constraints", "m_grid",
                "mc_n_samples", "trend_tol", "seed"},
               {"measure", "potential", "constraints", "m_grid"}),
}


def _validate_task(kind, tobj, where, sft, potentials, measure_specs) -> dict:
    allowed, required = _TASK_KEYS[kind]
    _require_keys(tobj, allowed, required, where)
    params: dict[str, Any] = {}
    if "potential" in tobj:
        if tobj["potential"] not in potentials:
            raise ConfigError(f"{where}.potential: unknown potential {tobj['potential']!r}")
        params["potential"] = tobj["potential"]
    if "measure" in tobj:
        if tobj["measure"] not in measure_specs:
            raise ConfigError(f"{where}.measure: unknown measure {tobj['measure']!r}")
        params["measure"] = tobj["measure"]
    if kind == "pressure":
        params["tol"] = float(_number(tobj.get("tol", 1e-13), f"{where}.tol"))
    elif kind == "certify":
        params["deltas"] = [float(_number(v, f"{where}.deltas")) for v in tobj["deltas"]]
        params["epsilons"] = [float(_number(v, f"{where}.epsilons"))
                              for v in tobj["epsilons"]]
        params["m_max"] = _int(tobj["m_max"], f"{where}.m_max")
        params["m_grid"] = [_int(v, f"{where}.m_grid") for v in tobj.get("m_grid", [])]
        params["strong_tails"] = [_int(v, f"{where}.strong_tails")
                                  for v in tobj.get("strong_tails", [0])]
    elif kind == "rate":
        params["constraints"] = _parse_constraints(tobj["constraints"], sft,
                                                   f"{where}.constraints")
        method = tobj.get("method", "both")
        if method not in ("primal", "dual", "both"):
            raise ConfigError(f"{where}.method must be primal|dual|both")
        params["method"] = method
        params["tol"] = float(_number(tobj.get("tol", 1e-10), f"{where}.tol"))
    elif kind == "probability":
        exact = tobj["method"] == "exact"
        if tobj["method"] not in ("exact", "mc"):
            raise ConfigError(f"{where}.method must be exact|mc")
        params["method"] = tobj["method"]
        params["constraints"] = _parse_constraints(tobj["constraints"], sft,
                                                   f"{where}.constraints", exact=exact)
        params["m"] = _int(tobj["m"], f"{where}.m")
        if tobj["method"] == "mc":
            params["n_samples"] = _int(tobj.get("n_samples", 100_000),
                                       f"{where}.n_samples")
            params["seed"] = tobj.get("seed")
            tilt = tobj.get("tilt")
            params["tilt"] = None if tilt is None else float(_number(tilt, f"{where}.tilt"))
    elif kind == "report":
        params["constraints"] = _parse_constraints(tobj["constraints"], sft,
                                                   f"{where}.constraints")
        params["m_grid"] = [_int(v, f"{where}.m_grid") for v in tobj["m_grid"]]
        params["mc_n_samples"] = _int(tobj.get("mc_n_samples", 200_000),
                                      f"{where}.mc_n_samples")
        params["trend_tol"] = float(_number(tobj.get("trend_tol", 5e-3),
                                            f"{where}.trend_tol"))
        params["seed"] = tobj.get("seed")
    return params


def _int(value, where) -> int:
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{where}: expected an integer")
    return value


def _parse_constraints(cobj, sft: Sft, where: str, exact: bool = False) -> ConstraintSet:
    _require_keys(cobj, {"order", "functionals"}, {"order", "functionals"}, where)
    order = _int(cobj["order"], f"{where}.order")
    funcs = []
    for j, fobj in enumerate(cobj["functionals"]):
        fwhere = f"{where}.functionals[{j}]"
        _require_keys(fobj, {"coeffs", "threshold", "sense", "closed"},
                      {"coeffs", "threshold"}, fwhere)
        coeffs = {}
        for key, val in fobj["coeffs"].items():
            w = _word(key, sft.alphabet_size, f"{fwhere}.coeffs")
            if len(w) != order:
                raise ConfigError(f"{fwhere}.coeffs: word {key!r} has length "
                                  f"{len(w)}, expected {order}")
            coeffs[w] = _number(val, f"{fwhere}.coeffs[{key}]", exact=exact)
        sense = fobj.get("sense", ">=")
        closed = fobj.get("closed", True)
        if not isinstance(closed, bool):
            raise ConfigError(f"{fwhere}.closed must be a boolean")
        threshold = _number(fobj["threshold"], f"{fwhere}.threshold", exact=exact)
        try:
            funcs.append(Constraint(coeffs=coeffs, threshold=threshold,
                                    sense=sense, closed=closed))
        except EngineError as exc:
            raise ConfigError(f"{fwhere}: {exc}") from exc
    try:
        return make_constraint_set(sft, funcs)
    except EngineError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def materialize_measure(config: ExperimentConfig, name: str) -> MarkovMeasure:
    """Build the named measure (explicit matrices or Gibbs-of-potential)."""
    from .thermo import gibbs_measure

    spec = config.measure_specs[name]
    if "gibbs_of" in spec:
        return gibbs_measure(config.potentials[spec["gibbs_of"]], config.sft)
    try:
        return MarkovMeasure(config.sft, np.asarray(spec["pi"]), np.asarray(spec["Q"]),
                             block_order=spec["block_order"], name=name)
    except EngineError as exc:
        raise ConfigError(f"measures.{name}: {exc}") from exc
