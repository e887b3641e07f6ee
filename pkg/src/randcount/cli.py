"""Scenario runner: TOML configuration in, deterministic CSV and JSON out.

Usage::

    randcount run --config path.toml [--out DIR] [--jobs K]
    randcount validate --config path.toml

The output directory is, in order of precedence, ``--out``, the ``RANDCOUNT_OUT``
environment variable, ``[output] dir`` in the config, then ``./out``. Exit status is 0
when every embedded check passes, 1 when a check fails and 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from collections.abc import Callable, Iterable, Mapping
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from . import counting, environment, poincare, thermo
from .environment import EnvironmentSpec, validate_environment
from .errors import ConfigError, RandCountError, SpecError
from .symbolic import SystemSpec, validate_system

SCHEMA_VERSION = 1
OUT_ENV_VAR = "RANDCOUNT_OUT"
REQUIRED = object()

_FLOAT, _INT, _BOOL, _STR = "float", "int", "bool", "str"
_FLOATS, _INTS, _SEEDS, _COMPLEXES = "float_list", "int_list", "seeds", "complex_list"

PARAMS: dict[str, dict[str, tuple]] = {
    "pressure-curve": {"x_min": (_FLOAT, 0.0), "x_max": (_FLOAT, 1.0), "points": (_INT, 101)},
    "exponents": {},
    "count": {"t_min": (_FLOAT, 0.5), "t_max": (_FLOAT, 20.0), "t_step": (_FLOAT, 0.5),
              "backend": (_STR, "exact")},
    "random-count": {"t_min": (_FLOAT, 0.5), "t_max": (_FLOAT, 20.0), "t_step": (_FLOAT, 0.5),
                     "backend": (_STR, "exact"), "seed": (_INT, None)},
    "ratio-scan": {"t_min": (_FLOAT, 10.0), "t_max": (_FLOAT, 200.0), "t_step": (_FLOAT, 0.5),
                   "backend": (_STR, "exact"), "ratio_lower": (_FLOAT, None), "ratio_upper": (_FLOAT, None)},
    "sandwich": {"seeds": (_SEEDS, REQUIRED), "thresholds": (_INT, 20), "t_min": (_FLOAT, 2.0),
                 "t_max": (_FLOAT, 40.0), "fault_shift": (_FLOAT, 0.0)},
    "reduction": {"seeds": (_SEEDS, REQUIRED), "n_max": (_INT, 200)},
    "eqr9": {"seeds": (_SEEDS, REQUIRED), "m_values": (_INTS, [-3, -2, -1, 0, 1, 2, 3]),
             "n": (_INT, 10000), "p": (_FLOAT, None)},
    "fluctuation-demo": {"m_targets": (_INTS, REQUIRED), "n_cap": (_INT, 400), "p": (_FLOAT, None),
                         "min_log_spread": (_FLOAT, None)},
    "lil": {"seeds": (_SEEDS, REQUIRED), "letter": (_INT, 0), "n_crossings": (_INT, 100000),
            "n_lil": (_INT, 1000000), "k_min": (_INT, 1000), "min_crossings": (_INT, 50),
            "lil_lower": (_FLOAT, 0.35), "lil_upper": (_FLOAT, 1.8), "min_fraction": (_FLOAT, 0.9)},
    "drift": {"seeds": (_SEEDS, REQUIRED), "n": (_INT, 100000)},
    "poincare": {"s_values": (_COMPLEXES, [[1.0, 0.0], [1.0, 2.0]]), "N": (_INT, 200),
                 "abscissa_N": (_INT, 1000), "abscissa_window": (_INT, 500)},
    "theta-scan": {"cycle": (_FLOATS, REQUIRED), "y_max": (_FLOAT, 20.0), "grid_step": (_FLOAT, 0.005),
                   "expected_zeros": (_INT, None), "off_axis_floor": (_FLOAT, None)},
}
SCENARIOS = tuple(PARAMS)
NEEDS_ENVIRONMENT = {"random-count", "sandwich", "reduction", "eqr9", "fluctuation-demo", "lil", "drift",
                     "poincare"}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    system: SystemSpec
    environment: EnvironmentSpec | None
    params: dict = field(hash=False)
    output_dir: str = "out"


# ---------------------------------------------------------------------------
# parsing


def _number(value, key: str) -> float:
    if isinstance(value, bool):
        raise ConfigError("expected a number", code="type_mismatch", key=key)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError("expected a number or a fraction string like '1/3'", code="type_mismatch", key=key)


def _integer(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("expected an integer", code="type_mismatch", key=key)
    return value


def _list(value, key: str) -> list:
    if not isinstance(value, list):
        raise ConfigError("expected a list", code="type_mismatch", key=key)
    return value


def _coerce(kind: str, value, key: str):
    if kind == _FLOAT:
        return _number(value, key)
    if kind == _INT:
        return _integer(value, key)
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise ConfigError("expected a boolean", code="type_mismatch", key=key)
        return value
    if kind == _STR:
        if not isinstance(value, str):
            raise ConfigError("expected a string", code="type_mismatch", key=key)
        return value
    if kind == _FLOATS:
        return [_number(v, f"{key}[{i}]") for i, v in enumerate(_list(value, key))]
    if kind == _INTS:
        return [_integer(v, f"{key}[{i}]") for i, v in enumerate(_list(value, key))]
    if kind == _COMPLEXES:
        out = []
        for i, v in enumerate(_list(value, key)):
            pair = _list(v, f"{key}[{i}]")
            if len(pair) != 2:
                raise ConfigError("expected [re, im]", code="type_mismatch", key=f"{key}[{i}]")
            out.append(complex(_number(pair[0], f"{key}[{i}]"), _number(pair[1], f"{key}[{i}]")))
        return out
    if kind == _SEEDS:
        if isinstance(value, Mapping):
            start = _integer(value.get("start", 0), f"{key}.start")
            if "count" not in value:
                raise ConfigError("missing key", code="missing_key", key=f"{key}.count")
            return list(range(start, start + _integer(value["count"], f"{key}.count")))
        return [_integer(v, f"{key}[{i}]") for i, v in enumerate(_list(value, key))]
    raise AssertionError(kind)


_SYSTEM_KEYS = {"ratio_out_of_range": "ratios", "not_irreducible": "incidence", "osc_violation": "placements",
                "letter_out_of_range": "suffix_letter"}
_ENV_KEYS = {"modulus_out_of_range": "values", "duplicate_value": "values", "bad_probabilities": "probabilities",
             "unknown_mode": "mode", "empty_cycle": "cycle", "index_out_of_range": "cycle",
             "bad_frequencies": "frequencies", "inconsistent_shape": "probabilities"}


def _wrap(err: SpecError, section: str, keys: Mapping[str, str]) -> ConfigError:
    name = keys.get(err.code)
    message = str(err)
    if name and message.startswith(name + " "):
        message = message[len(name) + 1 :]
    return ConfigError(message, code=err.code, key=f"{section}.{name}" if name else section)


def _parse_system(raw) -> SystemSpec:
    if not isinstance(raw, Mapping):
        raise ConfigError("missing section", code="missing_key", key="system")
    if "ratios" not in raw:
        raise ConfigError("missing key", code="missing_key", key="system.ratios")
    ratios = _coerce(_FLOATS, raw["ratios"], "system.ratios")
    a = len(ratios)
    incidence = raw.get("incidence", [[1] * a for _ in range(a)])
    rows = [_coerce(_INTS, row, f"system.incidence[{i}]") for i, row in enumerate(_list(incidence, "system.incidence"))]
    fields = {"ratios": ratios, "incidence": rows,
              "suffix_letter": _integer(raw.get("suffix_letter", 0), "system.suffix_letter")}
    if "placements" in raw:
        fields["placements"] = _coerce(_FLOATS, raw["placements"], "system.placements")
    try:
        return validate_system(fields)
    except SpecError as err:
        raise _wrap(err, "system", _SYSTEM_KEYS) from None


def _parse_environment(raw) -> EnvironmentSpec:
    if not isinstance(raw, Mapping):
        raise ConfigError("missing section", code="missing_key", key="environment")
    if "values" not in raw:
        raise ConfigError("missing key", code="missing_key", key="environment.values")
    fields = {"values": _coerce(_FLOATS, raw["values"], "environment.values")}
    for name in ("probabilities", "frequencies"):
        if name in raw:
            fields[name] = _coerce(_FLOATS, raw[name], f"environment.{name}")
    for name in ("prefix", "cycle"):
        if name in raw:
            fields[name] = _coerce(_INTS, raw[name], f"environment.{name}")
    if "epsilon" in raw:
        fields["epsilon"] = _number(raw["epsilon"], "environment.epsilon")
    if "mode" in raw:
        fields["mode"] = _coerce(_STR, raw["mode"], "environment.mode")
    if "seed" in raw:
        fields["seed"] = _integer(raw["seed"], "environment.seed")
    try:
        return validate_environment(fields)
    except SpecError as err:
        raise _wrap(err, "environment", _ENV_KEYS) from None


def parse_config(text: str) -> ExperimentConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(str(err), code="syntax_error") from None
    if "scenario" not in doc:
        raise ConfigError("missing key", code="missing_key", key="scenario")
    scenario = doc["scenario"]
    if scenario not in PARAMS:
        raise ConfigError(f"unknown scenario {scenario!r}; valid: {', '.join(SCENARIOS)}",
                          code="unknown_scenario", key="scenario")
    system = _parse_system(doc.get("system"))
    env = None
    if "environment" in doc or scenario in NEEDS_ENVIRONMENT:
        env = _parse_environment(doc.get("environment"))
    raw_params = doc.get("params", {})
    if not isinstance(raw_params, Mapping):
        raise ConfigError("expected a table", code="type_mismatch", key="params")
    schema = PARAMS[scenario]
    for name in raw_params:
        if name not in schema:
            raise ConfigError(f"unknown parameter for scenario {scenario!r}", code="unknown_key", key=f"params.{name}")
    params = {}
    for name, (kind, default) in schema.items():
        if name in raw_params:
            params[name] = _coerce(kind, raw_params[name], f"params.{name}")
        elif default is REQUIRED:
            raise ConfigError("missing key", code="missing_key", key=f"params.{name}")
        else:
            params[name] = default
    if scenario == "poincare" and env.mode != "eventually_periodic":
        raise ConfigError("poincare needs an eventually periodic environment", code="type_mismatch",
                          key="environment.mode")
    if scenario in ("eqr9", "fluctuation-demo") and env.size != 2:
        raise ConfigError("exactly two values required", code="type_mismatch", key="environment.values")
    out = doc.get("output", {})
    out_dir = _coerce(_STR, out.get("dir", "out"), "output.dir") if isinstance(out, Mapping) else "out"
    return ExperimentConfig(scenario, system, env, params, out_dir)


# ---------------------------------------------------------------------------
# deterministic emission


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, Fraction):
        value = float(value)
    if isinstance(value, (float, np.floating)):
        x = float(value)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.11e}"
    if value is None:
        return ""
    return str(value)


def to_json(value, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(value, Mapping):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(value[k], indent + 1)}" for k in sorted(value, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        if len(value) == 0:
            return "[]"
        items = [f"{pad}{to_json(v, indent + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if value is None:
        return "null"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating, Fraction)):
        text = format_value(value)
        return text if text not in ("nan", "inf", "-inf") else json.dumps(text)
    if isinstance(value, complex):
        return to_json([value.real, value.imag], indent)
    return json.dumps(str(value))


def to_csv(header: list[str], rows: Iterable[Iterable]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def write_atomic(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class ScenarioResult:
    header: list
    rows: list
    summary: dict
    checks: dict

    @property
    def passed(self) -> bool:
        return all(c["pass"] for c in self.checks.values())


def _grid(p) -> np.ndarray:
    count = int(math.floor((p["t_max"] - p["t_min"]) / p["t_step"] + 1e-9)) + 1
    return p["t_min"] + p["t_step"] * np.arange(count)


def _system_summary(spec: SystemSpec) -> dict:
    return {"ratios": list(spec.ratios), "incidence": [list(r) for r in spec.incidence],
            "suffix_letter": spec.suffix_letter}


def _monotone_check(values) -> dict:
    bad = [i for i in range(1, len(values)) if values[i] < values[i - 1]]
    return {"pass": not bad, "witnesses": bad[:10]}


def _scenario_pressure_curve(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    p = cfg.params
    xs = np.linspace(p["x_min"], p["x_max"], p["points"])
    env = cfg.environment
    rows = []
    for x in xs:
        P = thermo.pressure(cfg.system, float(x))
        rows.append((float(x), P, None if env is None else thermo.expected_pressure(cfg.system, env, float(x))))
    summary = {"delta": thermo.delta(cfg.system)}
    if env is not None:
        summary["delta_lambda_env"] = thermo.delta_Lambda(cfg.system, env)
    decreasing = [-r[1] for r in rows]
    return ScenarioResult(["x", "pressure", "expected_pressure"], rows, summary,
                          {"pressure_decreasing": _monotone_check(decreasing)})


def _scenario_exponents(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    env = cfg.environment
    if env is None:
        det = thermo.delta(cfg.system)
        summary = {"delta": det}
    else:
        summary = thermo.exponent_report(cfg.system, env).to_summary()
        det = summary["delta"]
    residual = abs(thermo.pressure(cfg.system, det))
    rows = [(k, v) for k, v in sorted(summary.items()) if isinstance(v, float)]
    return ScenarioResult(["name", "value"], rows, summary,
                          {"pressure_zero": {"pass": residual <= 1e-9, "residual": residual}})


def _series_result(series: counting.CountingSeries) -> tuple[list, list]:
    if series.counts is not None:
        header = ["T", "count_decimal", "log_ratio"]
        rows = [(T, c, r) for T, c, r in zip(series.grid, series.counts, series.log_ratios)]
        values = series.counts
    else:
        header = ["T", "log_count", "log_ratio"]
        rows = [(T, c, r) for T, c, r in zip(series.grid, series.log_counts, series.log_ratios)]
        values = list(series.log_counts)
    return header, rows, values


def _scenario_count(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    det = thermo.delta(cfg.system)
    series = counting.counting_series(cfg.system, None, _grid(cfg.params), det, cfg.params["backend"])
    header, rows, values = _series_result(series)
    return ScenarioResult(header, rows, {"delta": det, "rel_error_bound": series.rel_error_bound},
                          {"monotone": _monotone_check(values)})


def _path_for(cfg: ExperimentConfig, T_max: float, seed: int | None) -> environment.EnvironmentPath:
    step = float(cfg.system.letter_weights.min()) - math.log(max(cfg.environment.values))
    n = int(math.floor(T_max / step)) + 2
    return environment.realize(cfg.environment, n, seed)


def _scenario_random_count(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    p = cfg.params
    grid = _grid(p)
    path = _path_for(cfg, float(grid.max()), p["seed"])
    dL = thermo.delta_Lambda(cfg.system, cfg.environment)
    series = counting.counting_series(cfg.system, path, grid, dL, p["backend"])
    header, rows, values = _series_result(series)
    summary = {"delta_lambda_env": dL, "path_length": path.length, "generator": environment.GENERATOR_ID,
               "rel_error_bound": series.rel_error_bound}
    return ScenarioResult(header, rows, summary, {"monotone": _monotone_check(values)})


def _scenario_ratio_scan(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    p = cfg.params
    det = thermo.delta(cfg.system)
    series = counting.counting_series(cfg.system, None, _grid(p), det, p["backend"])
    header, rows, _ = _series_result(series)
    checks = {}
    lo, hi = p["ratio_lower"], p["ratio_upper"]
    if lo is not None or hi is not None:
        lo_log = -math.inf if lo is None else math.log(lo)
        hi_log = math.inf if hi is None else math.log(hi)
        bad = [float(T) for T, r in zip(series.grid, series.log_ratios) if not lo_log <= r <= hi_log]
        checks["ratio_bracket"] = {"pass": not bad, "witnesses": bad[:10]}
    summary = {"delta": det, "min_log_ratio": float(series.log_ratios.min()),
               "max_log_ratio": float(series.log_ratios.max())}
    return ScenarioResult(header, rows, summary, checks)


def _map(fn: Callable, items: list, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _random_frequencies(seed: int, size: int) -> list[float]:
    rng = np.random.Generator(np.random.Philox(key=seed % (1 << 64)))
    raw = rng.dirichlet(np.ones(size))
    fracs = [Fraction(float(x)).limit_denominator(1000) for x in raw[:-1]]
    fracs.append(1 - sum(fracs))
    if fracs[-1] < 0:
        fracs = [Fraction(1, size)] * size
    return [float(f) for f in fracs]


def _sandwich_one(job) -> tuple:
    cfg, seed = job
    p = cfg.params
    freqs = _random_frequencies(seed, cfg.environment.size)
    grid = np.linspace(p["t_min"], p["t_max"], p["thresholds"])
    values = cfg.environment.values
    step = float(cfg.system.letter_weights.min()) - math.log(max(values))
    c = math.fsum(l * math.log(z) for l, z in zip(freqs, values))
    shifted = float(cfg.system.letter_weights.min()) - c
    d_abs = -math.fsum(math.log(z) for z in values)
    n = max(int(p["t_max"] / step), int((p["t_max"] + len(values) * d_abs) / shifted)) + 2
    path = environment.make_balanced(values, freqs, n)
    report = counting.sandwich_check(cfg.system, path, grid, upper_shift=p["fault_shift"])
    return seed, freqs, report


def _scenario_sandwich(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    results = _map(_sandwich_one, [(cfg, s) for s in cfg.params["seeds"]], jobs)
    rows, violations = [], []
    for seed, freqs, report in results:
        for T, lo, mid, hi in report.rows:
            rows.append((seed, T, lo, mid, hi))
        violations.extend({"seed": seed, **v} for v in report.violations)
    checked = sum(r.checked for _, _, r in results)
    return ScenarioResult(["seed", "T", "lower", "count", "upper"], rows, {"paths": len(results)},
                          {"sandwich": {"pass": not violations, "checked": checked, "witnesses": violations[:10]}})


def _reduction_one(job) -> tuple:
    cfg, seed = job
    n_max = cfg.params["n_max"]
    step = float(cfg.system.letter_weights.min()) - math.log(max(cfg.environment.values))
    T_top = n_max * float(cfg.system.letter_weights.max()) - n_max * math.log(min(cfg.environment.values))
    path = environment.realize(cfg.environment, int(T_top / step) + 2, seed)
    return seed, counting.reduction_identity_check(cfg.system, path, range(1, n_max + 1))


def _scenario_reduction(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    results = _map(_reduction_one, [(cfg, s) for s in cfg.params["seeds"]], jobs)
    rows = [(seed, n, r, d) for seed, rep in results for n, r, d in rep.rows]
    violations = [{"seed": seed, **v} for seed, rep in results for v in rep.violations]
    equalities = sum(rep.checked - len(rep.violations) for _, rep in results)
    return ScenarioResult(["seed", "n", "random", "deterministic"], rows, {"equalities": equalities},
                          {"reduction": {"pass": not violations, "checked": len(rows), "witnesses": violations[:10]}})


def _eqr9_one(job) -> tuple:
    cfg, seed = job
    p = cfg.params
    prob = cfg.environment.probabilities[0] if p["p"] is None else p["p"]
    path = environment.realize(cfg.environment, p["n"], seed)
    out = []
    for m in p["m_values"]:
        times = environment.crossing_times(path, 0, prob, m)
        report = counting.eqr9_bracket_check(cfg.system, path, prob, m, times)
        bounds = [counting.eqr9_bounds(cfg.system, path, prob, m, int(n)) for n in times]
        out.append((m, [int(t) for t in times], bounds, report))
    return seed, out


def _scenario_eqr9(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    results = _map(_eqr9_one, [(cfg, s) for s in cfg.params["seeds"]], jobs)
    rows, violations, checked = [], [], 0
    for seed, per_m in results:
        for m, times, bounds, report in per_m:
            checked += report.checked
            rows.extend((seed, m, n, lo, s, hi) for n, (lo, s, hi) in zip(times, bounds))
            violations.extend({"seed": seed, **v} for v in report.violations)
    return ScenarioResult(["seed", "m", "n", "lower", "sum", "upper"], rows, {"crossings": checked},
                          {"eqr9": {"pass": not violations, "checked": checked, "witnesses": violations[:10]}})


def _scenario_fluctuation(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    p = cfg.params
    report = counting.fluctuation_demo(cfg.system, cfg.environment, p["m_targets"], p["n_cap"], p["p"])
    rows = [(r.m, r.n, r.T, r.log_ratio, r.lower, r.upper, r.inside) for r in report.rows]
    checks = {"bracket": {"pass": report.passed, "checked": report.checked, "witnesses": report.violations}}
    if p["min_log_spread"] is not None:
        spread = report.details.get("log_spread", 0.0)
        checks["spread"] = {"pass": spread >= p["min_log_spread"], "log_spread": spread}
    return ScenarioResult(["m", "n", "T", "log_ratio", "lower", "upper", "inside"], rows,
                          dict(report.details), checks)


def _lil_one(job) -> tuple:
    cfg, seed = job
    p = cfg.params
    prob = cfg.environment.probabilities[p["letter"]]
    n = max(p["n_crossings"], p["n_lil"])
    path = environment.realize(cfg.environment, n, seed)
    short = environment.path_from_indices(path.values, path.indices[: p["n_crossings"]])
    crossings = int(environment.crossing_times(short, p["letter"], prob, 0).size)
    stats = environment.lil_statistics(path, p["letter"], prob, p["k_min"])
    return seed, crossings, stats.max, stats.min


def _scenario_lil(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    p = cfg.params
    results = _map(_lil_one, [(cfg, s) for s in p["seeds"]], jobs)
    recurrent = sum(1 for _, c, _, _ in results if c >= p["min_crossings"])
    enveloped = sum(1 for _, _, hi, _ in results if p["lil_lower"] < hi < p["lil_upper"])
    need = math.ceil(p["min_fraction"] * len(results))
    checks = {
        "recurrence": {"pass": recurrent >= need, "seeds_passing": recurrent, "required": need},
        "lil_envelope": {"pass": enveloped >= need, "seeds_passing": enveloped, "required": need},
    }
    return ScenarioResult(["seed", "crossings", "lil_max", "lil_min"], [list(r) for r in results],
                          {"generator": environment.GENERATOR_ID}, checks)


def _drift_one(job) -> tuple:
    cfg, seed = job
    env = cfg.environment
    path = environment.realize(env, cfg.params["n"], seed)
    ks, drift = environment.drift_sum(path, env)
    direct = path.cum_log[1:] - ks * env.mean_log_modulus
    gap = float(np.max(np.abs(direct - drift) / ks))
    n = path.length
    scale = math.sqrt(n * math.log(math.log(n))) if n > 15 else math.nan
    return seed, float(drift[-1]), float(np.max(np.abs(drift))), float(drift[-1]) / scale, gap


def _scenario_drift(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    results = _map(_drift_one, [(cfg, s) for s in cfg.params["seeds"]], jobs)
    gap = max(r[4] for r in results)
    return ScenarioResult(["seed", "drift_final", "drift_max_abs", "drift_lil_scaled"],
                          [r[:4] for r in results], {"generator": environment.GENERATOR_ID},
                          {"drift_consistency": {"pass": gap <= 1e-9, "max_gap_per_step": gap}})


def _scenario_poincare(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    p = cfg.params
    env = cfg.environment
    prefix = [env.values[i] for i in env.prefix]
    cycle = [env.values[i] for i in env.cycle]
    N = max(p["N"], p["abscissa_N"])
    path = environment.realize(env, N)
    rows, worst = [], 0.0
    for s in p["s_values"]:
        partial = poincare.eta_partial(cfg.system, path, s, p["N"]).value
        try:
            closed = poincare.eta_closed_periodic(cfg.system, prefix, cycle, s)
        except RandCountError:
            closed = complex(math.nan, math.nan)
        diff = abs(partial - closed)
        worst = max(worst, diff) if not math.isnan(diff) else math.inf
        rows.append((s.real, s.imag, partial.real, partial.imag, closed.real, closed.imag, diff))
    dper = thermo.delta_periodic(cfg.system, cycle, prefix)
    est = poincare.abscissa_estimate(cfg.system, path, p["abscissa_N"], p["abscissa_window"])
    summary = {"delta_periodic": dper, "abscissa_estimate": est}
    checks = {
        "closed_vs_partial": {"pass": worst <= 1e-10, "max_abs_diff": worst},
        "abscissa": {"pass": abs(est - dper) <= 1e-3, "abs_diff": abs(est - dper)},
    }
    header = ["s_re", "s_im", "partial_re", "partial_im", "closed_re", "closed_im", "abs_diff"]
    return ScenarioResult(header, rows, summary, checks)


def _scenario_theta(cfg: ExperimentConfig, jobs: int) -> ScenarioResult:
    p = cfg.params
    params = poincare.ThetaParams(len(p["cycle"]), tuple(p["cycle"]), cfg.system.ratios)
    scan = poincare.zero_scan(params, p["y_max"], p["grid_step"])
    zeros = [{"x": z.x, "y": z.y, "abs_theta": z.abs_theta, "abs_theta_prime": z.abs_theta_prime,
              "simple_flag": z.simple} for z in scan.zeros]
    checks = {"zeros_simple": {"pass": all(z.simple for z in scan.zeros), "count": len(zeros)}}
    if p["expected_zeros"] is not None:
        checks["zero_count"] = {"pass": len(zeros) == p["expected_zeros"], "count": len(zeros)}
    if p["off_axis_floor"] is not None:
        checks["off_axis_floor"] = {"pass": scan.min_off_axis > p["off_axis_floor"],
                                    "min_off_axis": scan.min_off_axis}
    summary = {"x0": scan.x0, "zeros": zeros, "min_off_axis": scan.min_off_axis}
    return ScenarioResult(["y", "abs_theta"], list(zip(scan.ys, scan.abs_theta)), summary, checks)


RUNNERS: dict[str, Callable[[ExperimentConfig, int], ScenarioResult]] = {
    "pressure-curve": _scenario_pressure_curve,
    "exponents": _scenario_exponents,
    "count": _scenario_count,
    "random-count": _scenario_random_count,
    "ratio-scan": _scenario_ratio_scan,
    "sandwich": _scenario_sandwich,
    "reduction": _scenario_reduction,
    "eqr9": _scenario_eqr9,
    "fluctuation-demo": _scenario_fluctuation,
    "lil": _scenario_lil,
    "drift": _scenario_drift,
    "poincare": _scenario_poincare,
    "theta-scan": _scenario_theta,
}


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None, jobs: int = 1) -> tuple[int, dict]:
    """Run one scenario, write ``<scenario>.csv`` and ``<scenario>.json``; return (exit status, summary)."""
    result = RUNNERS[cfg.scenario](cfg, jobs)
    target = out_dir or cfg.output_dir
    summary = {
        "schema_version": SCHEMA_VERSION,
        "scenario": cfg.scenario,
        "system": _system_summary(cfg.system),
        "params": {k: ([[c.real, c.imag] for c in v] if k == "s_values" else v) for k, v in cfg.params.items()},
        "results": result.summary,
        "checks": result.checks,
        "pass": result.passed,
    }
    if cfg.environment is not None:
        env = cfg.environment
        summary["environment"] = {"values": list(env.values), "probabilities": list(env.probabilities),
                                  "mode": env.mode, "seed": env.seed}
    write_atomic(os.path.join(target, f"{cfg.scenario}.csv"), to_csv(result.header, result.rows))
    write_atomic(os.path.join(target, f"{cfg.scenario}.json"), to_json(summary) + "\n")
    return (0 if result.passed else 1), summary


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="randcount", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write its CSV and JSON")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--jobs", type=int, default=1)
    val = sub.add_parser("validate", help="check a config without running it")
    val.add_argument("--config", required=True)
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    if args.command == "validate":
        print(f"ok: scenario {cfg.scenario}")
        return 0
    out_dir = args.out or os.environ.get(OUT_ENV_VAR) or cfg.output_dir
    try:
        status, summary = run_experiment(cfg, out_dir, max(1, args.jobs))
    except RandCountError as err:
        print(f"error in scenario {cfg.scenario}: [{err.code}] {err}", file=sys.stderr)
        return 2
    print(f"{cfg.scenario}: {'pass' if status == 0 else 'FAIL'} -> {out_dir}")
    return status


if __name__ == "__main__":
    sys.exit(main())
