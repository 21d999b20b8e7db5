"""Experiment configuration, seeding and the sweep / curve / compare runners.

Configuration is an INI file (see ``configs/default.ini`` for the schema).
Every runner returns rows as dicts; ``write_rows`` serializes them with a
fixed column order.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .discriminant import gains_of
from .errors import AirCompError, ConfigurationError
from .model import PowerBudget, SystemInstance, atomic_write_text, fmt, received_moments
from .optimizer import SCHEMES, ScaConfig, solve_scheme
from .simulator import (
    AccuracyReport,
    NetworkConfig,
    generate_close_pair_statistics,
    generate_synthetic_statistics,
    map_classify_batch,
    sample_channels,
    simulate_trials,
    train_softmax_at,
)
from .subproblem import SubproblemSolverConfig

log = logging.getLogger(__name__)

AXES = ("devices", "power_dbm")


@dataclass(frozen=True)
class InstanceConfig:
    num_classes: int = 4
    num_features: int = 12
    num_devices: int = 3
    class_separation: float = 0.5
    sensing_noise: float = 0.4
    power_dbm: float = 12.0
    total_power_factor: float = 0.6  # total cap = factor * M * per-slot cap
    close_pair_factor: float = 1.0  # < 1 pulls classes 0 and 1 together

    def __post_init__(self):
        if self.num_classes < 2 or self.num_features < 1 or self.num_devices < 1:
            raise ConfigurationError("need classes >= 2, features >= 1, devices >= 1")
        if self.class_separation < 0 or self.sensing_noise < 0:
            raise ConfigurationError("class_separation and sensing_noise must be non-negative")
        if not self.total_power_factor > 0:
            raise ConfigurationError("total_power_factor must be positive")
        if not 0 < self.close_pair_factor <= 1:
            raise ConfigurationError("close_pair_factor must be in (0, 1]")


@dataclass(frozen=True)
class SoftmaxConfig:
    enabled: bool = True
    samples_per_class: int = 400
    epochs: int = 300
    learning_rate: float = 0.5


@dataclass(frozen=True)
class ExperimentConfig:
    instance: InstanceConfig = field(default_factory=InstanceConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    sca: ScaConfig = field(default_factory=ScaConfig)
    softmax: SoftmaxConfig = field(default_factory=SoftmaxConfig)
    schemes: tuple = SCHEMES
    trials: int = 1600
    seeds: int = 5
    master_seed: int = 0
    workers: int = 1
    devices_grid: tuple = (2, 3, 4, 5, 6)
    power_grid: tuple = (4.0, 6.0, 8.0, 10.0, 12.0, 14.0)
    curve_grid: tuple = tuple(float(p) for p in range(-20, 17, 4))
    curve_seeds: int = 1

    def __post_init__(self):
        if not self.schemes or any(s not in SCHEMES for s in self.schemes):
            raise ConfigurationError(f"schemes must be a non-empty subset of {', '.join(SCHEMES)}")
        if self.trials < 1 or self.seeds < 1 or self.curve_seeds < 1 or self.workers < 1:
            raise ConfigurationError("trials, seeds, curve_seeds and workers must be positive")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigurationError("master_seed must be an unsigned 64-bit integer")
        for name in ("devices_grid", "power_grid", "curve_grid"):
            g = getattr(self, name)
            if len(g) == 0 or any(b <= a for a, b in zip(g, g[1:])):
                raise ConfigurationError(f"{name} must be non-empty and strictly increasing")
        if min(self.devices_grid) < 1:
            raise ConfigurationError("devices_grid values must be positive")


# --- seeds ----------------------------------------------------------------

def derive_seed(master_seed, *key) -> int:
    """64-bit seed from the master seed and a key tuple (stable across runs and platforms)."""
    text = "|".join([str(int(master_seed))] + [repr(k) for k in key])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def _num(v):
    # canonical key form so 12 and 12.0 hash the same
    return float(v)


# --- INI parsing ----------------------------------------------------------

# section -> key -> (target, converter)
_INT, _FLOAT, _STR, _BOOL = "int", "float", "str", "bool"
SCHEMA = {
    "experiment": {
        "master_seed": _INT, "trials": _INT, "seeds": _INT, "workers": _INT,
        "schemes": "schemes",
    },
    "instance": {
        "classes": _INT, "features": _INT, "devices": _INT, "class_separation": _FLOAT,
        "sensing_noise": _FLOAT, "power_dbm": _FLOAT, "total_power_factor": _FLOAT,
        "close_pair_factor": _FLOAT,
    },
    "network": {
        "mode": _STR, "channel_noise_variance": _FLOAT, "cell_radius": _FLOAT,
        "pathloss_exponent": _FLOAT, "reference_distance": _FLOAT,
    },
    "sca": {"step_size": _FLOAT, "max_iterations": _INT, "objective_tolerance": _FLOAT, "slack_floor": _FLOAT},
    "sca.solver": {
        "barrier_tolerance": _FLOAT, "kkt_tolerance": _FLOAT, "max_newton_steps": _INT,
        "barrier_reduction": _FLOAT,
    },
    "softmax": {"enabled": _BOOL, "samples_per_class": _INT, "epochs": _INT, "learning_rate": _FLOAT},
    "sweep.devices": {"grid": "int_list"},
    "sweep.power": {"grid": "float_list"},
    "curve": {"grid": "float_list", "seeds": _INT},
}

_INSTANCE_KEYS = {"classes": "num_classes", "features": "num_features", "devices": "num_devices"}


def _locate(text):
    """(section, key) -> 1-based line number, and section -> line number."""
    keys, sections = {}, {}
    section = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            sections.setdefault(section, no)
            continue
        m = re.match(r"^([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section is not None:
            keys.setdefault((section, m.group(1).strip().lower()), no)
    return keys, sections


def _convert(kind, raw):
    raw = raw.strip()
    if kind == _INT:
        return int(raw, 0)
    if kind == _FLOAT:
        v = float(raw)
        if not np.isfinite(v):
            raise ValueError("not finite")
        return v
    if kind == _STR:
        return raw
    if kind == _BOOL:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError("expected a boolean")
    if kind == "schemes":
        return tuple(s.strip() for s in raw.split(",") if s.strip())
    if kind == "int_list":
        return tuple(int(s, 0) for s in raw.split(",") if s.strip())
    if kind == "float_list":
        return tuple(float(s) for s in raw.split(",") if s.strip())
    raise AssertionError(kind)


def parse_config_text(text, source="<config>") -> ExperimentConfig:
    """Parse INI text into an ExperimentConfig; errors name the offending line."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source)
    except configparser.DuplicateOptionError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}: duplicate key '{exc.option}' in [{exc.section}]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigurationError(f"{source}:{exc.lineno}: key outside of any [section]") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigurationError(f"{source}:{lineno}: cannot parse {line.strip()!r}") from None
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    keys, sections = _locate(text)
    values = {}
    for sec in parser.sections():
        if sec not in SCHEMA:
            raise ConfigurationError(f"{source}:{sections.get(sec, '?')}: unknown section [{sec}]")
        for key, raw in parser.items(sec):
            line = keys.get((sec, key), sections.get(sec, "?"))
            if key not in SCHEMA[sec]:
                raise ConfigurationError(f"{source}:{line}: unknown key '{key}' in [{sec}]")
            try:
                values[(sec, key)] = (_convert(SCHEMA[sec][key], raw), line)
            except ValueError as exc:
                raise ConfigurationError(f"{source}:{line}: [{sec}] {key} = {raw!r}: {exc}") from None

    def group(sec):
        return {k: v[0] for (s, k), v in values.items() if s == sec}

    def build(sec, factory, **kw):
        try:
            return factory(**kw)
        except (ConfigurationError, TypeError) as exc:
            line = min((v[1] for (s, _), v in values.items() if s == sec), default=sections.get(sec, "?"))
            raise ConfigurationError(f"{source}:{line}: [{sec}] {exc}") from None

    inst = build("instance", InstanceConfig, **{_INSTANCE_KEYS.get(k, k): v for k, v in group("instance").items()})
    net = build("network", NetworkConfig, num_devices=inst.num_devices, **group("network"))
    solver = build("sca.solver", SubproblemSolverConfig, **group("sca.solver"))
    sca = build("sca", ScaConfig, solver=solver, **group("sca"))
    softmax = build("softmax", SoftmaxConfig, **group("softmax"))
    exp = group("experiment")
    kw = dict(instance=inst, network=net, sca=sca, softmax=softmax, **exp)
    if ("sweep.devices", "grid") in values:
        kw["devices_grid"] = values[("sweep.devices", "grid")][0]
    if ("sweep.power", "grid") in values:
        kw["power_grid"] = values[("sweep.power", "grid")][0]
    if ("curve", "grid") in values:
        kw["curve_grid"] = values[("curve", "grid")][0]
    if ("curve", "seeds") in values:
        kw["curve_seeds"] = values[("curve", "seeds")][0]
    return build("experiment", ExperimentConfig, **kw)


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"{path}: cannot read config: {exc}") from None
    return parse_config_text(text, str(path))


def with_overrides(config: ExperimentConfig, seed=None, trials=None, scheme=None) -> ExperimentConfig:
    kw = {}
    if seed is not None:
        kw["master_seed"] = seed
    if trials is not None:
        kw["trials"] = trials
    if scheme is not None:
        kw["schemes"] = (scheme,)
    return replace(config, **kw) if kw else config


# --- instances and single points -----------------------------------------

def build_instance(config: ExperimentConfig, seed_index, num_devices=None, power_dbm=None) -> SystemInstance:
    """Instance for one seed index; the axis value does not enter the seeds,
    so neighbouring sweep points share class means and device channels."""
    ic = config.instance
    K = ic.num_devices if num_devices is None else int(num_devices)
    P = ic.power_dbm if power_dbm is None else float(power_dbm)
    stat_seed = derive_seed(config.master_seed, "instance", seed_index)
    if ic.close_pair_factor < 1.0:
        stats = generate_close_pair_statistics(
            ic.num_classes, ic.num_features, K, ic.class_separation, ic.close_pair_factor,
            ic.sensing_noise, rng_seed=stat_seed,
        )
    else:
        stats = generate_synthetic_statistics(
            ic.num_classes, ic.num_features, K, ic.class_separation, ic.sensing_noise, rng_seed=stat_seed
        )
    net = replace(config.network, num_devices=K, rng_seed=derive_seed(config.master_seed, "channel", seed_index))
    channel = sample_channels(net)
    budget = PowerBudget.from_dbm(P, K, ic.num_features, ic.total_power_factor)
    return SystemInstance(stats, channel, budget)


def row_columns(num_classes):
    return (
        ["scheme", "K", "P_dbm", "seed", "trials", "min_dg", "avg_dg", "acc_map", "acc_softmax",
         "bal_acc", "recall_spread"]
        + [f"recall_{l}" for l in range(num_classes)]
        + ["axis", "master_seed", "L", "M", "class_separation", "sensing_noise", "total_power_factor",
           "close_pair_factor", "mode", "channel_noise_variance", "step_size", "termination", "status"]
    )


def evaluate_point(config: ExperimentConfig, axis, seed_index, scheme, num_devices=None, power_dbm=None) -> dict:
    """Solve one scheme at one point and evaluate MAP (and softmax) accuracy.

    Failures are caught and reported in the row's ``status``.
    """
    ic = config.instance
    K = ic.num_devices if num_devices is None else int(num_devices)
    P = ic.power_dbm if power_dbm is None else float(power_dbm)
    value = K if axis == "devices" else P
    row = {
        "scheme": scheme, "K": K, "P_dbm": P, "seed": seed_index, "trials": config.trials,
        "axis": axis, "master_seed": config.master_seed, "L": ic.num_classes, "M": ic.num_features,
        "class_separation": ic.class_separation, "sensing_noise": ic.sensing_noise,
        "total_power_factor": ic.total_power_factor, "close_pair_factor": ic.close_pair_factor,
        "mode": config.network.mode, "channel_noise_variance": config.network.channel_noise_variance,
        "step_size": config.sca.step_size,
    }
    nan = float("nan")
    try:
        instance = build_instance(config, seed_index, K, P)
        trace = solve_scheme(instance, scheme, config.sca)
        trial_seed = derive_seed(config.master_seed, "trials", axis, _num(value), seed_index, scheme)
        true, X = simulate_trials(instance, trace.b, config.trials, trial_seed)
        rep = AccuracyReport.from_predictions(
            true, map_classify_batch(received_moments(instance, trace.b), X), ic.num_classes
        )
        acc_soft = nan
        if config.softmax.enabled:
            sm = config.softmax
            clf = train_softmax_at(instance, trace.b, trial_seed, sm.samples_per_class, sm.epochs, sm.learning_rate)
            acc_soft = float(np.mean(clf.predict(X) == true))
        table = gains_of(instance, trace.b)
        row.update(
            min_dg=table.min_gain, avg_dg=table.avg_gain, acc_map=rep.overall_accuracy, acc_softmax=acc_soft,
            bal_acc=rep.balanced_accuracy, recall_spread=rep.recall_spread, termination=trace.termination,
            status="ok" if trace.termination != "solver_failure" else "solver_failure",
        )
        for l, r in enumerate(rep.per_class_recall):
            row[f"recall_{l}"] = float(r)
    except AirCompError as exc:
        log.warning("point %s=%s seed %d scheme %s failed: %s", axis, value, seed_index, scheme, exc)
        row.update(min_dg=nan, avg_dg=nan, acc_map=nan, acc_softmax=nan, bal_acc=nan, recall_spread=nan,
                   termination="", status=f"failed:{type(exc).__name__}")
        for l in range(ic.num_classes):
            row[f"recall_{l}"] = nan
    return row


def _point_job(args):
    return evaluate_point(*args)


def _run_points(config, jobs):
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            rows = list(pool.map(_point_job, jobs))
    else:
        rows = [_point_job(j) for j in jobs]
    order = {s: i for i, s in enumerate(SCHEMES)}
    # deterministic order independent of completion order
    rows.sort(key=lambda r: (r["K"], r["P_dbm"], r["seed"], order[r["scheme"]]))
    return rows


def run_sweep(config: ExperimentConfig, axis) -> list[dict]:
    """One row per scheme x grid value x seed index."""
    if axis == "devices":
        jobs = [(config, axis, s, sc, K, None) for K in config.devices_grid
                for s in range(config.seeds) for sc in config.schemes]
    elif axis == "power_dbm":
        jobs = [(config, axis, s, sc, None, P) for P in config.power_grid
                for s in range(config.seeds) for sc in config.schemes]
    else:
        raise ConfigurationError(f"sweep axis must be one of {AXES}, got {axis!r}")
    return _run_points(config, jobs)


def run_dg_accuracy_curve(config: ExperimentConfig, scheme="maxmin") -> list[dict]:
    """Vary the transmit power over ``curve_grid`` and record (min_gain, accuracy)."""
    jobs = [(config, "power_dbm", s, scheme, None, P) for P in config.curve_grid for s in range(config.curve_seeds)]
    return _run_points(config, jobs)


def run_compare(config: ExperimentConfig) -> tuple[list[dict], list[dict]]:
    """All configured schemes at the base point over ``seeds`` seed indices,
    plus a seed-averaged summary per scheme."""
    jobs = [(config, "power_dbm", s, sc, None, None) for s in range(config.seeds) for sc in config.schemes]
    rows = _run_points(config, jobs)
    return rows, summarize(rows)


def summarize(rows) -> list[dict]:
    out = []
    for scheme in SCHEMES:
        sel = [r for r in rows if r["scheme"] == scheme and r["status"] == "ok"]
        if not any(r["scheme"] == scheme for r in rows):
            continue
        rec = {"scheme": scheme, "points": len(sel)}
        for key in ("min_dg", "avg_dg", "acc_map", "acc_softmax", "bal_acc", "recall_spread"):
            rec[key] = float(np.mean([r[key] for r in sel])) if sel else float("nan")
        out.append(rec)
    return out


def seed_average(rows, axis_key, scheme, metric="acc_map"):
    """(axis values, seed-averaged metric) over rows with status ok."""
    vals = sorted({r[axis_key] for r in rows if r["scheme"] == scheme})
    avg = [float(np.mean([r[metric] for r in rows if r["scheme"] == scheme and r[axis_key] == v
                          and r["status"] == "ok"])) for v in vals]
    return np.array(vals), np.array(avg)


# --- CSV ------------------------------------------------------------------

def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return v


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c, "")) for c in columns])
    return buf.getvalue()


def write_rows(path, rows, columns):
    atomic_write_text(path, rows_to_csv(rows, columns))


def read_rows(path) -> list[dict]:
    """Read a results CSV back; numeric cells become floats."""
    with open(path, encoding="utf-8", newline="") as f:
        out = []
        for r in csv.DictReader(f):
            rec = {}
            for k, v in r.items():
                try:
                    rec[k] = float(v)
                except ValueError:
                    rec[k] = v
            out.append(rec)
    return out
