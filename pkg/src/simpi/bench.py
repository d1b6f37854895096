"""Experiment harness: repeated train/test runs of every interval method, EP/IW reports."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .conformal import split_conformal, split_cqr
from .data import IntervalModel, coverage_and_width, split_disjoint, split_replicates
from .forest import QRFConfig, QRFQuantileRegressor, fit_qrf_dataset, qrf_interval_model
from .kriging import fit_sk, sk_interval_model
from .neural import MLPRegressor, TrainConfig, default_lambda_grid, train_candidates
from .simulators import generate_design
from .validation import SelectionConfig, coverage_matrix, select

log = logging.getLogger(__name__)

METHODS = ("SK", "SCP", "QRF", "SCQR", "NNVA", "NNGN", "NNGU")
NN_MODES = {"NNVA": "naive", "NNGN": "normalized", "NNGU": "unnormalized"}
DOMAINS = {"mm1": (0.3, 0.9), "network": (200.0, 600.0)}

PRESETS = {
    "mm1-design1": ("mm1", np.round(np.arange(0.3, 0.9 + 1e-9, 0.1), 10).tolist(), 50),
    "mm1-design2": ("mm1", np.round(np.arange(0.3, 0.9 + 1e-9, 0.02), 10).tolist(), 5),
    "net-design1": ("network", np.arange(200.0, 600.0 + 1e-9, 40.0).tolist(), 50),
    "net-design2": ("network", np.arange(200.0, 600.0 + 1e-9, 10.0).tolist(), 5),
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    simulator: str = "mm1"
    preset: str | None = None
    design_points: list = field(default_factory=list)
    reps: int = 0
    test_points: int = 50
    test_reps: int = 100
    methods: list = field(default_factory=lambda: list(METHODS))
    repetitions: int = 50
    alpha: float = 0.05
    beta: float = 0.05
    train_fraction: float = 0.6
    val_split: str = "replicates"
    seed: int = 0
    workers: int = 1
    sk_degree: int = 1
    sk_restarts: int = 10
    qrf_trees: int = 100
    qrf_min_leaf: int = 5
    nn_epochs: int = 2000
    nn_batch: int = 32
    nn_lr: float = 0.01
    nn_c0: float = 50.0
    nn_lambdas: list = field(default_factory=default_lambda_grid)
    scp_epochs: int = 1000
    mc: int = 100_000
    output: str | None = None

    def __post_init__(self):
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
            sim, pts, reps = PRESETS[self.preset]
            self.simulator = sim
            self.design_points = list(pts)
            self.reps = reps
        if self.simulator not in DOMAINS:
            raise ConfigError(f"unknown simulator {self.simulator!r}")
        if not self.design_points or self.reps < 1:
            raise ConfigError("need design points and reps >= 1 (or a preset)")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not 0 < self.alpha < 1 or not 0 < self.beta < 0.5:
            raise ConfigError("alpha must lie in (0, 1) and beta in (0, 0.5)")
        if self.val_split not in ("points", "replicates"):
            raise ConfigError("val_split must be 'points' or 'replicates'")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MethodResult:
    method: str
    crs: list  # per repetition, None where the method failed
    widths: list
    failures: list = field(default_factory=list)  # (repetition, message)
    runtime_s: float = 0.0

    def ep(self, alpha: float):
        if all(c is None for c in self.crs):
            return None
        return sum(1 for c in self.crs if c is not None and c >= 1 - alpha) / len(self.crs)

    def iw(self):
        w = [v for v in self.widths if v is not None]
        return float(np.mean(w)) if w else None


@dataclass
class ExperimentReport:
    config: dict
    results: list  # MethodResult, in config order

    @property
    def alpha(self):
        return self.config["alpha"]

    def rows(self):
        for r in self.results:
            yield r.method, r.ep(self.alpha), r.iw()

    def best(self):
        """Smallest IW among EP >= 0.95; otherwise the highest EP."""
        rows = [(m, ep, iw) for m, ep, iw in self.rows() if ep is not None]
        if not rows:
            return None
        ok = [r for r in rows if r[1] >= 0.95 and r[2] is not None]
        if ok:
            return min(ok, key=lambda r: r[2])[0]
        return max(rows, key=lambda r: r[1])[0]

    def to_dict(self):
        return {"config": self.config, "results": [asdict(r) for r in self.results]}

    @classmethod
    def from_dict(cls, d):
        res = []
        for r in d["results"]:
            r = dict(r)
            r["failures"] = [tuple(f) for f in r.get("failures", [])]
            res.append(MethodResult(**r))
        return cls(d["config"], res)

    def __eq__(self, other):
        return isinstance(other, ExperimentReport) and self.to_dict() == other.to_dict()


def _rep_seeds(master: int, rep: int):
    return np.random.SeedSequence([master, rep]).spawn(10)


def make_test_data(cfg: ExperimentConfig, ss: np.random.SeedSequence):
    lo, hi = DOMAINS[cfg.simulator]
    a, b = ss.spawn(2)
    pts = np.random.default_rng(a).uniform(lo, hi, cfg.test_points)
    return generate_design(cfg.simulator, pts, cfg.test_reps, b)


def _nn_config(cfg, seed):
    return TrainConfig(c0=cfg.nn_c0, epochs=cfg.nn_epochs, batch_size=cfg.nn_batch, lr=cfg.nn_lr, seed=seed)


def _fit_methods(cfg: ExperimentConfig, train, seeds):
    """Yield (method, IntervalModel or Exception) for the requested methods."""
    int_seed = [int(s.generate_state(1)[0]) for s in seeds]
    builders = {
        "SK": lambda: sk_interval_model(
            fit_sk(train, cfg.sk_degree, cfg.sk_restarts, int_seed[0]), cfg.alpha),
        "SCP": lambda: split_conformal(
            train, MLPRegressor(TrainConfig(epochs=cfg.scp_epochs, batch_size=cfg.nn_batch, lr=cfg.nn_lr)),
            cfg.alpha, int_seed[1]),
        "QRF": lambda: qrf_interval_model(
            fit_qrf_dataset(train, QRFConfig(cfg.qrf_trees, cfg.qrf_min_leaf, seed=int_seed[2])), cfg.alpha),
        "SCQR": lambda: split_cqr(
            train, QRFQuantileRegressor(QRFConfig(cfg.qrf_trees, cfg.qrf_min_leaf)), cfg.alpha, int_seed[3]),
    }
    for m in cfg.methods:
        if m in builders:
            t = time.perf_counter()
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    yield m, builders[m](), time.perf_counter() - t
            except Exception as e:  # recorded per repetition, surfaced in the report
                yield m, e, time.perf_counter() - t
    nn = [m for m in cfg.methods if m in NN_MODES]
    if not nn:
        return
    t = time.perf_counter()
    try:
        if cfg.val_split == "points":
            fit_part, val_part = split_disjoint(train, cfg.train_fraction, int_seed[4])
        else:
            fit_part, val_part = split_replicates(train, cfg.train_fraction)
        cands = train_candidates(fit_part, cfg.nn_lambdas, _nn_config(cfg, int_seed[5]))
        stats = coverage_matrix(cands.models, val_part)
        scfg = SelectionConfig((1 - cfg.alpha,), cfg.beta, cfg.mc, int_seed[6])
        shared = time.perf_counter() - t
    except Exception as e:
        for m in nn:
            yield m, e, (time.perf_counter() - t) / len(nn)
        return
    for m in nn:
        t = time.perf_counter()
        res = select(cands.models, val_part, scfg, NN_MODES[m], stats=stats)
        choice = res.chosen()
        if not choice.feasible:
            yield m, RuntimeError(f"no candidate feasible at level {choice.level}"), shared / len(nn)
            continue
        model = cands.models[choice.index]
        labelled = IntervalModel(model.predict, {**model.label, "method": m, "margin": choice.margin})
        yield m, labelled, shared / len(nn) + time.perf_counter() - t


def run_repetition(cfg: ExperimentConfig, rep: int) -> dict:
    """One repetition: fresh training and test data, every method fitted and scored."""
    seeds = _rep_seeds(cfg.seed, rep)
    train = generate_design(cfg.simulator, cfg.design_points, cfg.reps, seeds[0])
    test = make_test_data(cfg, seeds[1])
    out = {}
    for m, model, dt in _fit_methods(cfg, train, seeds[2:]):
        if isinstance(model, Exception):
            out[m] = (None, None, f"{type(model).__name__}: {model}", dt)
        else:
            cr, iw = coverage_and_width(model, test)
            out[m] = (cr, iw, None, dt)
    return out


def _run_rep_args(args):
    return run_repetition(*args)


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    jobs = [(cfg, rep) for rep in range(cfg.repetitions)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            outs = list(ex.map(_run_rep_args, jobs))
    else:
        outs = [run_repetition(*j) for j in jobs]
    results = []
    for m in cfg.methods:
        res = MethodResult(m, [], [])
        for rep, o in enumerate(outs):
            cr, iw, err, dt = o[m]
            res.crs.append(cr)
            res.widths.append(iw)
            res.runtime_s += dt
            if err is not None:
                res.failures.append((rep, err))
                log.warning("%s failed in repetition %d: %s", m, rep, err)
        results.append(res)
    return ExperimentReport(cfg.to_dict(), results)


def _fmt(v):
    if v is None:
        return "n/a"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.6g}" if isinstance(v, float) else str(v)


CSV_COLUMNS = ("method", "EP", "IW", "N", "alpha", "beta", "runtime_s")


def report_csv(report: ExperimentReport, runtime: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = CSV_COLUMNS if runtime else CSV_COLUMNS[:-1]
    w.writerow(cols)
    c = report.config
    for r in report.results:
        row = [r.method, _fmt(r.ep(c["alpha"])), _fmt(r.iw()), c["repetitions"], _fmt(c["alpha"]), _fmt(c["beta"])]
        if runtime:
            row.append(f"{r.runtime_s:.3f}")
        w.writerow(row)
    return buf.getvalue()


def report_markdown(report: ExperimentReport) -> str:
    c = report.config
    best = report.best()
    head = "| Data | " + " | ".join(f"{r.method} EP | {r.method} IW" for r in report.results) + " |"
    sep = "|---|" + "---|---|" * len(report.results)
    cells = []
    for m, ep, iw in report.rows():
        a, b = _fmt(None if ep is None else round(ep, 2)), _fmt(None if iw is None else float(f"{iw:.3g}"))
        if m == best:
            a, b = f"**{a}**", f"**{b}**"
        cells += [a, b]
    name = c.get("preset") or c["simulator"]
    return "\n".join([head, sep, f"| {name} | " + " | ".join(cells) + " |"]) + "\n"


def report_json(report: ExperimentReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=1, allow_nan=True) + "\n"


def emit_report(report: ExperimentReport, path, fmt: str = "csv") -> None:
    """Write ``report`` as csv, json or markdown."""
    render = {"csv": report_csv, "json": report_json, "markdown": report_markdown, "md": report_markdown}
    if fmt not in render:
        raise ValueError(f"unknown format {fmt!r}")
    text = render[fmt](report)
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise OSError(f"cannot write report to {path}: {e}") from e


def read_report(path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text()))
