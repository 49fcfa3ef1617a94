"""Batch command-line interface: strict JSON configs, reproducible seeding,
and on-disk artifacts (report JSON, raw CSV/JSONL, manifest).

Determinism contract: the report for a given (config, seed) is byte
identical across reruns.  Wall-clock time and library versions live only in
the manifest, which is the one artifact allowed to vary between runs.

Exit codes: 0 success, 2 config parse/validation failure, 3 event budget
exceeded, 4 internal error.  Failures emit a machine-readable error JSON on
stdout.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import sys
import time
from typing import Any, Optional

import click
import numpy as np
import pydantic
import scipy
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .engine import SimulationConfig, simulate, singletons_per_site
from .errors import BudgetExceeded, CoalescentError
from .experiments import (
    block_count_limit_experiment,
    block_decay_shape,
    class_coupling_check,
    estimate_Tnk,
    pairwise_torus_experiment,
    partition_structure_experiment,
    stay_infinite_trend,
    torus_kappa,
)
from .geometry import (
    WalkSpec,
    build_torus,
    complete_graph,
    generic_graph,
    green_function,
    simple_walk,
    single_site,
)
from .measure import LambdaMeasure, QuadratureConfig
from .rates import RateKernel, cdi_classify

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BUDGET = 3
EXIT_INTERNAL = 4


# ----------------------------------------------------------------------
# config schema (strict: unknown fields rejected)
# ----------------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PieceConfig(_Strict):
    interval: tuple[float, float]
    tag: str
    params: dict[str, float] = Field(default_factory=dict)


class MeasureConfig(_Strict):
    atoms: list[tuple[float, float]] = Field(default_factory=list)
    pieces: list[PieceConfig] = Field(default_factory=list)

    def build(self) -> LambdaMeasure:
        m = LambdaMeasure.from_dict(
            {"atoms": [list(a) for a in self.atoms],
             "pieces": [p.model_dump() for p in self.pieces]})
        if m.total_mass <= 0.0:
            raise _ValidationFailure(
                ["measure: total mass on [0,1] must be positive"])
        return m


class WalkConfig(_Strict):
    dimension: int = 3
    offsets: Optional[list[list[int]]] = None
    probabilities: Optional[list[float]] = None

    def build(self) -> WalkSpec:
        if self.offsets is None:
            return simple_walk(self.dimension)
        return WalkSpec(self.dimension,
                        tuple(tuple(o) for o in self.offsets),
                        tuple(self.probabilities or ()))


class GeographyConfig(_Strict):
    topology: str  # torus | complete | single | graph
    N: Optional[int] = None
    walk: WalkConfig = Field(default_factory=WalkConfig)
    sites: Optional[int] = None
    kernel: Optional[list[list[float]]] = None
    site_budget: int = 1_000_000

    def build(self):
        if self.topology == "torus":
            if self.N is None:
                raise _ValidationFailure(["geography: torus requires N"])
            return build_torus(self.N, self.walk.build(), self.site_budget)
        if self.topology == "complete":
            if self.sites is None:
                raise _ValidationFailure(["geography: complete requires sites"])
            return complete_graph(self.sites)
        if self.topology == "single":
            return single_site()
        if self.topology == "graph":
            if self.kernel is None:
                raise _ValidationFailure(["geography: graph requires kernel"])
            return generic_graph(np.asarray(self.kernel, dtype=float))
        raise _ValidationFailure([f"geography: unknown topology {self.topology!r}"])


class KernelConfig(_Strict):
    b_max: int = 256
    abs_tol: float = 1e-14
    rel_tol: float = 1e-12

    def build(self, measure: LambdaMeasure) -> RateKernel:
        return RateKernel(measure, QuadratureConfig(self.abs_tol, self.rel_tol),
                          b_max=self.b_max)


class ExperimentConfig(_Strict):
    name: str
    params: dict[str, Any] = Field(default_factory=dict)


class RunConfig(_Strict):
    version: str = "1"
    seed: int
    measure: Optional[MeasureConfig] = None
    geography: Optional[GeographyConfig] = None
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    experiment: Optional[ExperimentConfig] = None
    replicas: Optional[int] = None
    out_dir: Optional[str] = None
    event_budget: Optional[int] = None
    # simulate-specific
    n_per_site: Optional[int] = None
    horizon: Optional[float] = None
    stop_blocks_at_most: Optional[int] = None
    killing: bool = False
    probe_times: list[float] = Field(default_factory=list)
    # rates-specific
    b_max_table: Optional[int] = None
    # green-specific
    dimension: Optional[int] = None
    method: Optional[str] = None

    @pydantic.model_validator(mode="after")
    def _budgets_positive(self):
        if self.replicas is not None and self.replicas <= 0:
            raise ValueError("replicas must be positive")
        if self.event_budget is not None and self.event_budget <= 0:
            raise ValueError("event_budget must be positive")
        return self


class _ValidationFailure(Exception):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def parse_config(path: str) -> RunConfig:
    """Read and strictly validate a JSON run config."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise _ConfigError("PARSE_ERROR", f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise _ConfigError("PARSE_ERROR",
                           f"{path}:{e.lineno}:{e.colno}: {e.msg}")
    return validate_config(raw)


def validate_config(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except pydantic.ValidationError as e:
        msgs = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}"
                for err in e.errors()]
        raise _ConfigError("VALIDATION_ERROR", "; ".join(msgs),
                           violations=msgs)


class _ConfigError(Exception):
    def __init__(self, code, message, violations=()):
        self.code = code
        self.message = message
        self.violations = list(violations)
        super().__init__(message)


# ----------------------------------------------------------------------
# artifact persistence
# ----------------------------------------------------------------------

def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


class ArtifactWriter:
    """Writes report/raw/manifest into out_dir; every file is listed in the
    manifest.  Reports carry no timestamps so reruns are byte identical."""

    def __init__(self, out_dir: Optional[str], config_raw: dict, seed: int):
        self.out_dir = out_dir
        self.config_raw = config_raw
        self.seed = seed
        self.files: list[str] = []
        self.t0 = time.monotonic()
        if out_dir:
            import os
            os.makedirs(out_dir, exist_ok=True)

    @property
    def config_hash(self) -> str:
        # where the artifacts land is not part of the run identity
        semantic = {k: v for k, v in self.config_raw.items() if k != "out_dir"}
        return _sha256(_canonical_json(semantic))

    def write_text(self, name: str, text: str) -> None:
        if not self.out_dir:
            return
        import os
        with open(os.path.join(self.out_dir, name), "w") as fh:
            fh.write(text)
        self.files.append(name)

    def write_report(self, report: dict) -> str:
        text = _canonical_json(report)
        self.write_text("report.json", text)
        return text

    def finish(self) -> None:
        if not self.out_dir:
            return
        manifest = {
            "config": self.config_raw,
            "config_sha256": self.config_hash,
            "seed": self.seed,
            "versions": {
                "artifact": __version__,
                "python": sys.version.split()[0],
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "wall_time_seconds": time.monotonic() - self.t0,
            "files": sorted(self.files) + ["manifest.json"],
        }
        import os
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as fh:
            fh.write(_canonical_json(manifest))


def _fail(code: str, message: str, exit_code: int, **context):
    payload = {"error": code, "message": message}
    if context:
        payload["context"] = {k: v for k, v in context.items()}
    click.echo(json.dumps(payload, sort_keys=True, default=str))
    sys.exit(exit_code)


def _guarded(fn):
    """Map module errors onto the exit-code contract."""
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except _ConfigError as e:
            _fail(e.code, e.message, EXIT_VALIDATION, violations=e.violations)
        except _ValidationFailure as e:
            _fail("VALIDATION_ERROR", str(e), EXIT_VALIDATION,
                  violations=e.violations)
        except BudgetExceeded as e:
            _fail("BUDGET_EXCEEDED", str(e), EXIT_BUDGET, **e.context)
        except ValueError as e:
            _fail("VALIDATION_ERROR", str(e), EXIT_VALIDATION)
        except CoalescentError as e:
            _fail(e.code, str(e), EXIT_INTERNAL, **e.context)
        except click.exceptions.Exit:
            raise
        except SystemExit:
            raise
        except Exception as e:  # pragma: no cover - defensive
            _fail("INTERNAL_ERROR", f"{type(e).__name__}: {e}", EXIT_INTERNAL)
    wrapper.__name__ = fn.__name__
    return wrapper


def _load(config, seed, replicas, out, budget):
    cfg = parse_config(config)
    raw = json.loads(json.dumps(cfg.model_dump(mode="json"), sort_keys=True))
    if seed is not None:
        cfg = cfg.model_copy(update={"seed": seed})
        raw["seed"] = seed
    if replicas is not None:
        cfg = cfg.model_copy(update={"replicas": replicas})
        raw["replicas"] = replicas
    if budget is not None:
        cfg = cfg.model_copy(update={"event_budget": budget})
        raw["event_budget"] = budget
    if out is not None:
        cfg = cfg.model_copy(update={"out_dir": out})
        raw["out_dir"] = out
    writer = ArtifactWriter(cfg.out_dir, raw, cfg.seed)
    return cfg, writer


_common = [
    click.option("--config", required=True, type=click.Path(), help="JSON run config"),
    click.option("--seed", type=int, default=None, help="override master seed"),
    click.option("--replicas", type=int, default=None, help="override replica count"),
    click.option("--out", type=click.Path(), default=None, help="output directory"),
    click.option("--budget", type=int, default=None, help="override event budget"),
    click.option("--format", "fmt", type=click.Choice(["json", "csv", "jsonl"]),
                 default="json", help="primary raw-output format"),
]


def _with_common(fn):
    for opt in reversed(_common):
        fn = opt(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main():
    """Coalescent-rate tables, dichotomy classification, random-walk Green
    functions, exact trajectory simulation, and Monte Carlo experiments."""


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------

@main.command()
@_with_common
@_guarded
def rates(config, seed, replicas, out, budget, fmt):
    """Per-merge and total rate tables as CSV."""
    cfg, writer = _load(config, seed, replicas, out, budget)
    if cfg.measure is None:
        raise _ValidationFailure(["rates: config requires a measure"])
    kernel = cfg.kernel.build(cfg.measure.build())
    b_hi = cfg.b_max_table or min(cfg.kernel.b_max, 64)
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["b", "k", "value", "quadrature_error"])
    qerr = kernel.quadrature_error
    for b in range(2, b_hi + 1):
        row = kernel.lambda_bk_row(b)
        for k in range(2, b + 1):
            w.writerow([b, k, repr(float(row[k - 2])), repr(qerr)])
        w.writerow([b, "lambda", repr(kernel.lambda_total(b)), repr(qerr)])
        w.writerow([b, "gamma", repr(kernel.gamma_total(b)), repr(qerr)])
    text = buf.getvalue()
    click.echo(text, nl=False)
    writer.write_text("rates.csv", text)
    writer.write_report({"b_max": b_hi, "rows": text.count("\n") - 1,
                         "config_sha256": writer.config_hash})
    writer.finish()


@main.command()
@_with_common
@_guarded
def classify(config, seed, replicas, out, budget, fmt):
    """Comes-down-from-infinity dichotomy verdict as JSON."""
    cfg, writer = _load(config, seed, replicas, out, budget)
    if cfg.measure is None:
        raise _ValidationFailure(["classify: config requires a measure"])
    kernel = cfg.kernel.build(cfg.measure.build())
    verdict = cdi_classify(kernel, b_max=max(cfg.kernel.b_max, 1000))
    report = {
        "verdict": verdict.verdict,
        "partial_sum": verdict.partial_sum,
        "tail_estimate": verdict.tail_estimate,
        "complete_collapse": verdict.complete_collapse,
        "note": verdict.note,
        "config_sha256": writer.config_hash,
    }
    click.echo(_canonical_json(report), nl=False)
    writer.write_report(report)
    writer.finish()


@main.command()
@_with_common
@_guarded
def green(config, seed, replicas, out, budget, fmt):
    """Random-walk Green function at the origin."""
    cfg, writer = _load(config, seed, replicas, out, budget)
    walk_cfg = (cfg.geography.walk if cfg.geography is not None
                else WalkConfig(dimension=cfg.dimension or 3))
    walk = walk_cfg.build()
    method = cfg.method or "LATTICE_SUM"
    kwargs = {}
    if method == "MONTE_CARLO":
        kwargs["seed"] = cfg.seed
        if cfg.replicas:
            kwargs["replicas"] = cfg.replicas
    est, err = green_function(walk, method, **kwargs)
    report = {"estimate": est, "error": err, "method": method,
              "budget": cfg.event_budget, "dimension": walk.dimension,
              "config_sha256": writer.config_hash}
    click.echo(_canonical_json(report), nl=False)
    writer.write_report(report)
    writer.finish()


def _trajectory_jsonl(rec, config_hash, seed) -> str:
    lines = [json.dumps({"type": "header", "config_sha256": config_hash,
                         "seed": seed}, sort_keys=True)]
    for t, tag, payload in rec.events:
        lines.append(json.dumps({"type": "event", "time": t, "tag": tag,
                                 "payload": payload}, sort_keys=True,
                                default=list))
    lines.append(json.dumps({"type": "final", "time": rec.final_time,
                             "stop_reason": rec.stop_reason,
                             "block_count": rec.live_counts_total(),
                             "budget_exhausted": rec.budget_exhausted},
                            sort_keys=True))
    return "\n".join(lines) + "\n"


def _trajectory_csv(rec, n_start: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["time", "block_count"])
    count = n_start
    w.writerow([0.0, count])
    for t, tag, payload in rec.events:
        if tag == "MERGE":
            count -= payload[2] - 1
        elif tag == "KILL":
            count -= 1
        w.writerow([t, count])
    return buf.getvalue()


@main.command()
@_with_common
@_guarded
def simulate_cmd(config, seed, replicas, out, budget, fmt):
    """Exact trajectory simulation; JSONL events or CSV block counts."""
    cfg, writer = _load(config, seed, replicas, out, budget)
    if cfg.measure is None or cfg.geography is None:
        raise _ValidationFailure(["simulate: config requires measure and geography"])
    kernel = cfg.kernel.build(cfg.measure.build())
    geo = cfg.geography.build()
    init = singletons_per_site(geo, cfg.n_per_site or 1)
    rec = simulate(init, SimulationConfig(
        kernel=kernel, geography=geo, killing=cfg.killing,
        horizon=cfg.horizon, stop_blocks_at_most=cfg.stop_blocks_at_most,
        seed=cfg.seed, probe_times=tuple(cfg.probe_times),
        event_budget=cfg.event_budget, track_elements=False))
    if fmt == "csv":
        writer.write_text("trajectory.csv", _trajectory_csv(rec, init.block_count()))
    else:
        writer.write_text("trajectory.jsonl",
                          _trajectory_jsonl(rec, writer.config_hash, cfg.seed))
    report = {
        "final_time": rec.final_time,
        "stop_reason": rec.stop_reason,
        "events": len(rec.events),
        "final_block_count": rec.live_counts_total(),
        "budget_exhausted": rec.budget_exhausted,
        "probes": [[t, c] for t, c in rec.probes],
        "config_sha256": writer.config_hash,
    }
    click.echo(_canonical_json(report), nl=False)
    writer.write_report(report)
    writer.finish()
    if rec.budget_exhausted:
        _fail("BUDGET_EXCEEDED",
              f"event budget {cfg.event_budget} exhausted at t={rec.final_time}; "
              "partial trajectory flushed", EXIT_BUDGET,
              events=len(rec.events))


main.add_command(simulate_cmd, name="simulate")


_EXPERIMENTS = {}


def _experiment(name):
    def deco(fn):
        _EXPERIMENTS[name] = fn
        return fn
    return deco


@_experiment("hitting_time")
def _run_hitting_time(cfg: RunConfig, p: dict):
    kernel = cfg.kernel.build(cfg.measure.build())
    geo = cfg.geography.build()
    rep = estimate_Tnk(int(p["n"]), int(p.get("k", 2)), geo, kernel,
                       replicas=cfg.replicas or 400, seed=cfg.seed)
    out = rep.to_dict()
    raw = "replica,time\n" + "".join(
        f"{i},{v!r}\n" for i, v in enumerate(rep.per_replica))
    return out, raw, "hitting_times.csv"


@_experiment("trend")
def _run_trend(cfg: RunConfig, p: dict):
    kernel = cfg.kernel.build(cfg.measure.build())
    geo = cfg.geography.build()
    res = stay_infinite_trend(kernel, geo, [int(n) for n in p["n_grid"]],
                              p.get("t_probe", 0.5),
                              replicas=cfg.replicas or 200, seed=cfg.seed,
                              killing=cfg.killing)
    report = {"growth_exponent": res["growth_exponent"],
              "probes": list(res["probes"]),
              "per_n": {str(n): {str(t): list(v) for t, v in d.items()}
                        for n, d in res["per_n"].items()}}
    return report, None, None


@_experiment("pairwise")
def _run_pairwise(cfg: RunConfig, p: dict):
    kernel = cfg.kernel.build(cfg.measure.build())
    walk = cfg.geography.walk.build()
    comp = pairwise_torus_experiment(
        int(p.get("N", cfg.geography.N)), walk, kernel,
        replicas=cfg.replicas or 2000, seed=cfg.seed,
        separation=p.get("separation"),
        kappa_value=p.get("kappa_value"))
    times = comp.extras.pop("rescaled_times")
    raw = "replica,rescaled_time\n" + "".join(
        f"{i},{v!r}\n" for i, v in enumerate(times))
    return comp.to_dict(), raw, "pairwise_times.csv"


@_experiment("block_count")
def _run_block_count(cfg: RunConfig, p: dict):
    kernel = cfg.kernel.build(cfg.measure.build())
    walk = cfg.geography.walk.build()
    res = block_count_limit_experiment(
        int(p.get("N", cfg.geography.N)), walk, kernel,
        int(p.get("n_per_site", cfg.n_per_site or 10)),
        [float(t) for t in p.get("times", [0.5, 1.0])],
        replicas=cfg.replicas or 500, seed=cfg.seed,
        kappa_value=p.get("kappa_value"),
        event_budget=cfg.event_budget,
        reference_replicas=int(p.get("reference_replicas", 200_000)))
    samples = res.pop("samples")
    report = {"kappa": res["kappa"],
              "joint_chi2_pvalue": res["joint_chi2_pvalue"],
              "per_time": [c.to_dict() for c in res["per_time"]]}
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["replica"] + [f"count_t{j}" for j in range(samples.shape[1])])
    for i, row in enumerate(samples):
        w.writerow([i] + [int(v) for v in row])
    return report, buf.getvalue(), "block_counts.csv"


@_experiment("structure")
def _run_structure(cfg: RunConfig, p: dict):
    kernel = cfg.kernel.build(cfg.measure.build())
    walk = cfg.geography.walk.build()
    res = partition_structure_experiment(
        int(p.get("N", cfg.geography.N)), walk, kernel,
        int(p["n_blocks"]), replicas=cfg.replicas or 3000, seed=cfg.seed,
        kappa_value=p.get("kappa_value"))
    return res, None, None


@_experiment("coupling")
def _run_coupling(cfg: RunConfig, p: dict):
    kernel = cfg.kernel.build(cfg.measure.build())
    geo = cfg.geography.build()
    res = class_coupling_check(geo, kernel, p["class_split"],
                               float(p.get("t", 1.0)),
                               replicas=cfg.replicas or 100, seed=cfg.seed)
    return res, None, None


@_experiment("decay_shape")
def _run_decay_shape(cfg: RunConfig, p: dict):
    kernel = cfg.kernel.build(cfg.measure.build())
    walk = cfg.geography.walk.build()
    res = block_decay_shape(kernel, walk, [int(n) for n in p["N_values"]],
                            [float(t) for t in p["t_grid"]],
                            replicas=cfg.replicas or 50, seed=cfg.seed)
    return res, None, None


@_experiment("kappa")
def _run_kappa(cfg: RunConfig, p: dict):
    kernel = cfg.kernel.build(cfg.measure.build())
    walk = cfg.geography.walk.build()
    return torus_kappa(walk, kernel, seed=cfg.seed), None, None


@main.command()
@_with_common
@_guarded
def experiment(config, seed, replicas, out, budget, fmt):
    """Run the experiment named in the config; report JSON plus raw CSV."""
    cfg, writer = _load(config, seed, replicas, out, budget)
    if cfg.experiment is None:
        raise _ValidationFailure(["experiment: config requires an experiment section"])
    runner = _EXPERIMENTS.get(cfg.experiment.name)
    if runner is None:
        raise _ValidationFailure(
            [f"experiment: unknown name {cfg.experiment.name!r}; "
             f"known: {sorted(_EXPERIMENTS)}"])
    report, raw, raw_name = runner(cfg, cfg.experiment.params)
    report = json.loads(json.dumps(report, sort_keys=True, default=_json_default))
    report["experiment"] = cfg.experiment.name
    report["seed"] = cfg.seed
    report["config_sha256"] = writer.config_hash
    click.echo(_canonical_json(report), nl=False)
    writer.write_report(report)
    if raw is not None and raw_name:
        writer.write_text(raw_name, raw)
    writer.finish()


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset, tuple)):
        return sorted(obj) if isinstance(obj, (set, frozenset)) else list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


if __name__ == "__main__":
    main()
