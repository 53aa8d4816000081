"""Scenario configs, sweep execution and report files for the two-stage planner."""
from __future__ import annotations

import csv
import importlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path as FsPath
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import yaml

from .model import (
    NetworkModel,
    ParameterDomainError,
    Params,
    RgoWeights,
    TrafficRequest,
    TransponderLimits,
    bidirectional,
    limits_from_config,
    limits_to_config,
    phys_from_config,
    power_from_config,
    rounding_from_config,
    reference_power,
    power_to_config,
)
from .power import total_power, transponder_breakdown
from .rgo import CapacityExceededError, RgoSolution, ilp_check, ilp_objective, run_rgo
from .solver import SolverParams
from .topology import span_count
from .tpa import (
    TpaResult,
    TpaSettings,
    configs_from_json,
    configs_to_csv,
    configs_to_json,
    fixed_power_feasibility,
    run_tpa,
)

log = logging.getLogger(__name__)

SWEEP_AXES = ("none", "aggregate-traffic", "capacity", "modulation-set-size", "fixed-vs-adaptive-power")

# reference fiber constants in config units; the subcarrier spacing has no default.
PHYS_DEFAULTS = {"alpha_db_per_km": 0.22, "beta2_fs2_per_m": 20393, "gamma_per_w_km": 1.3, "nu_thz": 193.55,
                 "nsp": 1.58, "span_length_km": 80, "guard_band_ghz": 20}

DEFAULT_FIXED_POWER_MW = 1.0


class ScenarioError(RuntimeError):
    """A pipeline stage failed at a given sweep point."""

    def __init__(self, stage: str, index: int, value: Any, cause: BaseException | str):
        self.stage, self.index, self.value, self.cause = stage, index, value, cause
        super().__init__(f"stage {stage!r} failed at sweep point {index} ({value!r}): {cause}")


# ------------------------------------------------------------------ traffic
@dataclass(frozen=True)
class TrafficMatrix:
    """Normalised demand weights; row = source, column = destination."""

    nodes: tuple
    weights: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        n = len(self.nodes)
        if len(self.weights) != n or any(len(row) != n for row in self.weights):
            raise ParameterDomainError("traffic matrix must be square and match its node list")
        if any(w < 0 for row in self.weights for w in row):
            raise ParameterDomainError("traffic weights must be nonnegative")
        if not self.total > 0:
            raise ParameterDomainError("traffic matrix has no demand")

    @property
    def total(self) -> float:
        return math.fsum(w for i, row in enumerate(self.weights) for j, w in enumerate(row) if i != j)

    def requests(self, aggregate_bps: float, *, jitter: float = 0.0,
                 rng: np.random.Generator | None = None) -> list[TrafficRequest]:
        """Scale the weights so the requests sum to ``aggregate_bps``.

        ``jitter`` > 0 multiplies each weight by a uniform factor in
        [1 - jitter, 1 + jitter] before scaling.
        """
        if not aggregate_bps > 0:
            raise ParameterDomainError("aggregate traffic must be positive")
        w = np.array(self.weights, dtype=float)
        np.fill_diagonal(w, 0.0)
        if jitter:
            rng = rng if rng is not None else np.random.default_rng(0)
            w = w * rng.uniform(1 - jitter, 1 + jitter, size=w.shape)
        w *= aggregate_bps / w.sum()
        out = []
        for i, s in enumerate(self.nodes):
            for j, d in enumerate(self.nodes):
                if i != j and w[i, j] > 0:
                    out.append(TrafficRequest(f"{s}>{d}", s, d, float(w[i, j])))
        return out


def _bundled(name: str) -> str:
    return resources.files("eonalloc").joinpath("data", name).read_text()


def _read_yaml(ref: str, base: FsPath | None, bundled: Mapping[str, str]) -> dict:
    if ref in bundled:
        return yaml.safe_load(_bundled(bundled[ref]))
    path = FsPath(ref)
    if not path.is_absolute() and base is not None:
        path = base / path
    return yaml.safe_load(path.read_text())


BUNDLED_TOPOLOGIES = {"cost239-placeholder": "cost239_placeholder.yaml"}
BUNDLED_TRAFFIC = {"cost239-normalized": "cost239_traffic.yaml"}


def topology_from_config(section: Mapping, base: FsPath | None = None) -> NetworkModel:
    data = dict(section)
    if "file" in data:
        loaded = _read_yaml(str(data.pop("file")), base, BUNDLED_TOPOLOGIES)
        loaded.update(data)
        data = loaded
    if "fiber_bandwidth_hz" in data:
        bandwidth = float(data["fiber_bandwidth_hz"])
    else:
        bandwidth = float(data.get("fiber_bandwidth_thz", 2.0)) * 1e12
    return bidirectional(data["nodes"], [tuple(l) for l in data["links"]],
                         transponders_per_node=int(data["transponders_per_node"]), fiber_bandwidth=bandwidth)


def traffic_from_config(section: Mapping, base: FsPath | None = None) -> tuple[TrafficMatrix, float]:
    data = dict(section)
    if "file" in data:
        loaded = _read_yaml(str(data.pop("file")), base, BUNDLED_TRAFFIC)
        loaded.update(data)
        data = loaded
    matrix = TrafficMatrix(tuple(data["nodes"]), tuple(tuple(float(w) for w in row) for row in data["matrix"]))
    for key, scale in (("aggregate_bps", 1.0), ("aggregate_gbps", 1e9), ("aggregate_tbps", 1e12)):
        if key in data:
            return matrix, float(data[key]) * scale
    raise ParameterDomainError("traffic: missing aggregate_bps / aggregate_gbps / aggregate_tbps")


# -------------------------------------------------------------- fixed power
@dataclass(frozen=True)
class FixedPowerRule:
    """Launch power of the fixed-power baseline.

    Either a constant per lightpath or ``plugin = "module:function"`` with
    signature ``f(lightpath, spans, params) -> watts``.
    """

    constant_mw: float = DEFAULT_FIXED_POWER_MW
    plugin: str | None = None

    def resolve(self, rgo: RgoSolution, params: Params) -> dict[str, float]:
        lps = rgo.lightpaths()
        if self.plugin is None:
            return {lp.id: self.constant_mw * 1e-3 for lp in lps}
        module, _, name = self.plugin.partition(":")
        func: Callable = getattr(importlib.import_module(module), name)
        out = {}
        for lp in lps:
            watts = float(func(lp, span_count(lp.path, params.phys), params))
            if not watts > 0:
                raise ParameterDomainError(f"fixed-power plugin returned {watts!r} W for {lp.id}")
            out[lp.id] = watts
        return out


@dataclass
class FixedPowerOutcome:
    power_w: dict[str, float]
    result: TpaResult | None
    infeasible: list[str] = field(default_factory=list)
    reason: str = ""

    @property
    def feasible(self) -> bool:
        return self.result is not None


def fixed_power_baseline(rgo: RgoSolution, params: Params, fiber_bandwidth: float, *,
                         rule: FixedPowerRule = FixedPowerRule(), solver: SolverParams = SolverParams(),
                         settings: TpaSettings = TpaSettings()) -> FixedPowerOutcome:
    """Stage 2 with every launch power pinned by ``rule``; (c, b, r, omega) still optimised."""
    power = rule.resolve(rgo, params)
    bad = fixed_power_feasibility(rgo, params, power)
    if bad:
        return FixedPowerOutcome(power, None, bad, "fixed launch power cannot meet any threshold")
    try:
        result = run_tpa(rgo, params, fiber_bandwidth, solver=solver, settings=settings, fixed_power=power)
    except Exception as exc:  # infeasible, rounding failure, non-convergence
        return FixedPowerOutcome(power, None, [], f"{type(exc).__name__}: {exc}")
    if not result.validation.passed:
        return FixedPowerOutcome(power, None, [r.element for r in result.validation.failures], "validation failed")
    return FixedPowerOutcome(power, result)


# ------------------------------------------------------------------ metrics
@dataclass(frozen=True)
class MetricsRow:
    sweep_axis: str
    sweep_index: int
    sweep_value: str
    aggregate_traffic_bps: float
    capacity_bps: float
    modulation_levels: int
    total_power_w: float
    transponder_power_w: float
    grooming_power_w: float
    amplifier_power_w: float
    bias_power_w: float
    coding_power_w: float
    fft_power_w: float
    dsp_power_w: float
    tur: float
    tgr: float | None
    active_transponders: int
    rgo_objective: float
    no_grooming_total_power_w: float | None = None
    no_grooming_transponder_power_w: float | None = None
    fixed_total_power_w: float | None = None
    fixed_transponder_power_w: float | None = None
    runtime_s: float = 0.0


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRow))


def metrics_to_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=METRICS_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                         for k, v in asdict(row).items()})
    return buf.getvalue()


def compute_tur_tgr(groomed: RgoSolution, baseline: RgoSolution | None, aggregate_bps: float,
                    ) -> tuple[float, float | None]:
    """Utilisation of the groomed run and the share of unfilled baseline transponders grooming freed.

    Unfilled means carrying less than the capacity. TGR is ``None`` when the
    baseline has no unfilled transponder (or no baseline was possible).
    """
    cap = groomed.capacity
    active = groomed.active_transponders
    tur = aggregate_bps / (active * cap) if active else 0.0
    if baseline is None:
        return tur, None
    unfilled = sum(1 for lp in baseline.lightpaths() if lp.load < cap * (1 - 1e-9))
    if unfilled == 0:
        return tur, None
    freed = baseline.active_transponders - active
    return tur, min(1.0, max(0.0, freed / unfilled))


# ------------------------------------------------------------------ scenario
@dataclass(frozen=True)
class Scenario:
    name: str
    net: NetworkModel
    traffic: TrafficMatrix
    aggregate_bps: float
    params: Params
    solver: SolverParams = SolverParams()
    tpa: TpaSettings = TpaSettings()
    weights: RgoWeights = RgoWeights()
    grooming: bool = True
    sweep_axis: str = "none"
    sweep_values: tuple = ()
    fixed_power: FixedPowerRule = FixedPowerRule()
    compare_grooming: bool = False
    traffic_jitter: float = 0.0
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    trace: bool = False

    def __post_init__(self):
        if self.sweep_axis not in SWEEP_AXES:
            raise ParameterDomainError(f"sweep axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        if self.sweep_axis == "none" and self.sweep_values:
            raise ParameterDomainError("sweep values given without a sweep axis")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ParameterDomainError(f"sweep axis {self.sweep_axis!r} needs at least one value")
        if not self.aggregate_bps > 0:
            raise ParameterDomainError("aggregate traffic scale must be positive")
        if self.workers < 1:
            raise ParameterDomainError("workers must be >= 1")

    def points(self) -> list["SweepPoint"]:
        if self.sweep_axis == "none":
            return [SweepPoint(0, "none", "", self.aggregate_bps, self.params.limits.capacity,
                               len(self.params.limits.modulation_levels))]
        out = []
        levels = self.params.limits.modulation_levels
        for k, v in enumerate(self.sweep_values):
            agg, cap, n_levels = self.aggregate_bps, self.params.limits.capacity, len(levels)
            if self.sweep_axis in ("aggregate-traffic", "fixed-vs-adaptive-power"):
                agg = float(v)
            elif self.sweep_axis == "capacity":
                cap = float(v)
            else:
                n_levels = int(v)
                if not 1 <= n_levels <= len(levels):
                    raise ParameterDomainError(f"modulation set size {n_levels} outside 1..{len(levels)}")
            out.append(SweepPoint(k, self.sweep_axis, repr(v), agg, cap, n_levels))
        return out


@dataclass(frozen=True)
class SweepPoint:
    index: int
    axis: str
    label: str
    aggregate_bps: float
    capacity_bps: float
    modulation_levels: int


@dataclass
class PointResult:
    row: MetricsRow
    files: dict[str, str]


def _stage(name: str, point: SweepPoint, fn: Callable, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ScenarioError:
        raise
    except Exception as exc:
        raise ScenarioError(name, point.index, point.label, exc) from exc


def _breakdown(result: TpaResult, params: Params) -> dict[str, float]:
    parts = {"bias": 0.0, "coding": 0.0, "fft": 0.0, "dsp": 0.0}
    for cfg in result.configs.values():
        for k, v in transponder_breakdown(cfg.b, cfg.r, params.power).items():
            parts[k] += v
    return parts


def _check_rgo(rgo: RgoSolution, requests, sc: Scenario, limits, point: SweepPoint, stage: str) -> None:
    report = ilp_check(rgo, requests, sc.net, limits, sc.weights)
    if not report.feasible:
        raise ScenarioError(stage, point.index, point.label, f"ILP check failed: {report.violations[:3]}")


def _check_tpa(result: TpaResult, point: SweepPoint, stage: str) -> None:
    if not result.validation.passed:
        worst = result.validation.failures[:3]
        raise ScenarioError(stage, point.index, point.label, f"validation failed: {worst}")


def run_point(sc: Scenario, point: SweepPoint) -> PointResult:
    """Stage 1, stage 2 and power accounting for one sweep point."""
    t0 = time.perf_counter()
    limits = sc.params.limits.with_capacity(point.capacity_bps)
    limits = limits.with_levels(sc.params.limits.modulation_levels[: point.modulation_levels])
    params = replace(sc.params, limits=limits)
    rng = np.random.default_rng(np.random.SeedSequence(sc.seed).spawn(point.index + 1)[-1])
    requests = sc.traffic.requests(point.aggregate_bps, jitter=sc.traffic_jitter, rng=rng)
    bandwidth = sc.net.fiber_bandwidth

    rgo = _stage("rgo", point, run_rgo, requests, sc.net, limits, grooming=sc.grooming)
    _check_rgo(rgo, requests, sc, limits, point, "rgo")
    try:
        baseline = run_rgo(requests, sc.net, limits, grooming=False)
    except CapacityExceededError as exc:
        log.warning("point %d: no-grooming baseline exceeds the transponder banks (%s)", point.index, exc)
        baseline = None

    fixed = None
    incumbents = []
    if point.axis == "fixed-vs-adaptive-power":
        fixed = _stage("fixed-power", point, fixed_power_baseline, rgo, params, bandwidth, rule=sc.fixed_power,
                       solver=sc.solver, settings=sc.tpa)
        if fixed.feasible:
            incumbents.append(fixed.result.configs)
        else:
            log.warning("point %d: fixed launch power infeasible (%s) for %s", point.index, fixed.reason,
                        fixed.infeasible or "the program")

    result = _stage("tpa", point, run_tpa, rgo, params, bandwidth, solver=sc.solver, settings=sc.tpa,
                    incumbents=incumbents, trace=sc.trace)
    _check_tpa(result, point, "tpa")
    report = _stage("power", point, total_power, rgo, result.configs, sc.net, requests, params.phys, params.power)

    ng_total = ng_tp = None
    if sc.compare_grooming or point.axis == "aggregate-traffic":
        if baseline is None:
            raise ScenarioError("no-grooming", point.index, point.label, "baseline exceeds the transponder banks")
        _check_rgo(baseline, requests, sc, limits, point, "no-grooming")
        base_res = _stage("no-grooming", point, run_tpa, baseline, params, bandwidth, solver=sc.solver,
                          settings=sc.tpa)
        _check_tpa(base_res, point, "no-grooming")
        base_report = total_power(baseline, base_res.configs, sc.net, requests, params.phys, params.power)
        ng_total, ng_tp = base_report.total, base_report.transponder_total

    tur, tgr = compute_tur_tgr(rgo, baseline, math.fsum(q.rate for q in requests))
    parts = _breakdown(result, params)
    row = MetricsRow(
        sweep_axis=point.axis, sweep_index=point.index, sweep_value=point.label,
        aggregate_traffic_bps=math.fsum(q.rate for q in requests), capacity_bps=limits.capacity,
        modulation_levels=len(limits.modulation_levels), total_power_w=report.total,
        transponder_power_w=report.transponder_total, grooming_power_w=report.grooming_total,
        amplifier_power_w=report.amplifier_total, bias_power_w=parts["bias"], coding_power_w=parts["coding"],
        fft_power_w=parts["fft"], dsp_power_w=parts["dsp"], tur=tur, tgr=tgr,
        active_transponders=rgo.active_transponders, rgo_objective=ilp_objective(rgo, sc.net, limits, sc.weights),
        no_grooming_total_power_w=ng_total, no_grooming_transponder_power_w=ng_tp,
        fixed_total_power_w=(_fixed_total(fixed, rgo, sc, requests, params) if fixed and fixed.feasible else None),
        fixed_transponder_power_w=(fixed.result.transponder_power if fixed and fixed.feasible else None),
        runtime_s=time.perf_counter() - t0,
    )
    stem = f"{sc.name}_p{point.index:02d}"
    files = {
        f"{stem}_power.csv": report.to_csv(),
        f"{stem}_transponders.csv": configs_to_csv(result.configs),
        f"{stem}_solution.json": solution_to_json(rgo, result, requests, limits),
    }
    if sc.trace:
        files[f"{stem}_trace.csv"] = trace_to_csv(result)
    return PointResult(row, files)


def _fixed_total(fixed: FixedPowerOutcome, rgo, sc: Scenario, requests, params: Params) -> float:
    return total_power(rgo, fixed.result.configs, sc.net, requests, params.phys, params.power).total


def solution_to_json(rgo: RgoSolution, result: TpaResult, requests: Sequence[TrafficRequest],
                     limits: TransponderLimits) -> str:
    return json.dumps({"requests": [[q.id, q.source, q.destination, q.rate] for q in requests],
                       "limits": limits_to_config(limits), "rgo": rgo.to_dict(),
                       "transponders": json.loads(configs_to_json(result.configs)),
                       "transponder_power_w": result.transponder_power}, indent=2)


def solution_from_json(text: str, net: NetworkModel):
    """(requests, limits, rgo, configs) from :func:`solution_to_json` output."""
    data = json.loads(text)
    requests = [TrafficRequest(q, s, d, float(rate)) for q, s, d, rate in data["requests"]]
    rgo = RgoSolution.from_dict(data["rgo"], net)
    cfgs = configs_from_json(json.dumps(data["transponders"]))
    return requests, limits_from_config(data["limits"]), rgo, cfgs


def trace_to_csv(result: TpaResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage", "iteration", "mu", "objective", "kkt_residual"])
    for row in result.relaxed.result.trace:
        writer.writerow([row.stage, row.iteration, repr(row.mu), repr(row.objective), repr(row.residual)])
    return buf.getvalue()


def _run_point_star(args):
    return run_point(*args)


def run_scenario(sc: Scenario, *, write: bool = True) -> list[MetricsRow]:
    """Run every sweep point (in parallel when ``workers`` > 1); rows come back in sweep order."""
    points = sc.points()
    if sc.workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=min(sc.workers, len(points))) as pool:
            results = list(pool.map(_run_point_star, [(sc, p) for p in points]))
    else:
        results = [run_point(sc, p) for p in points]
    rows = [r.row for r in results]
    if write:
        out = FsPath(sc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r in results:
            for name, text in r.files.items():
                (out / name).write_text(text)
        (out / f"{sc.name}_metrics.csv").write_text(metrics_to_csv(rows))
    return rows


# ------------------------------------------------------------------ config
def _params_from_config(cfg: Mapping) -> Params:
    phys = dict(PHYS_DEFAULTS)
    phys.update(cfg.get("phys") or {})
    if not any(k in phys for k in ("subcarrier_spacing_ghz", "subcarrier_spacing_hz")):
        raise ParameterDomainError("phys: subcarrier_spacing_ghz (or _hz) is required")
    power_section = cfg.get("power")
    power = power_from_config({**power_to_config(reference_power()), **power_section}) if power_section \
        else reference_power()
    limits = limits_from_config(cfg.get("limits") or {})
    return Params(phys_from_config(phys), power, limits, rounding_from_config(cfg.get("rounding")))


def _dataclass_from(cls, section: Mapping | None, what: str):
    section = dict(section or {})
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise ParameterDomainError(f"{what}: unknown keys {sorted(unknown)}")
    return cls(**{k: _number(v) for k, v in section.items()})


def _number(value):
    # YAML 1.1 reads "1e-6" as a string
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return value
    return value


def scenario_from_config(cfg: Mapping, base: FsPath | None = None, **overrides) -> Scenario:
    """Build a :class:`Scenario` from the parsed YAML mapping; keyword overrides win."""
    sc_cfg = dict(cfg.get("scenario") or {})
    sweep = sc_cfg.pop("sweep", None) or {}
    fixed = sc_cfg.pop("fixed_power", None) or {}
    rgo_cfg = dict(cfg.get("rgo") or {})
    grooming = bool(rgo_cfg.pop("grooming", True))
    matrix, aggregate = traffic_from_config(cfg["traffic"], base)
    kwargs = dict(
        name=str(sc_cfg.pop("name", "scenario")),
        net=topology_from_config(cfg["topology"], base),
        traffic=matrix,
        aggregate_bps=aggregate,
        params=_params_from_config(cfg),
        solver=_dataclass_from(SolverParams, cfg.get("solver"), "solver"),
        tpa=_dataclass_from(TpaSettings, cfg.get("tpa"), "tpa"),
        weights=_dataclass_from(RgoWeights, rgo_cfg, "rgo"),
        grooming=grooming,
        sweep_axis=str(sweep.get("axis", "none")),
        sweep_values=tuple(sweep.get("values", ())),
        fixed_power=_dataclass_from(FixedPowerRule, fixed, "scenario.fixed_power"),
        traffic_jitter=float(cfg["traffic"].get("jitter", 0.0)),
    )
    for key in ("compare_grooming", "seed", "workers", "output_dir", "trace"):
        if key in sc_cfg:
            kwargs[key] = type(getattr(Scenario, key))(sc_cfg.pop(key))
    if sc_cfg:
        raise ParameterDomainError(f"scenario: unknown keys {sorted(sc_cfg)}")
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return Scenario(**kwargs)


def load_scenario(path: str | FsPath, **overrides) -> Scenario:
    path = FsPath(path)
    return scenario_from_config(yaml.safe_load(path.read_text()), path.parent, **overrides)

