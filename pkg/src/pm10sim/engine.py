"""Simulation engine: the per-step loop, traces, metrics and comparisons.

Every step runs the same ordered phases: agents act, the plume field is
rebuilt and averaged, the predictor forecasts ahead, the regulation
layer reacts (game payoffs and learning, or a central directive for the
next step), and a record is appended. The whole trace is a pure function
of (scenario, predictor parameters, run seed): agents are processed in
ascending id order and the engine owns a single seeded generator that
hands each game agent exactly one draw per step.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .agents import (
    ACTION_DECREASE,
    ACTION_INCREASE,
    CentralAgentState,
    Directive,
    EmissionAgentState,
    apply_action,
    apply_directive,
    build_neighbor_graph,
    choose_action_eg,
    compute_payoff,
    cs_central_decide,
    initial_actions,
    neighbor_avg_payoff,
    avg_last_k_np,
    update_probabilities,
    weighted_payoff,
)
from .dispersion import aggregate_mean, superpose
from .forecaster import ForecastInput, PersistencePredictor
from .scenario import ClimateRecord, RUN_STREAM, Scenario, Strategy, stream_rng

EG_STRATEGIES = (Strategy.EG_PENALTIES, Strategy.EG_NO_PENALTIES)

TRACE_COLUMNS = (
    "step",
    "total_emission_gph",
    "mean_conc_ugm3",
    "forecast_ugm3",
    "peak",
    "coop_fraction",
)


class EngineError(RuntimeError):
    """Raised when the simulation is driven outside its contract."""


@dataclass
class StepRecord:
    """Everything observed in one simulation step."""

    step: int
    emissions_gph: np.ndarray
    total_emission_gph: float
    concentration_ugm3: float
    forecast_ugm3: float
    peak: bool
    coop_fraction: float
    climate: ClimateRecord
    payoffs: np.ndarray | None = None
    field: np.ndarray | None = None


@dataclass
class RunTrace:
    """Ordered step records of one simulation run."""

    records: list[StepRecord]

    def __len__(self) -> int:
        return len(self.records)

    def concentrations(self) -> np.ndarray:
        return np.array([r.concentration_ugm3 for r in self.records])

    def forecasts(self) -> np.ndarray:
        return np.array([r.forecast_ugm3 for r in self.records])

    def totals(self) -> np.ndarray:
        return np.array([r.total_emission_gph for r in self.records])

    def coop_fractions(self) -> np.ndarray:
        return np.array([r.coop_fraction for r in self.records])


@dataclass(frozen=True)
class RunMetrics:
    """Peak-control summary of one run."""

    steps_above_goal: int
    peak_episodes: int
    time_to_control: int
    mean_concentration: float
    peak_series_24h: tuple[float, ...]
    n_steps: int
    goal: float

    def as_dict(self) -> dict:
        return {
            "steps_above_goal": self.steps_above_goal,
            "peak_episodes": self.peak_episodes,
            "time_to_control": self.time_to_control,
            "mean_concentration_ugm3": self.mean_concentration,
            "n_steps": self.n_steps,
            "goal_ugm3": self.goal,
        }


def detect_peak(concentration: float, goal: float) -> bool:
    """A crisis peak is a strict exceedance of the goal level."""
    return concentration > goal


def peak_series_24h(concentrations: Sequence[float], step_hours: float) -> tuple[float, ...]:
    """Max concentration per 24-hour window; a trailing partial window counts."""
    concs = np.asarray(concentrations, dtype=float)
    if concs.size == 0:
        raise EngineError("peak series needs a non-empty trace")
    window = math.ceil(24.0 / step_hours)
    return tuple(
        float(concs[start : start + window].max()) for start in range(0, concs.size, window)
    )


def metrics_from_trace(trace: RunTrace, goal: float, step_hours: float) -> RunMetrics:
    concs = trace.concentrations()
    above = concs > goal
    steps_above = int(above.sum())
    episodes = int(np.sum(above & ~np.concatenate(([False], above[:-1]))))
    if not above.any():
        ttc = 0
    elif above[-1]:
        ttc = concs.size  # never controlled: sentinel one past the last step
    else:
        ttc = int(np.flatnonzero(above)[-1]) + 1
    return RunMetrics(
        steps_above_goal=steps_above,
        peak_episodes=episodes,
        time_to_control=ttc,
        mean_concentration=float(concs.mean()),
        peak_series_24h=peak_series_24h(concs, step_hours),
        n_steps=concs.size,
        goal=goal,
    )


class Simulation:
    """One run in progress; `step()` advances it by one record."""

    def __init__(
        self,
        scenario: Scenario,
        predictor=None,
        run_seed: int | None = None,
        keep_fields: bool = False,
    ):
        scenario.validate()
        self.scenario = scenario
        self.predictor = predictor if predictor is not None else PersistencePredictor()
        self.keep_fields = keep_fields
        self.strategy = scenario.strategy
        seed = scenario.seed if run_seed is None else run_seed
        self.rng = stream_rng(seed, RUN_STREAM)
        self.weights = scenario.game.resolved_weights()
        # Penalties are defined away entirely for the no-penalty variant.
        reg = scenario.regulation
        self.reg = replace(reg, lam=0.0) if self.strategy is Strategy.EG_NO_PENALTIES else reg
        self.agents = [
            EmissionAgentState(
                agent_id=src.id,
                er=src.initial_rate,
                er_max=src.er_max,
                memory=scenario.game.memory_k,
            )
            for src in scenario.sources
        ]
        self.t = 0
        self.central = CentralAgentState()
        self.pending_directive = Directive.HOLD
        self.graph = None
        self._first_actions: np.ndarray | None = None
        if self.strategy in EG_STRATEGIES:
            self.graph = build_neighbor_graph(scenario.sources, scenario.game.neighbors)
            self._first_actions = initial_actions(
                len(self.agents), scenario.game.initial_cooperator_fraction, self.rng
            )

    # -- phases -----------------------------------------------------------

    def _act(self) -> None:
        sc = self.scenario
        if self.strategy in EG_STRATEGIES:
            if self.t == 0:
                # The configured cooperator share plays "decrease" on the
                # first step; learning starts once payoffs exist.
                for agent, action in zip(self.agents, self._first_actions):
                    agent.push_action(int(action))
                    apply_action(agent, int(action), sc.game.delta)
            else:
                k = sc.game.memory_k
                for agent in self.agents:
                    wp = weighted_payoff(agent.payoffs, self.weights)
                    avg_np = avg_last_k_np(agent.neighbor_avgs, k)
                    action = choose_action_eg(agent, wp, avg_np, self.rng)
                    apply_action(agent, action, sc.game.delta)
        elif self.strategy is Strategy.CS:
            directive = self.pending_directive
            action = ACTION_DECREASE if directive is Directive.REDUCE else ACTION_INCREASE
            for agent in self.agents:
                apply_directive(agent, directive, self.reg)
                agent.push_action(action)
        else:  # NC
            for agent in self.agents:
                agent.push_action(ACTION_INCREASE)
                apply_action(agent, ACTION_INCREASE, sc.game.delta)

    def _regulate(self, forecast: float) -> np.ndarray | None:
        sc = self.scenario
        if self.strategy in EG_STRATEGIES:
            total = sum(a.er for a in self.agents)
            payoffs = np.array(
                [compute_payoff(a, total, forecast, sc.goal, self.reg) for a in self.agents]
            )
            for agent, value in zip(self.agents, payoffs):
                agent.push_payoff(float(value))
            for agent in self.agents:
                agent.push_neighbor_avg(
                    neighbor_avg_payoff(self.graph, payoffs, agent.agent_id)
                )
            for agent in self.agents:
                wp = weighted_payoff(agent.payoffs, self.weights)
                update_probabilities(agent, agent.last_actions[0], wp, sc.game.alpha)
            return payoffs
        if self.strategy is Strategy.CS:
            self.pending_directive, self.central = cs_central_decide(
                forecast, sc.goal, self.central, self.reg
            )
        return None

    def step(self) -> StepRecord:
        sc = self.scenario
        if self.t >= sc.n_steps:
            raise EngineError(f"run is complete after {sc.n_steps} steps")
        if self.t >= len(sc.climate):
            raise EngineError("climate series exhausted")
        climate = sc.climate[self.t]

        self._act()
        rates = np.array([a.er for a in self.agents])
        field = superpose(sc.sources, rates, sc.grid, climate, sc.sigma)
        concentration = aggregate_mean(field)
        forecast = self.predictor.predict(
            ForecastInput(
                concentration=concentration,
                wind_speed=climate.wind_speed,
                temperature=climate.temperature,
                humidity=climate.humidity,
                rainfall=climate.rainfall,
            )
        )
        payoffs = self._regulate(forecast)
        coop = float(
            np.mean([a.last_actions[0] == ACTION_DECREASE for a in self.agents])
        )
        record = StepRecord(
            step=self.t,
            emissions_gph=rates,
            total_emission_gph=float(rates.sum()),
            concentration_ugm3=concentration,
            forecast_ugm3=forecast,
            peak=detect_peak(concentration, sc.goal),
            coop_fraction=coop,
            climate=climate,
            payoffs=payoffs,
            field=field.values if self.keep_fields else None,
        )
        self.t += 1
        return record


def run(
    scenario: Scenario,
    predictor=None,
    run_seed: int | None = None,
    keep_fields: bool = False,
) -> tuple[RunTrace, RunMetrics]:
    """Simulate the whole scenario and summarise it."""
    sim = Simulation(scenario, predictor=predictor, run_seed=run_seed, keep_fields=keep_fields)
    records = [sim.step() for _ in range(scenario.n_steps)]
    trace = RunTrace(records=records)
    return trace, metrics_from_trace(trace, scenario.goal, scenario.step_hours)


# ---------------------------------------------------------------------------
# Comparison and replication harnesses
# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    """Strategies run on identical placement and climate, side by side."""

    strategies: tuple[Strategy, ...]
    metrics: dict[Strategy, RunMetrics]
    peak_series: dict[Strategy, tuple[float, ...]]
    traces: dict[Strategy, RunTrace]
    goal: float
    window_steps: int


def compare_strategies(
    scenario: Scenario,
    strategies: Sequence[Strategy | str],
    predictor=None,
    run_seeds: Sequence[int] | None = None,
) -> ComparisonReport:
    """Run several strategies on the same scenario (same sources, same
    climate) and align their 24-hour peak series."""
    strats = tuple(Strategy(s) for s in strategies)
    if len(strats) < 2:
        raise EngineError("compare_strategies needs at least 2 strategies")
    if len(set(strats)) != len(strats):
        raise EngineError("duplicate strategies in comparison")
    if run_seeds is not None and len(run_seeds) != len(strats):
        raise EngineError("need one run seed per strategy")
    metrics: dict[Strategy, RunMetrics] = {}
    series: dict[Strategy, tuple[float, ...]] = {}
    traces: dict[Strategy, RunTrace] = {}
    for i, strat in enumerate(strats):
        seed = run_seeds[i] if run_seeds is not None else None
        trace, m = run(scenario.with_strategy(strat), predictor=predictor, run_seed=seed)
        metrics[strat] = m
        series[strat] = m.peak_series_24h
        traces[strat] = trace
    return ComparisonReport(
        strategies=strats,
        metrics=metrics,
        peak_series=series,
        traces=traces,
        goal=scenario.goal,
        window_steps=math.ceil(24.0 / scenario.step_hours),
    )


@dataclass
class ReplicationStats:
    """The same scenario re-run under different run seeds."""

    seeds: tuple[int, ...]
    metrics: tuple[RunMetrics, ...]
    steps_above_mean: float
    steps_above_variance: float
    concentration_variance: np.ndarray  # across-run variance per step
    coop_variance: np.ndarray

    @property
    def max_concentration_variance(self) -> float:
        return float(self.concentration_variance.max())

    @property
    def max_coop_variance(self) -> float:
        return float(self.coop_variance.max())


def replicate(
    scenario: Scenario,
    n_runs: int,
    seeds: Sequence[int] | None = None,
    predictor=None,
) -> ReplicationStats:
    """Fixed placement and climate, varying run seed."""
    if n_runs < 1:
        raise EngineError(f"n_runs must be >= 1, got {n_runs}")
    if seeds is None:
        seeds = [scenario.seed + i for i in range(n_runs)]
    elif len(seeds) != n_runs:
        raise EngineError(f"got {len(seeds)} seeds for {n_runs} runs")
    all_metrics = []
    concs = []
    coops = []
    for s in seeds:
        trace, m = run(scenario, predictor=predictor, run_seed=s)
        all_metrics.append(m)
        concs.append(trace.concentrations())
        coops.append(trace.coop_fractions())
    conc_mat = np.stack(concs)
    coop_mat = np.stack(coops)
    above = np.array([m.steps_above_goal for m in all_metrics], dtype=float)
    return ReplicationStats(
        seeds=tuple(int(s) for s in seeds),
        metrics=tuple(all_metrics),
        steps_above_mean=float(above.mean()),
        steps_above_variance=float(above.var()),
        concentration_variance=conc_mat.var(axis=0),
        coop_variance=coop_mat.var(axis=0),
    )


# ---------------------------------------------------------------------------
# Trace serialisation
# ---------------------------------------------------------------------------


def trace_to_csv(trace: RunTrace, per_agent: bool = False) -> str:
    """Canonical trace CSV; deterministic bytes for deterministic runs."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    header = list(TRACE_COLUMNS)
    if per_agent and trace.records:
        header += [f"er_{i}" for i in range(len(trace.records[0].emissions_gph))]
    writer.writerow(header)
    for rec in trace.records:
        row = [
            rec.step,
            repr(rec.total_emission_gph),
            repr(rec.concentration_ugm3),
            repr(rec.forecast_ugm3),
            int(rec.peak),
            repr(rec.coop_fraction),
        ]
        if per_agent:
            row += [repr(float(e)) for e in rec.emissions_gph]
        writer.writerow(row)
    return out.getvalue()


def fields_to_csv(trace: RunTrace) -> str:
    """Per-box concentration dump for runs that kept their fields."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["step", "i", "j", "k", "concentration_ugm3"])
    for rec in trace.records:
        if rec.field is None:
            raise EngineError("trace was run without keep_fields")
        nx, ny, nz = rec.field.shape
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    writer.writerow([rec.step, i, j, k, repr(float(rec.field[i, j, k]))])
    return out.getvalue()
