"""Emission-source controllers and the central regulation agency.

Each point source is driven by an agent that either obeys a central
agency (CS), plays a learning game against its neighbours (EG), or
selfishly ramps to its maximum rate (NC).

In the game, an agent's payoff rewards emitting (scaled by its share of
its own capacity) and, whenever the forecast exceeds the goal, penalises
it in proportion to its share of the total emission. Agents remember
their last K payoffs, weight them by recency, compare against the
average reward of their neighbours, and switch between reducing and
resuming according to two learned probabilities: the probability of a
played action grows when its weighted payoff is positive and decays
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .scenario import RegulationParams, SourceSpec


class AgentError(ValueError):
    """Invalid agent-layer input (graph arity, history length, ...)."""


class Directive(Enum):
    """Order broadcast by the central agency to every source."""

    REDUCE = "REDUCE"
    RESUME = "RESUME"
    HOLD = "HOLD"


ACTION_DECREASE = 0
ACTION_INCREASE = 1


@dataclass
class EmissionAgentState:
    """Mutable controller state for one source.

    Histories are kept most-recent-first and trimmed to the memory
    length; before enough steps have elapsed they are implicitly padded
    with zeros by the consumers below.
    """

    agent_id: int
    er: float
    er_max: float
    pc: float = 0.5
    q: float = 0.5
    memory: int = 5
    last_actions: list[int] = field(default_factory=list)
    payoffs: list[float] = field(default_factory=list)
    neighbor_avgs: list[float] = field(default_factory=list)

    def push_action(self, action: int) -> None:
        self.last_actions.insert(0, action)
        del self.last_actions[self.memory :]

    def push_payoff(self, value: float) -> None:
        self.payoffs.insert(0, value)
        del self.payoffs[self.memory :]

    def push_neighbor_avg(self, value: float) -> None:
        self.neighbor_avgs.insert(0, value)
        del self.neighbor_avgs[self.memory :]


@dataclass(frozen=True)
class CentralAgentState:
    """Control agency bookkeeping: consecutive below-goal forecasts."""

    consecutive_below: int = 0
    phase: str = "NORMAL"


@dataclass(frozen=True)
class NeighborGraph:
    """Fixed neighbourhood: for each agent id, the ids of its R neighbours."""

    neighbors: tuple[tuple[int, ...], ...]

    def validate(self) -> None:
        degree = len(self.neighbors[0]) if self.neighbors else 0
        for i, nbrs in enumerate(self.neighbors):
            if i in nbrs:
                raise AgentError(f"agent {i} listed as its own neighbour")
            if len(nbrs) != degree:
                raise AgentError("all agents must have the same neighbour count")


def build_neighbor_graph(sources: Sequence["SourceSpec"], r: int) -> NeighborGraph:
    """R nearest sources by horizontal distance, ties broken by lower id."""
    n = len(sources)
    if not (1 <= r < n):
        raise AgentError(f"neighbour count {r} must satisfy 1 <= r < {n}")
    xs = np.array([s.x for s in sources])
    ys = np.array([s.y for s in sources])
    rows = []
    for i in range(n):
        d2 = (xs - xs[i]) ** 2 + (ys - ys[i]) ** 2
        order = sorted((float(d2[j]), j) for j in range(n) if j != i)
        rows.append(tuple(j for _, j in order[:r]))
    return NeighborGraph(neighbors=tuple(rows))


# ---------------------------------------------------------------------------
# Payoffs and learning
# ---------------------------------------------------------------------------


def compute_payoff(
    agent: EmissionAgentState,
    total_emission: float,
    forecast: float,
    goal: float,
    reg: "RegulationParams",
) -> float:
    """Reward for emitting minus, during forecast exceedance, a penalty
    proportional to the agent's contribution share."""
    reward = reg.beta * (agent.er / agent.er_max) if agent.er_max > 0.0 else 0.0
    if forecast > goal and total_emission > 0.0:
        return reward - reg.lam * (agent.er / total_emission)
    return reward


def weighted_payoff(payoffs: Sequence[float], weights: Sequence[float]) -> float:
    """Recency-weighted payoff; short histories count missing steps as 0."""
    if len(payoffs) > len(weights):
        raise AgentError(
            f"payoff history of {len(payoffs)} exceeds the {len(weights)} weights"
        )
    return sum(w * m for w, m in zip(weights, payoffs))


def updated_probability(p: float, wp: float, alpha: float) -> float:
    """Linear reward-inaction update, closed over [0, 1]."""
    if wp > 0.0:
        return p + (1.0 - p) * alpha
    return (1.0 - alpha) * p


def update_probabilities(state: EmissionAgentState, played: int, wp: float, alpha: float) -> None:
    """Reinforce or decay the probability of the action actually played."""
    if played == ACTION_DECREASE:
        state.pc = updated_probability(state.pc, wp, alpha)
    else:
        state.q = updated_probability(state.q, wp, alpha)


def neighbor_avg_payoff(graph: NeighborGraph, payoffs: Sequence[float], agent_id: int) -> float:
    """Mean of this step's payoffs over the agent's neighbours."""
    nbrs = graph.neighbors[agent_id]
    return sum(payoffs[j] for j in nbrs) / len(nbrs)


def avg_last_k_np(values: Sequence[float], k: int) -> float:
    """Mean of the last K neighbour averages, zero-padded while short."""
    if len(values) > k:
        raise AgentError(f"history of {len(values)} exceeds memory {k}")
    return sum(values) / k


def choose_action_eg(
    state: EmissionAgentState, wp: float, avg_np: float, rng: np.random.Generator
) -> int:
    """Game action: stick with the last action unless doing worse than the
    neighbourhood and the learned probabilities favour switching.

    Exactly one uniform draw is consumed per call, whether or not the
    earlier conditions already settled the outcome, so the random stream
    advances identically across branches.
    """
    ru = rng.random()
    last = state.last_actions[0]
    if last == ACTION_DECREASE:
        switch = wp < avg_np and state.pc < state.q and state.q > ru
        action = ACTION_INCREASE if switch else ACTION_DECREASE
    else:
        switch = wp < avg_np and state.q < state.pc and state.pc > ru
        action = ACTION_DECREASE if switch else ACTION_INCREASE
    state.push_action(action)
    return action


def apply_action(state: EmissionAgentState, action: int, delta: float) -> None:
    """Shift the emission rate one step of delta * er_max, clamped."""
    step = delta * state.er_max
    if action == ACTION_DECREASE:
        state.er = max(0.0, state.er - step)
    else:
        state.er = min(state.er_max, state.er + step)


def nc_decide(state: EmissionAgentState | None = None) -> int:
    """No-cooperation policy: always push the rate upward."""
    return ACTION_INCREASE


# ---------------------------------------------------------------------------
# Centralized strategy
# ---------------------------------------------------------------------------


def cs_central_decide(
    forecast: float, goal: float, central: CentralAgentState, reg: "RegulationParams"
) -> tuple[Directive, CentralAgentState]:
    """Agency decision: reduce through a predicted peak, resume after the
    forecast has stayed below the goal for cs_resume_after steps."""
    if forecast > goal:
        return Directive.REDUCE, CentralAgentState(consecutive_below=0, phase="REDUCING")
    below = central.consecutive_below + 1
    if below >= reg.cs_resume_after:
        return Directive.RESUME, CentralAgentState(consecutive_below=below, phase="RESUMING")
    return Directive.HOLD, CentralAgentState(consecutive_below=below, phase="NORMAL")


def apply_directive(state: EmissionAgentState, directive: Directive, reg: "RegulationParams") -> None:
    if directive is Directive.REDUCE:
        state.er = reg.cs_reduce_factor * state.er
    elif directive is Directive.RESUME:
        state.er = min(state.er_max, state.er + reg.cs_resume_step * state.er_max)
    # HOLD leaves the rate untouched.


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------


def initial_actions(n: int, cooperator_fraction: float, rng: np.random.Generator) -> np.ndarray:
    """First-step actions: a seeded-random floor(fraction * n) of agents
    start by decreasing, the rest by increasing."""
    order = rng.permutation(n)
    actions = np.full(n, ACTION_INCREASE, dtype=int)
    k = int(np.floor(cooperator_fraction * n))
    actions[order[:k]] = ACTION_DECREASE
    return actions
