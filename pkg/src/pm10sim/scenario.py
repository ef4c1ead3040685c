"""Experiment description: grid, sources, climate, strategy and parameters.

A Scenario is a fully materialised, validated experiment: every source
has a position and every step has a climate record. Scenarios are built
from a TOML document (see `load_scenario`), which may either list
sources and climate explicitly or describe seeded generators for them.
All randomness flows from seeds carried in the document, so loading the
same text twice yields identical scenarios.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

try:
    import tomllib  # type: ignore[import-not-found]
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib  # type: ignore[no-redef]

from .dispersion import SigmaCoeffs

# Wind speed floor (m/s): the plume formula divides by wind speed, and
# calm-wind theory is out of scope. Applied when generating or ingesting
# climate, never silently inside the dispersion kernel.
U_MIN = 0.5

# Safety cap on grid size, so a typo in box counts fails fast.
MAX_BOXES = 1_000_000

# Independent seed streams derived from the scenario seed.
PLACEMENT_STREAM = 0
CLIMATE_STREAM = 1
RUN_STREAM = 2


class ScenarioError(ValueError):
    """Malformed or invalid scenario input. Message names the offender."""


class Strategy(str, Enum):
    """Emission-control strategy executed by the engine."""

    CS = "CS"
    EG_PENALTIES = "EG_PENALTIES"
    EG_NO_PENALTIES = "EG_NO_PENALTIES"
    NC = "NC"


def stream_rng(seed: int, stream: int) -> np.random.Generator:
    """Generator for one of the independent seed streams of a scenario."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Box-grid geometry. Box counts per axis, box edge length in metres."""

    nx: int = 3
    ny: int = 3
    nz: int = 1
    box_edge: float = 1000.0

    def validate(self) -> None:
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ScenarioError(f"grid.{name} must be an integer >= 1, got {v!r}")
        if not (self.box_edge > 0.0 and math.isfinite(self.box_edge)):
            raise ScenarioError(f"grid.box_edge must be > 0, got {self.box_edge!r}")
        n_boxes = self.nx * self.ny * self.nz
        if n_boxes > MAX_BOXES:
            raise ScenarioError(
                f"grid has {n_boxes} boxes, exceeding the cap of {MAX_BOXES}"
            )

    @property
    def extent_x(self) -> float:
        return self.nx * self.box_edge

    @property
    def extent_y(self) -> float:
        return self.ny * self.box_edge


@dataclass(frozen=True)
class SourceSpec:
    """One controllable point source."""

    id: int
    x: float
    y: float
    stack_height: float = 20.0
    er_max: float = 2000.0
    initial_rate: float = 2000.0

    def validate(self, grid: GridSpec | None = None) -> None:
        tag = f"sources[{self.id}]"
        if self.er_max < 0.0:
            raise ScenarioError(f"{tag}.er_max must be >= 0, got {self.er_max}")
        if not (0.0 <= self.initial_rate <= self.er_max):
            raise ScenarioError(
                f"{tag}.initial_rate must lie in [0, er_max={self.er_max}], "
                f"got {self.initial_rate}"
            )
        if self.stack_height < 0.0:
            raise ScenarioError(f"{tag}.stack_height must be >= 0")
        if grid is not None:
            if not (0.0 <= self.x <= grid.extent_x and 0.0 <= self.y <= grid.extent_y):
                raise ScenarioError(
                    f"{tag} position ({self.x}, {self.y}) outside grid footprint "
                    f"{grid.extent_x} x {grid.extent_y} m"
                )


@dataclass(frozen=True)
class ClimateRecord:
    """Weather for one simulation step."""

    wind_speed: float
    wind_direction: float
    temperature: float
    humidity: float
    rainfall: float

    def validate(self) -> None:
        for name in ("wind_speed", "wind_direction", "temperature", "humidity", "rainfall"):
            if not math.isfinite(getattr(self, name)):
                raise ScenarioError(f"climate {name} must be finite")
        if self.wind_speed < U_MIN:
            raise ScenarioError(
                f"wind_speed {self.wind_speed} below the floor of {U_MIN} m/s"
            )
        if not (0.0 <= self.wind_direction < 360.0):
            raise ScenarioError(
                f"wind_direction {self.wind_direction} outside [0, 360)"
            )
        if not (0.0 <= self.humidity <= 100.0):
            raise ScenarioError(f"humidity {self.humidity} outside [0, 100]")
        if self.rainfall < 0.0:
            raise ScenarioError(f"rainfall {self.rainfall} must be >= 0")


def default_weights(k: int) -> tuple[float, ...]:
    """Strictly decreasing payoff-memory weights summing to 1."""
    raw = np.arange(k, 0, -1, dtype=float)
    return tuple(raw / raw.sum())


@dataclass(frozen=True)
class GameParams:
    """Evolutionary-game parameters for the emission agents."""

    memory_k: int = 5
    alpha: float = 0.1
    neighbors: int = 4
    weights: tuple[float, ...] | None = None
    initial_cooperator_fraction: float = 0.5
    delta: float = 0.25

    def resolved_weights(self) -> tuple[float, ...]:
        return self.weights if self.weights is not None else default_weights(self.memory_k)

    def validate(self, n_sources: int | None = None) -> None:
        if self.memory_k < 1:
            raise ScenarioError(f"game.memory_k must be >= 1, got {self.memory_k}")
        if not (0.0 < self.alpha < 1.0):
            raise ScenarioError(f"game.alpha must lie in (0, 1), got {self.alpha}")
        if not (0.0 <= self.initial_cooperator_fraction <= 1.0):
            raise ScenarioError("game.initial_cooperator_fraction outside [0, 1]")
        if not (0.0 < self.delta <= 1.0):
            raise ScenarioError(f"game.delta must lie in (0, 1], got {self.delta}")
        w = self.resolved_weights()
        if len(w) != self.memory_k:
            raise ScenarioError(
                f"game.weights has {len(w)} entries for memory_k={self.memory_k}"
            )
        if abs(sum(w) - 1.0) > 1e-12:
            raise ScenarioError(f"game.weights must sum to 1, got {sum(w)!r}")
        if any(w[i] <= w[i + 1] for i in range(len(w) - 1)):
            raise ScenarioError("game.weights must be strictly decreasing")
        if self.neighbors < 1:
            raise ScenarioError(f"game.neighbors must be >= 1, got {self.neighbors}")
        if n_sources is not None and self.neighbors >= n_sources:
            raise ScenarioError(
                f"game.neighbors={self.neighbors} must be below the number of "
                f"sources ({n_sources})"
            )


@dataclass(frozen=True)
class RegulationParams:
    """Reward/penalty coefficients and central-agency control parameters."""

    beta: float = 1.0
    lam: float = 2.0
    cs_reduce_factor: float = 0.5
    cs_resume_after: int = 3
    cs_resume_step: float = 0.1

    def validate(self) -> None:
        if self.beta < 0.0:
            raise ScenarioError(f"regulation.beta must be >= 0, got {self.beta}")
        if self.lam < 0.0:
            raise ScenarioError(f"regulation.lambda must be >= 0, got {self.lam}")
        if not (0.0 < self.cs_reduce_factor < 1.0):
            raise ScenarioError(
                f"regulation.cs_reduce_factor must lie in (0, 1), got {self.cs_reduce_factor}"
            )
        if self.cs_resume_after < 1:
            raise ScenarioError(
                f"regulation.cs_resume_after must be >= 1, got {self.cs_resume_after}"
            )
        if self.cs_resume_step <= 0.0:
            raise ScenarioError(
                f"regulation.cs_resume_step must be > 0, got {self.cs_resume_step}"
            )


@dataclass(frozen=True)
class CycleParams:
    """Seasonal sinusoid plus AR(1) noise for one weather variable."""

    mean: float
    amplitude: float
    period_steps: float = 84.0
    phase: float = 0.0
    noise: float = 0.0
    ar: float = 0.85

    def validate(self, name: str) -> None:
        if self.period_steps <= 0.0:
            raise ScenarioError(f"climate.{name}.period_steps must be > 0")
        if not (0.0 <= self.ar < 1.0):
            raise ScenarioError(f"climate.{name}.ar must lie in [0, 1)")
        if self.noise < 0.0:
            raise ScenarioError(f"climate.{name}.noise must be >= 0")


@dataclass(frozen=True)
class WindDirectionParams:
    """Slowly wandering wind direction: base bearing plus AR(1) deviation."""

    base: float = 270.0
    noise: float = 10.0
    ar: float = 0.9

    def validate(self) -> None:
        if not (0.0 <= self.base < 360.0):
            raise ScenarioError("climate.wind_direction.base outside [0, 360)")
        if not (0.0 <= self.ar < 1.0):
            raise ScenarioError("climate.wind_direction.ar must lie in [0, 1)")
        if self.noise < 0.0:
            raise ScenarioError("climate.wind_direction.noise must be >= 0")


@dataclass(frozen=True)
class SyntheticClimateParams:
    """Generator settings for a synthetic climate series."""

    wind_speed: CycleParams = CycleParams(mean=2.4, amplitude=1.1, phase=0.0, noise=0.3)
    temperature: CycleParams = CycleParams(mean=18.0, amplitude=6.0, phase=1.0, noise=0.8)
    humidity: CycleParams = CycleParams(mean=65.0, amplitude=15.0, phase=2.5, noise=3.0)
    rainfall: CycleParams = CycleParams(mean=-0.4, amplitude=0.6, phase=4.0, noise=0.5)
    wind_direction: WindDirectionParams = WindDirectionParams()
    seed: int | None = None

    def validate(self) -> None:
        self.wind_speed.validate("wind_speed")
        self.temperature.validate("temperature")
        self.humidity.validate("humidity")
        self.rainfall.validate("rainfall")
        self.wind_direction.validate()


@dataclass(frozen=True)
class CsvClimateSource:
    """Climate loaded from a CSV file (see `ingest_climate_csv`)."""

    path: str


@dataclass(frozen=True)
class PlacementSpec:
    """Seeded uniform-random placement of identical sources."""

    count: int
    er_max: float = 2000.0
    stack_height: float = 20.0
    initial_rate: float | None = None
    seed: int | None = None

    def validate(self) -> None:
        if self.count < 1:
            raise ScenarioError(f"placement.count must be >= 1, got {self.count}")


@dataclass(frozen=True)
class Scenario:
    """A complete, validated experiment description."""

    n_steps: int
    grid: GridSpec
    sources: tuple[SourceSpec, ...]
    climate: tuple[ClimateRecord, ...]
    step_hours: float = 2.0
    horizon_steps: int = 2
    goal: float = 70.0
    strategy: Strategy = Strategy.NC
    game: GameParams = GameParams()
    regulation: RegulationParams = RegulationParams()
    sigma: SigmaCoeffs = SigmaCoeffs()
    seed: int = 1
    # Provenance of generated parts, kept so serialisation round-trips.
    placement: PlacementSpec | None = None
    climate_source: SyntheticClimateParams | CsvClimateSource | None = None

    def validate(self) -> None:
        if self.n_steps < 1:
            raise ScenarioError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.horizon_steps < 1:
            raise ScenarioError(f"horizon_steps must be >= 1, got {self.horizon_steps}")
        if self.step_hours <= 0.0:
            raise ScenarioError(f"step_hours must be > 0, got {self.step_hours}")
        if self.goal <= 0.0:
            raise ScenarioError(f"goal must be > 0, got {self.goal}")
        if self.seed < 0:
            raise ScenarioError(f"seed must be a non-negative integer, got {self.seed}")
        self.grid.validate()
        if not self.sources:
            raise ScenarioError("scenario needs at least one source")
        seen_ids = set()
        for src in self.sources:
            src.validate(self.grid)
            if src.id in seen_ids:
                raise ScenarioError(f"duplicate source id {src.id}")
            seen_ids.add(src.id)
        if len(self.climate) < self.n_steps + self.horizon_steps:
            raise ScenarioError(
                f"climate has {len(self.climate)} records; need at least "
                f"n_steps + horizon_steps = {self.n_steps + self.horizon_steps}"
            )
        for rec in self.climate:
            rec.validate()
        # Neighbour count is only binding when an evolutionary strategy runs;
        # a one-source scenario with the default game block is still valid.
        if self.strategy in (Strategy.EG_PENALTIES, Strategy.EG_NO_PENALTIES):
            self.game.validate(n_sources=len(self.sources))
        else:
            self.game.validate()
        self.regulation.validate()
        self.sigma.validate()

    def with_strategy(self, strategy: Strategy | str) -> "Scenario":
        return replace(self, strategy=Strategy(strategy))


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------


def place_sources(
    seed,
    n: int,
    grid: GridSpec,
    er_max: float = 2000.0,
    stack_height: float = 20.0,
    initial_rate: float | None = None,
) -> tuple[SourceSpec, ...]:
    """n sources uniformly scattered over the grid footprint, seeded."""
    if n < 1:
        raise ScenarioError(f"source count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, grid.extent_x, size=n)
    ys = rng.uniform(0.0, grid.extent_y, size=n)
    init = er_max if initial_rate is None else initial_rate
    return tuple(
        SourceSpec(
            id=i,
            x=float(xs[i]),
            y=float(ys[i]),
            stack_height=stack_height,
            er_max=er_max,
            initial_rate=init,
        )
        for i in range(n)
    )


def _cycle_series(t: np.ndarray, p: CycleParams, rng: np.random.Generator) -> np.ndarray:
    base = p.mean + p.amplitude * np.sin(2.0 * np.pi * (t / p.period_steps) + p.phase)
    eps = rng.standard_normal(t.size)
    ar1 = np.empty(t.size)
    prev = 0.0
    for i in range(t.size):
        prev = p.ar * prev + p.noise * eps[i]
        ar1[i] = prev
    return base + ar1


def generate_synthetic_climate(
    seed, n: int, params: SyntheticClimateParams | None = None
) -> tuple[ClimateRecord, ...]:
    """Seeded synthetic weather: sinusoid + AR(1) noise, clipped to bounds.

    Variables are generated in a fixed order (wind speed, temperature,
    humidity, rainfall, direction), so the stream layout is stable.
    """
    if n < 1:
        raise ScenarioError(f"climate length must be >= 1, got {n}")
    p = params or SyntheticClimateParams()
    p.validate()
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=float)
    wind = np.clip(_cycle_series(t, p.wind_speed, rng), U_MIN, None)
    temp = _cycle_series(t, p.temperature, rng)
    hum = np.clip(_cycle_series(t, p.humidity, rng), 0.0, 100.0)
    rain = np.clip(_cycle_series(t, p.rainfall, rng), 0.0, None)
    dev = np.empty(n)
    prev = 0.0
    eps = rng.standard_normal(n)
    for i in range(n):
        prev = p.wind_direction.ar * prev + p.wind_direction.noise * eps[i]
        dev[i] = prev
    direction = np.mod(p.wind_direction.base + dev, 360.0)
    return tuple(
        ClimateRecord(
            wind_speed=float(wind[i]),
            wind_direction=float(direction[i]),
            temperature=float(temp[i]),
            humidity=float(hum[i]),
            rainfall=float(rain[i]),
        )
        for i in range(n)
    )


CLIMATE_CSV_COLUMNS = ("wind_speed", "wind_direction", "temperature", "humidity", "rainfall")


def ingest_climate_csv(text: str) -> tuple[ClimateRecord, ...]:
    """Parse a climate CSV with the canonical header, range-validating rows."""
    reader = csv.DictReader(io.StringIO(text))
    header = reader.fieldnames
    if header is None:
        raise ScenarioError("climate CSV is empty; expected a header row")
    missing = [c for c in CLIMATE_CSV_COLUMNS if c not in header]
    extra = [c for c in header if c not in CLIMATE_CSV_COLUMNS]
    if missing:
        raise ScenarioError(f"climate CSV missing column(s): {', '.join(missing)}")
    if extra:
        raise ScenarioError(f"climate CSV has unknown column(s): {', '.join(extra)}")
    records = []
    for idx, row in enumerate(reader):
        values = {}
        for col in CLIMATE_CSV_COLUMNS:
            raw = row[col]
            try:
                values[col] = float(raw)
            except (TypeError, ValueError):
                raise ScenarioError(
                    f"climate CSV row {idx}: cannot parse {col}={raw!r}"
                ) from None
        rec = ClimateRecord(**values)
        try:
            rec.validate()
        except ScenarioError as exc:
            raise ScenarioError(f"climate CSV row {idx}: {exc}") from None
        records.append(rec)
    return tuple(records)


def climate_to_csv(records: Iterable[ClimateRecord]) -> str:
    """Serialise climate records back to the canonical CSV format."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CLIMATE_CSV_COLUMNS)
    for rec in records:
        writer.writerow(
            [
                repr(rec.wind_speed),
                repr(rec.wind_direction),
                repr(rec.temperature),
                repr(rec.humidity),
                repr(rec.rainfall),
            ]
        )
    return out.getvalue()


# ---------------------------------------------------------------------------
# TOML scenario documents
# ---------------------------------------------------------------------------

_TOP_KEYS = {
    "n_steps",
    "step_hours",
    "horizon_steps",
    "goal",
    "strategy",
    "seed",
    "grid",
    "game",
    "regulation",
    "sigma",
    "climate",
    "placement",
    "sources",
}
_GRID_KEYS = {"nx", "ny", "nz", "box_edge"}
_GAME_KEYS = {
    "memory_k",
    "alpha",
    "neighbors",
    "weights",
    "initial_cooperator_fraction",
    "delta",
}
_REG_KEYS = {"beta", "lambda", "cs_reduce_factor", "cs_resume_after", "cs_resume_step"}
_SIGMA_KEYS = {"a_y", "b_y", "c_y", "a_z", "b_z", "c_z"}
_CLIMATE_KEYS = {
    "mode",
    "seed",
    "path",
    "records",
    "wind_speed",
    "temperature",
    "humidity",
    "rainfall",
    "wind_direction",
}
_CYCLE_KEYS = {"mean", "amplitude", "period_steps", "phase", "noise", "ar"}
_WDIR_KEYS = {"base", "noise", "ar"}
_PLACEMENT_KEYS = {"count", "er_max", "stack_height", "initial_rate", "seed"}
_SOURCE_KEYS = {"id", "x", "y", "stack_height", "er_max", "initial_rate"}
_RECORD_KEYS = set(CLIMATE_CSV_COLUMNS)


def _check_keys(table: dict, allowed: set, where: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ScenarioError(f"unknown key '{unknown[0]}' in {where}")


def _num(table: dict, key: str, where: str, default):
    if key not in table:
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ScenarioError(f"{where}.{key} must be a number, got {v!r}")
    return float(v)


def _intval(table: dict, key: str, where: str, default):
    if key not in table:
        return default
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ScenarioError(f"{where}.{key} must be an integer, got {v!r}")
    return v


def _parse_cycle(table: dict, name: str, default: CycleParams) -> CycleParams:
    where = f"[climate.{name}]"
    _check_keys(table, _CYCLE_KEYS, where)
    return CycleParams(
        mean=_num(table, "mean", where, default.mean),
        amplitude=_num(table, "amplitude", where, default.amplitude),
        period_steps=_num(table, "period_steps", where, default.period_steps),
        phase=_num(table, "phase", where, default.phase),
        noise=_num(table, "noise", where, default.noise),
        ar=_num(table, "ar", where, default.ar),
    )


def _parse_climate_section(
    table: dict, seed: int, n_records: int, base_dir: Path | None
) -> tuple[tuple[ClimateRecord, ...], SyntheticClimateParams | CsvClimateSource | None]:
    _check_keys(table, _CLIMATE_KEYS, "[climate]")
    mode = table.get("mode", "synthetic")
    if mode == "synthetic":
        defaults = SyntheticClimateParams()
        params = SyntheticClimateParams(
            wind_speed=_parse_cycle(table.get("wind_speed", {}), "wind_speed", defaults.wind_speed),
            temperature=_parse_cycle(
                table.get("temperature", {}), "temperature", defaults.temperature
            ),
            humidity=_parse_cycle(table.get("humidity", {}), "humidity", defaults.humidity),
            rainfall=_parse_cycle(table.get("rainfall", {}), "rainfall", defaults.rainfall),
            wind_direction=_parse_wdir(table.get("wind_direction", {})),
            seed=_intval(table, "seed", "[climate]", None),
        )
        cseed = params.seed
        seq = cseed if cseed is not None else np.random.SeedSequence([seed, CLIMATE_STREAM])
        return generate_synthetic_climate(seq, n_records, params), params
    if mode == "csv":
        if "path" not in table:
            raise ScenarioError("[climate] mode='csv' requires a 'path' key")
        path = Path(table["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ScenarioError(f"cannot read climate CSV {path}: {exc}") from None
        return ingest_climate_csv(text), CsvClimateSource(path=str(table["path"]))
    if mode == "inline":
        rows = table.get("records", [])
        records = []
        for idx, row in enumerate(rows):
            _check_keys(row, _RECORD_KEYS, f"[[climate.records]] #{idx}")
            try:
                rec = ClimateRecord(
                    wind_speed=float(row["wind_speed"]),
                    wind_direction=float(row["wind_direction"]),
                    temperature=float(row["temperature"]),
                    humidity=float(row["humidity"]),
                    rainfall=float(row["rainfall"]),
                )
            except KeyError as exc:
                raise ScenarioError(
                    f"[[climate.records]] #{idx} missing key {exc.args[0]!r}"
                ) from None
            records.append(rec)
        return tuple(records), None
    raise ScenarioError(f"[climate].mode must be synthetic, csv or inline, got {mode!r}")


def _parse_wdir(table: dict) -> WindDirectionParams:
    _check_keys(table, _WDIR_KEYS, "[climate.wind_direction]")
    d = WindDirectionParams()
    return WindDirectionParams(
        base=_num(table, "base", "[climate.wind_direction]", d.base),
        noise=_num(table, "noise", "[climate.wind_direction]", d.noise),
        ar=_num(table, "ar", "[climate.wind_direction]", d.ar),
    )


def load_scenario(text: str, base_dir: str | Path | None = None) -> Scenario:
    """Parse and validate a TOML scenario document.

    Unknown keys are errors. Omitted sections fall back to defaults;
    omitted climate is synthesised with a seed derived from the scenario
    seed. base_dir anchors relative climate CSV paths.
    """
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"parse error: {exc}") from None
    base = Path(base_dir) if base_dir is not None else None
    _check_keys(data, _TOP_KEYS, "the scenario document")

    if "n_steps" not in data:
        raise ScenarioError("scenario document must set n_steps")
    n_steps = _intval(data, "n_steps", "scenario", None)
    step_hours = _num(data, "step_hours", "scenario", 2.0)
    horizon = _intval(data, "horizon_steps", "scenario", 2)
    goal = _num(data, "goal", "scenario", 70.0)
    seed = _intval(data, "seed", "scenario", 1)
    strategy_raw = data.get("strategy", "NC")
    try:
        strategy = Strategy(strategy_raw)
    except ValueError:
        names = ", ".join(s.value for s in Strategy)
        raise ScenarioError(f"strategy must be one of {names}, got {strategy_raw!r}") from None

    grid_tbl = data.get("grid", {})
    _check_keys(grid_tbl, _GRID_KEYS, "[grid]")
    gd = GridSpec()
    grid = GridSpec(
        nx=_intval(grid_tbl, "nx", "grid", gd.nx),
        ny=_intval(grid_tbl, "ny", "grid", gd.ny),
        nz=_intval(grid_tbl, "nz", "grid", gd.nz),
        box_edge=_num(grid_tbl, "box_edge", "grid", gd.box_edge),
    )

    game_tbl = data.get("game", {})
    _check_keys(game_tbl, _GAME_KEYS, "[game]")
    gp = GameParams()
    weights = game_tbl.get("weights")
    if weights is not None:
        if not isinstance(weights, list) or not all(
            isinstance(w, (int, float)) and not isinstance(w, bool) for w in weights
        ):
            raise ScenarioError("game.weights must be a list of numbers")
        weights = tuple(float(w) for w in weights)
    game = GameParams(
        memory_k=_intval(game_tbl, "memory_k", "game", gp.memory_k),
        alpha=_num(game_tbl, "alpha", "game", gp.alpha),
        neighbors=_intval(game_tbl, "neighbors", "game", gp.neighbors),
        weights=weights,
        initial_cooperator_fraction=_num(
            game_tbl, "initial_cooperator_fraction", "game", gp.initial_cooperator_fraction
        ),
        delta=_num(game_tbl, "delta", "game", gp.delta),
    )

    reg_tbl = data.get("regulation", {})
    _check_keys(reg_tbl, _REG_KEYS, "[regulation]")
    rp = RegulationParams()
    regulation = RegulationParams(
        beta=_num(reg_tbl, "beta", "regulation", rp.beta),
        lam=_num(reg_tbl, "lambda", "regulation", rp.lam),
        cs_reduce_factor=_num(reg_tbl, "cs_reduce_factor", "regulation", rp.cs_reduce_factor),
        cs_resume_after=_intval(reg_tbl, "cs_resume_after", "regulation", rp.cs_resume_after),
        cs_resume_step=_num(reg_tbl, "cs_resume_step", "regulation", rp.cs_resume_step),
    )

    sigma_tbl = data.get("sigma", {})
    _check_keys(sigma_tbl, _SIGMA_KEYS, "[sigma]")
    sd = SigmaCoeffs()
    sigma = SigmaCoeffs(
        a_y=_num(sigma_tbl, "a_y", "sigma", sd.a_y),
        b_y=_num(sigma_tbl, "b_y", "sigma", sd.b_y),
        c_y=_num(sigma_tbl, "c_y", "sigma", sd.c_y),
        a_z=_num(sigma_tbl, "a_z", "sigma", sd.a_z),
        b_z=_num(sigma_tbl, "b_z", "sigma", sd.b_z),
        c_z=_num(sigma_tbl, "c_z", "sigma", sd.c_z),
    )

    placement = None
    if "sources" in data and "placement" in data:
        raise ScenarioError("give either [[sources]] or [placement], not both")
    if "sources" in data:
        rows = data["sources"]
        if not isinstance(rows, list):
            raise ScenarioError("[[sources]] must be an array of tables")
        sources = []
        for idx, row in enumerate(rows):
            _check_keys(row, _SOURCE_KEYS, f"[[sources]] #{idx}")
            if "x" not in row or "y" not in row:
                raise ScenarioError(f"[[sources]] #{idx} needs x and y")
            sdft = SourceSpec(id=0, x=0.0, y=0.0)
            er_max = _num(row, "er_max", f"sources[{idx}]", sdft.er_max)
            sources.append(
                SourceSpec(
                    id=_intval(row, "id", f"sources[{idx}]", idx),
                    x=_num(row, "x", f"sources[{idx}]", None),
                    y=_num(row, "y", f"sources[{idx}]", None),
                    stack_height=_num(row, "stack_height", f"sources[{idx}]", sdft.stack_height),
                    er_max=er_max,
                    initial_rate=_num(row, "initial_rate", f"sources[{idx}]", er_max),
                )
            )
        sources = tuple(sources)
    elif "placement" in data:
        tbl = data["placement"]
        _check_keys(tbl, _PLACEMENT_KEYS, "[placement]")
        if "count" not in tbl:
            raise ScenarioError("[placement] requires a 'count' key")
        pdft = PlacementSpec(count=1)
        placement = PlacementSpec(
            count=_intval(tbl, "count", "placement", None),
            er_max=_num(tbl, "er_max", "placement", pdft.er_max),
            stack_height=_num(tbl, "stack_height", "placement", pdft.stack_height),
            initial_rate=_num(tbl, "initial_rate", "placement", None),
            seed=_intval(tbl, "seed", "placement", None),
        )
        placement.validate()
        pseed = placement.seed
        seq = pseed if pseed is not None else np.random.SeedSequence([seed, PLACEMENT_STREAM])
        sources = place_sources(
            seq,
            placement.count,
            grid,
            er_max=placement.er_max,
            stack_height=placement.stack_height,
            initial_rate=placement.initial_rate,
        )
    else:
        raise ScenarioError("scenario document must define [[sources]] or [placement]")

    n_climate = n_steps + horizon if n_steps is not None else 0
    climate, climate_source = _parse_climate_section(
        data.get("climate", {}), seed, n_climate, base
    )

    scenario = Scenario(
        n_steps=n_steps,
        grid=grid,
        sources=sources,
        climate=climate,
        step_hours=step_hours,
        horizon_steps=horizon,
        goal=goal,
        strategy=strategy,
        game=game,
        regulation=regulation,
        sigma=sigma,
        seed=seed,
        placement=placement,
        climate_source=climate_source,
    )
    scenario.validate()
    return scenario


def load_scenario_file(path: str | Path) -> Scenario:
    p = Path(path)
    return load_scenario(p.read_text(encoding="utf-8"), base_dir=p.parent)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialise {type(v)}")


def _emit_table(name: str, items: dict, out: list, array: bool = False) -> None:
    out.append(f"[[{name}]]" if array else f"[{name}]")
    for k, v in items.items():
        out.append(f"{k} = {_toml_value(v)}")
    out.append("")


def serialize_scenario(sc: Scenario) -> str:
    """Emit a TOML document that loads back to an identical Scenario.

    Generated parts (placed sources, synthetic climate) are written as
    their generator settings; regeneration from the same seed reproduces
    them exactly. Scenarios built without provenance get their climate
    inlined record by record.
    """
    out: list[str] = []
    out.append(f"n_steps = {sc.n_steps}")
    out.append(f"step_hours = {_toml_value(sc.step_hours)}")
    out.append(f"horizon_steps = {sc.horizon_steps}")
    out.append(f"goal = {_toml_value(sc.goal)}")
    out.append(f'strategy = "{sc.strategy.value}"')
    out.append(f"seed = {sc.seed}")
    out.append("")
    _emit_table(
        "grid",
        {"nx": sc.grid.nx, "ny": sc.grid.ny, "nz": sc.grid.nz, "box_edge": sc.grid.box_edge},
        out,
    )
    game_items = {
        "memory_k": sc.game.memory_k,
        "alpha": sc.game.alpha,
        "neighbors": sc.game.neighbors,
        "initial_cooperator_fraction": sc.game.initial_cooperator_fraction,
        "delta": sc.game.delta,
    }
    if sc.game.weights is not None:
        game_items["weights"] = list(sc.game.weights)
    _emit_table("game", game_items, out)
    _emit_table(
        "regulation",
        {
            "beta": sc.regulation.beta,
            "lambda": sc.regulation.lam,
            "cs_reduce_factor": sc.regulation.cs_reduce_factor,
            "cs_resume_after": sc.regulation.cs_resume_after,
            "cs_resume_step": sc.regulation.cs_resume_step,
        },
        out,
    )
    _emit_table(
        "sigma",
        {
            "a_y": sc.sigma.a_y,
            "b_y": sc.sigma.b_y,
            "c_y": sc.sigma.c_y,
            "a_z": sc.sigma.a_z,
            "b_z": sc.sigma.b_z,
            "c_z": sc.sigma.c_z,
        },
        out,
    )
    src = sc.climate_source
    if isinstance(src, SyntheticClimateParams):
        items: dict = {"mode": "synthetic"}
        if src.seed is not None:
            items["seed"] = src.seed
        _emit_table("climate", items, out)
        for name in ("wind_speed", "temperature", "humidity", "rainfall"):
            c: CycleParams = getattr(src, name)
            _emit_table(
                f"climate.{name}",
                {
                    "mean": c.mean,
                    "amplitude": c.amplitude,
                    "period_steps": c.period_steps,
                    "phase": c.phase,
                    "noise": c.noise,
                    "ar": c.ar,
                },
                out,
            )
        wd = src.wind_direction
        _emit_table(
            "climate.wind_direction",
            {"base": wd.base, "noise": wd.noise, "ar": wd.ar},
            out,
        )
    elif isinstance(src, CsvClimateSource):
        _emit_table("climate", {"mode": "csv", "path": src.path}, out)
    else:
        _emit_table("climate", {"mode": "inline"}, out)
        for rec in sc.climate:
            _emit_table(
                "climate.records",
                {
                    "wind_speed": rec.wind_speed,
                    "wind_direction": rec.wind_direction,
                    "temperature": rec.temperature,
                    "humidity": rec.humidity,
                    "rainfall": rec.rainfall,
                },
                out,
                array=True,
            )
    if sc.placement is not None:
        items = {
            "count": sc.placement.count,
            "er_max": sc.placement.er_max,
            "stack_height": sc.placement.stack_height,
        }
        if sc.placement.initial_rate is not None:
            items["initial_rate"] = sc.placement.initial_rate
        if sc.placement.seed is not None:
            items["seed"] = sc.placement.seed
        _emit_table("placement", items, out)
    else:
        for s in sc.sources:
            _emit_table(
                "sources",
                {
                    "id": s.id,
                    "x": s.x,
                    "y": s.y,
                    "stack_height": s.stack_height,
                    "er_max": s.er_max,
                    "initial_rate": s.initial_rate,
                },
                out,
                array=True,
            )
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Default scenario
# ---------------------------------------------------------------------------

# Reference city scenario: 100 controllable sources capped at 2000 g/h on a
# compact 3 km x 3 km footprint, regulating the grid-mean concentration
# against a 70 ug/m3 goal over a 30-day run (360 two-hour steps).
DEFAULT_SCENARIO_TEMPLATE = """\
n_steps = {n_steps}
step_hours = 2.0
horizon_steps = 2
goal = 70.0
strategy = "{strategy}"
seed = {seed}

[grid]
nx = 3
ny = 3
nz = 1
box_edge = 1000.0

[placement]
count = 100
er_max = 2000.0
stack_height = 20.0
initial_rate = 2000.0

[game]
memory_k = 5
alpha = 0.1
neighbors = 4
initial_cooperator_fraction = 0.5
delta = 0.25

[regulation]
beta = 1.0
lambda = 200.0
cs_reduce_factor = 0.5
cs_resume_after = 3
cs_resume_step = 0.05

[climate]
mode = "synthetic"

[climate.wind_speed]
mean = 2.4
amplitude = 1.1
period_steps = 84.0
phase = 0.0
noise = 0.3
ar = 0.85
"""


def default_scenario_toml(seed: int = 1, n_steps: int = 360, strategy: str = "NC") -> str:
    return DEFAULT_SCENARIO_TEMPLATE.format(seed=seed, n_steps=n_steps, strategy=strategy)


def make_default_scenario(
    seed: int = 1, n_steps: int = 360, strategy: Strategy | str = Strategy.NC
) -> Scenario:
    """The reference 100-source scenario used by the comparison harness."""
    strat = Strategy(strategy)
    return load_scenario(default_scenario_toml(seed=seed, n_steps=n_steps, strategy=strat.value))
