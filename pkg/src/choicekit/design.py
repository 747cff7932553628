"""Randomized choice-experiment designs.

Levels are drawn uniformly and independently onto each non-opt-out
alternative, matching the survey protocol: no D-efficiency, no
orthogonality. Continuous attributes draw from a finite level grid
declared in the config, since that is what a choice card can display.

Generation is deterministic under the seed and uses one spawned
substream per respondent, so a parallel generator would produce the
same design regardless of worker count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import (
    OPT_OUT,
    OUTLET_LABELS,
    Alternative,
    AttributeDef,
    ChoiceTask,
    Respondent,
    _check_schema,
    _write_long_csv,
    consumer_schema,
    farmer_schema,
)
from .errors import InvalidConfigError

DEFAULT_GRIDS = {
    "consumer": {
        "price": (6.0, 10.0, 14.0, 18.0, 22.0),
        "travel_time": (5.0, 10.0, 15.0, 20.0, 30.0, 40.0),
    },
    "farmer": {
        "price": (1.0, 2.0, 3.0, 4.0, 5.0),
        "travel_time": (5.0, 10.0, 15.0, 20.0, 30.0, 40.0),
    },
}

# attribute values pinned by the nature of an outlet rather than drawn:
# growers do not travel to sell at their own farm; the supermarket always
# carries the widest assortment.
DEFAULT_STRUCTURAL = {
    "consumer": {"assortment": {"supermarche": "wide"}},
    "farmer": {"travel_time": {"ferme": 0.0}},
}


@dataclass(frozen=True)
class DesignConfig:
    """Everything needed to reproduce a design: schema, sizes, grids, seed."""

    schema: tuple[AttributeDef, ...]
    population: str = "consumer"
    n_tasks: int = 6
    n_alts: int = 6
    seed: int = 0
    grids: Mapping[str, tuple[float, ...]] = field(default_factory=dict)
    structural_values: Mapping[str, Mapping[str, float | str]] = field(default_factory=dict)
    outlets: tuple[str, ...] = OUTLET_LABELS

    def __post_init__(self):
        object.__setattr__(self, "schema", _check_schema(self.schema))
        object.__setattr__(self, "outlets", tuple(self.outlets))
        object.__setattr__(
            self, "grids", {k: tuple(float(x) for x in v) for k, v in dict(self.grids).items()}
        )
        object.__setattr__(
            self, "structural_values", {k: dict(v) for k, v in dict(self.structural_values).items()}
        )
        if self.population not in ("consumer", "farmer"):
            raise InvalidConfigError(f"unknown population {self.population!r}")
        if self.n_alts < 2:
            raise InvalidConfigError("n_alts must be at least 2 (one choice plus the opt-out)")
        if self.n_tasks < 1:
            raise InvalidConfigError("n_tasks must be positive")
        if not self.outlets or any(o not in OUTLET_LABELS for o in self.outlets):
            raise InvalidConfigError(f"outlets must be drawn from {OUTLET_LABELS}")
        by_name = {a.name: a for a in self.schema}
        for attr in self.schema:
            if attr.kind == "continuous":
                grid = self.grids.get(attr.name)
                if not grid:
                    raise InvalidConfigError(
                        f"continuous attribute {attr.name!r} needs a level grid"
                    )
        for name, per_outlet in self.structural_values.items():
            attr = by_name.get(name)
            if attr is None:
                raise InvalidConfigError(f"structural value for unknown attribute {name!r}")
            for outlet, value in per_outlet.items():
                if outlet not in self.outlets:
                    raise InvalidConfigError(f"structural value for unknown outlet {outlet!r}")
                attr.validate_value(value)


@dataclass(frozen=True)
class Design:
    """Task skeletons per respondent (no chosen flags yet).

    Designs produced by generate_design are fully determined by their
    config, seed included; designs can also be loaded back from the CSV
    export, in which case only schema and population are known.
    """

    schema: tuple[AttributeDef, ...]
    population: str
    tasks_by_respondent: tuple[tuple[ChoiceTask, ...], ...]

    @property
    def n_respondents(self) -> int:
        return len(self.tasks_by_respondent)

    @property
    def n_alternatives(self) -> int:
        return sum(
            len(t.alternatives) for tasks in self.tasks_by_respondent for t in tasks
        )

    def iter_alternatives(self):
        for tasks in self.tasks_by_respondent:
            for task in tasks:
                for alt in task.alternatives:
                    yield alt


def _draw_value(attr: AttributeDef, grid, rng: np.random.Generator):
    if attr.kind == "continuous":
        return grid[rng.integers(len(grid))]
    return attr.levels[rng.integers(len(attr.levels))]


def generate_design(config: DesignConfig, n_respondents: int) -> Design:
    """Draw a design: n_tasks cards per respondent, each with one opt-out
    slot and uniform independent attribute levels elsewhere."""
    if n_respondents < 1:
        raise InvalidConfigError("n_respondents must be positive")
    n_real = config.n_alts - 1
    outlets = config.outlets
    children = np.random.SeedSequence(config.seed).spawn(n_respondents)
    all_tasks: list[tuple[ChoiceTask, ...]] = []
    for child in children:
        rng = np.random.default_rng(child)
        tasks: list[ChoiceTask] = []
        for t in range(config.n_tasks):
            if n_real <= len(outlets):
                task_outlets = [outlets[i] for i in rng.permutation(len(outlets))[:n_real]]
            else:
                task_outlets = [outlets[i] for i in rng.integers(len(outlets), size=n_real)]
            alternatives = []
            for j, outlet in enumerate(task_outlets):
                values: dict[str, float | str] = {}
                for attr in config.schema:
                    values[attr.name] = _draw_value(attr, config.grids.get(attr.name), rng)
                    pinned = config.structural_values.get(attr.name, {})
                    if outlet in pinned:
                        values[attr.name] = attr.validate_value(pinned[outlet])
                alternatives.append(Alternative(f"a{j + 1}", outlet, values))
            alternatives.append(Alternative(f"a{n_real + 1}", OPT_OUT))
            tasks.append(ChoiceTask(f"t{t + 1}", tuple(alternatives)))
        all_tasks.append(tuple(tasks))
    return Design(config.schema, config.population, tuple(all_tasks))


@dataclass(frozen=True)
class BalanceReport:
    """Level frequencies and pairwise level co-occurrence of a design."""

    n_alternatives: int
    level_counts: Mapping[str, Mapping[str, int]]
    cooccurrence: Mapping[tuple[str, str], Mapping[tuple[str, str], int]]


def design_balance_report(design: Design) -> BalanceReport:
    """Count drawn levels per attribute and per attribute pair."""
    schema = design.schema
    level_counts: dict[str, dict[str, int]] = {a.name: {} for a in schema}
    pairs = [
        (a.name, b.name)
        for i, a in enumerate(schema)
        for b in schema[i + 1:]
    ]
    cooccurrence: dict[tuple[str, str], dict[tuple[str, str], int]] = {p: {} for p in pairs}
    n_alts = 0
    for alt in design.iter_alternatives():
        if alt.is_opt_out:
            continue
        n_alts += 1
        labels = {name: str(value) for name, value in alt.values.items()}
        for name, label in labels.items():
            counts = level_counts[name]
            counts[label] = counts.get(label, 0) + 1
        for a_name, b_name in pairs:
            key = (labels[a_name], labels[b_name])
            table = cooccurrence[(a_name, b_name)]
            table[key] = table.get(key, 0) + 1
    return BalanceReport(n_alts, level_counts, cooccurrence)


def save_design(design: Design, path: str | Path) -> None:
    """Export as the canonical long CSV with the chosen column absent."""
    respondents = tuple(
        Respondent(f"r{i + 1:04d}", design.population, tasks)
        for i, tasks in enumerate(design.tasks_by_respondent)
    )
    _write_long_csv(design.schema, respondents, path, include_chosen=False)


def load_design(path: str | Path, schema, population: str) -> Design:
    """Read a chosen-less long CSV back into a design."""
    schema = _check_schema(schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        required = ["resp_id", "pop", "task_id", "alt_id", "outlet"] + [a.name for a in schema]
        for col in required:
            if col not in header:
                raise InvalidConfigError(f"{path}: design file is missing column {col!r}")
        by_resp: dict[str, dict[str, list[Alternative]]] = {}
        order: list[str] = []
        for row in reader:
            resp_id = row["resp_id"].strip()
            if resp_id not in by_resp:
                by_resp[resp_id] = {}
                order.append(resp_id)
            tasks = by_resp[resp_id]
            tid = row["task_id"].strip()
            outlet = row["outlet"].strip()
            values: dict[str, float | str] = {}
            if outlet != OPT_OUT:
                for attr in schema:
                    values[attr.name] = attr.validate_value(row[attr.name])
            tasks.setdefault(tid, []).append(Alternative(row["alt_id"].strip(), outlet, values))
    all_tasks = tuple(
        tuple(ChoiceTask(tid, tuple(alts)) for tid, alts in by_resp[resp_id].items())
        for resp_id in order
    )
    return Design(schema, population, all_tasks)


def default_design_config(population: str, seed: int,
                          n_tasks: int = 6, n_alts: int = 6,
                          grids: Mapping[str, tuple[float, ...]] | None = None,
                          structural_values=None) -> DesignConfig:
    """Config with the survey-shaped defaults for one population."""
    schema = consumer_schema() if population == "consumer" else farmer_schema()
    return DesignConfig(
        schema=schema,
        population=population,
        n_tasks=n_tasks,
        n_alts=n_alts,
        seed=seed,
        grids=grids if grids is not None else DEFAULT_GRIDS[population],
        structural_values=(
            structural_values if structural_values is not None else DEFAULT_STRUCTURAL[population]
        ),
    )
