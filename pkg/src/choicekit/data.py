"""Panel choice data: schema, containers, CSV ingestion, subgroups, summaries.

The canonical interchange format is a long CSV with one row per
respondent x task x alternative:

    resp_id, pop, task_id, alt_id, outlet, chosen, <attribute columns>, <trait columns>

UTF-8, '.' decimal separator, ',' delimiter. Wide files are rejected, not
pivoted. Attribute cells on the opt-out row are empty; trait cells repeat
per row and may be empty (traits are optional covariates).

Datasets are immutable after validation and safe to share across workers.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

from .errors import (
    DuplicateChoiceError,
    EmptyDatasetError,
    MissingColumnError,
    NonNumericContinuousError,
    UnknownLevelError,
    UnknownTraitError,
    ValidationError,
)

OUTLET_LABELS = ("ferme", "marche", "supermarche", "drive", "association")
OPT_OUT = "opt_out"

BASE_COLUMNS = ("resp_id", "pop", "task_id", "alt_id", "outlet", "chosen")
POPULATIONS = ("consumer", "farmer")

_LIKERT_PREFIX = "likert_"


@dataclass(frozen=True)
class AttributeDef:
    """Declaration of one choice-card attribute.

    ``kind`` is one of ``continuous``, ``binary``, ``categorical``.
    Binary and categorical attributes carry ordered level labels; the first
    declared level is the reference when the attribute is dummy-coded at
    estimation time. Continuous attributes have no levels.
    """

    name: str
    kind: str
    levels: tuple[str, ...] = ()
    unit: str = ""

    def __post_init__(self):
        if not re.fullmatch(r"[A-Za-z_]\w*", self.name):
            raise ValidationError(f"attribute name {self.name!r} is not an identifier")
        if self.kind not in ("continuous", "binary", "categorical"):
            raise ValidationError(f"unknown attribute kind {self.kind!r}")
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if self.kind == "continuous":
            if self.levels:
                raise ValidationError(f"continuous attribute {self.name!r} must not declare levels")
        else:
            if len(self.levels) < 2:
                raise ValidationError(f"{self.kind} attribute {self.name!r} needs at least 2 levels")
            if self.kind == "binary" and len(self.levels) != 2:
                raise ValidationError(f"binary attribute {self.name!r} needs exactly 2 levels")
            if len(set(self.levels)) != len(self.levels):
                raise ValidationError(f"attribute {self.name!r} has duplicate levels")

    def basis_names(self) -> tuple[str, ...]:
        """Names of the numeric columns this attribute contributes.

        Continuous and binary attributes map to a single column named after
        the attribute; a categorical attribute maps to one ``name:level``
        dummy per non-reference level.
        """
        if self.kind == "categorical":
            return tuple(f"{self.name}:{lv}" for lv in self.levels[1:])
        return (self.name,)

    def encode(self, value) -> tuple[float, ...]:
        """Numeric coding of one stored value, aligned with basis_names."""
        if self.kind == "continuous":
            return (float(value),)
        if self.kind == "binary":
            return (1.0 if str(value) == self.levels[1] else 0.0,)
        sval = str(value)
        return tuple(1.0 if sval == lv else 0.0 for lv in self.levels[1:])

    def validate_value(self, value) -> float | str:
        """Parse and check a raw (CSV string or native) value."""
        if self.kind == "continuous":
            try:
                out = float(value)
            except (TypeError, ValueError):
                raise NonNumericContinuousError(
                    f"attribute {self.name!r}: non-numeric value {value!r}"
                ) from None
            if not math.isfinite(out):
                raise NonNumericContinuousError(f"attribute {self.name!r}: non-finite value {value!r}")
            return out
        sval = str(value)
        if sval not in self.levels:
            raise UnknownLevelError(
                f"attribute {self.name!r}: value {sval!r} not in levels {self.levels}"
            )
        return sval


def _check_schema(schema: Iterable[AttributeDef]) -> tuple[AttributeDef, ...]:
    schema = tuple(schema)
    names = [a.name for a in schema]
    if len(set(names)) != len(names):
        raise ValidationError(f"duplicate attribute names in schema: {names}")
    reserved = set(BASE_COLUMNS)
    for name in names:
        if name in reserved:
            raise ValidationError(f"attribute name {name!r} collides with a base CSV column")
    return schema


@dataclass(frozen=True)
class Alternative:
    """One alternative on a choice card.

    ``outlet`` is an outlet label or ``opt_out``; the opt-out alternative
    carries no attribute values.
    """

    alt_id: str
    outlet: str
    values: Mapping[str, float | str] = field(default_factory=dict)

    def __post_init__(self):
        if self.outlet not in OUTLET_LABELS and self.outlet != OPT_OUT:
            raise UnknownLevelError(f"unknown outlet label {self.outlet!r}")
        if self.is_opt_out and self.values:
            raise ValidationError(f"opt-out alternative {self.alt_id!r} carries attribute values")
        object.__setattr__(self, "values", dict(self.values))

    @property
    def is_opt_out(self) -> bool:
        return self.outlet == OPT_OUT


@dataclass(frozen=True)
class ChoiceTask:
    """One repetition of the experiment: a card of alternatives plus the pick.

    ``chosen`` is None only in design skeletons; validated datasets always
    carry it. Exactly one alternative is the opt-out.
    """

    task_id: str
    alternatives: tuple[Alternative, ...]
    chosen: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "alternatives", tuple(self.alternatives))
        if len(self.alternatives) < 2:
            raise ValidationError(f"task {self.task_id!r} needs at least 2 alternatives")
        ids = [a.alt_id for a in self.alternatives]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"task {self.task_id!r} has duplicate alt_ids")
        n_opt = sum(a.is_opt_out for a in self.alternatives)
        if n_opt != 1:
            raise ValidationError(f"task {self.task_id!r} has {n_opt} opt-out alternatives, want 1")
        if self.chosen is not None and self.chosen not in ids:
            raise DuplicateChoiceError(
                f"task {self.task_id!r}: chosen alternative {self.chosen!r} not on the card"
            )

    @property
    def chosen_alternative(self) -> Alternative:
        for a in self.alternatives:
            if a.alt_id == self.chosen:
                return a
        raise ValidationError(f"task {self.task_id!r} has no chosen alternative")


@dataclass(frozen=True)
class Respondent:
    respondent_id: str
    population: str
    tasks: tuple[ChoiceTask, ...]
    traits: Mapping[str, float | str] = field(default_factory=dict)

    def __post_init__(self):
        if self.population not in POPULATIONS:
            raise ValidationError(f"unknown population {self.population!r}")
        object.__setattr__(self, "tasks", tuple(self.tasks))
        object.__setattr__(self, "traits", dict(self.traits))
        for name, value in self.traits.items():
            if name.startswith(_LIKERT_PREFIX):
                ok = isinstance(value, (int, float)) and float(value) in (1.0, 2.0, 3.0, 4.0, 5.0)
                if not ok:
                    raise ValidationError(
                        f"respondent {self.respondent_id!r}: Likert trait {name!r}={value!r} "
                        f"must be an integer in 1..5"
                    )


@dataclass(frozen=True)
class PanelDataset:
    """Validated panel of respondents; immutable once constructed."""

    schema: tuple[AttributeDef, ...]
    respondents: tuple[Respondent, ...]

    def __post_init__(self):
        object.__setattr__(self, "schema", _check_schema(self.schema))
        object.__setattr__(self, "respondents", tuple(self.respondents))
        ids = [r.respondent_id for r in self.respondents]
        if len(set(ids)) != len(ids):
            raise ValidationError("respondent_ids are not unique")
        attr_names = {a.name for a in self.schema}
        by_name = {a.name: a for a in self.schema}
        for resp in self.respondents:
            for task in resp.tasks:
                if task.chosen is None:
                    raise DuplicateChoiceError(
                        f"task {task.task_id!r} of respondent {resp.respondent_id!r} "
                        f"has no chosen alternative"
                    )
                for alt in task.alternatives:
                    if alt.is_opt_out:
                        continue
                    missing = attr_names - set(alt.values)
                    if missing:
                        raise ValidationError(
                            f"alternative {alt.alt_id!r} in task {task.task_id!r} "
                            f"is missing attribute values {sorted(missing)}"
                        )
                    for name, value in alt.values.items():
                        if name not in by_name:
                            raise ValidationError(
                                f"alternative {alt.alt_id!r} carries undeclared attribute {name!r}"
                            )
                        by_name[name].validate_value(value)

    @property
    def n_respondents(self) -> int:
        return len(self.respondents)

    @property
    def n_obs(self) -> int:
        """Total task observations (the row count of fit-statistic formulas)."""
        return sum(len(r.tasks) for r in self.respondents)

    @property
    def trait_names(self) -> tuple[str, ...]:
        names: set[str] = set()
        for r in self.respondents:
            names.update(r.traits)
        return tuple(sorted(names))

    def attribute(self, name: str) -> AttributeDef:
        for a in self.schema:
            if a.name == name:
                return a
        raise ValidationError(f"schema has no attribute {name!r}")


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------

def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_trait(raw: str) -> float | str:
    try:
        return float(raw)
    except ValueError:
        return raw


def load_dataset(path: str | Path, schema: Iterable[AttributeDef]) -> PanelDataset:
    """Read a long-format choice CSV into a validated dataset.

    Rows of one task must be contiguous; each task needs exactly one row
    flagged chosen. Any column that is neither a base column nor a schema
    attribute is treated as a trait; empty trait cells mean the trait is
    absent for that respondent.
    """
    schema = _check_schema(schema)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        required = list(BASE_COLUMNS) + [a.name for a in schema]
        for col in required:
            if col not in header:
                raise MissingColumnError(f"{path}: missing column {col!r}")
        trait_cols = [c for c in header if c not in required]

        respondents: list[Respondent] = []
        seen_tasks: set[tuple[str, str]] = set()
        cur_resp: str | None = None
        cur_pop = ""
        cur_traits: dict[str, float | str] = {}
        cur_tasks: list[ChoiceTask] = []
        task_key: tuple[str, str] | None = None
        task_rows: list[dict] = []

        def close_task():
            if not task_rows:
                return
            resp_id, task_id = task_key
            alternatives = []
            chosen_ids = []
            for row in task_rows:
                outlet = row["outlet"].strip()
                values: dict[str, float | str] = {}
                if outlet != OPT_OUT:
                    for attr in schema:
                        values[attr.name] = attr.validate_value(row[attr.name])
                alt = Alternative(row["alt_id"], outlet, values)
                alternatives.append(alt)
                flag = row["chosen"].strip()
                if flag not in ("0", "1"):
                    raise ValidationError(
                        f"{path}: task {task_id!r} has chosen flag {flag!r}, want 0 or 1"
                    )
                if flag == "1":
                    chosen_ids.append(alt.alt_id)
            if len(chosen_ids) != 1:
                raise DuplicateChoiceError(
                    f"{path}: task {task_id!r} of respondent {resp_id!r} has "
                    f"{len(chosen_ids)} chosen rows, want exactly 1"
                )
            cur_tasks.append(ChoiceTask(task_id, tuple(alternatives), chosen_ids[0]))
            task_rows.clear()

        def close_respondent():
            if cur_resp is None:
                return
            respondents.append(Respondent(cur_resp, cur_pop, tuple(cur_tasks), dict(cur_traits)))
            cur_tasks.clear()
            cur_traits.clear()

        for row in reader:
            resp_id = row["resp_id"].strip()
            tid = row["task_id"].strip()
            key = (resp_id, tid)
            if key != task_key:
                close_task()
                if key in seen_tasks:
                    raise ValidationError(f"{path}: rows of task {tid!r} are not contiguous")
                seen_tasks.add(key)
                task_key = key
            if resp_id != cur_resp:
                close_respondent()
                cur_resp = resp_id
                cur_pop = row["pop"].strip()
                for col in trait_cols:
                    raw = (row.get(col) or "").strip()
                    if raw != "":
                        cur_traits[col] = _parse_trait(raw)
            task_rows.append(row)
        close_task()
        close_respondent()

    return PanelDataset(schema, tuple(respondents))


def save_dataset(dataset: PanelDataset, path: str | Path, include_chosen: bool = True) -> None:
    """Write the canonical long CSV; inverse of load_dataset on valid data."""
    _write_long_csv(dataset.schema, dataset.respondents, path, include_chosen)


def _write_long_csv(schema, respondents, path, include_chosen: bool) -> None:
    path = Path(path)
    trait_names: set[str] = set()
    for r in respondents:
        trait_names.update(r.traits)
    trait_cols = sorted(trait_names)
    attr_cols = [a.name for a in schema]
    if include_chosen:
        header = list(BASE_COLUMNS) + attr_cols + trait_cols
    else:
        header = [c for c in BASE_COLUMNS if c != "chosen"] + attr_cols + trait_cols
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for resp in respondents:
            traits = [
                _format_cell(resp.traits[c]) if c in resp.traits else "" for c in trait_cols
            ]
            for task in resp.tasks:
                for alt in task.alternatives:
                    row = [resp.respondent_id, resp.population, task.task_id, alt.alt_id, alt.outlet]
                    if include_chosen:
                        row.append("1" if alt.alt_id == task.chosen else "0")
                    for name in attr_cols:
                        row.append("" if alt.is_opt_out else _format_cell(alt.values[name]))
                    writer.writerow(row + traits)


# ---------------------------------------------------------------------------
# Subgroup predicates
# ---------------------------------------------------------------------------

_OPS: dict[str, Callable[[float, float], bool]] = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
}

_COND_RE = re.compile(r"^\s*([A-Za-z_]\w*)\s*(==|!=|<=|>=|<|>)\s*(.+?)\s*$")


@dataclass(frozen=True)
class TraitCondition:
    """Single comparison on a respondent trait; missing traits never match."""

    trait: str
    op: str
    value: float | str

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValidationError(f"unknown predicate operator {self.op!r}")

    def matches(self, traits: Mapping[str, float | str]) -> bool:
        actual = traits.get(self.trait)
        if actual is None:
            return False
        if isinstance(self.value, float):
            try:
                return _OPS[self.op](float(actual), self.value)
            except (TypeError, ValueError):
                return False
        return _OPS[self.op](str(actual), str(self.value))

    def __str__(self):
        return f"{self.trait}{self.op}{self.value}"


@dataclass(frozen=True)
class Predicate:
    """Conjunction of trait conditions; empty conjunction matches everyone."""

    conditions: tuple[TraitCondition, ...] = ()

    def __and__(self, other: "Predicate") -> "Predicate":
        return Predicate(self.conditions + other.conditions)

    def traits_referenced(self) -> tuple[str, ...]:
        return tuple(sorted({c.trait for c in self.conditions}))

    def matches(self, traits: Mapping[str, float | str]) -> bool:
        return all(c.matches(traits) for c in self.conditions)

    def __str__(self):
        return " & ".join(str(c) for c in self.conditions) if self.conditions else "all"


def parse_predicate(text: str) -> Predicate:
    """Parse expressions like ``"likert_prefer_cc>=4 & share_cc==1"``.

    ``"all"`` (or an empty string) is the identity predicate. String values
    may be quoted; unquoted values that parse as numbers compare numerically.
    """
    text = text.strip()
    if text in ("", "all"):
        return Predicate()
    conditions = []
    for clause in text.split("&"):
        m = _COND_RE.match(clause)
        if not m:
            raise ValidationError(f"cannot parse predicate clause {clause.strip()!r}")
        trait, op, raw = m.groups()
        if raw[:1] in ("'", '"') and raw[-1:] == raw[:1]:
            value: float | str = raw[1:-1]
        else:
            try:
                value = float(raw)
            except ValueError:
                value = raw
        conditions.append(TraitCondition(trait, op, value))
    return Predicate(tuple(conditions))


def filter_subgroup(dataset: PanelDataset, predicate: Predicate | str) -> PanelDataset:
    """Keep respondents matching the predicate; schema unchanged."""
    if isinstance(predicate, str):
        predicate = parse_predicate(predicate)
    known = set(dataset.trait_names)
    for trait in predicate.traits_referenced():
        if trait not in known:
            raise UnknownTraitError(f"predicate references undeclared trait {trait!r}")
    kept = tuple(r for r in dataset.respondents if predicate.matches(r.traits))
    return PanelDataset(dataset.schema, kept)


def consumer_groups() -> dict[str, Predicate]:
    """Named consumer subgroups used throughout the analysis.

    A: already buys through short chains; B: never does; C: refuses to buy
    short-chain produce at the supermarket; D: links short chains with
    supporting local growers (built to not overlap with C).
    """
    return {
        "A": parse_predicate("buys_cc==1"),
        "B": parse_predicate("buys_cc==0"),
        "C": parse_predicate("likert_no_supermarket>=4"),
        "D": parse_predicate("likert_support_farmers>=4 & likert_no_supermarket<=3"),
    }


def farmer_groups() -> dict[str, Predicate]:
    """Named farmer subgroups keyed on the sales-channel mix and stated preference."""
    return {
        "1": parse_predicate("share_cc==1"),
        "2": parse_predicate("share_cc==0"),
        "3": parse_predicate("share_cc>0 & share_cc<1"),
        "4": parse_predicate("likert_prefer_cc>=4"),
    }


# ---------------------------------------------------------------------------
# Descriptive summaries
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSummary:
    """Descriptive statistics plus the per-outlet attribute means that feed
    the generalized willingness lines."""

    n_respondents: int
    n_obs: int
    populations: Mapping[str, int]
    trait_stats: Mapping[str, Mapping[str, float]]
    level_shares: Mapping[str, Mapping[str, float]]
    attribute_stats: Mapping[str, Mapping[str, float]]
    outlet_attribute_means: Mapping[str, Mapping[str, float]]

    def to_json_dict(self) -> dict:
        return {
            "n_respondents": self.n_respondents,
            "n_obs": self.n_obs,
            "populations": dict(self.populations),
            "trait_stats": {k: dict(v) for k, v in self.trait_stats.items()},
            "level_shares": {k: dict(v) for k, v in self.level_shares.items()},
            "attribute_stats": {k: dict(v) for k, v in self.attribute_stats.items()},
            "outlet_attribute_means": {k: dict(v) for k, v in self.outlet_attribute_means.items()},
        }


def _mean_sd(values: list[float]) -> tuple[float, float]:
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, math.sqrt(var)


def summarize(dataset: PanelDataset) -> DatasetSummary:
    """Means/shares per trait and attribute, and attribute means per outlet."""
    if not dataset.respondents:
        raise EmptyDatasetError("cannot summarize an empty dataset")

    populations: dict[str, int] = {}
    trait_values: dict[str, list[float]] = {}
    for resp in dataset.respondents:
        populations[resp.population] = populations.get(resp.population, 0) + 1
        for name, value in resp.traits.items():
            if isinstance(value, (int, float)):
                trait_values.setdefault(name, []).append(float(value))
    trait_stats = {}
    for name, values in sorted(trait_values.items()):
        mean, sd = _mean_sd(values)
        trait_stats[name] = {"mean": mean, "sd": sd, "n": float(len(values))}

    level_counts: dict[str, dict[str, int]] = {
        a.name: {lv: 0 for lv in a.levels} for a in dataset.schema if a.levels
    }
    cont_values: dict[str, list[float]] = {
        a.name: [] for a in dataset.schema if a.kind == "continuous"
    }
    # per-outlet accumulators in the dummy-coded basis used by estimation
    basis: list[tuple[str, AttributeDef]] = []
    for a in dataset.schema:
        for bname in a.basis_names():
            basis.append((bname, a))
    outlet_sums: dict[str, dict[str, float]] = {}
    outlet_counts: dict[str, int] = {}

    for resp in dataset.respondents:
        for task in resp.tasks:
            for alt in task.alternatives:
                if alt.is_opt_out:
                    continue
                outlet_counts[alt.outlet] = outlet_counts.get(alt.outlet, 0) + 1
                sums = outlet_sums.setdefault(alt.outlet, {b: 0.0 for b, _ in basis})
                for attr in dataset.schema:
                    value = alt.values[attr.name]
                    if attr.kind == "continuous":
                        cont_values[attr.name].append(float(value))
                    else:
                        level_counts[attr.name][str(value)] += 1
                    for bname, coded in zip(attr.basis_names(), attr.encode(value)):
                        sums[bname] += coded

    level_shares = {}
    for name, counts in level_counts.items():
        total = sum(counts.values())
        level_shares[name] = {lv: (c / total if total else 0.0) for lv, c in counts.items()}
    attribute_stats = {}
    for name, values in cont_values.items():
        if values:
            mean, sd = _mean_sd(values)
            attribute_stats[name] = {"mean": mean, "sd": sd, "n": float(len(values))}
    outlet_attribute_means = {
        outlet: {b: s / outlet_counts[outlet] for b, s in sums.items()}
        for outlet, sums in outlet_sums.items()
    }

    return DatasetSummary(
        n_respondents=dataset.n_respondents,
        n_obs=dataset.n_obs,
        populations=populations,
        trait_stats=trait_stats,
        level_shares=level_shares,
        attribute_stats=attribute_stats,
        outlet_attribute_means=outlet_attribute_means,
    )


# ---------------------------------------------------------------------------
# Canonical schemas
# ---------------------------------------------------------------------------

def consumer_schema() -> tuple[AttributeDef, ...]:
    """Attributes shown on consumer cards: basket price, trip time, organic
    label, on-farm events, and assortment width."""
    return (
        AttributeDef("price", "continuous", unit="eur_per_basket"),
        AttributeDef("travel_time", "continuous", unit="min"),
        AttributeDef("bio", "binary", ("no", "yes")),
        AttributeDef("events", "binary", ("no", "yes")),
        AttributeDef("assortment", "binary", ("narrow", "wide")),
    )


def farmer_schema() -> tuple[AttributeDef, ...]:
    """Attributes shown on grower cards: per-kg price, delivery trip time,
    peer mutual aid at the outlet, and consumer-run events."""
    return (
        AttributeDef("price", "continuous", unit="eur_per_kg"),
        AttributeDef("travel_time", "continuous", unit="min"),
        AttributeDef("mutual_aid", "binary", ("no", "yes")),
        AttributeDef("events", "binary", ("no", "yes")),
    )


def schema_to_json(schema: Iterable[AttributeDef]) -> list[dict]:
    return [
        {"name": a.name, "kind": a.kind, "levels": list(a.levels), "unit": a.unit}
        for a in schema
    ]


def schema_from_json(items: Iterable[Mapping]) -> tuple[AttributeDef, ...]:
    return tuple(
        AttributeDef(d["name"], d["kind"], tuple(d.get("levels", ())), d.get("unit", ""))
        for d in items
    )
