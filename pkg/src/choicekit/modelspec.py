"""Utility model declarations and the design-matrix compiler.

A ModelSpec pins which coefficients exist and how alternatives are coded:
one alternative-specific constant per outlet (the opt-out is the reference
at utility 0), a single fixed price coefficient, travel-time slopes either
per outlet or pooled, and additional attribute coefficients with
dummy coding against the first declared level.

Coefficient names are the contract used by every downstream module:
``asc:<outlet>`` for intercepts, the attribute name for single-column
attributes (price, pooled travel time, binary and continuous extras),
``<tt_attr>:<outlet>`` for per-outlet travel-time slopes and
``<attr>:<level>`` for categorical dummies.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .data import (
    OUTLET_LABELS,
    Alternative,
    AttributeDef,
    PanelDataset,
    consumer_schema,
    farmer_schema,
    schema_from_json,
    schema_to_json,
)
from .errors import ValidationError


@dataclass(frozen=True)
class ModelSpec:
    """Declarative utility specification for one population."""

    population: str
    schema: tuple[AttributeDef, ...]
    outlet_intercepts: tuple[str, ...] = OUTLET_LABELS
    price_attr: str | None = "price"
    travel_time_attr: str | None = "travel_time"
    travel_time_mode: str = "per_outlet"
    travel_time_outlets: tuple[str, ...] | None = None
    extra_attrs: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "outlet_intercepts", tuple(self.outlet_intercepts))
        object.__setattr__(self, "extra_attrs", tuple(self.extra_attrs))
        if self.travel_time_outlets is not None:
            object.__setattr__(self, "travel_time_outlets", tuple(self.travel_time_outlets))
        if self.population not in ("consumer", "farmer"):
            raise ValidationError(f"unknown population {self.population!r}")
        if self.travel_time_mode not in ("per_outlet", "pooled"):
            raise ValidationError(f"unknown travel_time_mode {self.travel_time_mode!r}")
        by_name = {a.name: a for a in self.schema}
        for outlet in self.outlet_intercepts:
            if outlet not in OUTLET_LABELS:
                raise ValidationError(f"unknown outlet {outlet!r} in outlet_intercepts")
        if len(set(self.outlet_intercepts)) != len(self.outlet_intercepts):
            raise ValidationError("duplicate outlets in outlet_intercepts")
        if self.price_attr is not None:
            price = by_name.get(self.price_attr)
            if price is None or price.kind != "continuous":
                raise ValidationError(f"price attribute {self.price_attr!r} must be a declared continuous attribute")
            if self.price_attr in self.extra_attrs:
                raise ValidationError("price enters exactly once; remove it from extra_attrs")
        if self.travel_time_attr is not None:
            tt = by_name.get(self.travel_time_attr)
            if tt is None or tt.kind != "continuous":
                raise ValidationError(
                    f"travel-time attribute {self.travel_time_attr!r} must be a declared continuous attribute"
                )
            if self.travel_time_attr in self.extra_attrs:
                raise ValidationError("travel time is coded by travel_time_mode; remove it from extra_attrs")
            if self.travel_time_attr == self.price_attr:
                raise ValidationError("price and travel-time attributes must differ")
        for name in self.extra_attrs:
            if name not in by_name:
                raise ValidationError(f"extra attribute {name!r} not in schema")
        for outlet in self.tt_outlets:
            if outlet not in self.outlet_intercepts:
                raise ValidationError(f"travel-time outlet {outlet!r} has no intercept")

    @property
    def tt_outlets(self) -> tuple[str, ...]:
        """Outlets receiving a travel-time slope in per-outlet mode."""
        if self.travel_time_attr is None or self.travel_time_mode == "pooled":
            return ()
        if self.travel_time_outlets is None:
            return self.outlet_intercepts
        return self.travel_time_outlets

    def attribute(self, name: str) -> AttributeDef:
        for a in self.schema:
            if a.name == name:
                return a
        raise ValidationError(f"spec schema has no attribute {name!r}")

    def coef_names(self) -> tuple[str, ...]:
        names = [f"asc:{o}" for o in self.outlet_intercepts]
        if self.price_attr is not None:
            names.append(self.price_attr)
        if self.travel_time_attr is not None:
            if self.travel_time_mode == "pooled":
                names.append(self.travel_time_attr)
            else:
                names.extend(f"{self.travel_time_attr}:{o}" for o in self.tt_outlets)
        for attr_name in self.extra_attrs:
            names.extend(self.attribute(attr_name).basis_names())
        return tuple(names)

    @property
    def n_params(self) -> int:
        return len(self.coef_names())

    def code_alternative(self, alt: Alternative) -> np.ndarray:
        """Numeric design row for one alternative; all zeros for the opt-out."""
        x = np.zeros(self.n_params)
        if alt.is_opt_out:
            return x
        pos = 0
        for outlet in self.outlet_intercepts:
            if alt.outlet == outlet:
                x[pos] = 1.0
            pos += 1
        if self.price_attr is not None:
            x[pos] = float(alt.values[self.price_attr])
            pos += 1
        if self.travel_time_attr is not None:
            tt = float(alt.values[self.travel_time_attr])
            if self.travel_time_mode == "pooled":
                x[pos] = tt
                pos += 1
            else:
                for outlet in self.tt_outlets:
                    if alt.outlet == outlet:
                        x[pos] = tt
                    pos += 1
        for attr_name in self.extra_attrs:
            attr = self.attribute(attr_name)
            coded = attr.encode(alt.values[attr_name])
            x[pos:pos + len(coded)] = coded
            pos += len(coded)
        return x

    def to_json_dict(self) -> dict:
        return {
            "population": self.population,
            "schema": schema_to_json(self.schema),
            "outlet_intercepts": list(self.outlet_intercepts),
            "price_attr": self.price_attr,
            "travel_time_attr": self.travel_time_attr,
            "travel_time_mode": self.travel_time_mode,
            "travel_time_outlets": None if self.travel_time_outlets is None else list(self.travel_time_outlets),
            "extra_attrs": list(self.extra_attrs),
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "ModelSpec":
        tt_outlets = d.get("travel_time_outlets")
        return cls(
            population=d["population"],
            schema=schema_from_json(d["schema"]),
            outlet_intercepts=tuple(d["outlet_intercepts"]),
            price_attr=d.get("price_attr"),
            travel_time_attr=d.get("travel_time_attr"),
            travel_time_mode=d.get("travel_time_mode", "per_outlet"),
            travel_time_outlets=None if tt_outlets is None else tuple(tt_outlets),
            extra_attrs=tuple(d.get("extra_attrs", ())),
        )


def consumer_spec(schema: Iterable[AttributeDef] | None = None,
                  travel_time_mode: str = "per_outlet") -> ModelSpec:
    """Consumer utility: 5 outlet constants, basket price, travel-time
    slopes (per outlet by default), events, bio and assortment dummies."""
    schema = tuple(schema) if schema is not None else consumer_schema()
    return ModelSpec(
        population="consumer",
        schema=schema,
        outlet_intercepts=OUTLET_LABELS,
        price_attr="price",
        travel_time_attr="travel_time",
        travel_time_mode=travel_time_mode,
        extra_attrs=("events", "bio", "assortment"),
    )


def farmer_spec(schema: Iterable[AttributeDef] | None = None,
                travel_time_mode: str = "per_outlet") -> ModelSpec:
    """Grower utility: 5 outlet constants, per-kg price, travel-time slopes,
    events and mutual-aid dummies.

    In per-outlet mode the farm outlet gets no travel-time slope: growers
    selling at their own farm do not travel, so that column would be
    structurally zero.
    """
    schema = tuple(schema) if schema is not None else farmer_schema()
    tt_outlets = None
    if travel_time_mode == "per_outlet":
        tt_outlets = tuple(o for o in OUTLET_LABELS if o != "ferme")
    return ModelSpec(
        population="farmer",
        schema=schema,
        outlet_intercepts=OUTLET_LABELS,
        price_attr="price",
        travel_time_attr="travel_time",
        travel_time_mode=travel_time_mode,
        travel_time_outlets=tt_outlets,
        extra_attrs=("events", "mutual_aid"),
    )


# ---------------------------------------------------------------------------
# Compiled arrays for the estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompiledPanel:
    """Dataset flattened to arrays, rows ordered respondent > task > alternative.

    Row blocks of a task and of a respondent are contiguous so segmented
    reductions (np.ufunc.reduceat) can aggregate in a fixed order, keeping
    results bit-stable regardless of worker count.
    """

    coef_names: tuple[str, ...]
    X: np.ndarray                 # (n_rows, K)
    y: np.ndarray                 # (n_rows,) chosen indicator
    chosen_rows: np.ndarray       # (n_tasks,) row index of the chosen alternative
    task_row_starts: np.ndarray   # (n_tasks,)
    task_sizes: np.ndarray        # (n_tasks,)
    task_of_row: np.ndarray       # (n_rows,)
    resp_row_starts: np.ndarray   # (n_resp,)
    resp_task_starts: np.ndarray  # (n_resp,)
    resp_of_row: np.ndarray       # (n_rows,)
    loglik_null: float = field(default=0.0)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_tasks(self) -> int:
        return len(self.task_row_starts)

    @property
    def n_resp(self) -> int:
        return len(self.resp_row_starts)

    @property
    def n_params(self) -> int:
        return self.X.shape[1]


def compile_panel(dataset: PanelDataset, spec: ModelSpec) -> CompiledPanel:
    """Code every alternative of the dataset against the spec."""
    coef_names = spec.coef_names()
    rows: list[np.ndarray] = []
    y: list[float] = []
    chosen_rows: list[int] = []
    task_row_starts: list[int] = []
    task_sizes: list[int] = []
    resp_row_starts: list[int] = []
    resp_task_starts: list[int] = []
    resp_of_row: list[int] = []
    for r_idx, resp in enumerate(dataset.respondents):
        resp_row_starts.append(len(rows))
        resp_task_starts.append(len(task_row_starts))
        for task in resp.tasks:
            task_row_starts.append(len(rows))
            task_sizes.append(len(task.alternatives))
            for alt in task.alternatives:
                if alt.alt_id == task.chosen:
                    chosen_rows.append(len(rows))
                y.append(1.0 if alt.alt_id == task.chosen else 0.0)
                rows.append(spec.code_alternative(alt))
                resp_of_row.append(r_idx)
    if not rows:
        X = np.zeros((0, len(coef_names)))
    else:
        X = np.vstack(rows)
    task_sizes_arr = np.asarray(task_sizes, dtype=np.int64)
    task_of_row = np.repeat(np.arange(len(task_sizes), dtype=np.int64), task_sizes_arr)
    loglik_null = float(-np.sum(np.log(task_sizes_arr))) if task_sizes else 0.0
    return CompiledPanel(
        coef_names=coef_names,
        X=X,
        y=np.asarray(y),
        chosen_rows=np.asarray(chosen_rows, dtype=np.int64),
        task_row_starts=np.asarray(task_row_starts, dtype=np.int64),
        task_sizes=task_sizes_arr,
        task_of_row=task_of_row,
        resp_row_starts=np.asarray(resp_row_starts, dtype=np.int64),
        resp_task_starts=np.asarray(resp_task_starts, dtype=np.int64),
        resp_of_row=np.asarray(resp_of_row, dtype=np.int64),
        loglik_null=loglik_null,
    )
