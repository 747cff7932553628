"""Generalized willingness lines and market-potential geometry.

An outlet's generalized buyer value is the price that makes the outlet
exactly as good as opting out, holding its other attributes at their
means: an affine function of travel time

    line(T) = n + b T,   n = -(asc + sum_k beta_k xhat_k) / beta_price,
                         b = -beta_tt / beta_price.

The same construction on the seller fit gives the price a grower requires.
Dividing by the (negative) buyer price coefficient or the (positive)
seller price coefficient orients both lines as money amounts, so the gap

    delta(T) = consumer_line(T) - farmer_line(T)

is the per-unit surplus at travel time T and the break-even time is where
the gap closes. Attribute means are explicit inputs, never defaulted:
they come from a dataset summary or from user configuration.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import DatasetSummary
from .errors import (
    MissingMeansError,
    OutletMismatchError,
    ValidationError,
)
from .results import FitResult
from .welfare import _check_price_strength, _price_position

LINE_FORMULAS = {
    "intercept": "-(asc + sum beta_k * mean_k) / beta_price",
    "slope": "-beta_tt / beta_price",
}


@dataclass(frozen=True)
class AttributeMeans:
    """Per-outlet means: travel time and the other attributes in the
    dummy-coded basis used by the coefficients."""

    attrs: Mapping[str, Mapping[str, float]]
    travel_time: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "attrs", {o: dict(v) for o, v in dict(self.attrs).items()})
        object.__setattr__(self, "travel_time", dict(self.travel_time))
        for outlet, t in self.travel_time.items():
            if t < 0:
                raise ValidationError(f"mean travel time for {outlet!r} is negative")

    @classmethod
    def from_summary(cls, summary: DatasetSummary,
                     travel_time_attr: str = "travel_time") -> "AttributeMeans":
        attrs = {}
        travel_time = {}
        for outlet, means in summary.outlet_attribute_means.items():
            attrs[outlet] = {k: v for k, v in means.items() if k != travel_time_attr}
            if travel_time_attr in means:
                travel_time[outlet] = means[travel_time_attr]
        return cls(attrs=attrs, travel_time=travel_time)

    def to_json_dict(self) -> dict:
        return {
            "attrs": {o: dict(v) for o, v in self.attrs.items()},
            "travel_time": dict(self.travel_time),
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "AttributeMeans":
        return cls(attrs=d.get("attrs", {}), travel_time=d.get("travel_time", {}))


@dataclass(frozen=True)
class PotentialLine:
    """Affine money-value line of one outlet in travel-time space."""

    outlet: str
    side: str                       # "consumer" or "farmer"
    intercept: float
    slope: float
    mean_travel_time: float | None = None
    source: str | None = None

    def evaluate(self, t):
        return self.intercept + self.slope * np.asarray(t, dtype=float)

    def to_json_dict(self) -> dict:
        return {
            "outlet": self.outlet,
            "side": self.side,
            "intercept": self.intercept,
            "slope": self.slope,
            "mean_travel_time": self.mean_travel_time,
            "source": self.source,
            "formulas": dict(LINE_FORMULAS),
        }


def _line_from_fit(fit: FitResult, outlet: str, means: AttributeMeans,
                   side: str) -> PotentialLine:
    spec = fit.spec
    if outlet not in spec.outlet_intercepts:
        raise MissingMeansError(f"fit has no intercept for outlet {outlet!r}")
    _check_price_strength(fit, hard=True)
    beta_p = float(fit.estimates[_price_position(fit)])
    asc = fit.utility_value(f"asc:{outlet}")

    if outlet not in means.attrs:
        raise MissingMeansError(f"no attribute means supplied for outlet {outlet!r}")
    outlet_means = means.attrs[outlet]
    numerator = asc
    for attr_name in spec.extra_attrs:
        attr = spec.attribute(attr_name)
        for basis in attr.basis_names():
            if basis not in outlet_means:
                raise MissingMeansError(
                    f"outlet {outlet!r} is missing a mean for {basis!r}"
                )
            value = float(outlet_means[basis])
            if attr.kind in ("binary", "categorical") and not 0.0 <= value <= 1.0:
                raise ValidationError(
                    f"mean of dummy {basis!r} for outlet {outlet!r} must lie in [0, 1]"
                )
            numerator += fit.utility_value(basis) * value
    intercept = -numerator / beta_p

    slope = 0.0
    if spec.travel_time_attr is not None:
        if spec.travel_time_mode == "pooled":
            slope = -fit.utility_value(spec.travel_time_attr) / beta_p
        elif outlet in spec.tt_outlets:
            slope = -fit.utility_value(f"{spec.travel_time_attr}:{outlet}") / beta_p
        # outlets without a slope coefficient (structurally zero travel)
        # keep a flat line
    return PotentialLine(
        outlet=outlet,
        side=side,
        intercept=float(intercept),
        slope=float(slope),
        mean_travel_time=means.travel_time.get(outlet),
        source=fit.model,
    )


def capg_line(fit_consumer: FitResult, outlet: str, means: AttributeMeans) -> PotentialLine:
    """Generalized buyer-value line of an outlet from a consumer fit."""
    return _line_from_fit(fit_consumer, outlet, means, side="consumer")


def cavg_line(fit_farmer: FitResult, outlet: str, means: AttributeMeans) -> PotentialLine:
    """Generalized seller-requirement line of an outlet from a farmer fit."""
    return _line_from_fit(fit_farmer, outlet, means, side="farmer")


def delta_capg(cons: PotentialLine, farm: PotentialLine, t):
    """Buyer line minus seller line at travel time t (scalar or array)."""
    if cons.outlet != farm.outlet:
        raise OutletMismatchError(
            f"lines refer to different outlets: {cons.outlet!r} vs {farm.outlet!r}"
        )
    return cons.evaluate(t) - farm.evaluate(t)


@dataclass(frozen=True)
class BreakEven:
    """Where (and whether) the buyer and seller lines meet on [0, t_max].

    status is one of crossing, no_crossing, parallel (no crossing, constant
    nonzero gap), degenerate (coincident lines, every time breaks even).
    """

    status: str
    t_star: float | None = None
    price: float | None = None

    @property
    def crossing(self) -> bool:
        return self.status == "crossing"


def break_even_time(cons: PotentialLine, farm: PotentialLine,
                    t_max: float = 60.0) -> BreakEven:
    """Exact (closed-form) gap zero on [0, t_max].

    A crossing is only reported when the gap is positive at t = 0 and the
    root lies inside the window; the reported price is the buyer-line value
    at the crossing.
    """
    if cons.outlet != farm.outlet:
        raise OutletMismatchError(
            f"lines refer to different outlets: {cons.outlet!r} vs {farm.outlet!r}"
        )
    dn = cons.intercept - farm.intercept
    db = cons.slope - farm.slope
    if dn == 0.0 and db == 0.0:
        return BreakEven(status="degenerate", t_star=0.0, price=float(cons.evaluate(0.0)))
    if db == 0.0:
        return BreakEven(status="parallel")
    if dn <= 0.0:
        return BreakEven(status="no_crossing")
    t_star = -dn / db
    if t_star < 0.0 or t_star > t_max:
        return BreakEven(status="no_crossing")
    return BreakEven(status="crossing", t_star=float(t_star), price=float(cons.evaluate(t_star)))


@dataclass(frozen=True)
class CurveTable:
    """Plot-ready samples of both lines and their gap over travel time."""

    outlet: str
    t: np.ndarray
    capg: np.ndarray
    cavg: np.ndarray
    delta: np.ndarray

    def rows(self):
        return list(zip(self.t, self.capg, self.cavg, self.delta))


def curve_samples(cons: PotentialLine, farm: PotentialLine,
                  t_max: float = 60.0, step: float = 1.0) -> CurveTable:
    """Uniform inclusive sampling from 0 in increments of step up to t_max."""
    if cons.outlet != farm.outlet:
        raise OutletMismatchError(
            f"lines refer to different outlets: {cons.outlet!r} vs {farm.outlet!r}"
        )
    if step <= 0:
        raise ValidationError("step must be positive")
    n = int(math.floor(t_max / step + 1e-9))
    t = np.arange(n + 1, dtype=float) * step
    capg = cons.evaluate(t)
    cavg = farm.evaluate(t)
    return CurveTable(outlet=cons.outlet, t=t, capg=capg, cavg=cavg, delta=capg - cavg)


def save_curves_csv(table: CurveTable, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["T", "capg", "cavg", "delta"])
        for t, capg, cavg, delta in table.rows():
            writer.writerow([repr(float(t)), repr(float(capg)), repr(float(cavg)), repr(float(delta))])


def curves_envelope(cons: PotentialLine, farm: PotentialLine, table: CurveTable,
                    t_max: float, step: float, subgroup: str | None = None) -> dict:
    """JSON payload bundling line parameters and metadata with the samples."""
    be = break_even_time(cons, farm, t_max=t_max)
    return {
        "outlet": table.outlet,
        "subgroup": subgroup,
        "t_max": t_max,
        "step": step,
        "lines": {"consumer": cons.to_json_dict(), "farmer": farm.to_json_dict()},
        "break_even": {"status": be.status, "t_star": be.t_star, "price": be.price},
        "samples": {
            "t": [float(x) for x in table.t],
            "capg": [float(x) for x in table.capg],
            "cavg": [float(x) for x in table.cavg],
            "delta": [float(x) for x in table.delta],
        },
    }


def save_curves_json(envelope: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(envelope, indent=2, sort_keys=True), encoding="utf-8")
