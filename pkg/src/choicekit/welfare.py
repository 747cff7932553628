"""Willingness-to-pay (buyer side) and willingness-to-accept (seller side)
ratios from a fitted model.

Every ratio is reported as -beta_k / beta_price, the money-metric value of
one unit of attribute k. Because the price coefficient is negative for
buyers and positive for sellers, the same formula yields what a buyer
would pay and what a seller requires. Seller tables carry an extra
presentation column that flips the sign of the outlet constants, with the
formula recorded entry by entry so the sign provenance stays auditable;
published tables in this literature are not consistent about that choice.

Uncertainty comes from the delta method by default, with a parametric
bootstrap as the independent check.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import (
    PriceCoefficientNearZeroError,
    PriceCoefficientWarning,
    UnknownCoefficientError,
)
from .results import FitResult

# z threshold below which the ratio's moments are too unstable to report
PRICE_Z_THRESHOLD = 2.0

FORMULA_NEGATED = "-beta_k/beta_price"
FORMULA_DIRECT = "+beta_k/beta_price"

CAV_READING_NOTE = (
    "seller table: a larger value means the attribute requires more price "
    "compensation, so it is less appreciated"
)


def _price_position(fit: FitResult) -> int:
    name = fit.resolve_utility_name(fit.price_coef_name)
    return fit.index_of(name)


def _check_price_strength(fit: FitResult, hard: bool) -> None:
    i = _price_position(fit)
    beta_p = float(fit.estimates[i])
    se_p = float(np.sqrt(max(fit.covariance[i, i], 0.0)))
    if beta_p == 0.0 or (se_p > 0.0 and abs(beta_p) / se_p < PRICE_Z_THRESHOLD):
        msg = (
            f"price coefficient {beta_p:.4g} (se {se_p:.4g}) is too weak for "
            f"a reliable ratio (|z| < {PRICE_Z_THRESHOLD})"
        )
        if hard:
            raise PriceCoefficientNearZeroError(msg)
        warnings.warn(msg, PriceCoefficientWarning, stacklevel=3)


def wtp_ratio(fit: FitResult, coef_name: str) -> tuple[float, float]:
    """Point estimate and delta-method standard error of -beta_k/beta_price.

    Var = Var(b_k)/b_p^2 + b_k^2 Var(b_p)/b_p^4 - 2 b_k Cov(b_k, b_p)/b_p^3.
    Raises PriceCoefficientNearZeroError when |beta_price|/se < 2.
    """
    if coef_name == fit.price_coef_name:
        raise UnknownCoefficientError("the price coefficient has no ratio to itself")
    _check_price_strength(fit, hard=True)
    k = fit.index_of(fit.resolve_utility_name(coef_name))
    p = _price_position(fit)
    b_k = float(fit.estimates[k])
    b_p = float(fit.estimates[p])
    var_k = float(fit.covariance[k, k])
    var_p = float(fit.covariance[p, p])
    cov_kp = float(fit.covariance[k, p])
    estimate = -b_k / b_p
    var = (
        var_k / b_p ** 2
        + b_k ** 2 * var_p / b_p ** 4
        - 2.0 * b_k * cov_kp / b_p ** 3
    )
    return estimate, float(np.sqrt(max(var, 0.0)))


def wtp_bootstrap_se(fit: FitResult, coef_name: str, n_rep: int, seed: int) -> float:
    """Parametric-bootstrap standard error of the same ratio.

    Coefficient vectors are drawn from N(estimates, covariance) and the
    ratio recomputed per draw; the sample standard deviation is the
    oracle the delta method is checked against. A weak price coefficient
    makes the draws heavy-tailed; that case warns instead of failing.
    """
    if coef_name == fit.price_coef_name:
        raise UnknownCoefficientError("the price coefficient has no ratio to itself")
    _check_price_strength(fit, hard=False)
    k = fit.index_of(fit.resolve_utility_name(coef_name))
    p = _price_position(fit)
    idx = np.asarray([k, p])
    mean = fit.estimates[idx]
    cov = fit.covariance[np.ix_(idx, idx)]
    rng = np.random.default_rng(seed)
    draws = rng.multivariate_normal(mean, cov, size=n_rep)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = -draws[:, 0] / draws[:, 1]
    ratios = ratios[np.isfinite(ratios)]
    if len(ratios) < 2:
        return float("nan")
    return float(np.std(ratios, ddof=1))


@dataclass(frozen=True)
class WelfareEntry:
    name: str
    estimate: float
    se: float
    method: str
    formula: str = FORMULA_NEGATED
    paper_reading: float | None = None
    paper_formula: str | None = None


@dataclass(frozen=True)
class WelfareTable:
    """Per-attribute money-metric values for one population and direction."""

    population: str
    direction: str                  # "cap" (buyer pays) or "cav" (seller accepts)
    entries: tuple[WelfareEntry, ...]
    price_coefficient: float
    reading_note: str | None = None

    def entry(self, name: str) -> WelfareEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise UnknownCoefficientError(f"no welfare entry named {name!r}")

    def ratios(self) -> dict[str, float]:
        return {e.name: e.estimate for e in self.entries}

    def to_json_dict(self) -> dict:
        return {
            "population": self.population,
            "direction": self.direction,
            "price_coefficient": self.price_coefficient,
            "reading_note": self.reading_note,
            "entries": [
                {
                    "name": e.name,
                    "estimate": e.estimate,
                    "se": e.se,
                    "method": e.method,
                    "formula": e.formula,
                    "paper_reading": e.paper_reading,
                    "paper_formula": e.paper_formula,
                }
                for e in self.entries
            ],
        }


def welfare_table(fit: FitResult, direction: str, method: str = "delta",
                  n_rep: int = 10000, seed: int = 0) -> WelfareTable:
    """One ratio per non-price utility coefficient.

    ``direction`` is "cap" for buyer tables and "cav" for seller tables;
    seller tables add the presentation column that negates outlet
    constants, each entry labeled with the formula that produced it.
    """
    if direction not in ("cap", "cav"):
        raise UnknownCoefficientError(f"direction must be 'cap' or 'cav', got {direction!r}")
    if method not in ("delta", "bootstrap"):
        raise UnknownCoefficientError(f"method must be 'delta' or 'bootstrap', got {method!r}")
    _check_price_strength(fit, hard=True)
    entries = []
    for name in fit.utility_names:
        if name == fit.price_coef_name:
            continue
        estimate, se = wtp_ratio(fit, name)
        if method == "bootstrap":
            se = wtp_bootstrap_se(fit, name, n_rep=n_rep, seed=seed)
        paper_reading = None
        paper_formula = None
        if direction == "cav":
            if name.startswith("asc:"):
                paper_reading = -estimate
                paper_formula = FORMULA_DIRECT
            else:
                paper_reading = estimate
                paper_formula = FORMULA_NEGATED
        entries.append(
            WelfareEntry(
                name=name,
                estimate=estimate,
                se=se,
                method=method,
                formula=FORMULA_NEGATED,
                paper_reading=paper_reading,
                paper_formula=paper_formula,
            )
        )
    return WelfareTable(
        population=fit.spec.population,
        direction=direction,
        entries=tuple(entries),
        price_coefficient=float(fit.estimates[_price_position(fit)]),
        reading_note=CAV_READING_NOTE if direction == "cav" else None,
    )


def save_welfare_csv(table: WelfareTable, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["name", "estimate", "se", "method", "formula", "paper_reading", "paper_formula"]
        )
        for e in table.entries:
            writer.writerow(
                [
                    e.name,
                    repr(e.estimate),
                    repr(e.se),
                    e.method,
                    e.formula,
                    "" if e.paper_reading is None else repr(e.paper_reading),
                    e.paper_formula or "",
                ]
            )


def save_welfare_json(table: WelfareTable, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(table.to_json_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )


def outlet_ranking(table: WelfareTable, outlets: Iterable[str] | None = None) -> list[str]:
    """Outlets sorted by their constant's ratio, most valued first."""
    entries = [e for e in table.entries if e.name.startswith("asc:")]
    if outlets is not None:
        wanted = {f"asc:{o}" for o in outlets}
        entries = [e for e in entries if e.name in wanted]
    entries.sort(key=lambda e: e.estimate, reverse=True)
    return [e.name.split(":", 1)[1] for e in entries]
