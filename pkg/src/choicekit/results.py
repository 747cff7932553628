"""Estimation results: coefficient tables, fit statistics, JSON round trip.

One container serves both estimators. For the mixed model the parameter
vector holds ``mean:<name>`` and ``sd:<name>`` entries for the random
coefficients followed by the fixed ones; ``resolve_utility_name`` maps a
utility coefficient to the parameter carrying its central value, which is
what the welfare and market-potential modules consume.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import stats as sps

from .errors import UnknownCoefficientError, ValidationError
from .modelspec import ModelSpec


@dataclass
class FitResult:
    """Estimates, covariance and fit statistics of one estimation run."""

    model: str                      # "mnl" or "mixl"
    spec: ModelSpec
    coef_names: tuple[str, ...]
    estimates: np.ndarray
    covariance: np.ndarray
    loglik: float
    loglik_null: float
    n_obs: int
    converged: bool
    iterations: int
    grad_norm: float = math.nan
    covariance_kind: str = "classical"
    random_names: tuple[str, ...] = ()
    draw_scheme: str | None = None
    n_draws: int | None = None
    draw_seed: int | None = None
    warm_start: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coef_names = tuple(self.coef_names)
        self.random_names = tuple(self.random_names)
        self.estimates = np.asarray(self.estimates, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        k = len(self.coef_names)
        if self.estimates.shape != (k,):
            raise ValidationError("estimates do not match coefficient names")
        if self.covariance.shape != (k, k):
            raise ValidationError("covariance shape does not match coefficient names")

    # -- fit statistics ----------------------------------------------------

    @property
    def k(self) -> int:
        return len(self.coef_names)

    @property
    def aic(self) -> float:
        return 2.0 * self.k - 2.0 * self.loglik

    @property
    def bic(self) -> float:
        return self.k * math.log(self.n_obs) - 2.0 * self.loglik

    @property
    def adj_rho2(self) -> float:
        return 1.0 - (self.loglik - self.k) / self.loglik_null

    # -- coefficient access --------------------------------------------------

    @property
    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.coef_names, self.estimates))

    def index_of(self, name: str) -> int:
        try:
            return self.coef_names.index(name)
        except ValueError:
            raise UnknownCoefficientError(f"no coefficient named {name!r}") from None

    def se(self, name: str) -> float:
        i = self.index_of(name)
        return float(np.sqrt(max(self.covariance[i, i], 0.0)))

    def z(self, name: str) -> float:
        s = self.se(name)
        return float(self.estimates[self.index_of(name)] / s) if s > 0 else math.inf

    def p_value(self, name: str) -> float:
        z = self.z(name)
        return float(2.0 * sps.norm.sf(abs(z)))

    @property
    def utility_names(self) -> tuple[str, ...]:
        """Names of the utility coefficients (spec order), model-agnostic."""
        return self.spec.coef_names()

    def resolve_utility_name(self, name: str) -> str:
        """Parameter holding the central value of a utility coefficient."""
        if name not in self.spec.coef_names():
            raise UnknownCoefficientError(f"{name!r} is not a utility coefficient of the spec")
        if name in self.random_names:
            return f"mean:{name}"
        return name

    def utility_value(self, name: str) -> float:
        return float(self.estimates[self.index_of(self.resolve_utility_name(name))])

    @property
    def price_coef_name(self) -> str:
        if self.spec.price_attr is None:
            raise UnknownCoefficientError("the specification has no price coefficient")
        return self.spec.price_attr

    def scaled(self, factor: float) -> "FitResult":
        """Copy with all coefficients scaled by ``factor`` (covariance by
        factor squared), used to probe scale invariance of ratios."""
        out = FitResult(
            model=self.model,
            spec=self.spec,
            coef_names=self.coef_names,
            estimates=self.estimates * factor,
            covariance=self.covariance * factor * factor,
            loglik=self.loglik,
            loglik_null=self.loglik_null,
            n_obs=self.n_obs,
            converged=self.converged,
            iterations=self.iterations,
            grad_norm=self.grad_norm,
            covariance_kind=self.covariance_kind,
            random_names=self.random_names,
            draw_scheme=self.draw_scheme,
            n_draws=self.n_draws,
            draw_seed=self.draw_seed,
            warm_start=self.warm_start,
            extra=dict(self.extra),
        )
        return out

    # -- serialization -------------------------------------------------------

    def coefficient_table(self) -> list[dict]:
        rows = []
        for name in self.coef_names:
            rows.append(
                {
                    "name": name,
                    "estimate": float(self.estimates[self.index_of(name)]),
                    "se": self.se(name),
                    "z": self.z(name),
                    "p": self.p_value(name),
                }
            )
        return rows

    def to_json_dict(self) -> dict:
        out = {
            "model": self.model,
            "spec": self.spec.to_json_dict(),
            "coefficients": self.coefficient_table(),
            "covariance": self.covariance.tolist(),
            "covariance_kind": self.covariance_kind,
            "stats": {
                "loglik": self.loglik,
                "loglik_null": self.loglik_null,
                "n_obs": self.n_obs,
                "k": self.k,
                "aic": self.aic,
                "bic": self.bic,
                "adj_rho2": self.adj_rho2,
            },
            "convergence": {
                "converged": self.converged,
                "iterations": self.iterations,
                "grad_norm": self.grad_norm,
                "warm_start": self.warm_start,
            },
        }
        if self.model == "mixl":
            out["draws"] = {
                "random_set": list(self.random_names),
                "scheme": self.draw_scheme,
                "n_draws": self.n_draws,
                "seed": self.draw_seed,
            }
        if self.extra:
            out["extra"] = self.extra
        return out

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "FitResult":
        spec = ModelSpec.from_json_dict(d["spec"])
        names = tuple(row["name"] for row in d["coefficients"])
        estimates = np.asarray([row["estimate"] for row in d["coefficients"]])
        draws = d.get("draws", {})
        return cls(
            model=d["model"],
            spec=spec,
            coef_names=names,
            estimates=estimates,
            covariance=np.asarray(d["covariance"]),
            loglik=d["stats"]["loglik"],
            loglik_null=d["stats"]["loglik_null"],
            n_obs=d["stats"]["n_obs"],
            converged=d["convergence"]["converged"],
            iterations=d["convergence"]["iterations"],
            grad_norm=d["convergence"].get("grad_norm", math.nan),
            covariance_kind=d.get("covariance_kind", "classical"),
            random_names=tuple(draws.get("random_set", ())),
            draw_scheme=draws.get("scheme"),
            n_draws=draws.get("n_draws"),
            draw_seed=draws.get("seed"),
            warm_start=d["convergence"].get("warm_start"),
            extra=dict(d.get("extra", {})),
        )


def save_fit(fit: FitResult, path: str | Path) -> None:
    Path(path).write_text(json.dumps(fit.to_json_dict(), indent=2, sort_keys=True), encoding="utf-8")


def load_fit(path: str | Path) -> FitResult:
    return FitResult.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))
