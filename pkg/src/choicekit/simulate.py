"""Choice simulation from known utility parameters, plus brute-force
probability oracles the estimators are tested against.

The random-utility convention throughout: deterministic utility
U = asc_outlet + sum_k beta_k x_k for real alternatives, exactly 0 for the
opt-out, plus i.i.d. standard Gumbel noise per alternative. Respondents
draw one coefficient vector from the population law and keep it across
all of their tasks (the panel structure).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .data import Alternative, ChoiceTask, PanelDataset, Respondent
from .design import Design
from .errors import (
    DimensionMismatchError,
    InvalidTruthError,
    UnknownCoefficientError,
)
from .modelspec import ModelSpec

_ORACLE_CHUNK = 1 << 16


@dataclass(frozen=True)
class TrueParams:
    """Data-generating coefficients: fixed values plus Gaussian laws.

    ``random`` maps a coefficient name to (mean, sd); sd = 0 collapses to a
    fixed coefficient. Names missing from both maps act as zeros.
    """

    fixed: Mapping[str, float] = field(default_factory=dict)
    random: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "fixed", dict(self.fixed))
        object.__setattr__(self, "random", {k: (float(m), float(s)) for k, (m, s) in dict(self.random).items()})
        overlap = set(self.fixed) & set(self.random)
        if overlap:
            raise InvalidTruthError(f"coefficients both fixed and random: {sorted(overlap)}")
        for name, (_, sd) in self.random.items():
            if sd < 0:
                raise InvalidTruthError(f"random coefficient {name!r} has sd {sd} < 0")

    def validate_against(self, spec: ModelSpec) -> None:
        names = set(spec.coef_names())
        unknown = (set(self.fixed) | set(self.random)) - names
        if unknown:
            raise InvalidTruthError(f"coefficients not in the spec: {sorted(unknown)}")

    def mean_vector(self, spec: ModelSpec) -> np.ndarray:
        """Coefficient means in spec order (fixed values count as means)."""
        out = np.zeros(spec.n_params)
        for i, name in enumerate(spec.coef_names()):
            if name in self.fixed:
                out[i] = self.fixed[name]
            elif name in self.random:
                out[i] = self.random[name][0]
        return out


def utility(alt: Alternative, params: Mapping[str, float], spec: ModelSpec) -> float:
    """Deterministic utility of one alternative; the opt-out anchors at 0.

    ``params`` maps coefficient names to values; names absent from the map
    contribute zero, names unknown to the spec raise.
    """
    names = spec.coef_names()
    unknown = set(params) - set(names)
    if unknown:
        raise UnknownCoefficientError(f"unknown coefficients {sorted(unknown)}")
    if alt.is_opt_out:
        return 0.0
    x = spec.code_alternative(alt)
    return float(sum(params.get(name, 0.0) * x[i] for i, name in enumerate(names)))


def logit_probs(utilities: Sequence[float] | np.ndarray) -> np.ndarray:
    """Softmax choice probabilities, stabilized by max subtraction."""
    v = np.asarray(utilities, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("utilities must be finite")
    e = np.exp(v - v.max())
    return e / e.sum()


def _standard_gumbel(rng: np.random.Generator, size) -> np.ndarray:
    # inverse CDF of the standard Gumbel; rng.random() is in [0, 1) so
    # flip to (0, 1] to keep the outer log finite
    u = 1.0 - rng.random(size)
    return -np.log(-np.log(u))


def _draw_coefficients(truth: TrueParams, spec: ModelSpec, rng: np.random.Generator) -> np.ndarray:
    beta = truth.mean_vector(spec)
    names = spec.coef_names()
    for i, name in enumerate(names):
        if name in truth.random:
            _, sd = truth.random[name]
            z = rng.standard_normal()
            beta[i] += sd * z
    return beta


def simulate_choices(design: Design, truth: TrueParams, spec: ModelSpec, seed: int) -> PanelDataset:
    """Simulate panel choices on a design.

    Each respondent draws one coefficient vector, held fixed across their
    tasks; each alternative receives independent standard Gumbel noise and
    the maximum total utility wins. Deterministic under the seed with one
    substream per respondent.
    """
    truth.validate_against(spec)
    children = np.random.SeedSequence(seed).spawn(design.n_respondents)
    respondents = []
    for i, (tasks, child) in enumerate(zip(design.tasks_by_respondent, children)):
        rng = np.random.default_rng(child)
        beta = _draw_coefficients(truth, spec, rng)
        chosen_tasks = []
        for task in tasks:
            x = np.vstack([spec.code_alternative(a) for a in task.alternatives])
            total = x @ beta + _standard_gumbel(rng, len(task.alternatives))
            winner = task.alternatives[int(np.argmax(total))].alt_id
            chosen_tasks.append(ChoiceTask(task.task_id, task.alternatives, winner))
        respondents.append(
            Respondent(f"r{i + 1:04d}", spec.population, tuple(chosen_tasks))
        )
    return PanelDataset(design.schema, tuple(respondents))


def _task_arrays(tasks: Iterable[ChoiceTask], spec: ModelSpec):
    """Stack the coded rows of a task sequence; returns (X, task slices, chosen rows)."""
    rows = []
    starts = []
    chosen = []
    for task in tasks:
        if task.chosen is None:
            raise InvalidTruthError(f"task {task.task_id!r} has no chosen alternative")
        starts.append(len(rows))
        for alt in task.alternatives:
            if alt.alt_id == task.chosen:
                chosen.append(len(rows))
            rows.append(spec.code_alternative(alt))
    if not rows:
        return np.zeros((0, spec.n_params)), np.asarray([], dtype=np.int64), np.asarray([], dtype=np.int64)
    return np.vstack(rows), np.asarray(starts, dtype=np.int64), np.asarray(chosen, dtype=np.int64)


def _panel_prob_for_draws(X, starts, chosen, beta_draws: np.ndarray) -> np.ndarray:
    """P(observed sequence | beta) for each draw; beta_draws is (R, K)."""
    v = beta_draws @ X.T                                    # (R, n_rows)
    vmax = np.maximum.reduceat(v, starts, axis=1)
    e = np.exp(v - np.repeat(vmax, np.diff(np.append(starts, X.shape[0])), axis=1))
    denom = np.add.reduceat(e, starts, axis=1)
    logp = v[:, chosen] - (vmax + np.log(denom))
    return np.exp(logp.sum(axis=1))


def mixl_prob_oracle(tasks: Sequence[ChoiceTask], truth: TrueParams, spec: ModelSpec,
                     n_mc: int, seed: int = 0) -> float:
    """Plain Monte Carlo estimate of E_beta[prod_t P(chosen_t | beta)].

    This is the brute-force oracle for the panel mixture probability; the
    quasi-random estimator is tested against it. An empty task sequence has
    probability 1. With no random coefficients the product is returned
    exactly, without sampling.
    """
    if n_mc < 1:
        raise InvalidTruthError("n_mc must be at least 1")
    truth.validate_against(spec)
    X, starts, chosen = _task_arrays(tasks, spec)
    if X.shape[0] == 0:
        return 1.0
    mean = truth.mean_vector(spec)
    random_items = [(name, ms) for name, ms in truth.random.items() if ms[1] > 0]
    if not random_items:
        return float(_panel_prob_for_draws(X, starts, chosen, mean[None, :])[0])
    names = spec.coef_names()
    idx = np.asarray([names.index(name) for name, _ in random_items], dtype=np.int64)
    sds = np.asarray([sd for _, (_, sd) in random_items])
    rng = np.random.default_rng(seed)
    total = 0.0
    done = 0
    while done < n_mc:
        take = min(_ORACLE_CHUNK, n_mc - done)
        z = rng.standard_normal((take, len(idx)))
        beta = np.tile(mean, (take, 1))
        beta[:, idx] += z * sds
        total += float(_panel_prob_for_draws(X, starts, chosen, beta).sum())
        done += take
    return total / n_mc


def panel_prob_quadrature(tasks: Sequence[ChoiceTask], truth: TrueParams, spec: ModelSpec,
                          n_nodes: int = 64) -> float:
    """Gauss-Hermite value of the same mixture probability, for exactly one
    random coefficient; the deterministic oracle for small problems."""
    truth.validate_against(spec)
    random_items = [(name, ms) for name, ms in truth.random.items() if ms[1] > 0]
    if len(random_items) != 1:
        raise DimensionMismatchError(
            f"quadrature oracle needs exactly 1 random coefficient, got {len(random_items)}"
        )
    X, starts, chosen = _task_arrays(tasks, spec)
    if X.shape[0] == 0:
        return 1.0
    name, (mean_k, sd_k) = random_items[0]
    names = spec.coef_names()
    k = names.index(name)
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    beta = np.tile(truth.mean_vector(spec), (n_nodes, 1))
    beta[:, k] = mean_k + np.sqrt(2.0) * sd_k * nodes
    probs = _panel_prob_for_draws(X, starts, chosen, beta)
    return float((weights * probs).sum() / np.sqrt(np.pi))
