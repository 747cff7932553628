"""Panel mixed logit by maximum simulated likelihood.

Random coefficients are independent Gaussians (diagonal mixing, the price
coefficient always stays fixed). Each individual receives one block of
quasi-random standard-normal draws, reused across all of that
individual's tasks; the simulated likelihood is

    sum_i ln[ (1/R) sum_r prod_t P(chosen_it | beta = mean + |sd| o z_ir) ]

with the standard deviations entering through their absolute value so the
optimizer runs unconstrained; reported sds are the absolute values.
Gradients are analytic per-draw scores. Draw blocks are generated once
per fit (common random numbers) and all reductions run in a fixed order,
so values are bit-stable for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize as sopt
from scipy.special import ndtri
from scipy.stats import qmc
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import PanelDataset
from .errors import (
    DimensionMismatchError,
    DimensionTooLargeError,
    EstimationError,
    NotConvergedError,
    SingularHessianError,
    ValidationError,
)
from .mnl import fit_mnl
from .modelspec import CompiledPanel, ModelSpec, compile_panel
from .results import FitResult

_SOBOL_MAX_DIM = 21201
_CHUNK_CELLS = 1 << 22   # target cells per (n_rows, chunk) work array


@dataclass(frozen=True)
class MixlSpec:
    """Mixed-logit declaration: base utility spec plus the mixing setup."""

    base: ModelSpec
    random_set: tuple[str, ...]
    n_draws: int = 500
    draw_scheme: str = "sobol"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "random_set", tuple(self.random_set))
        names = self.base.coef_names()
        unknown = set(self.random_set) - set(names)
        if unknown:
            raise ValidationError(f"random_set names not in the spec: {sorted(unknown)}")
        if len(set(self.random_set)) != len(self.random_set):
            raise ValidationError("duplicate names in random_set")
        if self.base.price_attr is not None and self.base.price_attr in self.random_set:
            raise ValidationError("the price coefficient must stay fixed")
        if self.n_draws < 1:
            raise ValidationError("n_draws must be at least 1")
        if self.draw_scheme not in ("sobol", "halton", "pseudo"):
            raise ValidationError(f"unknown draw scheme {self.draw_scheme!r}")

    @property
    def random_names(self) -> tuple[str, ...]:
        """Random coefficients in spec declaration order."""
        return tuple(n for n in self.base.coef_names() if n in self.random_set)

    @property
    def fixed_names(self) -> tuple[str, ...]:
        return tuple(n for n in self.base.coef_names() if n not in self.random_set)

    def param_names(self) -> tuple[str, ...]:
        rand = self.random_names
        return tuple(
            [f"mean:{n}" for n in rand] + [f"sd:{n}" for n in rand] + list(self.fixed_names)
        )

    @property
    def n_params(self) -> int:
        return 2 * len(self.random_names) + len(self.fixed_names)

    def pack(self, means, sds, fixed) -> np.ndarray:
        """Flat parameter vector from name->value maps."""
        rand = self.random_names
        out = np.zeros(self.n_params)
        for i, n in enumerate(rand):
            out[i] = means[n]
            out[len(rand) + i] = sds[n]
        for j, n in enumerate(self.fixed_names):
            out[2 * len(rand) + j] = fixed[n]
        return out

    def to_json_dict(self) -> dict:
        return {
            "base": self.base.to_json_dict(),
            "random_set": list(self.random_set),
            "n_draws": self.n_draws,
            "draw_scheme": self.draw_scheme,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, d) -> "MixlSpec":
        return cls(
            base=ModelSpec.from_json_dict(d["base"]),
            random_set=tuple(d["random_set"]),
            n_draws=d.get("n_draws", 500),
            draw_scheme=d.get("draw_scheme", "sobol"),
            seed=d.get("seed", 0),
        )


def quasi_draws(n_individuals: int, dim: int, n_draws: int,
                scheme: str = "sobol", seed: int = 0) -> np.ndarray:
    """Standard-normal draw blocks, shape (n_individuals, n_draws, dim).

    Low-discrepancy schemes take one scrambled sequence, skip the first
    point, map through the inverse normal CDF and hand out consecutive
    ranges per individual, so every individual's block is distinct and
    deterministic under the seed.
    """
    if n_individuals < 1 or n_draws < 1 or dim < 0:
        raise ValidationError("n_individuals and n_draws must be positive")
    if dim == 0:
        return np.zeros((n_individuals, n_draws, 0))
    total = n_individuals * n_draws
    if scheme == "pseudo":
        rng = np.random.default_rng(seed)
        return rng.standard_normal((n_individuals, n_draws, dim))
    if scheme == "sobol":
        if dim > _SOBOL_MAX_DIM:
            raise DimensionTooLargeError(f"sobol supports up to {_SOBOL_MAX_DIM} dimensions")
        engine = qmc.Sobol(d=dim, scramble=True, seed=seed)
        m = int(total).bit_length()          # 2**m >= total + 1
        points = engine.random_base2(m=m)[1:total + 1]
    elif scheme == "halton":
        engine = qmc.Halton(d=dim, scramble=True, seed=seed)
        points = engine.random(total + 1)[1:]
    else:
        raise ValidationError(f"unknown draw scheme {scheme!r}")
    z = ndtri(points)
    return z.reshape(n_individuals, n_draws, dim)


class _MixlProblem:
    """Compiled data plus draws; evaluates the simulated likelihood and its
    analytic gradient in draw chunks to bound memory."""

    def __init__(self, cp: CompiledPanel, spec: MixlSpec):
        names = spec.base.coef_names()
        if tuple(cp.coef_names) != tuple(names):
            raise DimensionMismatchError("compiled panel does not match the spec")
        self.cp = cp
        self.spec = spec
        self.rand_idx = np.asarray([names.index(n) for n in spec.random_names], dtype=np.int64)
        self.fix_idx = np.asarray(
            [i for i, n in enumerate(names) if n not in spec.random_set], dtype=np.int64
        )
        self.n_rand = len(self.rand_idx)
        self.n_fix = len(self.fix_idx)
        self.n_params = spec.n_params
        self.draws = quasi_draws(
            cp.n_resp, self.n_rand, spec.n_draws, spec.draw_scheme, spec.seed
        )
        self.chunk = max(1, min(spec.n_draws, _CHUNK_CELLS // max(cp.n_rows, 1)))
        # balanced panels (same row count per respondent) let the score
        # accumulation run as one batched matmul instead of per-column scans
        rows_per_resp = np.diff(np.append(cp.resp_row_starts, cp.n_rows))
        self.rows_per_resp = int(rows_per_resp[0]) if len(rows_per_resp) else 0
        self.balanced = bool(len(rows_per_resp)) and bool(
            np.all(rows_per_resp == self.rows_per_resp)
        )

    def split(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise DimensionMismatchError(
                f"parameter vector has shape {theta.shape}, spec wants ({self.n_params},)"
            )
        means = theta[: self.n_rand]
        sds_raw = theta[self.n_rand: 2 * self.n_rand]
        fixed = theta[2 * self.n_rand:]
        return means, sds_raw, fixed

    def _chunk_logprob(self, means, sds_eff, fixed, lo, hi, want_p: bool = False):
        """Per-individual log task-sequence probability for draws [lo, hi).

        Work arrays are laid out (draws, rows) so the segmented reductions
        run over contiguous memory. Returns (L, p) with L of shape
        (hi-lo, n_resp); p holds the row-level choice probabilities the
        gradient pass needs and is None unless requested.
        """
        cp = self.cp
        beta = means + sds_eff * self.draws[:, lo:hi, :]       # (n_resp, C, dr)
        v_base = cp.X[:, self.fix_idx] @ fixed                 # (n_rows,)
        v = np.broadcast_to(v_base, (hi - lo, cp.n_rows)).copy()
        for d in range(self.n_rand):
            v += cp.X[:, self.rand_idx[d]] * beta[:, :, d].T[:, cp.resp_of_row]
        vmax = np.maximum.reduceat(v, cp.task_row_starts, axis=1)
        e = np.exp(v - np.repeat(vmax, cp.task_sizes, axis=1))
        denom = np.add.reduceat(e, cp.task_row_starts, axis=1)
        logp = v[:, cp.chosen_rows] - (vmax + np.log(denom))   # (C, n_tasks)
        L = np.add.reduceat(logp, cp.resp_task_starts, axis=1)
        p = e / np.repeat(denom, cp.task_sizes, axis=1) if want_p else None
        return L, p

    def panel_logliks(self, theta: np.ndarray) -> np.ndarray:
        """ln[(1/R) sum_r prod_t P] per individual, shape (n_resp,)."""
        L = self.draw_logliks(theta)
        m = L.max(axis=1)
        s = np.exp(L - m[:, None]).sum(axis=1)
        return m + np.log(s) - np.log(self.spec.n_draws)

    def draw_logliks(self, theta: np.ndarray) -> np.ndarray:
        """Per-draw log sequence probabilities, shape (n_resp, R)."""
        means, sds_raw, fixed = self.split(theta)
        sds_eff = np.abs(sds_raw)
        R = self.spec.n_draws
        L = np.empty((self.cp.n_resp, R))
        for lo in range(0, R, self.chunk):
            hi = min(lo + self.chunk, R)
            L_chunk, _ = self._chunk_logprob(means, sds_eff, fixed, lo, hi)
            L[:, lo:hi] = L_chunk.T
        return L

    def value(self, theta: np.ndarray) -> float:
        return float(self.panel_logliks(theta).sum())

    def value_grad_scores(self, theta: np.ndarray):
        """Simulated log-likelihood, gradient, and per-individual scores.

        Two passes over the draws: the first collects per-draw log
        probabilities to form the within-individual draw weights, the
        second accumulates weighted scores.
        """
        cp = self.cp
        means, sds_raw, fixed = self.split(theta)
        sds_eff = np.abs(sds_raw)
        signs = np.sign(sds_raw)
        R = self.spec.n_draws

        L = self.draw_logliks(theta)
        m = L.max(axis=1)
        w = np.exp(L - m[:, None])
        s = w.sum(axis=1)
        ll = float((m + np.log(s) - np.log(R)).sum())
        w /= s[:, None]                                        # (n_resp, R)

        scores = np.zeros((cp.n_resp, self.n_params))
        y = cp.y
        for lo in range(0, R, self.chunk):
            hi = min(lo + self.chunk, R)
            _, p_rows = self._chunk_logprob(means, sds_eff, fixed, lo, hi, want_p=True)
            resid = y - p_rows                                 # (C, n_rows)
            w_chunk = w[:, lo:hi]                              # (n_resp, C)
            if self.balanced:
                # s[i, c, k] = sum over respondent i's rows of resid * x_k
                resid3 = resid.reshape(hi - lo, cp.n_resp, self.rows_per_resp)
                x3 = cp.X.reshape(cp.n_resp, self.rows_per_resp, cp.n_params)
                s_all = np.matmul(resid3.transpose(1, 0, 2), x3)
                plain = (w_chunk[:, :, None] * s_all).sum(axis=1)
                for d in range(self.n_rand):
                    scores[:, d] += plain[:, self.rand_idx[d]]
                    wz = w_chunk * self.draws[:, lo:hi, d]
                    scores[:, self.n_rand + d] += signs[d] * (
                        wz * s_all[:, :, self.rand_idx[d]]
                    ).sum(axis=1)
                for j in range(self.n_fix):
                    scores[:, 2 * self.n_rand + j] += plain[:, self.fix_idx[j]]
            else:
                w_t = w_chunk.T                                # (C, n_resp)
                for d in range(self.n_rand):
                    s_d = np.add.reduceat(
                        resid * cp.X[:, self.rand_idx[d]], cp.resp_row_starts, axis=1
                    )
                    scores[:, d] += (w_t * s_d).sum(axis=0)
                    z_d = self.draws[:, lo:hi, d].T
                    scores[:, self.n_rand + d] += signs[d] * (w_t * s_d * z_d).sum(axis=0)
                for j in range(self.n_fix):
                    s_f = np.add.reduceat(
                        resid * cp.X[:, self.fix_idx[j]], cp.resp_row_starts, axis=1
                    )
                    scores[:, 2 * self.n_rand + j] += (w_t * s_f).sum(axis=0)
        return ll, scores.sum(axis=0), scores


def simulated_loglik(params, dataset: PanelDataset, spec: MixlSpec) -> float:
    """Simulated panel log-likelihood at a parameter vector laid out as
    spec.param_names(): random means, random sds, then fixed coefficients."""
    problem = _MixlProblem(compile_panel(dataset, spec.base), spec)
    return problem.value(np.asarray(params, dtype=float))


def simulated_loglik_grad(params, dataset: PanelDataset, spec: MixlSpec):
    """(value, gradient) of the simulated log-likelihood."""
    problem = _MixlProblem(compile_panel(dataset, spec.base), spec)
    ll, grad, _ = problem.value_grad_scores(np.asarray(params, dtype=float))
    return ll, grad


def _default_start(dataset: PanelDataset, spec: MixlSpec) -> tuple[np.ndarray, str]:
    """Start from the MNL solution with small positive sds; fall back to
    zeros when the MNL fit itself fails."""
    try:
        mnl = fit_mnl(dataset, spec.base)
        base = dict(zip(mnl.coef_names, mnl.estimates))
        label = "mnl"
    except EstimationError:
        base = {n: 0.0 for n in spec.base.coef_names()}
        label = "zeros"
    means = {n: base[n] for n in spec.random_names}
    sds = {n: 0.1 * max(1.0, abs(base[n])) for n in spec.random_names}
    fixed = {n: base[n] for n in spec.fixed_names}
    return spec.pack(means, sds, fixed), label


def fit_mixl(dataset: PanelDataset, spec: MixlSpec, tol: float = 1e-5,
             max_iter: int = 500, start=None) -> FitResult:
    """Quasi-Newton maximization of the simulated log-likelihood.

    Draw blocks are fixed for the whole optimization (common random
    numbers). The covariance is the inverse outer product of the
    per-individual scores at the optimum (BHHH); reported sds are absolute
    values, which leaves the likelihood unchanged by Gaussian symmetry.
    """
    cp = compile_panel(dataset, spec.base)
    problem = _MixlProblem(cp, spec)
    if start is None:
        theta0, warm = _default_start(dataset, spec)
    else:
        theta0 = np.asarray(start, dtype=float).copy()
        problem.split(theta0)
        warm = "user"

    def objective(theta):
        ll, grad, _ = problem.value_grad_scores(theta)
        return -ll, -grad

    res = sopt.minimize(
        objective, theta0, jac=True, method="BFGS",
        options={"gtol": tol, "maxiter": max_iter},
    )
    theta = res.x
    ll, grad, scores = problem.value_grad_scores(theta)
    gnorm = float(np.max(np.abs(grad)))
    converged = bool(res.success) or gnorm <= tol

    meat = scores.T @ scores
    try:
        cov = np.linalg.inv(meat)
    except np.linalg.LinAlgError:
        if converged:
            raise SingularHessianError(
                "score outer product singular at the optimum; a parameter is not identified"
            ) from None
        cov = np.linalg.pinv(meat)

    estimates = theta.copy()
    nr = len(spec.random_names)
    estimates[nr: 2 * nr] = np.abs(estimates[nr: 2 * nr])

    result = FitResult(
        model="mixl",
        spec=spec.base,
        coef_names=spec.param_names(),
        estimates=estimates,
        covariance=cov,
        loglik=ll,
        loglik_null=cp.loglik_null,
        n_obs=cp.n_tasks,
        converged=converged,
        iterations=int(res.nit),
        grad_norm=gnorm,
        covariance_kind="bhhh",
        random_names=spec.random_names,
        draw_scheme=spec.draw_scheme,
        n_draws=spec.n_draws,
        draw_seed=spec.seed,
        warm_start=warm,
    )
    if not converged:
        raise NotConvergedError(
            f"no convergence after {res.nit} iterations (|grad|={gnorm:.3e})",
            result=result,
        )
    return result


class MixedLogit(BaseEstimator):
    """Scikit-learn style front end for fit_mixl."""

    def __init__(self, spec: MixlSpec, tol: float = 1e-5, max_iter: int = 500):
        self.spec = spec
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, dataset: PanelDataset, y=None):
        self.result_ = fit_mixl(dataset, self.spec, tol=self.tol, max_iter=self.max_iter)
        return self

    def _fitted(self) -> FitResult:
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit before using this estimator")
        return self.result_

    def score(self, dataset: PanelDataset, y=None) -> float:
        """Mean simulated log-likelihood per task observation."""
        cp = compile_panel(dataset, self.spec.base)
        problem = _MixlProblem(cp, self.spec)
        return problem.value(self._fitted().estimates) / max(cp.n_tasks, 1)

    @property
    def means_(self) -> dict[str, float]:
        fit = self._fitted()
        return {n: fit.coefficients[f"mean:{n}"] for n in self.spec.random_names}

    @property
    def sds_(self) -> dict[str, float]:
        fit = self._fitted()
        return {n: fit.coefficients[f"sd:{n}"] for n in self.spec.random_names}

    @property
    def fixed_(self) -> dict[str, float]:
        fit = self._fitted()
        return {n: fit.coefficients[n] for n in self.spec.fixed_names}
