"""Multilevel logistic model for rater-group effects on repeated pairs.

For image pair j (and optionally rater group g) the probability that a
vote lands on the pair's canonical right image is sigmoid(beta0 + u_c),
with one random intercept u_c ~ N(0, sigma_u^2) per cell c = (g, j) (or
per pair for the baseline model). The marginal likelihood integrates the
random effects out with adaptive Gauss-Hermite quadrature; effects are
reported as empirical-Bayes posterior means with posterior standard
errors. Also computes Pearson correlations between per-image score maps.

Votes are oriented to a canonical left/right per unordered pair (sorted
image ids) so that the randomised slot placement used while serving does
not dilute pair effects.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp
from scipy.stats import norm

from .records import DEMOGRAPHIC_FIELDS, Rater, Vote

DEFAULT_NODES = 31
_BETA0_BOUND = 15.0
_LOG_SIGMA_BOUNDS = (math.log(1e-6), math.log(50.0))
_PENALTY_VAR = 100.0  # weak Gaussian penalty on the log-odds scale


@dataclass(frozen=True)
class Cell:
    """Sufficient statistics for one random-intercept cell."""

    pair: tuple[str, str]
    group: str | None
    n: int  # games in the cell
    k: int  # votes for the canonical right image


@dataclass(frozen=True)
class EffectEstimate:
    pair: tuple[str, str]
    group: str | None
    estimate: float  # empirical-Bayes posterior mean of u_c
    se: float  # posterior standard deviation
    n_games: int
    separation: bool  # unanimous cell: estimate is the prior-shrunk solution

    def ci(self, level: float = 0.95) -> tuple[float, float]:
        z = norm.ppf(0.5 + level / 2.0)
        return self.estimate - z * self.se, self.estimate + z * self.se


@dataclass
class MlmFit:
    beta0: float
    sigma_u: float
    effects: list[EffectEstimate]
    converged: bool
    loglik: float
    grouping: str | None = None
    penalized: bool = False


def build_cells(
    votes: Sequence[Vote],
    sessions: Iterable[Rater] | None = None,
    grouping: str | None = None,
) -> list[Cell]:
    """Aggregate left/right votes into per-(group, pair) binomial cells.

    With ``grouping`` set, sessions lacking that attribute are left out of
    the model (they still appear in the agreement tables elsewhere).
    """
    if grouping is not None:
        if grouping not in DEMOGRAPHIC_FIELDS:
            raise KeyError(f"unknown grouping {grouping!r}")
        if sessions is None:
            raise ValueError("grouping requires the session table")
        level_of = {s.session_id: s.group(grouping) for s in sessions}

    counts: dict[tuple[tuple[str, str], str | None], list[int]] = {}
    for v in votes:
        chosen = v.chosen_image
        if chosen is None:
            continue
        group = None
        if grouping is not None:
            group = level_of.get(v.session_id)
            if group is None:
                continue
        pair = tuple(sorted(v.pair))
        nk = counts.setdefault((pair, group), [0, 0])
        nk[0] += 1
        nk[1] += 1 if chosen == pair[1] else 0

    cells = [
        Cell(pair=pair, group=group, n=n, k=k)
        for (pair, group), (n, k) in sorted(counts.items(), key=lambda kv: (kv[0][0], str(kv[0][1])))
    ]
    pairs_with_enough = {c.pair for c in cells if c.n >= 2}
    if len(pairs_with_enough) < 2:
        raise ValueError("need at least 2 image pairs with at least 2 votes each")
    return cells


def _cell_modes(
    n: np.ndarray, k: np.ndarray, beta0: float, sigma: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell mode and curvature scale of the random-effect integrand."""
    s2 = sigma * sigma
    u = np.zeros_like(n, dtype=float)
    for _ in range(100):
        p = expit(beta0 + u)
        g1 = k - n * p - u / s2
        g2 = -n * p * (1.0 - p) - 1.0 / s2
        step = np.clip(g1 / g2, -10.0, 10.0)
        u -= step
        if np.max(np.abs(step)) < 1e-12:
            break
    p = expit(beta0 + u)
    tau = 1.0 / np.sqrt(n * p * (1.0 - p) + 1.0 / s2)
    return u, tau


def _quadrature(
    n: np.ndarray, k: np.ndarray, beta0: float, sigma: float, n_nodes: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adaptive GH grid: log cell likelihoods plus posterior node weights.

    Returns (cell_loglik, node_points, node_weights) with node arrays of
    shape (n_cells, n_nodes); weights are normalised per cell.
    """
    x, w = np.polynomial.hermite.hermgauss(n_nodes)
    mode, tau = _cell_modes(n, k, beta0, sigma)
    u = mode[:, None] + math.sqrt(2.0) * tau[:, None] * x[None, :]
    eta = beta0 + u
    log_f = (
        k[:, None] * eta
        - n[:, None] * np.logaddexp(0.0, eta)
        - 0.5 * (u / sigma) ** 2
        - math.log(sigma)
        - 0.5 * math.log(2.0 * math.pi)
    )
    log_terms = log_f + x[None, :] ** 2 + np.log(w)[None, :]
    cell_ll = logsumexp(log_terms, axis=1) + 0.5 * math.log(2.0) + np.log(tau)
    post = np.exp(log_terms - logsumexp(log_terms, axis=1, keepdims=True))
    return cell_ll, u, post


def marginal_loglik_and_grad(
    cells: Sequence[Cell],
    beta0: float,
    sigma_u: float,
    n_nodes: int = DEFAULT_NODES,
) -> tuple[float, np.ndarray]:
    """Marginal log-likelihood and its gradient in (beta0, sigma_u).

    The gradient is the posterior expectation of the score function,
    evaluated on the same adaptive grid as the likelihood.
    """
    n = np.array([c.n for c in cells], dtype=float)
    k = np.array([c.k for c in cells], dtype=float)
    cell_ll, u, post = _quadrature(n, k, beta0, sigma_u, n_nodes)
    p = expit(beta0 + u)
    d_beta0 = float(np.sum(np.sum(post * (k[:, None] - n[:, None] * p), axis=1)))
    d_sigma = float(np.sum(np.sum(post * (u**2 / sigma_u**3 - 1.0 / sigma_u), axis=1)))
    return float(np.sum(cell_ll)), np.array([d_beta0, d_sigma])


def fit_mlm(
    votes: Sequence[Vote],
    sessions: Iterable[Rater] | None = None,
    grouping: str | None = None,
    n_nodes: int = DEFAULT_NODES,
) -> MlmFit:
    """Maximum marginal likelihood fit with empirical-Bayes cell effects.

    Degenerate data that pushes (beta0, sigma_u) to the search bounds is
    refit with a weak Gaussian penalty (variance 100 on the log-odds
    scale) instead of crashing; the fit is marked ``penalized``.
    """
    cells = build_cells(votes, sessions, grouping)
    n = np.array([c.n for c in cells], dtype=float)
    k = np.array([c.k for c in cells], dtype=float)

    def negll(theta: np.ndarray, penalty: bool) -> tuple[float, np.ndarray]:
        beta0, log_sigma = theta
        sigma = math.exp(log_sigma)
        ll, grad = marginal_loglik_and_grad(cells, beta0, sigma, n_nodes)
        g = np.array([grad[0], grad[1] * sigma])  # chain rule for log sigma
        if penalty:
            ll -= (beta0**2 + sigma**2) / (2.0 * _PENALTY_VAR)
            g -= np.array([beta0 / _PENALTY_VAR, sigma**2 / _PENALTY_VAR])
        return -ll, -g

    ktot, ntot = float(k.sum()), float(n.sum())
    p0 = min(max(ktot / ntot if ntot else 0.5, 1e-3), 1 - 1e-3)
    x0 = np.array([math.log(p0 / (1.0 - p0)), math.log(0.5)])
    bounds = [(-_BETA0_BOUND, _BETA0_BOUND), _LOG_SIGMA_BOUNDS]

    penalized = False
    res = minimize(
        negll, x0, args=(False,), jac=True, method="L-BFGS-B", bounds=bounds,
        options={"ftol": 1e-12, "gtol": 1e-9, "maxiter": 500},
    )
    hit_bound = (
        abs(res.x[0]) >= _BETA0_BOUND - 1e-6 or res.x[1] >= _LOG_SIGMA_BOUNDS[1] - 1e-6
    )
    if hit_bound:
        penalized = True
        res = minimize(
            negll, x0, args=(True,), jac=True, method="L-BFGS-B", bounds=bounds,
            options={"ftol": 1e-12, "gtol": 1e-9, "maxiter": 500},
        )

    beta0 = float(res.x[0])
    sigma_u = float(math.exp(res.x[1]))

    # a boundary optimum (sigma_u -> 0 on null data) is a valid solution even
    # when the line search gives up: accept a vanishing projected gradient
    converged = bool(res.success)
    if not converged:
        _, g = negll(res.x, penalized)
        projected = g.copy()
        for i, (lo, hi) in enumerate(bounds):
            if res.x[i] <= lo + 1e-9 and projected[i] > 0:
                projected[i] = 0.0
            if res.x[i] >= hi - 1e-9 and projected[i] < 0:
                projected[i] = 0.0
        converged = float(np.max(np.abs(projected))) < 1e-3

    cell_ll, u, post = _quadrature(n, k, beta0, sigma_u, n_nodes)
    mean_u = np.sum(post * u, axis=1)
    var_u = np.maximum(np.sum(post * u**2, axis=1) - mean_u**2, 0.0)

    effects = [
        EffectEstimate(
            pair=c.pair,
            group=c.group,
            estimate=float(mean_u[i]),
            se=float(math.sqrt(var_u[i])),
            n_games=c.n,
            separation=c.k == 0 or c.k == c.n,
        )
        for i, c in enumerate(cells)
    ]
    return MlmFit(
        beta0=beta0,
        sigma_u=sigma_u,
        effects=effects,
        converged=converged,
        loglik=float(np.sum(cell_ll)),
        grouping=grouping,
        penalized=penalized,
    )


def significant_effects(fit: MlmFit, level: float = 0.95) -> list[EffectEstimate]:
    """Cells whose confidence interval excludes zero, largest |estimate| first."""
    if not fit.converged:
        raise ValueError("fit did not converge; refusing to flag effects")
    flagged = [e for e in fit.effects if _excludes_zero(e, level)]
    return sorted(flagged, key=lambda e: -abs(e.estimate))


def _excludes_zero(effect: EffectEstimate, level: float) -> bool:
    lo, hi = effect.ci(level)
    return lo > 0.0 or hi < 0.0


def write_effects_csv(fit: MlmFit, path: str | Path, level: float = 0.95) -> None:
    """Effect table: ``pair_id,group,estimate,se,ci_lo,ci_hi,significant``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "group", "estimate", "se", "ci_lo", "ci_hi", "significant"])
        for e in fit.effects:
            lo, hi = e.ci(level)
            writer.writerow(
                [
                    "|".join(e.pair),
                    e.group or "",
                    repr(e.estimate),
                    repr(e.se),
                    repr(lo),
                    repr(hi),
                    int(_excludes_zero(e, level)),
                ]
            )


@dataclass
class CorrelationMatrix:
    names: list[str]
    matrix: np.ndarray  # (m, m), nan where undefined
    undefined: set[tuple[str, str]]
    n_common: int


def pearson_corr(score_tables: Mapping[str, Mapping[str, float]]) -> CorrelationMatrix:
    """Pearson correlations between named score maps on their common ids.

    Requires at least two tables sharing at least three image ids. Tables
    with zero variance over the intersection produce flagged NaN entries.
    """
    names = list(score_tables)
    if len(names) < 2:
        raise ValueError("need at least two score tables")
    common: set[str] | None = None
    for table in score_tables.values():
        common = set(table) if common is None else common & set(table)
    ids = sorted(common or ())
    if len(ids) < 3:
        raise ValueError(f"tables share only {len(ids)} image ids; need at least 3")

    data = np.array([[score_tables[name][i] for i in ids] for name in names], dtype=float)
    centred = data - data.mean(axis=1, keepdims=True)
    norms = np.sqrt((centred**2).sum(axis=1))

    m = len(names)
    matrix = np.full((m, m), np.nan)
    undefined: set[tuple[str, str]] = set()
    for i in range(m):
        for j in range(m):
            if norms[i] == 0.0 or norms[j] == 0.0:
                undefined.add((names[i], names[j]))
                continue
            if i == j:
                matrix[i, j] = 1.0
            else:
                matrix[i, j] = float(centred[i] @ centred[j] / (norms[i] * norms[j]))
    return CorrelationMatrix(names=names, matrix=matrix, undefined=undefined, n_common=len(ids))
