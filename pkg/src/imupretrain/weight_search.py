"""Gaussian-process weight search with expected-improvement acquisition.

The four pre-training task weights live on the 3-simplex (nonnegative, sum
to one).  A squared-exponential GP with per-dimension length-scales maps
weights to downstream validation performance; each iteration refits the GP
on all trials, scores a fresh uniform-simplex candidate pool by expected
improvement and evaluates the argmax.  The loop stops at the budget or when
the best performance stagnates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import ConfigError, NumericsError

_SIMPLEX_TOL = 1e-9
_STD_FLOOR = 1e-12


@dataclass(frozen=True)
class WeightVector:
    w_se: float
    w_po: float
    w_sp: float
    w_pe: float

    def __post_init__(self):
        vals = self.as_array()
        if np.any(vals < -_SIMPLEX_TOL) or np.any(vals > 1.0 + _SIMPLEX_TOL):
            raise ConfigError(f"weights must lie in [0, 1], got {tuple(vals)}")
        if abs(float(vals.sum()) - 1.0) > _SIMPLEX_TOL:
            raise ConfigError(f"weights must sum to 1, got sum {float(vals.sum())!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_se, self.w_po, self.w_sp, self.w_pe], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "WeightVector":
        a = np.asarray(arr, dtype=np.float64)
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class TrialRecord:
    weights: WeightVector
    performance: float
    iteration: int


@dataclass
class GpModel:
    x: np.ndarray                 # (n, 4) training inputs
    y: np.ndarray                 # (n,) training targets (duplicates merged)
    variance: float
    length_scales: np.ndarray     # (4,)
    noise: float                  # effective jitter on the diagonal
    prior_mean: float
    chol: np.ndarray              # lower Cholesky factor of K + noise*I
    alpha: np.ndarray             # (K + noise*I)^{-1} (y - prior_mean)


@dataclass
class SearchConfig:
    budget: int
    n_initial: int = 5
    candidate_pool_size: int = 2000
    seed: int = 0
    stall_tol: float = 1e-4
    stall_patience: int = 5

    def __post_init__(self):
        if self.budget < 0:
            raise ConfigError(f"budget must be >= 0, got {self.budget}")
        if self.n_initial < 2:
            raise ConfigError(f"n_initial must be >= 2, got {self.n_initial}")
        if self.candidate_pool_size < 1:
            raise ConfigError(
                f"candidate_pool_size must be >= 1, got {self.candidate_pool_size}"
            )


@dataclass
class SearchResult:
    best: WeightVector
    history: list[TrialRecord]


def _sq_distances(xa: np.ndarray, xb: np.ndarray, length_scales: np.ndarray) -> np.ndarray:
    diff = xa[:, None, :] - xb[None, :, :]
    return np.sum((diff / length_scales) ** 2, axis=-1)


def _kernel(xa, xb, variance, length_scales):
    return variance * np.exp(-0.5 * _sq_distances(xa, xb, length_scales))


def _merge_duplicates(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average targets of exactly repeated inputs, preserving first-seen order."""
    seen: dict[tuple, list[float]] = {}
    order: list[tuple] = []
    for row, target in zip(x, y):
        key = tuple(row)
        if key not in seen:
            seen[key] = []
            order.append(key)
        seen[key].append(float(target))
    merged_x = np.array(order, dtype=np.float64)
    merged_y = np.array([np.mean(seen[k]) for k in order], dtype=np.float64)
    return merged_x, merged_y


def _chol_with_jitter(k: np.ndarray, noise: float) -> tuple[np.ndarray, float]:
    jitter = max(noise, 1e-8)
    while jitter <= 1e-1:
        try:
            chol = np.linalg.cholesky(k + jitter * np.eye(k.shape[0]))
            return chol, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericsError("kernel matrix singular even at maximum jitter")


def _log_marginal_likelihood(x, yc, variance, length_scales, noise) -> float:
    k = _kernel(x, x, variance, length_scales)
    try:
        chol = np.linalg.cholesky(k + noise * np.eye(len(x)))
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve((chol, True), yc)
    return float(
        -0.5 * yc @ alpha - np.log(np.diag(chol)).sum() - 0.5 * len(x) * math.log(2 * math.pi)
    )


_VARIANCE_GRID = np.geomspace(1e-4, 1.0, 6)
_SCALE_GRID = np.geomspace(0.05, 2.0, 8)
_REFINE_STEP = 1.6
_VARIANCE_BOUNDS = (1e-6, 10.0)
_SCALE_BOUNDS = (0.01, 10.0)


def _fit_hyperparameters(x, yc, noise) -> tuple[float, np.ndarray]:
    """Maximize the marginal likelihood by multi-start coordinate search on a log-grid."""
    starts = []
    for variance in _VARIANCE_GRID:
        for scale in _SCALE_GRID:
            ls = np.full(4, scale)
            starts.append((_log_marginal_likelihood(x, yc, variance, ls, noise), variance, ls))
    starts.sort(key=lambda item: -item[0])
    best_lml, best_var, best_ls = starts[0]
    for lml, variance, ls in starts[:3]:
        lml, variance, ls = _coordinate_refine(x, yc, noise, lml, variance, ls.copy())
        if lml > best_lml:
            best_lml, best_var, best_ls = lml, variance, ls
    return best_var, best_ls


def _coordinate_refine(x, yc, noise, lml, variance, ls):
    for _ in range(3):
        improved = False
        for dim in range(-1, 4):  # -1 = variance, 0..3 = length scales
            for factor in (_REFINE_STEP, 1.0 / _REFINE_STEP):
                if dim < 0:
                    cand_var = float(np.clip(variance * factor, *_VARIANCE_BOUNDS))
                    cand_ls = ls
                else:
                    cand_var = variance
                    cand_ls = ls.copy()
                    cand_ls[dim] = float(np.clip(ls[dim] * factor, *_SCALE_BOUNDS))
                cand_lml = _log_marginal_likelihood(x, yc, cand_var, cand_ls, noise)
                if cand_lml > lml + 1e-12:
                    lml, variance, ls = cand_lml, cand_var, cand_ls
                    improved = True
        if not improved:
            break
    return lml, variance, ls


def gp_fit(
    trials: list[TrialRecord],
    noise: float = 1e-6,
    variance: float | None = None,
    length_scales=None,
) -> GpModel:
    """Fit the GP surrogate on trial history.

    Exactly duplicated weight vectors are merged by averaging their targets.
    Hyperparameters are fitted by marginal-likelihood grid search unless both
    ``variance`` and ``length_scales`` are given.
    """
    if len(trials) < 1:
        raise ConfigError("gp_fit needs at least one trial")
    x_raw = np.stack([t.weights.as_array() for t in trials])
    y_raw = np.array([t.performance for t in trials], dtype=np.float64)
    x, y = _merge_duplicates(x_raw, y_raw)
    prior_mean = float(y.mean())
    yc = y - prior_mean
    if variance is None or length_scales is None:
        variance, length_scales = _fit_hyperparameters(x, yc, noise)
    length_scales = np.asarray(length_scales, dtype=np.float64)
    k = _kernel(x, x, variance, length_scales)
    chol, effective_noise = _chol_with_jitter(k, noise)
    alpha = cho_solve((chol, True), yc)
    return GpModel(
        x=x,
        y=y,
        variance=float(variance),
        length_scales=length_scales,
        noise=effective_noise,
        prior_mean=prior_mean,
        chol=chol,
        alpha=alpha,
    )


def _predict_arrays(model: GpModel, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k_star = _kernel(queries, model.x, model.variance, model.length_scales)
    means = k_star @ model.alpha + model.prior_mean
    v = solve_triangular(model.chol, k_star.T, lower=True)
    variances = model.variance - np.sum(v * v, axis=0)
    stds = np.sqrt(np.maximum(variances, 0.0))
    return means, stds


def gp_predict(model: GpModel, w: WeightVector) -> tuple[float, float]:
    """Posterior mean and standard deviation at one weight vector."""
    means, stds = _predict_arrays(model, w.as_array()[None, :])
    return float(means[0]), float(stds[0])


def expected_improvement(mean, std, p_best):
    """E[max(0, X - p_best)] for X ~ N(mean, std^2); accepts scalars or arrays.

    Deterministic predictions (std below 1e-12) reduce to max(0, mean - p_best).
    """
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    improvement = mean - p_best
    degenerate = std < _STD_FLOOR
    safe_std = np.where(degenerate, 1.0, std)
    z = improvement / safe_std
    cdf = 0.5 * (1.0 + _erf(z / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    ei = np.where(degenerate, np.maximum(improvement, 0.0), improvement * cdf + std * pdf)
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def _erf(x):
    from scipy.special import erf

    return erf(x)


def propose_weights(model: GpModel, candidates: list[WeightVector]) -> WeightVector:
    """Candidate with the highest expected improvement; ties take the lowest index."""
    idx, _ = _propose_index(model, candidates, _best_observed(model))
    return candidates[idx]


def _best_observed(model: GpModel) -> float:
    return float(model.y.max())


def _propose_index(
    model: GpModel, candidates: list[WeightVector], p_best: float
) -> tuple[int, np.ndarray]:
    if not candidates:
        raise ConfigError("candidate list must be nonempty")
    queries = np.stack([c.as_array() for c in candidates])
    means, stds = _predict_arrays(model, queries)
    ei = expected_improvement(means, stds, p_best)
    return int(np.argmax(ei)), ei


def sample_simplex(rng: np.random.Generator, size: int) -> list[WeightVector]:
    """Uniform draws from the weight simplex (flat Dirichlet)."""
    draws = rng.dirichlet(np.ones(4), size=size)
    draws = draws / draws.sum(axis=1, keepdims=True)
    return [WeightVector.from_array(row) for row in draws]


def search(
    objective,
    cfg: SearchConfig,
    history: list[TrialRecord] | None = None,
    noise: float = 1e-6,
    log_path: str | Path | None = None,
) -> SearchResult:
    """Budgeted GP search over pre-training weights.

    ``objective`` maps a WeightVector to a performance in [0, 1]; failures are
    recorded as performance 0 and the loop continues.  When ``history`` is
    given (resume), the initial random phase is skipped.  Stops early once the
    best performance has not improved by more than ``stall_tol`` for
    ``stall_patience`` consecutive iterations.
    """
    rng = np.random.default_rng(cfg.seed)
    history = list(history or [])
    log_fh = open(log_path, "a") if log_path is not None else None

    def run_trial(weights: WeightVector, ei: float | None) -> None:
        try:
            performance = float(objective(weights))
        except Exception:
            performance = 0.0
        if not math.isfinite(performance):
            performance = 0.0
        record = TrialRecord(
            weights=weights, performance=performance, iteration=len(history)
        )
        history.append(record)
        if log_fh is not None:
            log_fh.write(json.dumps(trial_to_dict(record, ei), sort_keys=True) + "\n")

    try:
        if not history:
            for weights in sample_simplex(rng, cfg.n_initial):
                run_trial(weights, None)
        elif len(history) < 2:
            for weights in sample_simplex(rng, 2 - len(history)):
                run_trial(weights, None)

        stall = 0
        for _ in range(cfg.budget):
            best_before = max(t.performance for t in history)
            model = gp_fit(history, noise=noise)
            pool = sample_simplex(rng, cfg.candidate_pool_size)
            idx, ei = _propose_index(model, pool, best_before)
            run_trial(pool[idx], float(ei[idx]))
            best_after = max(t.performance for t in history)
            if best_after - best_before > cfg.stall_tol:
                stall = 0
            else:
                stall += 1
                if stall >= cfg.stall_patience:
                    break
    finally:
        if log_fh is not None:
            log_fh.close()

    best = max(history, key=lambda t: t.performance)
    return SearchResult(best=best.weights, history=history)


def trial_to_dict(trial: TrialRecord, ei: float | None = None) -> dict:
    out = {
        "iteration": trial.iteration,
        "weights": list(trial.weights.as_array()),
        "performance": trial.performance,
    }
    if ei is not None:
        out["ei"] = ei
    return out


def trial_from_dict(data: dict) -> TrialRecord:
    return TrialRecord(
        weights=WeightVector.from_array(data["weights"]),
        performance=float(data["performance"]),
        iteration=int(data["iteration"]),
    )


def load_history(path: str | Path) -> list[TrialRecord]:
    trials = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line:
            trials.append(trial_from_dict(json.loads(line)))
    return trials
