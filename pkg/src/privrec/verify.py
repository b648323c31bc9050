"""Monte-Carlo checks for the publishing mechanism's stated guarantees.

Each check turns one analytical statement into an executable experiment with
an explicit observed value, bound, and pass flag:

* expectation approximation - the trial mean of the published Gram matrix
  converges to the perturbed input Gram matrix,
* covariance gap - the perturbed Gram differs from the centered input Gram
  by at most ``w**2 * m`` in spectral norm (analytically ``w**2``, since the
  gap is w**2 times a projector),
* restricted isometry - squared Frobenius norms of published matrices stay
  inside a (1 +/- gamma) band around ``||R||_F**2 + w**2 * k``,
* preconditioner - the sign-flipped Hadamard rotation bounds the max-norm of
  maximally sparse (one-hot) vectors,
* privacy-loss tail - on the Gaussian row surrogate, the log density ratio
  between neighbouring inputs exceeds the per-row eps0 with frequency at
  most delta0.

All checks are deterministic given (seed, trials); reports serialize as
line-delimited JSON.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .publish import (
    TRANSFORM_JLT,
    TRANSFORM_SJLT,
    NumericError,
    PublishParams,
    derive_plan,
    next_pow2,
    per_row_budget,
    perturb_singular_values,
    publish,
)
from .fwht import fwht_rows_unnormalized
from .ratings import NeighbourSpec, RatingMatrix, center_by_item_mean, make_neighbour
from .rng import substream

__all__ = [
    "MIN_STAT_TRIALS",
    "TrialConfig",
    "CheckReport",
    "check_expectation_approx",
    "check_covariance_gap",
    "check_rip",
    "check_preconditioner",
    "check_privacy_loss_tail",
    "compose_epsilon",
    "privacy_loss_samples",
    "gaussian_logpdf",
    "run_suite",
    "write_reports",
    "read_reports",
    "SUITES",
]

MIN_STAT_TRIALS = 100

# Monte-Carlo tolerance for the expectation check: bound = factor / sqrt(trials)
_EXPECTATION_TOL_FACTOR = 3.5


@dataclass(frozen=True)
class TrialConfig:
    """How a statistical check is run: repetitions, seed, dims, parameters."""

    trials: int
    seed: int
    params: PublishParams
    matrix_dims: tuple[int, int] = (20, 16)
    confidence: float = 0.95

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if not 0.5 < self.confidence < 1:
            raise ValueError(f"confidence must be in (0.5, 1), got {self.confidence}")
        m, n = self.matrix_dims
        if m < 1 or n < 1:
            raise ValueError(f"matrix dims must be positive, got {self.matrix_dims}")


@dataclass(frozen=True)
class CheckReport:
    """One check outcome; `passed` reflects the declared inequality exactly."""

    name: str
    observed: float
    bound: float
    passed: bool
    trials_used: int
    notes: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "name": self.name,
                "observed": self.observed,
                "bound": self.bound,
                "pass": self.passed,
                "trials_used": self.trials_used,
                "notes": self.notes,
            }
        )


def _insufficient(name: str, cfg: TrialConfig) -> CheckReport:
    return CheckReport(
        name=name,
        observed=float(cfg.trials),
        bound=float(MIN_STAT_TRIALS),
        passed=False,
        trials_used=cfg.trials,
        notes=f"insufficient trials for a statistical check (need >= {MIN_STAT_TRIALS})",
    )


def _draw_rating_matrix(dims: tuple[int, int], seed: int) -> RatingMatrix:
    rng = substream(seed, "check_matrix")
    return RatingMatrix.from_values(rng.uniform(0.0, 5.0, size=dims))


def _trial_seeds(seed: int, trials: int) -> np.ndarray:
    return substream(seed, "trial_seeds").integers(0, 2**62, size=trials)


def _spectral_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, ord=2))


def check_expectation_approx(cfg: TrialConfig) -> CheckReport:
    """Trial mean of the published Gram vs the perturbed input Gram.

    Observed: relative spectral-norm gap between ``mean(R~ R~^T)`` over the
    trials and the perturbed Gram; bound shrinks as 1/sqrt(trials).
    """
    name = "expectation_approx"
    if cfg.trials < MIN_STAT_TRIALS:
        return _insufficient(name, cfg)
    r = _draw_rating_matrix(cfg.matrix_dims, cfg.seed)
    plan = derive_plan(cfg.params)
    centered, _ = center_by_item_mean(r)
    r1 = perturb_singular_values(centered.values, plan.w)
    target = r1 @ r1.T
    acc = np.zeros_like(target)
    for trial_seed in _trial_seeds(cfg.seed, cfg.trials):
        pm = publish(r, replace(cfg.params, seed=int(trial_seed)))
        acc += pm.values @ pm.values.T
    observed = _spectral_norm(acc / cfg.trials - target) / _spectral_norm(target)
    bound = _EXPECTATION_TOL_FACTOR / math.sqrt(cfg.trials)
    return CheckReport(
        name=name,
        observed=observed,
        bound=bound,
        passed=bool(observed <= bound),
        trials_used=cfg.trials,
        notes=f"relative spectral gap of the trial mean; w={plan.w:.6g}, "
        f"n1_prime={plan.n1_prime}, transform={cfg.params.transform}",
    )


def check_covariance_gap(cfg: TrialConfig) -> CheckReport:
    """Exact spectral gap between perturbed and centered Grams vs w**2 * m."""
    r = _draw_rating_matrix(cfg.matrix_dims, cfg.seed)
    plan = derive_plan(cfg.params)
    centered, _ = center_by_item_mean(r)
    r1 = perturb_singular_values(centered.values, plan.w)
    observed = _spectral_norm(r1 @ r1.T - centered.values @ centered.values.T)
    m = cfg.matrix_dims[0]
    bound = plan.w**2 * m
    k = min(cfg.matrix_dims)
    return CheckReport(
        name="covariance_gap",
        observed=observed,
        bound=bound,
        passed=bool(observed <= bound),
        trials_used=1,
        notes=f"deterministic; tighter rank-based bound w^2*k={plan.w**2 * k:.6g}, "
        f"analytic value w^2={plan.w**2:.6g}",
    )


def check_rip(cfg: TrialConfig, gamma: float = 0.1) -> CheckReport:
    """Fraction of publishes whose squared Frobenius norm stays in the band.

    Band: ``(1 +/- gamma) * (||R||_F^2 + w^2 k)`` with k = min(m, n1) the
    number of perturbed singular values; the fraction must reach the
    configured confidence.  The looser all-users target ``w^2 m`` is
    reported in the notes.
    """
    name = f"rip_{cfg.params.transform}"
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    if cfg.trials < MIN_STAT_TRIALS:
        return _insufficient(name, cfg)
    r = _draw_rating_matrix(cfg.matrix_dims, cfg.seed)
    plan = derive_plan(cfg.params)
    centered, _ = center_by_item_mean(r)
    m, n1 = cfg.matrix_dims
    k = min(m, n1)
    fro2 = float(np.sum(centered.values**2))
    target_k = fro2 + plan.w**2 * k
    target_m = fro2 + plan.w**2 * m
    in_band_k = in_band_m = 0
    for trial_seed in _trial_seeds(cfg.seed, cfg.trials):
        pm = publish(r, replace(cfg.params, seed=int(trial_seed)))
        fro = float(np.sum(pm.values**2))
        if (1 - gamma) * target_k <= fro <= (1 + gamma) * target_k:
            in_band_k += 1
        if (1 - gamma) * target_m <= fro <= (1 + gamma) * target_m:
            in_band_m += 1
    observed = in_band_k / cfg.trials
    return CheckReport(
        name=name,
        observed=observed,
        bound=cfg.confidence,
        passed=bool(observed >= cfg.confidence),
        trials_used=cfg.trials,
        notes=f"gamma={gamma}, target_k={target_k:.6g} (band fraction "
        f"{observed:.4f}), target_m={target_m:.6g} (band fraction "
        f"{in_band_m / cfg.trials:.4f}), n1_prime={plan.n1_prime}",
    )


def check_preconditioner(cfg: TrialConfig) -> CheckReport:
    """Sign-flip + Hadamard flattening of one-hot vectors.

    Per draw of the sign diagonal, every one-hot vector x must satisfy
    ``||HDx||_inf <= sqrt(2 ln(40 m n1) / n1) * ||x||_2``; the fraction of
    draws where the whole set passes must reach 0.95.
    """
    name = "preconditioner"
    if cfg.trials < MIN_STAT_TRIALS:
        return _insufficient(name, cfg)
    m, n1 = cfg.matrix_dims
    if n1 & (n1 - 1):
        raise ValueError(f"item dimension must be a power of two, got {n1}")
    if m > n1:
        raise ValueError(f"cannot form {m} distinct one-hot vectors in dim {n1}")
    bound_val = math.sqrt(2.0 * math.log(40.0 * m * n1) / n1)
    ok = 0
    max_linf = 0.0
    for t in range(cfg.trials):
        signs = (
            substream(cfg.seed, "precond", t).integers(0, 2, size=n1) * 2 - 1
        ).astype(np.float64)
        basis = np.zeros((m, n1))
        basis[np.arange(m), np.arange(m)] = signs[:m]
        fwht_rows_unnormalized(basis)
        basis *= 1.0 / math.sqrt(n1)
        linf = float(np.max(np.abs(basis)))
        max_linf = max(max_linf, linf)
        if linf <= bound_val:
            ok += 1
    observed = ok / cfg.trials
    return CheckReport(
        name=name,
        observed=observed,
        bound=0.95,
        passed=bool(observed >= 0.95),
        trials_used=cfg.trials,
        notes=f"sup-norm bound {bound_val:.6g}, worst observed {max_linf:.6g} "
        f"(one-hot value is exactly n1**-0.5 = {n1**-0.5:.6g})",
    )


def gaussian_logpdf(y: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Log density of N(0, cov) at the columns of y, via Cholesky."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[0] != cov.shape[0]:
        y = y.T
    try:
        chol = scipy.linalg.cho_factor(cov, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"covariance not positive definite: {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol[0]))))
    quad = np.sum(y * scipy.linalg.cho_solve(chol, y), axis=0)
    d = cov.shape[0]
    return -0.5 * (d * math.log(2.0 * math.pi) + logdet + quad)


def privacy_loss_samples(
    cov: np.ndarray, cov_alt: np.ndarray, n_samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw y ~ N(0, cov) and return log pdf_cov(y) - log pdf_cov_alt(y)."""
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"covariance not positive definite: {exc}") from exc
    y = chol @ rng.standard_normal((cov.shape[0], n_samples))
    return gaussian_logpdf(y, cov) - gaussian_logpdf(y, cov_alt)


def check_privacy_loss_tail(
    cfg: TrialConfig, neighbour: NeighbourSpec | None = None
) -> CheckReport:
    """Empirical tail of the per-row privacy loss on neighbouring inputs.

    Rows of the published matrix are Gaussian with covariance given by the
    perturbed input's Gram matrix, so the privacy loss is the log ratio of
    two explicit normal densities.  The check samples it and compares
    ``Pr[|loss| > eps0]`` against delta0.
    """
    name = "privacy_loss_tail"
    if cfg.trials < MIN_STAT_TRIALS:
        return _insufficient(name, cfg)
    m, n = cfg.matrix_dims
    if m * n > 64:
        raise ValueError(
            f"privacy check needs tiny matrices (m*n <= 64), got {cfg.matrix_dims}"
        )
    if neighbour is None:
        neighbour = NeighbourSpec(row=m // 2, col=n // 2, delta=0.7)
    r = _draw_rating_matrix(cfg.matrix_dims, cfg.seed)
    r_alt = make_neighbour(r, neighbour)
    plan = derive_plan(cfg.params)
    eps0, delta0 = per_row_budget(cfg.params.epsilon, cfg.params.delta, plan.n1_prime)

    def gram(mat: RatingMatrix) -> np.ndarray:
        centered, _ = center_by_item_mean(mat)
        r1 = perturb_singular_values(centered.values, plan.w)
        return r1.T @ r1

    losses = privacy_loss_samples(
        gram(r), gram(r_alt), cfg.trials, substream(cfg.seed, "loss_samples")
    )
    observed = float(np.mean(np.abs(losses) > eps0))
    return CheckReport(
        name=name,
        observed=observed,
        bound=delta0,
        passed=bool(observed <= delta0),
        trials_used=cfg.trials,
        notes=f"eps0={eps0:.6g}, delta0={delta0:.6g}, w={plan.w:.6g}, "
        f"max |loss| observed {float(np.max(np.abs(losses))):.3g}",
    )


def compose_epsilon(
    eps0: float, delta0: float, k: int, delta_prime: float
) -> tuple[float, float]:
    """Privacy budget after k-fold adaptive composition of (eps0, delta0) steps.

    Returns ``(sqrt(2 k ln(1/delta')) eps0 + k eps0 (e**eps0 - 1),
    k delta0 + delta')``.
    """
    if eps0 <= 0 or delta0 <= 0 or delta_prime <= 0:
        raise ValueError("eps0, delta0 and delta_prime must be positive")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    eps_total = math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) * eps0 + k * eps0 * (
        math.exp(eps0) - 1.0
    )
    return eps_total, k * delta0 + delta_prime


# --------------------------------------------------------------------------
# suites and report files

SUITES = ("expectation", "rip", "preconditioner", "privacy", "all")


def run_suite(
    suite: str,
    cfg: TrialConfig,
    gamma: float = 0.1,
    neighbour: NeighbourSpec | None = None,
) -> list[CheckReport]:
    """Run the named checks; dims are adapted per check's preconditions.

    The RIP suite runs both transforms; the preconditioner uses a
    power-of-two item dimension; the privacy check runs on a small matrix
    when the configured one is too large for a well-conditioned Gram.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    reports: list[CheckReport] = []
    if suite in ("expectation", "all"):
        reports.append(check_expectation_approx(cfg))
        reports.append(check_covariance_gap(cfg))
    if suite in ("rip", "all"):
        for transform in (TRANSFORM_JLT, TRANSFORM_SJLT):
            reports.append(
                check_rip(
                    replace(cfg, params=replace(cfg.params, transform=transform)),
                    gamma=gamma,
                )
            )
    if suite in ("preconditioner", "all"):
        m, n1 = cfg.matrix_dims
        n1_pad = next_pow2(n1)
        reports.append(
            check_preconditioner(replace(cfg, matrix_dims=(min(m, n1_pad), n1_pad)))
        )
    if suite in ("privacy", "all"):
        m, n = cfg.matrix_dims
        if m * n > 64:
            privacy_cfg = replace(cfg, matrix_dims=(6, 4))
        else:
            privacy_cfg = cfg
        reports.append(check_privacy_loss_tail(privacy_cfg, neighbour=neighbour))
    return reports


def write_reports(reports: list[CheckReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for report in reports:
            fh.write(report.to_json() + "\n")


def read_reports(path: str | Path) -> list[CheckReport]:
    reports = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            raw = json.loads(line)
            reports.append(
                CheckReport(
                    name=raw["name"],
                    observed=raw["observed"],
                    bound=raw["bound"],
                    passed=raw["pass"],
                    trials_used=raw["trials_used"],
                    notes=raw.get("notes", ""),
                )
            )
    return reports
