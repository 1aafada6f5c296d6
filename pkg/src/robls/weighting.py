"""Uniform dispatch from a robust-loss descriptor to residual weights.

Solvers talk to one entry point, :meth:`RobustLoss.weights`, and stay
agnostic of whether the loss is a fixed M-estimator on MAD-rescaled
residuals, a trimming rule, or one of the adaptive kernels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import mbfit
from .adaptive import BARRON_DOMAIN, CHEBROLU_DOMAIN, optimize_alpha
from .loss import FixedRlf, fixed_weight, mad_scale, var_trimmed_weights, weight

__all__ = [
    "RobustLoss",
    "WeightResult",
    "AdaptiveState",
    "RLF_KINDS",
    "FIXED_KINDS",
    "ADAPTIVE_KINDS",
]

FIXED_KINDS = ("cauchy", "tukey", "welsch", "var_trimmed")
ADAPTIVE_KINDS = ("barron", "chebrolu", "adaptive_mb")
RLF_KINDS = ("none",) + FIXED_KINDS + ADAPTIVE_KINDS


@dataclass(frozen=True)
class AdaptiveState:
    """Warm-start seeds carried between IRLS iterations.

    Reusing the previous shape estimates keeps consecutive refits in the
    same local basin, which suppresses weight flapping near convergence.
    """

    alpha: float | None = None
    a: float | None = None


@dataclass
class WeightResult:
    weights: np.ndarray
    diagnostics: dict
    warm_start: AdaptiveState | None = None  # seeds for the next call


@dataclass(frozen=True)
class RobustLoss:
    """Selector for a robust loss: which kind, and its single tunable.

    ``tuning_constant`` applies to the fixed kernels (defaults are the
    95%-efficiency constants); ``tau`` is the truncation bound of the
    adaptive kernels.
    """

    kind: str = "adaptive_mb"
    tuning_constant: float | None = None
    tau: float = 10.0

    def __post_init__(self):
        if self.kind not in RLF_KINDS:
            raise ValueError(f"unknown RLF kind {self.kind!r}; expected one of {RLF_KINDS}")
        if self.tau <= 0:
            raise ValueError("truncation bound tau must be positive")

    def with_tau(self, tau: float) -> "RobustLoss":
        return replace(self, tau=tau)

    @property
    def is_adaptive(self) -> bool:
        return self.kind in ADAPTIVE_KINDS

    def weights(
        self, residuals, n_e: int = 3, warm_start: AdaptiveState | None = None
    ) -> WeightResult:
        """Weights in [0, 1] for a set of nonnegative residual norms.

        ``n_e`` is the dimension of the underlying error (used by the
        norm-aware kind); ``warm_start`` seeds the adaptive shape searches
        with the previous solution.
        """
        r = np.asarray(residuals, dtype=float)
        if r.size == 0:
            raise ValueError("residual list must be nonempty")
        seed_alpha = warm_start.alpha if warm_start is not None else None
        seed_a = warm_start.a if warm_start is not None else None

        if self.kind == "none":
            return WeightResult(np.ones_like(r), {})

        if self.kind in ("cauchy", "tukey", "welsch"):
            scale = mad_scale(r)
            w = fixed_weight(FixedRlf(self.kind, self.tuning_constant), r / scale)
            return WeightResult(w, {"mad_scale": scale})

        if self.kind == "var_trimmed":
            w = var_trimmed_weights(r)
            return WeightResult(w, {"trim_kept": float(np.mean(w))})

        if self.kind in ("barron", "chebrolu"):
            domain = BARRON_DOMAIN if self.kind == "barron" else CHEBROLU_DOMAIN
            res = optimize_alpha(r, domain, (-self.tau, self.tau), x0=seed_alpha)
            w = weight(r, res.alpha_star)
            diag = {"alpha_star": res.alpha_star, "alpha_converged": res.converged}
            alpha_seed = res.alpha_star if np.isfinite(res.alpha_star) else None
            return WeightResult(w, diag, warm_start=AdaptiveState(alpha=alpha_seed))

        # norm-aware adaptive kind
        w, diag = mbfit.adaptive_mb_weights(
            r, n_e=n_e, tau=self.tau, alpha_x0=seed_alpha, a_x0=seed_a
        )
        alpha_seed = diag.alpha_star if np.isfinite(diag.alpha_star) else None
        state = AdaptiveState(alpha=alpha_seed, a=diag.a_star)
        return WeightResult(w, diag.as_dict(), warm_start=state)
