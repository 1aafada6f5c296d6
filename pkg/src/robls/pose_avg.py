"""Robust SE(3) pose averaging by IRLS Gauss-Newton.

Errors are left-invariant, ``e_i = log(T^-1 T~_i)``, linearized through the
inverse left/right Jacobians.  Measurement noise is pushed through the
measurement-side Jacobian to give the per-measurement error covariance, and
the residual fed to the robust loss is the Mahalanobis norm
``sqrt(e' Sigma^-1 e)`` (Chi(6)-like on inliers, mode sqrt(5)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .se3 import (
    Pose,
    _batch_left_jacobian_inv,
    _batch_se3_log,
    exp_map,
    so3_exp,
)
from .weighting import RobustLoss

__all__ = [
    "PoseMeasurement",
    "PoseAvgConfig",
    "TrialSpec",
    "PoseAvgResult",
    "SingularSystemError",
    "left_invariant_error",
    "error_jacobians",
    "propagate_cov",
    "solve_pose_average",
    "default_measurement_cov",
    "generate_trial",
]

ERROR_DIM = 6


class SingularSystemError(RuntimeError):
    """IRLS normal equations are numerically singular."""


@dataclass
class PoseMeasurement:
    pose: Pose
    cov: np.ndarray  # 6x6 SPD, twist ordering (phi, rho)

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float).reshape(6, 6)
        if np.abs(self.cov - self.cov.T).max() > 1e-9:
            raise ValueError("measurement covariance must be symmetric")
        if np.linalg.eigvalsh(self.cov)[0] <= 0:
            raise ValueError("measurement covariance must be positive definite")


@dataclass(frozen=True)
class PoseAvgConfig:
    max_iters: int = 50
    tol_phi: float = 1e-3
    tol_rho: float = 1e-3
    rlf: RobustLoss = field(default_factory=lambda: RobustLoss(tau=20.0))
    weight_exponent: int = 2


@dataclass(frozen=True)
class TrialSpec:
    """Monte Carlo trial: inliers around identity plus box-uniform outliers."""

    seed: int
    n_inliers: int = 20
    outlier_fraction: float = 0.0
    inlier_cov: np.ndarray | None = None   # defaults to default_measurement_cov()
    init_cov: np.ndarray | None = None     # defaults to the inlier covariance
    outlier_phi_max: float = np.deg2rad(60.0)   # per rotation-vector component
    outlier_r_max: float = 1.0                  # per translation component [m]

    def __post_init__(self):
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        if self.n_inliers < 1:
            raise ValueError("need at least one inlier")


@dataclass
class PoseAvgResult:
    pose: Pose
    iterations: int
    converged: bool
    trace: list
    diagnostics: dict


def left_invariant_error(estimate: Pose, measurement: Pose) -> np.ndarray:
    """Twist of the left-invariant pose error ``log(T^-1 T~)``."""
    rel = (estimate.inverse() @ measurement).matrix()
    xi, ok = _batch_se3_log(rel[None])
    if not ok[0]:
        raise ValueError("pose error outside the principal logarithm branch")
    return xi[0]


def error_jacobians(e_bar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Estimate- and measurement-side Jacobians (H, M) of the error twist.

    ``H = J_left(e)^-1`` maps estimate perturbations (convention
    ``T <- T exp(-dxi)``) to error changes; ``M = -J_right(e)^-1`` maps
    measurement perturbations.
    """
    e = np.asarray(e_bar, dtype=float).reshape(1, 6)
    h = _batch_left_jacobian_inv(e)[0]
    m = -_batch_left_jacobian_inv(-e)[0]
    if not (np.all(np.isfinite(h)) and np.all(np.isfinite(m))):
        raise ValueError("Jacobian evaluation failed (error out of branch)")
    return h, m


def propagate_cov(m_jac: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Error covariance ``M R M'``, symmetrized against floating drift."""
    sigma = m_jac @ cov @ m_jac.T
    return 0.5 * (sigma + sigma.T)


def solve_pose_average(
    measurements: list[PoseMeasurement],
    init: Pose,
    config: PoseAvgConfig,
) -> PoseAvgResult:
    """IRLS Gauss-Newton average of noisy pose measurements.

    Each iteration recomputes errors, Jacobians, error covariances and
    Mahalanobis residuals, asks the robust loss for weights (``n_e = 6``),
    and solves the weighted normal equations for an update twist applied as
    ``T <- T exp(-dxi)``.  Measurements whose error leaves the logarithm
    branch are skipped for that iteration with a diagnostic count.
    """
    if not measurements:
        raise ValueError("need at least one measurement")
    tm = np.stack([m.pose.matrix() for m in measurements])
    covs = np.stack([m.cov for m in measurements])
    n = len(measurements)

    pose = init
    trace: list[dict] = []
    converged = False
    warm = None
    skipped_total = 0
    mb_invocations = mb_below = mb_violations = 0
    iterations = 0

    for iterations in range(1, config.max_iters + 1):
        rel = np.einsum("ij,njk->nik", pose.inverse().matrix(), tm)
        e, ok = _batch_se3_log(rel)
        skipped_total += int(np.count_nonzero(~ok))
        if not np.any(ok):
            raise SingularSystemError("all measurements left the logarithm branch")
        e = e[ok]
        h = _batch_left_jacobian_inv(e)
        m = -_batch_left_jacobian_inv(-e)
        sigma = np.einsum("nij,njk,nlk->nil", m, covs[ok], m)
        sigma = 0.5 * (sigma + np.transpose(sigma, (0, 2, 1)))

        sig_inv_e = np.linalg.solve(sigma, e[..., None])[..., 0]
        eps = np.sqrt(np.einsum("ni,ni->n", e, sig_inv_e))

        wres = config.rlf.weights(eps, n_e=ERROR_DIM, warm_start=warm)
        warm = wres.warm_start
        diag = wres.diagnostics
        if config.rlf.kind == "adaptive_mb":
            mb_invocations += 1
            mb_below += diag.get("below_mode", 0)
            mb_violations += diag.get("below_mode_violations", 0)

        wf = wres.weights**config.weight_exponent
        sig_inv_h = np.linalg.solve(sigma, h)
        a = np.einsum("nji,njk->ik", h, sig_inv_h * wf[:, None, None])
        b = -np.einsum("nji,nj->i", h, sig_inv_e * wf[:, None])
        sv = np.linalg.svd(a, compute_uv=False)
        if sv[0] <= 0 or sv[-1] / sv[0] < 1e-14:
            raise SingularSystemError("pose-averaging normal equations are singular")
        step = np.linalg.solve(a, b)

        pose = (pose @ exp_map(-step)).orthonormalized()
        step_phi = float(np.linalg.norm(step[:3]))
        step_rho = float(np.linalg.norm(step[3:]))
        trace.append(
            {
                "iter": iterations,
                "step_phi": step_phi,
                "step_rho": step_rho,
                "alpha_star": diag.get("alpha_star", np.nan),
                "a_star": diag.get("a_star", np.nan),
                "mode": diag.get("mode", np.nan),
            }
        )
        if step_phi < config.tol_phi and step_rho < config.tol_rho:
            converged = True
            break

    return PoseAvgResult(
        pose=pose,
        iterations=iterations,
        converged=converged,
        trace=trace,
        diagnostics={
            "skipped_measurements": skipped_total,
            "mb_invocations": mb_invocations,
            "mb_below_mode": mb_below,
            "mb_below_mode_violations": mb_violations,
        },
    )


def default_measurement_cov() -> np.ndarray:
    """Non-isotropic inlier covariance used by the Monte Carlo study.

    Rotation stds (0.12, 0.15, 0.18) rad, translation stds
    (0.12, 0.15, 0.18) m, correlation 0.2 between matching axes.  The
    magnitudes are large enough that the normalized outlier residuals
    overlap the inlier mode (the regime the benchmark probes) while keeping
    the IRLS fixed points stable at the 1e-3 step tolerances.
    """
    sd_phi = np.array([0.12, 0.15, 0.18])
    sd_rho = np.array([0.12, 0.15, 0.18])
    cov = np.diag(np.concatenate([sd_phi, sd_rho]) ** 2)
    for i in range(3):
        c = 0.2 * sd_phi[i] * sd_rho[i]
        cov[i, 3 + i] = cov[3 + i, i] = c
    return cov


def n_outliers(spec: TrialSpec) -> int:
    """Outlier count giving the requested fraction of the total set."""
    f = spec.outlier_fraction
    return int(round(spec.n_inliers * f / (1.0 - f)))


def generate_trial(spec: TrialSpec) -> tuple[list[PoseMeasurement], Pose, Pose]:
    """Measurements, initialization, and ground truth (identity) for one trial.

    Inliers are ``exp(dxi)`` with Gaussian twists; outliers are built from
    per-component uniform rotation vectors and translations.  Draw order is
    fixed: inlier twists, outlier rotations, outlier translations, then the
    initialization twist.
    """
    rng = np.random.default_rng(spec.seed)
    r_cov = default_measurement_cov() if spec.inlier_cov is None else np.asarray(spec.inlier_cov)
    p_cov = r_cov if spec.init_cov is None else np.asarray(spec.init_cov)
    chol = np.linalg.cholesky(r_cov)

    measurements = []
    for _ in range(spec.n_inliers):
        xi = chol @ rng.standard_normal(ERROR_DIM)
        measurements.append(PoseMeasurement(exp_map(xi), r_cov))

    for _ in range(n_outliers(spec)):
        phi = rng.uniform(-spec.outlier_phi_max, spec.outlier_phi_max, 3)
        r = rng.uniform(-spec.outlier_r_max, spec.outlier_r_max, 3)
        measurements.append(PoseMeasurement(Pose(so3_exp(phi), r), r_cov))

    init = exp_map(np.linalg.cholesky(p_cov) @ rng.standard_normal(ERROR_DIM))
    return measurements, init, Pose.identity()
