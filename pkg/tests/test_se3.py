import numpy as np
import pytest
from scipy.linalg import expm

from robls.mbfit import chi_quantile
from robls.se3 import (
    BranchError,
    Pose,
    exp_map,
    left_jacobian,
    log_map,
    perturbation_sigma,
    pose_error_norms,
    right_jacobian,
    sample_perturbation,
    skew,
    so3_exp,
    so3_log,
    vee,
    wedge,
)
from robls.se3 import _batch_left_jacobian_inv, _batch_se3_log


def random_twist(rng, max_angle=3.0, max_trans=2.0):
    phi = rng.standard_normal(3)
    phi *= rng.uniform(0, max_angle) / np.linalg.norm(phi)
    rho = rng.uniform(-max_trans, max_trans, 3)
    return np.concatenate([phi, rho])


class TestWedgeVee:
    def test_roundtrip(self, rng):
        for _ in range(50):
            xi = rng.standard_normal(6)
            assert np.array_equal(vee(wedge(xi)), xi)

    def test_zero(self):
        assert np.all(wedge(np.zeros(6)) == 0.0)

    def test_sign_layout(self):
        m = wedge([0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
        assert m[1, 0] == 1.0 and m[0, 1] == -1.0

    def test_vee_validates_pattern(self):
        bad = np.ones((4, 4))
        with pytest.raises(ValueError):
            vee(bad)


class TestExpLog:
    def test_exp_zero_is_identity(self):
        pose = exp_map(np.zeros(6))
        assert np.allclose(pose.matrix(), np.eye(4))

    def test_roundtrip_thousand_twists(self, rng):
        worst = 0.0
        for _ in range(1000):
            xi = random_twist(rng, max_angle=3.0)
            back = log_map(exp_map(xi))
            worst = max(worst, np.abs(back - xi).max())
        assert worst < 1e-9

    def test_pure_translation(self):
        r = np.array([0.3, -0.7, 2.0])
        pose = exp_map(np.concatenate([np.zeros(3), r]))
        assert np.allclose(pose.rotation, np.eye(3))
        assert np.allclose(pose.translation, r)

    def test_matches_matrix_exponential(self, rng):
        for _ in range(100):
            xi = random_twist(rng)
            assert np.allclose(exp_map(xi).matrix(), expm(wedge(xi)), atol=1e-12)

    def test_log_rejects_angle_near_pi(self):
        rot = so3_exp(np.array([np.pi - 1e-8, 0.0, 0.0]))
        with pytest.raises(BranchError):
            so3_log(rot)

    def test_rotation_invariants_hold(self, rng):
        for _ in range(50):
            pose = exp_map(random_twist(rng))
            c = pose.rotation
            assert np.abs(c @ c.T - np.eye(3)).max() < 1e-9
            assert np.linalg.det(c) == pytest.approx(1.0, abs=1e-9)

    def test_group_action_consistency(self, rng):
        pose = exp_map(random_twist(rng))
        assert np.abs(log_map(pose.inverse() @ pose)).max() < 1e-12


class TestJacobians:
    def test_identity_at_zero(self):
        assert np.allclose(left_jacobian(np.zeros(6)), np.eye(6))
        assert np.allclose(right_jacobian(np.zeros(6)), np.eye(6))

    def test_left_right_identity(self, rng):
        worst = 0.0
        for _ in range(200):
            xi = random_twist(rng, max_angle=2.9)
            worst = max(worst, np.abs(right_jacobian(xi) - left_jacobian(-xi)).max())
        assert worst < 1e-10

    def test_against_adjoint_series(self, rng):
        def ad(xi):
            out = np.zeros((6, 6))
            out[:3, :3] = out[3:, 3:] = skew(xi[:3])
            out[3:, :3] = skew(xi[3:])
            return out

        for scale in (1e-7, 1e-4, 0.05, 0.5, 1.5):
            xi = random_twist(rng, max_angle=scale, max_trans=2.0)
            term, total = np.eye(6), np.eye(6)
            fact = 1.0
            for n in range(1, 40):
                term = term @ ad(xi)
                fact *= n + 1
                total = total + term / fact
            assert np.abs(left_jacobian(xi) - total).max() < 1e-12

    def test_closed_form_inverse(self, rng):
        for _ in range(50):
            xi = random_twist(rng, max_angle=2.5)
            prod = left_jacobian(xi) @ _batch_left_jacobian_inv(xi[None])[0]
            assert np.abs(prod - np.eye(6)).max() < 1e-10

    def test_first_order_model(self, rng):
        # exp(xi + d) ~ exp(xi) exp(Jr(xi) d): defect shrinks quadratically
        xi = random_twist(rng, max_angle=1.5)
        direction = rng.standard_normal(6)
        direction /= np.linalg.norm(direction)
        defects = []
        for h in (1e-3, 5e-4, 2.5e-4):
            d = h * direction
            lhs = exp_map(xi + d)
            rhs = exp_map(xi) @ exp_map(right_jacobian(xi) @ d)
            defects.append(np.linalg.norm(log_map(lhs.inverse() @ rhs)))
        assert defects[1] <= defects[0] / 3.0
        assert defects[2] <= defects[1] / 3.0


class TestPoseErrorNorms:
    def test_identity(self):
        assert pose_error_norms(Pose.identity()) == (0.0, 0.0)

    def test_pure_rotation(self):
        angle = np.deg2rad(20.0)
        delta = Pose(so3_exp(np.array([0.0, 0.0, angle])), np.zeros(3))
        phi, rho = pose_error_norms(delta)
        assert phi == pytest.approx(angle)
        assert rho == 0.0

    def test_rotation_norm_invariant_under_conjugation(self, rng):
        xi = random_twist(rng, max_angle=2.0)
        rot = so3_exp(rng.standard_normal(3))
        conj = np.concatenate([rot @ xi[:3], rot @ xi[3:]])
        phi_a, _ = pose_error_norms(exp_map(xi))
        phi_b, _ = pose_error_norms(exp_map(conj))
        assert phi_a == pytest.approx(phi_b, rel=1e-12)


class TestBatchedKernels:
    def test_batch_log_matches_scalar(self, rng):
        mats = []
        twists = []
        for _ in range(64):
            xi = random_twist(rng, max_angle=2.8)
            twists.append(xi)
            mats.append(exp_map(xi).matrix())
        xi_hat, ok = _batch_se3_log(np.stack(mats))
        assert np.all(ok)
        assert np.abs(xi_hat - np.stack(twists)).max() < 1e-9

    def test_batch_log_flags_out_of_branch(self):
        near_pi = Pose(so3_exp(np.array([0.0, np.pi - 1e-9, 0.0])), np.zeros(3))
        xi, ok = _batch_se3_log(np.stack([np.eye(4), near_pi.matrix()]))
        assert ok.tolist() == [True, False]


class TestSamplePerturbation:
    def test_zero_sigma_is_identity(self, rng):
        pose = sample_perturbation(0.0, 0.0, rng)
        assert np.allclose(pose.matrix(), np.eye(4))

    def test_norm_bound_quantile(self):
        rng = np.random.default_rng(7)
        bound = np.deg2rad(20.0)
        sigma = perturbation_sigma(bound)
        norms = np.linalg.norm(sigma * rng.standard_normal((100_000, 3)), axis=1)
        frac = np.mean(norms < bound)
        assert frac == pytest.approx(0.9973, abs=1e-3)

    def test_empirical_covariance(self):
        rng = np.random.default_rng(11)
        sigma_phi = 0.05
        phis = np.array(
            [so3_log(sample_perturbation(sigma_phi, 0.0, rng).rotation) for _ in range(20_000)]
        )
        cov = phis.T @ phis / len(phis)
        assert np.abs(cov - sigma_phi**2 * np.eye(3)).max() < 0.02 * sigma_phi**2 * 3

    def test_negative_sigma_rejected(self, rng):
        with pytest.raises(ValueError):
            sample_perturbation(-1.0, 0.0, rng)


class TestPose:
    def test_from_matrix_roundtrip(self, rng):
        pose = exp_map(random_twist(rng))
        again = Pose.from_matrix(pose.matrix())
        assert np.allclose(again.rotation, pose.rotation)
        assert np.allclose(again.translation, pose.translation)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 1.5, np.zeros(3))

    def test_apply_matches_matrix(self, rng):
        pose = exp_map(random_twist(rng))
        pts = rng.standard_normal((10, 3))
        direct = pose.apply(pts)
        homo = (pose.matrix() @ np.column_stack([pts, np.ones(10)]).T).T[:, :3]
        assert np.allclose(direct, homo)

    def test_orthonormalized_repairs_drift(self, rng):
        pose = exp_map(random_twist(rng))
        dirty = pose.rotation + 1e-7 * rng.standard_normal((3, 3))
        repaired = Pose(dirty, pose.translation).orthonormalized()
        err = repaired.rotation @ repaired.rotation.T - np.eye(3)
        assert np.abs(err).max() < 1e-12
