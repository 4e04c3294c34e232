import numpy as np
import pytest

from headfit.camera import PoseParams
from headfit.errors import EmptyPins, InvalidVertex, SingularSystem, UnknownPin
from headfit.fitter import (FitConfig, FitParams, FitSession, Pin, fit,
                            jacobian, project_pins, refit_incremental,
                            residuals)
from headfit.morphable import ShapeParams
from headfit.rotations import (axis_angle_to_matrix, matrix_to_rot6d,
                               pose_error_angle, rot6d_to_matrix)


def random_params(model, rng, scale=300.0, max_angle_deg=35.0):
    # Moderate head rotations: the annotation workflow always fits from a
    # near-frontal start, and the optimizer promises local convergence.
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.radians(rng.uniform(0.0, max_angle_deg))
    return FitParams(
        shape=ShapeParams(beta=rng.normal(0, 0.5, model.num_shape),
                          psi=rng.normal(0, 0.5, model.num_expr),
                          theta_jaw=rng.normal(0, 0.2, 3)),
        pose=PoseParams(rot6=matrix_to_rot6d(axis_angle_to_matrix(axis, angle)),
                        scale=scale, translation=rng.normal(250, 30, 2)),
    )


def pins_from_params(model, params, ids, rng=None, noise=0.0, weight=1.0):
    px = project_pins(model, params, ids)
    if noise > 0:
        px = px + rng.normal(0, noise, px.shape)
    return [Pin(int(i), p, weight=weight) for i, p in zip(ids, px)]


class TestResiduals:
    def test_self_consistent_pins_are_zero(self, small_model):
        rng = np.random.default_rng(0)
        params = random_params(small_model, rng)
        ids = rng.integers(0, small_model.num_vertices, 6)
        pins = pins_from_params(small_model, params, ids)
        cfg = FitConfig(reg_shape=0.0, reg_expr=0.0, reg_jaw=0.0)
        r = residuals(small_model, params, pins, cfg)
        assert np.max(np.abs(r[:12])) < 1e-9

    def test_offset_pin_norm(self, small_model):
        params = FitParams.neutral(small_model)
        base = project_pins(small_model, params, [3])[0]
        pin = Pin(3, base + np.array([3.0, 4.0]))
        cfg = FitConfig(reg_shape=0.0, reg_expr=0.0, reg_jaw=0.0)
        r = residuals(small_model, params, [pin], cfg)
        assert np.isclose(np.linalg.norm(r[:2]), 5.0, atol=1e-12)

    def test_regularization_rows(self, small_model):
        rng = np.random.default_rng(1)
        params = random_params(small_model, rng)
        pins = pins_from_params(small_model, params, [0])
        cfg = FitConfig(reg_shape=0.25, reg_expr=0.0, reg_jaw=0.0)
        r = residuals(small_model, params, pins, cfg)
        ns = small_model.num_shape
        assert np.allclose(r[2:2 + ns], 0.5 * params.shape.beta, atol=1e-15)

    def test_empty_pins(self, small_model):
        with pytest.raises(EmptyPins):
            residuals(small_model, FitParams.neutral(small_model), [], FitConfig())

    def test_invalid_vertex(self, small_model):
        pin = Pin(small_model.num_vertices + 5, np.array([0.0, 0.0]))
        with pytest.raises(InvalidVertex):
            residuals(small_model, FitParams.neutral(small_model), [pin], FitConfig())


class TestJacobian:
    def test_matches_finite_differences(self, small_model):
        rng = np.random.default_rng(2)
        cfg = FitConfig(reg_shape=0.1, reg_expr=0.2, reg_jaw=0.3, image_diag=700.0)
        cfg_fd = FitConfig(reg_shape=0.1, reg_expr=0.2, reg_jaw=0.3,
                           image_diag=700.0, jacobian_mode="finite_diff")
        for _ in range(10):
            params = random_params(small_model, rng)
            ids = rng.integers(0, small_model.num_vertices, 5)
            pins = pins_from_params(small_model, params, ids,
                                    rng=rng, noise=2.0)
            j = jacobian(small_model, params, pins, cfg)
            j_fd = jacobian(small_model, params, pins, cfg_fd)
            rel = np.abs(j - j_fd) / np.maximum(np.abs(j_fd), 1.0)
            assert rel.max() < 1e-5

    def test_scale_column_is_rotated_vertex(self, small_model):
        rng = np.random.default_rng(3)
        params = random_params(small_model, rng)
        pins = pins_from_params(small_model, params, [5])
        j = jacobian(small_model, params, pins, FitConfig())
        from headfit.morphable import decode

        v = decode(small_model, params.shape).vertices[5]
        q = rot6d_to_matrix(params.pose.rot6) @ v
        col = small_model.num_shape + small_model.num_expr + 9
        assert np.allclose(j[0:2, col], q[:2], atol=1e-12)

    def test_translation_block_is_identity(self, small_model):
        rng = np.random.default_rng(4)
        params = random_params(small_model, rng)
        pins = pins_from_params(small_model, params, [5, 9])
        j = jacobian(small_model, params, pins, FitConfig())
        col = small_model.num_shape + small_model.num_expr + 10
        assert np.allclose(j[0:2, col:col + 2], np.eye(2), atol=1e-15)
        assert np.allclose(j[2:4, col:col + 2], np.eye(2), atol=1e-15)


class TestFit:
    def test_synthetic_recovery(self, desk_model):
        rng = np.random.default_rng(100)
        axis = np.array([0.2, 1.0, 0.1])
        axis /= np.linalg.norm(axis)
        truth = FitParams(
            shape=ShapeParams(beta=np.where(np.arange(10) < 3, [0.8] * 10, 0.0),
                              psi=np.zeros(5), theta_jaw=np.array([0.1, 0.0, 0.0])),
            pose=PoseParams(rot6=matrix_to_rot6d(axis_angle_to_matrix(axis, 0.4)),
                            scale=750.0, translation=np.array([250.0, 260.0])),
        )
        ids = rng.choice(desk_model.subsets["head"], 40, replace=False)
        pins = pins_from_params(desk_model, truth, ids, rng=rng, noise=0.2)
        res = fit(desk_model, pins, config=FitConfig(image_diag=724.0))
        assert res.converged
        assert res.rms_pin_error < 0.5
        ang = pose_error_angle(rot6d_to_matrix(res.params.pose.rot6),
                               rot6d_to_matrix(truth.pose.rot6))
        assert ang < 2.0

    def test_zero_pins_with_regularization(self, small_model):
        cfg = FitConfig(reg_shape=1.0, reg_expr=1.0, reg_jaw=1.0)
        res = fit(small_model, [], config=cfg)
        assert res.converged and res.iterations == 1
        assert np.all(res.params.shape.beta == 0)
        assert np.all(res.params.shape.psi == 0)
        assert np.all(res.params.shape.theta_jaw == 0)
        assert res.final_cost == 0.0

    def test_zero_pins_zero_reg_is_singular(self, small_model):
        cfg = FitConfig(reg_shape=0.0, reg_expr=0.0, reg_jaw=0.0)
        with pytest.raises(SingularSystem):
            fit(small_model, [], config=cfg)

    def test_cost_monotone_on_accepted_steps(self, desk_model):
        rng = np.random.default_rng(5)
        truth = random_params(desk_model, rng, scale=600.0)
        ids = rng.choice(desk_model.subsets["head"], 25, replace=False)
        pins = pins_from_params(desk_model, truth, ids, rng=rng, noise=1.0)
        res = fit(desk_model, pins)
        hist = res.cost_history
        assert all(b <= a for a, b in zip(hist, hist[1:]))

    def test_deterministic(self, small_model):
        rng = np.random.default_rng(6)
        truth = random_params(small_model, rng)
        ids = rng.integers(0, small_model.num_vertices, 10)
        pins = pins_from_params(small_model, truth, ids, rng=rng, noise=0.5)
        a = fit(small_model, pins)
        b = fit(small_model, pins)
        assert np.array_equal(a.params.shape.beta, b.params.shape.beta)
        assert np.array_equal(a.params.pose.rot6, b.params.pose.rot6)
        assert a.final_cost == b.final_cost
        assert a.iterations == b.iterations
        assert a.per_pin_residuals == b.per_pin_residuals

    def test_translation_equivariance(self, desk_model):
        rng = np.random.default_rng(7)
        truth = random_params(desk_model, rng, scale=500.0)
        ids = rng.choice(desk_model.subsets["head"], 20, replace=False)
        pins = pins_from_params(desk_model, truth, ids, rng=rng, noise=0.3)
        shift = np.array([40.0, -25.0])
        shifted = [Pin(p.vertex_id, p.pixel + shift, p.weight) for p in pins]
        cfg = FitConfig(image_diag=724.0)
        a = fit(desk_model, pins, config=cfg)
        b = fit(desk_model, shifted, config=cfg)
        assert np.max(np.abs(a.params.shape.beta - b.params.shape.beta)) < 1e-6
        # Compare rotations as matrices: the 6D encoding has a scale gauge.
        assert np.max(np.abs(rot6d_to_matrix(a.params.pose.rot6)
                             - rot6d_to_matrix(b.params.pose.rot6))) < 1e-6
        assert abs(a.params.pose.scale - b.params.pose.scale) < 1e-6 * a.params.pose.scale
        assert np.max(np.abs(b.params.pose.translation
                             - (a.params.pose.translation + shift))) < 1e-6

    def test_scale_equivariance_without_regularization(self, desk_model):
        rng = np.random.default_rng(8)
        truth = random_params(desk_model, rng, scale=500.0)
        ids = rng.choice(desk_model.subsets["head"], 30, replace=False)
        pins = pins_from_params(desk_model, truth, ids, rng=rng, noise=0.1)
        c = 2.5
        scaled = [Pin(p.vertex_id, c * p.pixel, p.weight) for p in pins]
        cfg = FitConfig(reg_shape=0.0, reg_expr=0.0, reg_jaw=0.0,
                        image_diag=724.0, max_iters=120)
        a = fit(desk_model, pins, config=cfg)
        b = fit(desk_model, scaled, config=cfg)
        assert np.max(np.abs(a.params.shape.beta - b.params.shape.beta)) < 1e-6
        assert abs(b.params.pose.scale - c * a.params.pose.scale) < 1e-5 * a.params.pose.scale
        assert np.max(np.abs(b.params.pose.translation
                             - c * a.params.pose.translation)) < 1e-4

    def test_final_gradient_bounded_when_converged(self, desk_model):
        rng = np.random.default_rng(9)
        truth = random_params(desk_model, rng, scale=400.0)
        ids = rng.choice(desk_model.subsets["head"], 20, replace=False)
        pins = pins_from_params(desk_model, truth, ids, rng=rng, noise=0.5)
        cfg = FitConfig()
        res = fit(desk_model, pins, config=cfg)
        assert res.converged
        # Convergence certificate: g = -(A + lam I) delta, so either the
        # step-norm or the cost-decrease criterion bounds |g| in terms of
        # the tolerances, ||A||, and the accepted damping (final_lambda*10).
        lam = res.final_lambda * 10.0
        cap = res.final_hessian_opnorm + lam
        step_bound = cap * cfg.tol_step
        decrease = cfg.tol_cost * max(res.final_cost, 1e-300)
        cost_bound = cap * np.sqrt(2.0 * decrease / lam)
        assert res.final_grad_norm <= 4.0 * max(step_bound, cost_bound)


class TestIncremental:
    # Fixed regularization keeps the objective independent of the pin
    # count, which these convex-case contracts rely on.
    CFG = FitConfig(reg_shape=0.02, reg_expr=0.02, reg_jaw=0.2,
                    image_diag=724.0)

    def _session_with_pins(self, model, rng, n=14, noise=0.2):
        truth = random_params(model, rng, scale=450.0)
        ids = rng.choice(model.subsets["head"], n, replace=False)
        pins = pins_from_params(model, truth, ids, rng=rng, noise=noise)
        return FitSession(model, config=self.CFG, pins=pins), truth

    def test_consistent_pin_converges_fast(self, desk_model):
        rng = np.random.default_rng(10)
        session, _ = self._session_with_pins(desk_model, rng)
        cost_before = session.result.final_cost
        free = [i for i in desk_model.subsets["head"]
                if all(p.vertex_id != i for p in session.pins)]
        new_id = int(free[0])
        px = project_pins(desk_model, session.result.params, [new_id])[0]
        res = refit_incremental(session, Pin(new_id, px))
        assert res.iterations <= 2
        assert res.final_cost <= cost_before + 1e-9 * (1 + cost_before)

    def test_contradictory_pin_increases_cost(self, desk_model):
        rng = np.random.default_rng(11)
        session, _ = self._session_with_pins(desk_model, rng)
        cost_before = session.result.final_cost
        free = [i for i in desk_model.subsets["head"]
                if all(p.vertex_id != i for p in session.pins)]
        new_id = int(free[0])
        px = project_pins(desk_model, session.result.params, [new_id])[0]
        res = refit_incremental(session, Pin(new_id, px + np.array([80.0, -60.0])))
        assert res.final_cost > cost_before
        assert res.final_cost > 0

    def test_delete_restores_previous_solution(self, desk_model):
        rng = np.random.default_rng(12)
        session, _ = self._session_with_pins(desk_model, rng, noise=0.0)
        before = session.result.params
        free = [i for i in desk_model.subsets["head"]
                if all(p.vertex_id != i for p in session.pins)]
        new_id = int(free[3])
        px = project_pins(desk_model, session.result.params, [new_id])[0]
        refit_incremental(session, Pin(new_id, px + np.array([15.0, 10.0])))
        session.delete_pin(new_id)
        after = session.result.params
        assert np.max(np.abs(after.shape.beta - before.shape.beta)) < 1e-6
        assert np.max(np.abs(rot6d_to_matrix(after.pose.rot6)
                             - rot6d_to_matrix(before.pose.rot6))) < 1e-6

    def test_delete_unknown_pin(self, small_model):
        session = FitSession(small_model)
        with pytest.raises(UnknownPin):
            session.delete_pin(4)
