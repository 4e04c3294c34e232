"""Pin-driven model fitting.

Levenberg-Marquardt minimization of the pin reprojection error over shape,
expression, jaw, global 6D rotation, uniform scale, and in-plane
translation, with Tikhonov regularization pulling the coefficient vectors
toward neutral. Incremental refits warm-start from the previous solution,
which is how the annotation workflow applies it after every pin change.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import camera, morphable
from .camera import PoseParams
from .errors import EmptyPins, InvalidVertex, SingularSystem, UnknownPin
from .morphable import HeadModel, ShapeParams
from .rotations import rot6d_jacobian


@dataclass(frozen=True)
class Pin:
    """One annotator-asserted vertex-to-pixel correspondence."""

    vertex_id: int
    pixel: np.ndarray  # (u, v) px
    weight: float = 1.0


@dataclass(frozen=True)
class FitConfig:
    # None regularization weights auto-scale with the pin count
    # (1e-3 per pin for shape/expression, 1e-2 per pin for the jaw).
    reg_shape: float | None = None
    reg_expr: float | None = None
    reg_jaw: float | None = None
    max_iters: int = 60
    lm_lambda0: float = 1e-3
    tol_step: float = 1e-10
    tol_cost: float = 1e-12
    jacobian_mode: str = "analytic"  # or "finite_diff"
    image_diag: float | None = None  # translation normalization scale


@dataclass(frozen=True)
class FitParams:
    shape: ShapeParams
    pose: PoseParams

    @staticmethod
    def neutral(model: HeadModel) -> "FitParams":
        return FitParams(shape=ShapeParams.neutral(model), pose=PoseParams.neutral())


@dataclass(frozen=True)
class FitResult:
    params: FitParams
    final_cost: float
    rms_pin_error: float
    iterations: int
    converged: bool
    per_pin_residuals: list
    final_grad_norm: float       # in the normalized optimization space
    final_lambda: float
    final_hessian_opnorm: float  # ||J^T J||_2 at the solution, same space
    cost_history: list = field(default_factory=list)


def _effective_regs(config: FitConfig, n_pins: int):
    base = max(1, n_pins)
    rs = 1e-3 * base if config.reg_shape is None else config.reg_shape
    re = 1e-3 * base if config.reg_expr is None else config.reg_expr
    rj = 1e-2 * base if config.reg_jaw is None else config.reg_jaw
    return rs, re, rj


def _check_pins(model: HeadModel, pins) -> None:
    k = model.num_vertices
    for p in pins:
        if not 0 <= int(p.vertex_id) < k:
            raise InvalidVertex(f"pin vertex {p.vertex_id} out of range (K={k})")
        if not np.all(np.isfinite(np.asarray(p.pixel, dtype=float))):
            raise InvalidVertex(f"pin pixel for vertex {p.vertex_id} not finite")


def project_pins(model: HeadModel, params: FitParams, vertex_ids) -> np.ndarray:
    """Pixel positions of the given vertices under the current parameters."""
    mesh = morphable.decode(model, params.shape)
    posed = camera.apply_similarity(mesh.vertices[np.asarray(vertex_ids, dtype=int)],
                                    params.pose.to_similarity())
    return camera.project_orthographic(posed)


def residuals(model: HeadModel, params: FitParams, pins, config: FitConfig) -> np.ndarray:
    """Stacked residual vector: weighted pin reprojection errors followed by
    the square-root regularization rows."""
    if len(pins) == 0:
        raise EmptyPins("residuals need at least one pin")
    _check_pins(model, pins)
    return _residual_vector(model, params, pins, _effective_regs(config, len(pins)))


def _residual_vector(model, params, pins, regs) -> np.ndarray:
    parts = []
    if pins:
        ids = np.array([p.vertex_id for p in pins], dtype=int)
        weights = np.array([p.weight for p in pins], dtype=float)
        pixels = np.array([np.asarray(p.pixel, dtype=float) for p in pins])
        proj = project_pins(model, params, ids)
        parts.append(((proj - pixels) * weights[:, None]).ravel())
    rs, re, rj = regs
    parts.append(np.sqrt(rs) * params.shape.beta)
    parts.append(np.sqrt(re) * params.shape.psi)
    parts.append(np.sqrt(rj) * np.asarray(params.shape.theta_jaw, dtype=float))
    return np.concatenate(parts)


def _param_sizes(model: HeadModel):
    s, e = model.num_shape, model.num_expr
    return s, e, s + e + 12


def _analytic_jacobian(model, params, pins, regs) -> np.ndarray:
    """Jacobian of the residual vector w.r.t. the raw parameter vector
    [beta, psi, jaw, rot6, scale, tx, ty]."""
    s_dim, e_dim, n_cols = _param_sizes(model)
    shape_cols = s_dim + e_dim + 3
    n_pins = len(pins)
    jac = np.zeros((2 * n_pins + shape_cols, n_cols))

    if n_pins:
        ids = np.array([p.vertex_id for p in pins], dtype=int)
        weights = np.array([p.weight for p in pins], dtype=float)
        v, dv = morphable.decode_jacobian_rows(model, params.shape, ids)
        rot, drot = rot6d_jacobian(params.pose.rot6)
        s = float(params.pose.scale)

        # d proj / d (beta, psi, jaw): rotation then scale, keep x and y.
        dshape = s * np.einsum("ab,nbc->nac", rot, dv)[:, :2, :]
        # d proj / d rot6.
        drot6 = s * np.einsum("abj,nb->naj", drot, v)[:, :2, :]
        q = v @ rot.T

        for i in range(n_pins):
            w = weights[i]
            r0 = 2 * i
            jac[r0:r0 + 2, :shape_cols] = w * dshape[i]
            jac[r0:r0 + 2, shape_cols:shape_cols + 6] = w * drot6[i]
            jac[r0:r0 + 2, shape_cols + 6] = w * q[i, :2]
            jac[r0, shape_cols + 7] = w
            jac[r0 + 1, shape_cols + 8] = w

    rs, re, rj = regs
    base = 2 * n_pins
    jac[base:base + s_dim, :s_dim] = np.sqrt(rs) * np.eye(s_dim)
    jac[base + s_dim:base + s_dim + e_dim, s_dim:s_dim + e_dim] = np.sqrt(re) * np.eye(e_dim)
    jac[base + s_dim + e_dim:, s_dim + e_dim:s_dim + e_dim + 3] = np.sqrt(rj) * np.eye(3)
    return jac


def _pack_raw(model: HeadModel, params: FitParams) -> np.ndarray:
    return np.concatenate([
        params.shape.beta,
        params.shape.psi,
        np.asarray(params.shape.theta_jaw, dtype=float),
        np.asarray(params.pose.rot6, dtype=float),
        [float(params.pose.scale)],
        np.asarray(params.pose.translation, dtype=float),
    ])


def _unpack_raw(model: HeadModel, x: np.ndarray) -> FitParams:
    s, e, _ = _param_sizes(model)
    return FitParams(
        shape=ShapeParams(beta=x[:s].copy(), psi=x[s:s + e].copy(),
                          theta_jaw=x[s + e:s + e + 3].copy()),
        pose=PoseParams(rot6=x[s + e + 3:s + e + 9].copy(),
                        scale=float(x[s + e + 9]),
                        translation=x[s + e + 10:s + e + 12].copy()),
    )


def _fd_jacobian(model, pins, regs, x_raw, steps) -> np.ndarray:
    cols = []
    for j in range(len(x_raw)):
        h = steps[j]
        xp = x_raw.copy()
        xm = x_raw.copy()
        xp[j] += h
        xm[j] -= h
        rp = _residual_vector(model, _unpack_raw(model, xp), pins, regs)
        rm = _residual_vector(model, _unpack_raw(model, xm), pins, regs)
        cols.append((rp - rm) / (2.0 * h))
    return np.stack(cols, axis=1)


def jacobian(model: HeadModel, params: FitParams, pins, config: FitConfig) -> np.ndarray:
    """Jacobian of residuals() w.r.t. the raw parameter vector."""
    if len(pins) == 0:
        raise EmptyPins("jacobian needs at least one pin")
    _check_pins(model, pins)
    regs = _effective_regs(config, len(pins))
    if config.jacobian_mode == "finite_diff":
        x = _pack_raw(model, params)
        s, e, _ = _param_sizes(model)
        steps = np.full(len(x), 1e-6)
        steps[s + e + 9] = 1e-6 * max(abs(x[s + e + 9]), 1.0)   # scale
        diag = config.image_diag or 1000.0
        steps[s + e + 10:] = 1e-6 * diag                          # translation
        return _fd_jacobian(model, pins, regs, x, steps)
    return _analytic_jacobian(model, params, pins, regs)


def _default_init(model: HeadModel, pins) -> FitParams:
    """Neutral shape and rotation; scale/translation seeded from the pins so
    the first iterations start in the right image region."""
    ids = np.array([p.vertex_id for p in pins], dtype=int)
    px = np.array([np.asarray(p.pixel, dtype=float) for p in pins])
    txy = model.template[ids][:, :2]
    sp = float(np.sqrt(np.mean(np.sum((px - px.mean(axis=0)) ** 2, axis=1))))
    st = float(np.sqrt(np.mean(np.sum((txy - txy.mean(axis=0)) ** 2, axis=1))))
    s0 = sp / st if sp > 1e-9 and st > 1e-9 else 1.0
    t0 = px.mean(axis=0) - s0 * txy.mean(axis=0)
    return FitParams(shape=ShapeParams.neutral(model),
                     pose=PoseParams(scale=s0, translation=t0))


def _pin_diag(pins, config: FitConfig) -> float:
    if config.image_diag is not None:
        return float(config.image_diag)
    px = np.array([np.asarray(p.pixel, dtype=float) for p in pins])
    span = px.max(axis=0) - px.min(axis=0)
    return max(float(np.hypot(span[0], span[1])), 256.0)


def fit(model: HeadModel, pins, init: FitParams | None = None,
        config: FitConfig | None = None) -> FitResult:
    """Levenberg-Marquardt fit of all parameters to the pins.

    Damping is multiplied by 10 on rejected steps and divided by 10 on
    accepted ones; accepted steps never increase the cost. Terminates on
    step norm < tol_step, relative cost decrease < tol_cost, or max_iters.
    Deterministic for identical inputs.
    """
    config = config or FitConfig()
    pins = list(pins)
    _check_pins(model, pins)
    regs = _effective_regs(config, len(pins))

    if not pins:
        if all(r == 0.0 for r in regs):
            raise SingularSystem("no pins and no regularization")
        pose = init.pose if init is not None else PoseParams.neutral()
        params = FitParams(shape=ShapeParams.neutral(model), pose=pose)
        return FitResult(params=params, final_cost=0.0, rms_pin_error=0.0,
                         iterations=1, converged=True, per_pin_residuals=[],
                         final_grad_norm=0.0, final_lambda=config.lm_lambda0,
                         final_hessian_opnorm=0.0, cost_history=[0.0])

    start = init if init is not None else _default_init(model, pins)
    diag = _pin_diag(pins, config)
    s_dim, e_dim, n_cols = _param_sizes(model)
    scale_col = s_dim + e_dim + 9

    def to_internal(x_raw):
        x = x_raw.copy()
        x[scale_col] = np.log(x[scale_col])
        x[scale_col + 1:] /= diag
        return x

    def to_raw(x_int):
        x = x_int.copy()
        x[scale_col] = np.exp(x[scale_col])
        x[scale_col + 1:] *= diag
        return x

    def resid(x_int):
        return _residual_vector(model, _unpack_raw(model, to_raw(x_int)), pins, regs)

    def jac(x_int):
        x_raw = to_raw(x_int)
        params = _unpack_raw(model, x_raw)
        if config.jacobian_mode == "finite_diff":
            cols = []
            for jj in range(n_cols):
                h = 1e-6
                xp = x_int.copy()
                xm = x_int.copy()
                xp[jj] += h
                xm[jj] -= h
                cols.append((resid(xp) - resid(xm)) / (2.0 * h))
            return np.stack(cols, axis=1)
        j = _analytic_jacobian(model, params, pins, regs)
        j = j.copy()
        j[:, scale_col] *= x_raw[scale_col]   # d/d log(s)
        j[:, scale_col + 1:] *= diag          # d/d (t / diag)
        return j

    x = to_internal(_pack_raw(model, start))
    r = resid(x)
    cost = 0.5 * float(r @ r)
    lam = float(config.lm_lambda0)
    history = [cost]
    converged = False
    iterations = 0
    eye = np.eye(n_cols)

    for _ in range(config.max_iters):
        iterations += 1
        j = jac(x)
        g = j.T @ r
        a = j.T @ j
        accepted = False
        delta = None
        while True:
            try:
                delta = np.linalg.solve(a + lam * eye, -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is None or not np.all(np.isfinite(delta)):
                if lam == 0.0:
                    raise SingularSystem("normal equations are rank deficient")
                lam = max(lam, 1e-12) * 10.0
                if lam > 1e14:
                    break
                continue
            x_new = x + delta
            r_new = resid(x_new)
            cost_new = 0.5 * float(r_new @ r_new)
            if np.isfinite(cost_new) and cost_new <= cost:
                accepted = True
                break
            lam = max(lam, 1e-16) * 10.0
            if lam > 1e14:
                break
        if not accepted:
            break
        step_norm = float(np.linalg.norm(delta))
        decrease = cost - cost_new
        x, r, cost = x_new, r_new, cost_new
        lam /= 10.0
        history.append(cost)
        if step_norm < config.tol_step:
            converged = True
            break
        if decrease <= config.tol_cost * max(cost, 1e-300):
            converged = True
            break

    final_params = _unpack_raw(model, to_raw(x))
    j = jac(x)
    grad_norm = float(np.linalg.norm(j.T @ r))
    opnorm = float(np.linalg.norm(j.T @ j, 2))
    ids = np.array([p.vertex_id for p in pins], dtype=int)
    pixels = np.array([np.asarray(p.pixel, dtype=float) for p in pins])
    proj = project_pins(model, final_params, ids)
    per_pin = np.linalg.norm(proj - pixels, axis=1)
    rms = float(np.sqrt(np.mean(per_pin ** 2)))
    return FitResult(params=final_params, final_cost=cost, rms_pin_error=rms,
                     iterations=iterations, converged=converged,
                     per_pin_residuals=[float(x) for x in per_pin],
                     final_grad_norm=grad_norm, final_lambda=lam,
                     final_hessian_opnorm=opnorm, cost_history=history)


class FitSession:
    """Mutable pin set plus the fit that corresponds to it.

    Refits warm-start from the previous parameters; pins are keyed by
    vertex id (one pin per vertex).
    """

    def __init__(self, model: HeadModel, config: FitConfig | None = None,
                 image_size=None, pins=None):
        self.model = model
        config = config or FitConfig()
        if image_size is not None and config.image_diag is None:
            config = replace(config, image_diag=float(np.hypot(*image_size)))
        self.config = config
        self.pins: list[Pin] = list(pins) if pins else []
        self.result = fit(model, self.pins, config=config)

    def _refit(self) -> FitResult:
        self.result = fit(self.model, self.pins, init=self.result.params,
                          config=self.config)
        return self.result

    def _index_of(self, vertex_id: int) -> int:
        for i, p in enumerate(self.pins):
            if p.vertex_id == vertex_id:
                return i
        raise UnknownPin(f"no pin on vertex {vertex_id}")

    def add_pin(self, pin: Pin) -> FitResult:
        _check_pins(self.model, [pin])
        try:
            self.pins[self._index_of(pin.vertex_id)] = pin
        except UnknownPin:
            self.pins.append(pin)
        return self._refit()

    def move_pin(self, pin: Pin) -> FitResult:
        _check_pins(self.model, [pin])
        self.pins[self._index_of(pin.vertex_id)] = pin
        return self._refit()

    def delete_pin(self, vertex_id: int) -> FitResult:
        del self.pins[self._index_of(vertex_id)]
        return self._refit()


def refit_incremental(session: FitSession, new_pin: Pin) -> FitResult:
    """Warm-started refit after one more pin; same contract as fit()."""
    return session.add_pin(new_pin)
