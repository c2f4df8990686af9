"""Receding-horizon solvers.

``solve_lq_tracking`` is the convex finite-horizon LQ tracker (backward affine
Riccati recursion) used by the Koopman controller; ``ilqr_solve`` is an
iterative-LQR nonlinear solver used for the nominal-model controller and for
dataset generation. Both minimize

    sum_{k=0}^{H+1} (xi_k - ref_k)^T Q (xi_k - ref_k) + sum_{k=0}^{H} u_k^T R u_k

over u_0..u_H subject to the respective dynamics; the k = H+1 term is
state-tracking only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nets import DimensionError


class SolverError(RuntimeError):
    """Numerical breakdown inside an MPC solve."""


def _check_sym_pd(mat, name):
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DimensionError(f"{name} must be square")
    if not np.allclose(mat, mat.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    if np.any(np.linalg.eigvalsh(mat) <= 0.0):
        raise ValueError(f"{name} must be positive definite")
    return mat


@dataclass
class QuadraticCostSpec:
    """Horizon, state/input weights, and the reference sequence x_ref_0..x_ref_{H+1}."""
    horizon: int
    q_state: np.ndarray
    r_input: np.ndarray
    x_ref: np.ndarray

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        self.q_state = _check_sym_pd(self.q_state, "Q_state")
        self.r_input = _check_sym_pd(self.r_input, "R")
        self.x_ref = np.atleast_2d(np.asarray(self.x_ref, dtype=float))
        if self.x_ref.shape[0] == 1:
            self.x_ref = np.repeat(self.x_ref, self.horizon + 2, axis=0)
        if self.x_ref.shape != (self.horizon + 2, self.q_state.shape[0]):
            raise DimensionError("reference must have H+2 rows of state width")

    @classmethod
    def regulator(cls, horizon, q_diag, r, n=None):
        """Zero-reference tracking cost with diagonal weights."""
        q = np.diag(np.asarray(q_diag, dtype=float))
        r_mat = np.atleast_2d(np.asarray(r, dtype=float))
        ref = np.zeros((horizon + 2, q.shape[0] if n is None else n))
        return cls(horizon, q, r_mat, ref)


@dataclass
class LqTrackingProblem:
    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    xi0: np.ndarray
    xi_ref: np.ndarray  # (H+2, N)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        self.R = _check_sym_pd(self.R, "R")
        self.xi0 = np.asarray(self.xi0, dtype=float)
        self.xi_ref = np.atleast_2d(np.asarray(self.xi_ref, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n \
                or self.Q.shape != (n, n) or self.xi0.shape != (n,) \
                or self.xi_ref.shape[1] != n:
            raise DimensionError("inconsistent LQ problem dimensions")
        if not np.allclose(self.Q, self.Q.T, atol=1e-10):
            raise ValueError("Q must be symmetric")
        if np.any(np.linalg.eigvalsh(self.Q) < -1e-10):
            raise ValueError("Q must be positive semidefinite")

    @property
    def horizon(self):
        return self.xi_ref.shape[0] - 2


@dataclass
class MpcSolution:
    inputs: np.ndarray       # (H+1, p)
    trajectory: np.ndarray   # (H+2, dim)
    objective: float
    iterations: int = 1
    kkt_residual: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def _tracking_objective(traj, inputs, Q, R, ref):
    d = traj - ref
    cost = float(np.einsum("ki,ij,kj->", d, Q, d))
    cost += float(np.einsum("ki,ij,kj->", inputs, R, inputs))
    return cost


def solve_lq_tracking(prob):
    """Globally optimal inputs for the affine-reference LQ tracking problem.

    Backward Riccati recursion with tracking offsets, then a forward rollout;
    the reported KKT residual is the max-norm gradient of the stacked
    quadratic at the returned solution, computed by an adjoint sweep.
    """
    A, B, Q, R = prob.A, prob.B, prob.Q, prob.R
    ref = prob.xi_ref
    h = prob.horizon
    big_n, p = B.shape

    # value function V_k(xi) = xi' P xi + 2 q' xi + const
    P = Q.copy()
    q = -Q @ ref[h + 1]
    gains_k = np.empty((h + 1, p, big_n))
    gains_f = np.empty((h + 1, p))
    for k in range(h, -1, -1):
        M = R + B.T @ P @ B
        try:
            k_gain = np.linalg.solve(M, B.T @ P @ A)
            f_gain = np.linalg.solve(M, B.T @ q)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"singular input Hessian at stage {k}") from exc
        gains_k[k] = k_gain
        gains_f[k] = f_gain
        P_next = Q + A.T @ P @ A - k_gain.T @ M @ k_gain
        q = -Q @ ref[k] + (A - B @ k_gain).T @ q
        P = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P)):
            raise SolverError("non-finite Riccati iterate")

    traj = np.empty((h + 2, big_n))
    inputs = np.empty((h + 1, p))
    traj[0] = prob.xi0
    for k in range(h + 1):
        inputs[k] = -gains_k[k] @ traj[k] - gains_f[k]
        traj[k + 1] = A @ traj[k] + B @ inputs[k]

    objective = _tracking_objective(traj, inputs, Q, R, ref)

    # adjoint sweep for the KKT residual: dJ/du_k = 2 R u_k + B' lam_{k+1}
    lam = 2.0 * Q @ (traj[h + 1] - ref[h + 1])
    kkt = 0.0
    for k in range(h, -1, -1):
        grad = 2.0 * R @ inputs[k] + B.T @ lam
        kkt = max(kkt, float(np.max(np.abs(grad))))
        lam = 2.0 * Q @ (traj[k] - ref[k]) + A.T @ lam
    return MpcSolution(inputs, traj, objective, iterations=1, kkt_residual=kkt)


def koopman_mpc_step(x, model, cost, return_solution=False):
    """First input of the lifted LQ tracking solve with xi_0 = g(x)."""
    xi0 = model.embed(np.asarray(x, dtype=float))
    xi_ref = model.embed(cost.x_ref)
    Q = model.C.T @ cost.q_state @ model.C
    prob = LqTrackingProblem(model.A, model.B, Q, cost.r_input, xi0, xi_ref)
    sol = solve_lq_tracking(prob)
    return sol if return_solution else sol.inputs[0]


def finite_difference_jacobians(f, x, u, eps=1e-6):
    """Central-difference Jacobians of x' = f(x, u)."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n, p = x.shape[0], u.shape[0]
    fx = np.empty((n, n))
    fu = np.empty((n, p))
    for i in range(n):
        dx = np.zeros(n)
        dx[i] = eps
        fx[:, i] = (f(x + dx, u) - f(x - dx, u)) / (2.0 * eps)
    for j in range(p):
        du = np.zeros(p)
        du[j] = eps
        fu[:, j] = (f(x, u + du) - f(x, u - du)) / (2.0 * eps)
    return fx, fu


def _rollout(f, x0, inputs):
    traj = np.empty((inputs.shape[0] + 1, x0.shape[0]))
    traj[0] = x0
    for k in range(inputs.shape[0]):
        traj[k + 1] = f(traj[k], inputs[k])
    return traj


def ilqr_solve(f, x0, cost, warm_start=None, p=1, max_iter=50, tol=1e-6,
               reg_init=1e-6, reg_max=1e8, ls_trials=10, fd_eps=1e-6):
    """Iterative LQR for x' = f(x, u) under a quadratic tracking cost.

    Linearize, backward Riccati on the deviation problem, line-searched
    forward rollout; accepted costs are non-increasing. Raises SolverError on
    divergence.
    """
    x0 = np.asarray(x0, dtype=float)
    h = cost.horizon
    n = x0.shape[0]
    Q, R, ref = cost.q_state, cost.r_input, cost.x_ref
    if warm_start is None:
        inputs = np.zeros((h + 1, p))
    else:
        inputs = np.array(warm_start, dtype=float).reshape(h + 1, -1)
    traj = _rollout(f, x0, inputs)
    if not np.all(np.isfinite(traj)):
        raise SolverError("non-finite rollout from warm start")
    total = _tracking_objective(traj, inputs, Q, R, ref)

    reg = reg_init
    iterations = 0
    grad_norm = np.inf
    cost_history = [total]
    for _ in range(max_iter):
        iterations += 1
        jac = [finite_difference_jacobians(f, traj[k], inputs[k], fd_eps)
               for k in range(h + 1)]

        improved = False
        while reg <= reg_max and not improved:
            # backward pass on deviations
            v_x = 2.0 * Q @ (traj[h + 1] - ref[h + 1])
            v_xx = 2.0 * Q
            ff = np.empty((h + 1, inputs.shape[1]))
            fb = np.empty((h + 1, inputs.shape[1], n))
            ok = True
            grad_norm = 0.0
            for k in range(h, -1, -1):
                fx, fu = jac[k]
                q_x = 2.0 * Q @ (traj[k] - ref[k]) + fx.T @ v_x
                q_u = 2.0 * R @ inputs[k] + fu.T @ v_x
                q_xx = 2.0 * Q + fx.T @ v_xx @ fx
                q_uu = 2.0 * R + fu.T @ v_xx @ fu + reg * np.eye(inputs.shape[1])
                q_ux = fu.T @ v_xx @ fx
                try:
                    ff[k] = -np.linalg.solve(q_uu, q_u)
                    fb[k] = -np.linalg.solve(q_uu, q_ux)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                grad_norm = max(grad_norm, float(np.max(np.abs(q_u))))
                v_x = q_x + fb[k].T @ q_uu @ ff[k] + fb[k].T @ q_u \
                    + q_ux.T @ ff[k]
                v_xx = q_xx + fb[k].T @ q_uu @ fb[k] + fb[k].T @ q_ux \
                    + q_ux.T @ fb[k]
                v_xx = 0.5 * (v_xx + v_xx.T)
            if not ok or not np.all(np.isfinite(v_xx)):
                reg *= 10.0
                continue

            alpha = 1.0
            for _ in range(ls_trials):
                new_inputs = np.empty_like(inputs)
                new_traj = np.empty_like(traj)
                new_traj[0] = x0
                finite = True
                for k in range(h + 1):
                    new_inputs[k] = inputs[k] + alpha * ff[k] \
                        + fb[k] @ (new_traj[k] - traj[k])
                    new_traj[k + 1] = f(new_traj[k], new_inputs[k])
                    if not np.all(np.isfinite(new_traj[k + 1])):
                        finite = False
                        break
                if finite:
                    new_total = _tracking_objective(new_traj, new_inputs,
                                                    Q, R, ref)
                    if new_total < total:
                        improvement = total - new_total
                        inputs, traj, total = new_inputs, new_traj, new_total
                        improved = True
                        reg = max(reg / 10.0, reg_init)
                        break
                alpha *= 0.5
            if not improved:
                reg *= 10.0

        if not improved:
            break  # converged as far as regularization allows
        cost_history.append(total)
        if improvement < tol:
            break

    if not np.isfinite(total):
        raise SolverError("iLQR diverged to non-finite cost")
    return MpcSolution(inputs, traj, total, iterations=iterations,
                       kkt_residual=grad_norm,
                       diagnostics={"cost_history": cost_history})


def shift_warm_start(inputs):
    """Receding-horizon warm start: drop u_0, repeat the last input."""
    return np.vstack([inputs[1:], inputs[-1:]])
