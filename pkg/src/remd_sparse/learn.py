"""Coherence-regularized tolerance-matrix learning.

Fits a square row-normalized matrix B and sparse codes X so that
B @ D0 @ X approximates the training patches Y, where D0 is a fixed
base dictionary. The objective is

    0.5*||Y - B D0 X||_F^2 + alpha*nnz(X)
        + (beta/2)*||B B^T - I||_F^2 + gamma*||B||_1

minimized by alternating a hard-threshold step on X with cyclic
row-by-row updates of B. Every row update must both stay close to its
base atom action (cosine gate) and not increase the objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError

_MONO_SLACK = 1e-10  # relative slack on the non-increase bookkeeping


@dataclass
class LearnConfig:
    alpha: float = 150.0
    beta: float = 0.04
    gamma: float = 0.01
    rho: float = 1.2
    tau: float = 0.14
    a: float = 0.3          # stepsize floor for the X step
    b: float = 0.5          # stepsize floor for the B rows
    max_iters: int = 50
    rel_obj_tol: float = 1e-6
    stepsize_literal: bool = False

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "tau", "a", "b"):
            if getattr(self, name) <= 0:
                raise ArgumentError(f"{name} must be positive")
        if self.rho <= 1.0:
            raise ArgumentError(f"rho must exceed 1, got {self.rho}")
        if self.max_iters < 0:
            raise ArgumentError("max_iters must be >= 0")

    @property
    def accept_threshold(self) -> float:
        return math.sqrt(2.0 * self.beta / self.tau)


@dataclass
class LearnTrace:
    """Per-outer-iteration progress records.

    ``objectives[0]`` is the starting baseline. ``step_objectives`` is
    finer grained: one value after the X step and after every accepted
    row update.
    """

    objectives: list = field(default_factory=list)
    sparsity: list = field(default_factory=list)
    coherence: list = field(default_factory=list)
    rejected_gate: list = field(default_factory=list)
    rejected_guard: list = field(default_factory=list)
    step_objectives: list = field(default_factory=list)


def _dict_matrix(D0) -> np.ndarray:
    mat = getattr(D0, "matrix", D0)
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2:
        raise DimensionError("dictionary must be a 2-D matrix")
    return mat


def _check_shapes(Y, B, D0, X):
    n, N = Y.shape
    if B.shape != (n, n):
        raise DimensionError(f"B is {B.shape}, expected {(n, n)}")
    if D0.shape[0] != n:
        raise DimensionError(f"dictionary has {D0.shape[0]} rows, expected {n}")
    K = D0.shape[1]
    if X.shape != (K, N):
        raise DimensionError(f"X is {X.shape}, expected {(K, N)}")


# ----------------------------------------------------------- objective

def objective(Y, B, D0t, X, cfg: LearnConfig) -> float:
    """Full model cost at the given variables."""
    Y = np.asarray(Y, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    D0 = _dict_matrix(D0t)
    _check_shapes(Y, B, D0, X)
    resid = Y - B @ (D0 @ X)
    gram = B @ B.T
    gram[np.diag_indices_from(gram)] -= 1.0
    return (0.5 * float(np.sum(resid * resid))
            + cfg.alpha * int(np.count_nonzero(X))
            + 0.5 * cfg.beta * float(np.sum(gram * gram))
            + cfg.gamma * float(np.sum(np.abs(B))))


def mutual_coherence(B) -> float:
    """Largest |cosine| between two distinct rows."""
    B = np.asarray(B, dtype=np.float64)
    norms = np.linalg.norm(B, axis=1)
    if np.any(norms == 0):
        raise ArgumentError("coherence undefined with a zero row")
    if B.shape[0] < 2:
        return 0.0
    G = (B / norms[:, None]) @ (B / norms[:, None]).T
    np.fill_diagonal(G, 0.0)
    return float(np.max(np.abs(G)))


# -------------------------------------------------------------- X step

def hard_threshold(U, level: float) -> np.ndarray:
    """Keep entries with |u| >= level verbatim, zero the rest."""
    U = np.asarray(U, dtype=np.float64)
    return np.where(np.abs(U) >= level, U, 0.0)


def grad_X(Y, B, D0t, X) -> np.ndarray:
    Y = np.asarray(Y, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    D0 = _dict_matrix(D0t)
    _check_shapes(Y, B, D0, X)
    A = B @ D0
    return A.T @ (A @ X - Y)


def _x_stepsize(B, D0, cfg: LearnConfig) -> float:
    if cfg.stepsize_literal:
        lip = float(np.linalg.norm(B.T @ B))
    else:
        A = B @ D0
        lip = float(np.linalg.norm(A.T @ A))
    return max(cfg.rho * lip, cfg.a)


def step_X(Y, B, D0t, X_prev, cfg: LearnConfig):
    """One majorize-threshold update of the codes; returns (X_new, theta)."""
    Y = np.asarray(Y, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    X_prev = np.asarray(X_prev, dtype=np.float64)
    D0 = _dict_matrix(D0t)
    _check_shapes(Y, B, D0, X_prev)
    theta = _x_stepsize(B, D0, cfg)
    U = X_prev - grad_X(Y, B, D0, X_prev) / theta
    return hard_threshold(U, math.sqrt(2.0 * cfg.alpha / theta)), theta


# -------------------------------------------------------------- B rows

def soft_threshold(v, level: float) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - level, 0.0)


def grad_B_row(Y, B, D0t, X, i: int, cfg: LearnConfig) -> np.ndarray:
    """Smooth-part gradient for row i: data misfit plus row coherence."""
    Y = np.asarray(Y, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    D0 = _dict_matrix(D0t)
    _check_shapes(Y, B, D0, X)
    Z = D0 @ X
    r = B[i] @ Z - Y[i]
    data = Z @ r
    c = B @ B[i]
    coh = 4.0 * cfg.beta * (B.T @ c - c[i] * B[i])
    return data + coh


class _RowWorkspace:
    """Shared quantities for one cyclic sweep over the rows of B."""

    def __init__(self, Y, B, D0, X, cfg: LearnConfig):
        self.Y = Y
        self.B = B
        self.D0 = D0
        self.cfg = cfg
        self.Z = D0 @ X
        self.R = B @ self.Z - Y
        self.z_frob2 = float(np.sum(self.Z * self.Z))
        self.z_row2 = np.sum(self.Z * self.Z, axis=1)
        self.base_norms = np.linalg.norm(D0, axis=1)

    def stepsize(self, i: int) -> float:
        cfg = self.cfg
        lip_data = self.z_row2[i] if cfg.stepsize_literal else self.z_frob2
        Bt = np.delete(self.B, i, axis=0)
        gram = float(np.sum((Bt @ Bt.T) ** 2))  # squared Frobenius norm
        return max(cfg.rho * (lip_data + 2.0 * cfg.beta * gram), cfg.b)

    def update_row(self, i: int):
        """Returns (b_new, accepted, delta, gate_ok)."""
        cfg = self.cfg
        b_old = self.B[i].copy()
        delta_i = self.stepsize(i)

        r_old = self.R[i]
        data_grad = self.Z @ r_old
        c = self.B @ b_old
        coh_grad = 4.0 * cfg.beta * (self.B.T @ c - c[i] * b_old)

        S = soft_threshold(b_old - (data_grad + coh_grad) / delta_i,
                           cfg.gamma / delta_i)
        norm = float(np.linalg.norm(S))
        if norm == 0.0:
            return b_old, False, 0.0, False
        b_new = S / norm

        # candidate action must stay aligned with the base atom action
        act = b_new @ self.D0
        act_norm = float(np.linalg.norm(act))
        base_norm = self.base_norms[i]
        if act_norm == 0.0 or base_norm == 0.0:
            return b_old, False, 0.0, False
        pi = float(act @ self.D0[i]) / (act_norm * base_norm)
        if pi < cfg.accept_threshold:
            return b_old, False, 0.0, False

        # exact objective change of swapping the row in
        r_new = b_new @ self.Z - self.Y[i]
        d_data = 0.5 * (float(r_new @ r_new) - float(r_old @ r_old))
        cn = self.B @ b_new
        d_coh = cfg.beta * ((float(cn @ cn) - cn[i] ** 2)
                           - (float(c @ c) - c[i] ** 2))
        d_l1 = cfg.gamma * float(np.sum(np.abs(b_new)) - np.sum(np.abs(b_old)))
        delta = d_data + d_coh + d_l1
        if not delta <= 0.0:
            return b_old, False, 0.0, True

        self.B[i] = b_new
        self.R[i] = r_new
        return b_new, True, delta, True


def step_B_row(Y, B, D0t, X, i: int, cfg: LearnConfig):
    """One proximal update of row i of B; returns (row, accepted, delta).

    The candidate is the normalized soft-thresholded gradient step; it is
    kept only when its dictionary action stays within the cosine gate of
    the base atom action and the full objective does not increase.
    """
    Y = np.asarray(Y, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64).copy()
    X = np.asarray(X, dtype=np.float64)
    D0 = _dict_matrix(D0t)
    _check_shapes(Y, B, D0, X)
    if not 0 <= i < B.shape[0]:
        raise ArgumentError(f"row index {i} out of range")
    ws = _RowWorkspace(Y, B, D0, X, cfg)
    row, accepted, delta, _ = ws.update_row(i)
    return row, accepted, delta


# ------------------------------------------------------------ training

def learn(Y, D0t, cfg: LearnConfig | None = None):
    """Alternating minimization; returns (B, X, trace).

    Starts from B = identity and all-zero codes. Stops after max_iters
    sweeps or when the relative objective change falls under
    rel_obj_tol.
    """
    if cfg is None:
        cfg = LearnConfig()
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise DimensionError("Y must be a 2-D patch matrix")
    D0 = _dict_matrix(D0t)
    n, N = Y.shape
    if D0.shape[0] != n:
        raise DimensionError(
            f"dictionary rows {D0.shape[0]} do not match patch length {n}")
    K = D0.shape[1]

    B = np.eye(n)
    X = np.zeros((K, N))
    trace = LearnTrace()
    obj = objective(Y, B, D0, X, cfg)
    trace.objectives.append(obj)
    trace.sparsity.append(0.0)
    trace.coherence.append(mutual_coherence(B))
    trace.rejected_gate.append(0)
    trace.rejected_guard.append(0)

    for _ in range(cfg.max_iters):
        prev_obj = obj
        X, _ = step_X(Y, B, D0, X, cfg)
        obj = objective(Y, B, D0, X, cfg)
        trace.step_objectives.append(obj)

        ws = _RowWorkspace(Y, B, D0, X, cfg)
        gate = guard = 0
        for i in range(n):
            _, accepted, delta, gate_ok = ws.update_row(i)
            if accepted:
                obj += delta
                trace.step_objectives.append(obj)
            elif gate_ok:
                guard += 1
            else:
                gate += 1
        B = ws.B

        obj = objective(Y, B, D0, X, cfg)
        trace.objectives.append(obj)
        trace.sparsity.append(float(np.count_nonzero(X)) / X.size)
        trace.coherence.append(mutual_coherence(B))
        trace.rejected_gate.append(gate)
        trace.rejected_guard.append(guard)

        if abs(prev_obj - obj) < cfg.rel_obj_tol * max(abs(prev_obj), 1e-30):
            break
    return B, X, trace
