"""Dense least-squares factorizations and conjugate gradients.

``LsFactorization`` keeps an orthogonal factorization of a tall matrix ``K``
and exposes the products needed for interface elimination:

    apply_pinv(v)        K^+ v
    apply_pinv_t(v)      K^{+T} v
    apply_range_proj(v)  K K^+ v
    solve_ls(rhs)        argmin ||K c - rhs||

Full-rank matrices use a Householder QR. When the condition estimate drops
below ``rcond`` the factorization falls back to a truncated SVD, which gives
minimum-norm least-squares semantics.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

logger = logging.getLogger(__name__)

DEFAULT_RCOND = 1e-14


class RankWarning(UserWarning):
    pass


class NumericalBreakdown(ArithmeticError):
    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class LsFactorization:
    def __init__(self, K, rcond: float = DEFAULT_RCOND):
        K = np.asarray(K, dtype=float)
        if K.ndim != 2:
            raise ValueError("K must be a matrix")
        m, n = K.shape
        if m < n:
            raise ValueError(f"least-squares factorization needs rows >= cols, got {K.shape}")
        self.shape = (m, n)
        self.rcond_threshold = rcond
        self.method = "qr"
        self._Q = self._R = self._U = self._s = self._Vt = None
        if n == 0:
            self._Q, self._R = np.zeros((m, 0)), np.zeros((0, 0))
            self.rcond = 1.0
            self.rank = 0
            return
        Q, R = sla.qr(K, mode="economic", overwrite_a=False, check_finite=True)
        rc, info = lapack.dtrcon(R, norm="1", uplo="U", diag="N")
        if info != 0:
            raise ValueError(f"dtrcon failed with info={info}")
        if rc >= rcond and np.all(np.diag(R) != 0):
            self._Q, self._R = Q, R
            self.rcond = float(rc)
            self.rank = n
            return
        del Q, R
        U, s, Vt = sla.svd(K, full_matrices=False, lapack_driver="gesdd")
        self.rcond = float(s[-1] / s[0]) if s[0] > 0 else 0.0
        keep = s > rcond * s[0]
        self.rank = int(keep.sum())
        warnings.warn(
            f"ill-conditioned block {K.shape}: sigma_min/sigma_max = {self.rcond:.3e}, "
            f"using rank {self.rank} minimum-norm solve",
            RankWarning,
            stacklevel=2,
        )
        self.method = "svd"
        self._U, self._s, self._Vt = U[:, keep], s[keep], Vt[keep]

    def _check(self, v, dim):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != dim:
            raise ValueError(f"dimension mismatch: expected leading size {dim}, got {v.shape}")
        return v

    @property
    def orth(self) -> np.ndarray:
        """Orthonormal basis of range(K): ``Q`` or the kept left singular vectors."""
        return self._Q if self.method == "qr" else self._U

    def core_solve(self, qv):
        """Map ``orth^T v`` to ``K^+ v``."""
        if self.method == "qr":
            return sla.solve_triangular(self._R, qv, check_finite=False)
        return self._Vt.T @ _scale_rows(qv, 1 / self._s)

    def core_solve_t(self, z):
        """Map ``z`` to ``w`` with ``K^{+T} z = orth @ w``."""
        if self.method == "qr":
            return sla.solve_triangular(self._R, z, trans="T", check_finite=False)
        return _scale_rows(self._Vt @ z, 1 / self._s)

    def apply_pinv(self, v):
        v = self._check(v, self.shape[0])
        return self.core_solve(self.orth.T @ v)

    def apply_pinv_t(self, v):
        v = self._check(v, self.shape[1])
        return self.orth @ self.core_solve_t(v)

    def apply_range_proj(self, v):
        v = self._check(v, self.shape[0])
        Q = self.orth
        return Q @ (Q.T @ v)

    def solve_ls(self, rhs):
        return self.apply_pinv(rhs)

    @property
    def sigma_ratio(self) -> float:
        """sigma_min/sigma_max (exact for the SVD path, 1-norm estimate for QR)."""
        return self.rcond


def _scale_rows(a, d):
    return a * d if a.ndim == 1 else a * d[:, None]


def factorize_ls(K, rcond: float = DEFAULT_RCOND) -> LsFactorization:
    return LsFactorization(K, rcond)


@dataclass
class CgReport:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    restarts: int = 0
    history: list = field(default_factory=list, repr=False)


def cg(op, rhs, tol=1e-9, max_iter=None, x0=None, *, stall_window=50, max_restarts=1,
       callback=None) -> CgReport:
    """Unpreconditioned conjugate gradients on ``op(x) = rhs``.

    Stops when the true relative residual ``||rhs - op(x)|| / ||rhs||`` is at
    most ``tol``. A plateau (the mean log residual of the last ``stall_window``
    iterations is no lower than that of the window before) or a recursive/true
    residual disagreement triggers a restart from the current iterate, at most
    ``max_restarts`` times. Window means rather than running minima are used
    because CG residuals oscillate on ill-conditioned systems while the energy
    error still falls. ``callback(k, x)`` sees every iterate.
    """
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = max(5 * n, 1)
    bnorm = np.linalg.norm(b)
    history = []
    if bnorm == 0:
        return CgReport(np.zeros(n), 0, 0.0, True, 0, history)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - op(x) if x0 is not None else b.copy()
    restarts = 0
    it = 0
    while True:
        p = r.copy()
        rr = r @ r
        logs = [np.log(max(np.sqrt(rr) / bnorm, 1e-300))]
        history.append(np.sqrt(rr) / bnorm)
        stalled = False
        while it < max_iter and np.sqrt(rr) / bnorm > tol:
            q = op(p)
            pq = p @ q
            if not np.isfinite(pq) or not np.all(np.isfinite(q)):
                raise NumericalBreakdown("non-finite operator output", it)
            if pq <= 0:
                logger.warning("cg: non-positive curvature %.3e at iteration %d", pq, it)
                stalled = True
                break
            alpha = rr / pq
            x += alpha * p
            r -= alpha * q
            rr_new = r @ r
            if not np.isfinite(rr_new):
                raise NumericalBreakdown("non-finite residual", it)
            p *= rr_new / rr
            p += r
            rr = rr_new
            it += 1
            rel = np.sqrt(rr) / bnorm
            history.append(rel)
            if callback is not None:
                callback(it, x)
            logs.append(np.log(max(rel, 1e-300)))
            if len(logs) >= 2 * stall_window and len(logs) % stall_window == 0:
                recent = np.mean(logs[-stall_window:])
                before = np.mean(logs[-2 * stall_window:-stall_window])
                if recent >= before:
                    stalled = True
                    break
        r = b - op(x)
        true_rel = np.linalg.norm(r) / bnorm
        if true_rel <= tol:
            return CgReport(x, it, float(true_rel), True, restarts, history)
        if it >= max_iter or restarts >= max_restarts:
            return CgReport(x, it, float(true_rel), False, restarts, history)
        if not stalled:
            logger.info("cg: recursive residual converged but true residual %.3e > tol", true_rel)
        restarts += 1


def lanczos_ritz(op, n: int, steps: int = 30, rng=None) -> np.ndarray:
    """Ritz values of a symmetric operator after ``steps`` Lanczos steps.

    Full reorthogonalization keeps the estimates clean at this size; the
    extremes approximate the operator's extreme eigenvalues.
    """
    if n == 0:
        return np.zeros(0)
    rng = np.random.default_rng(rng)
    steps = min(steps, n)
    V = np.zeros((steps + 1, n))
    alpha, beta = np.zeros(steps), np.zeros(steps)
    v = rng.standard_normal(n)
    V[0] = v / np.linalg.norm(v)
    m = steps
    for j in range(steps):
        w = np.asarray(op(V[j]), dtype=float)
        alpha[j] = V[j] @ w
        w -= V[: j + 1].T @ (V[: j + 1] @ w)
        w -= V[: j + 1].T @ (V[: j + 1] @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] <= 1e-14 * max(abs(alpha[: j + 1]).max(), 1e-300):
            m = j + 1
            break
        V[j + 1] = w / beta[j]
    return sla.eigh_tridiagonal(alpha[:m], beta[: m - 1], eigvals_only=True)
