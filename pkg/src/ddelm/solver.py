"""Interface Schur-complement solve for domain-decomposed ELMs.

With ``K = diag(K^s)``, ``B`` the trace coupling and ``A`` the flux rows,
the interface unknowns solve

    M u = B^T (I - K K^+ + K^{+T} A^T A K^+) F,
    M   = B^T (I - K K^+ + K^{+T} A^T A K^+) B,

and each subdomain then back-solves ``c^s = K^{s+} (F^s - B^s u)``.

``A K^+`` couples neighbours (a face row receives both sides), so one
application of ``M`` takes two exchange rounds: first every subdomain
contributes ``A^s K^{s+} v_s`` to the global flux vector ``y``, then every
subdomain returns ``B^{sT}(v_s - P_s v_s + K^{s+T} A^{sT} y)``.
Contributions are always reduced in ascending subdomain order so results do
not depend on how subdomains are spread over workers.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .assembly import LocalBlocks, ProblemDef, assemble_global_eliminated, assemble_local, flux_size, interface_size
from .basis import BasisParams, eval_basis
from .geometry import SubdomainLayout
from .linalg import DEFAULT_RCOND, CgReport, LsFactorization, cg

logger = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


class LocalSystem:
    """Factorized blocks of one subdomain and the per-iteration products.

    With ``K^s = Q T`` (``T`` the triangular or singular-value core), the
    flux map ``A^s K^{s+} = W Q^T`` is formed once. Both directions of the
    interface operator reuse the same ``W`` and the trace rows ``H`` of ``Q``,
    so the computed operator stays symmetric however ill-conditioned ``K^s``
    is.
    """

    def __init__(self, blocks: LocalBlocks, n_gamma: int, n_flux: int, rcond=DEFAULT_RCOND):
        self.sid = blocks.sid
        self.blocks = blocks
        self.n_gamma = n_gamma
        self.n_flux = n_flux
        t0 = time.perf_counter()
        self.fact = LsFactorization(blocks.K, rcond)
        Q = self.fact.orth
        self._H = np.ascontiguousarray(Q[blocks.trace_rows])
        self._W = np.ascontiguousarray(self.fact.core_solve_t(blocks.A.T).T)
        self._QtF = Q.T @ blocks.F
        self.t_factorize = time.perf_counter() - t0
        self._trace_v = None
        self._qv = None

    def flux_stage(self, u_gamma=None) -> np.ndarray:
        """Global flux contribution ``A^s K^{s+} v_s``; ``v_s = B^s u`` or ``F^s``."""
        b = self.blocks
        if u_gamma is None:
            self._trace_v = b.F[b.trace_rows]
            self._qv = self._QtF
        else:
            self._trace_v = -u_gamma[b.interface_map]
            self._qv = self._H.T @ self._trace_v
        y = np.zeros(self.n_flux)
        y[b.flux_index] = self._W @ self._qv
        return y

    def interface_stage(self, y) -> np.ndarray:
        """``B^{sT}((I - P_s) v_s + K^{s+T} A^{sT} y)`` for the last ``flux_stage``."""
        if self._qv is None:
            raise RuntimeError("interface_stage called before flux_stage")
        b = self.blocks
        w_tr = self._trace_v + self._H @ (self._W.T @ y[b.flux_index] - self._qv)
        out = np.zeros(self.n_gamma)
        out[b.interface_map] = -w_tr
        return out

    def backsolve(self, u_gamma) -> np.ndarray:
        b = self.blocks
        if len(u_gamma):
            qv = self._QtF + self._H.T @ u_gamma[b.interface_map]
        else:
            qv = self._QtF
        return self.fact.core_solve(qv)

    def info(self) -> dict:
        K = self.blocks.K
        return {
            "sid": self.sid,
            "rows": K.shape[0],
            "cols": K.shape[1],
            "rank": self.fact.rank,
            "rcond": self.fact.rcond,
            "method": self.fact.method,
            "t_factorize": self.t_factorize,
        }


def _reduce(contribs, size):
    total = np.zeros(size)
    for _, vec in sorted(contribs, key=lambda c: c[0]):
        total += vec
    return total


class SerialExecutor:
    """All subdomains in the calling process, visited in ascending id."""

    def __init__(self, problem: ProblemDef, layout: SubdomainLayout, bases: list[BasisParams],
                 rcond=DEFAULT_RCOND):
        self.problem, self.layout, self.bases = problem, layout, bases
        self.rcond = rcond
        self.n_gamma = interface_size(problem, layout)
        self.n_flux = flux_size(problem, layout)
        self.systems = None
        self.subdomain_info = []
        self.messages = {}

    def setup(self):
        self.systems = []
        self.subdomain_info = []
        for s in range(self.layout.n_subdomains):
            t0 = time.perf_counter()
            blocks = assemble_local(self.problem, self.layout, s, self.bases[s])
            t_asm = time.perf_counter() - t0
            sys_ = LocalSystem(blocks, self.n_gamma, self.n_flux, self.rcond)
            self.systems.append(sys_)
            self.subdomain_info.append({**sys_.info(), "t_assemble": t_asm})
        return self.subdomain_info

    def flux_stage(self, u_gamma, iteration=0):
        return [(s.sid, s.flux_stage(u_gamma)) for s in self.systems]

    def interface_stage(self, y, iteration=0):
        return [(s.sid, s.interface_stage(y)) for s in self.systems]

    def backsolve(self, u_gamma):
        return {s.sid: s.backsolve(u_gamma) for s in self.systems}

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SchurOperator:
    """Matrix-free interface operator over an executor's subdomains."""

    def __init__(self, executor):
        self.executor = executor
        self.n_gamma = executor.n_gamma
        self.n_flux = executor.n_flux
        self.matvecs = 0

    def _two_round(self, u_gamma):
        it = self.matvecs
        y = _reduce(self.executor.flux_stage(u_gamma, it), self.n_flux)
        out = _reduce(self.executor.interface_stage(y, it), self.n_gamma)
        self.matvecs += 1
        return out

    def apply(self, u_gamma) -> np.ndarray:
        u = np.asarray(u_gamma, dtype=float)
        if u.shape != (self.n_gamma,):
            raise ValueError(f"expected interface vector of size {self.n_gamma}, got {u.shape}")
        return self._two_round(u)

    __call__ = apply

    def rhs(self) -> np.ndarray:
        return self._two_round(None)


def schur_apply(op: SchurOperator, u_gamma):
    return op.apply(u_gamma)


def schur_rhs(op: SchurOperator):
    return op.rhs()


@dataclass(eq=False)
class Solution:
    """Piecewise network ``u_s = sum_j c^s_j phi^s_j`` plus interface values."""

    layout: SubdomainLayout
    bases: list
    coeffs: list
    u_gamma: np.ndarray
    n_trace_kinds: int = 1

    def evaluate_on(self, s: int, points, deriv=(0, 0)) -> np.ndarray:
        return eval_basis(self.bases[s], points, deriv) @ self.coeffs[s]

    def evaluate(self, points, deriv=(0, 0)) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(len(p))
        owner = self.layout.owner(p)
        for s in np.unique(owner):
            sel = owner == s
            out[sel] = self.evaluate_on(int(s), p[sel], deriv)
        return out

    def value(self, points):
        return self.evaluate(points)

    def grad(self, points):
        return np.column_stack([self.evaluate(points, (1, 0)), self.evaluate(points, (0, 1))])

    @property
    def u_trace(self) -> np.ndarray:
        """Interface values of u (first trace kind)."""
        return self.u_gamma[: self.layout.n_interface]

    def vector(self) -> np.ndarray:
        return np.concatenate([*self.coeffs, self.u_gamma])


@dataclass
class Diagnostics:
    cg_iterations: int | None = None
    cg_residual: float | None = None
    converged: bool = True
    restarts: int = 0
    matvecs: int = 0
    t_setup: float = 0.0
    t_interface: float = 0.0
    t_backsolve: float = 0.0
    t_total: float = 0.0
    n_gamma: int = 0
    subdomains: list = field(default_factory=list)
    messages: dict = field(default_factory=dict)
    cg_history: list = field(default_factory=list, repr=False)

    @property
    def t_solve(self) -> float:
        """Interface solve plus back-solve."""
        return self.t_interface + self.t_backsolve


def solve_ddm(problem: ProblemDef, layout: SubdomainLayout, bases: list[BasisParams], *,
              cg_tol=1e-9, max_iter=None, executor=None, rcond=DEFAULT_RCOND):
    """Three-phase solve: factorize subdomains, CG on the interface, back-solve.

    Returns ``(Solution, Diagnostics)``. Without ``executor`` everything runs
    serially in this process.
    """
    if len(bases) != layout.n_subdomains:
        raise ValueError(f"need {layout.n_subdomains} bases, got {len(bases)}")
    ex = executor if executor is not None else SerialExecutor(problem, layout, bases, rcond)
    diag = Diagnostics(n_gamma=ex.n_gamma)
    t_start = time.perf_counter()
    try:
        diag.subdomains = ex.setup()
        t1 = time.perf_counter()
        diag.t_setup = t1 - t_start

        if ex.n_gamma:
            op = SchurOperator(ex)
            g = op.rhs()
            report: CgReport = cg(op, g, tol=cg_tol, max_iter=max_iter or 5 * ex.n_gamma)
            u = report.x
            diag.cg_iterations = report.iterations
            diag.cg_residual = report.residual
            diag.converged = report.converged
            diag.restarts = report.restarts
            diag.matvecs = op.matvecs
            diag.cg_history = report.history
            if not report.converged:
                warnings.warn(
                    f"interface CG stopped at relative residual {report.residual:.3e} "
                    f"after {report.iterations} iterations (tol {cg_tol:g})",
                    ConvergenceWarning,
                    stacklevel=2,
                )
        else:
            u = np.zeros(0)
        t2 = time.perf_counter()
        diag.t_interface = t2 - t1

        coeffs = ex.backsolve(u)
        t3 = time.perf_counter()
        diag.t_backsolve = t3 - t2
        diag.t_total = t3 - t_start
        diag.messages = dict(getattr(ex, "messages", {}))
    finally:
        if executor is None:
            ex.close()
    sol = Solution(layout, list(bases), [coeffs[s] for s in range(layout.n_subdomains)], u,
                   len(problem.traces))
    return sol, diag


DEFAULT_MAX_COLUMNS = 20000


def solve_monolithic_elm(problem: ProblemDef, layout: SubdomainLayout, basis: BasisParams, *,
                         max_columns=DEFAULT_MAX_COLUMNS, rcond=DEFAULT_RCOND):
    """Plain ELM: one network over the whole domain, one least-squares solve."""
    if layout.n_subdomains != 1:
        raise ValueError("monolithic ELM needs a 1x1 layout")
    if basis.size > max_columns:
        raise MemoryError(f"monolithic ELM limited to {max_columns} columns, got {basis.size}")
    diag = Diagnostics()
    t0 = time.perf_counter()
    blocks = assemble_local(problem, layout, 0, basis)
    t_asm = time.perf_counter() - t0
    sys_ = LocalSystem(blocks, 0, 0, rcond)
    diag.subdomains = [{**sys_.info(), "t_assemble": t_asm}]
    t1 = time.perf_counter()
    diag.t_setup = t1 - t0
    c = sys_.backsolve(np.zeros(0))
    t2 = time.perf_counter()
    diag.t_backsolve = t2 - t1
    diag.t_total = t2 - t0
    return Solution(layout, [basis], [c], np.zeros(0), len(problem.traces)), diag


def solve_oracle(problem: ProblemDef, layout: SubdomainLayout, bases: list[BasisParams]):
    """Dense least-squares solve of the explicitly eliminated system (small cases)."""
    t0 = time.perf_counter()
    blocks = [assemble_local(problem, layout, s, bases[s]) for s in range(layout.n_subdomains)]
    n_gamma, n_flux = interface_size(problem, layout), flux_size(problem, layout)
    M, rhs = assemble_global_eliminated(blocks, n_gamma, n_flux)
    z, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    offsets = np.cumsum([0] + [b.n_cols for b in blocks])
    coeffs = [z[offsets[i]:offsets[i + 1]] for i in range(len(blocks))]
    diag = Diagnostics(n_gamma=n_gamma, t_total=time.perf_counter() - t0)
    return Solution(layout, list(bases), coeffs, z[offsets[-1]:], len(problem.traces)), diag
