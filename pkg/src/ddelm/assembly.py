"""Local collocation blocks for the interface-coupled least-squares system.

Per subdomain ``s`` the unknowns are the output coefficients ``c^s``; the
interface traces are auxiliary unknowns shared between neighbours. Rows of
``K^s`` are grouped as

    [ L phi        at interior points           ]
    [ boundary ops at boundary points (per op)  ]
    [ trace ops    at interface points (per op) ]

and each trace row couples to one global interface unknown with coefficient
-1. Flux rows (normal derivatives on faces) form ``A^s`` and are tagged with
a global flux-row index so that neighbours' rows add up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .basis import MAX_ORDER, BasisParams
from .geometry import SubdomainLayout


@dataclass(frozen=True)
class DiffOp:
    """Linear differential operator ``sum_t coef_t(x, n) * d^{alpha_t}``.

    A coefficient is a constant or a callable ``(points, normals) -> (m,)``.
    """

    terms: tuple
    name: str = ""

    @property
    def order(self) -> int:
        return max(a1 + a2 for _, (a1, a2) in self.terms)

    def rows(self, basis: BasisParams, points, normals=None) -> np.ndarray:
        """Matrix ``(m, n_N)`` of the operator applied to every basis function."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        order = self.order
        if order > MAX_ORDER:
            raise ValueError(f"operator {self.name!r} needs order {order} > {MAX_ORDER}")
        m = len(points)
        if m == 0:
            return np.zeros((0, basis.size))
        sig = basis.sigma_stack(points, order)
        out = np.zeros((m, basis.size))
        for coef, alpha in self.terms:
            wa = basis.weight_power(alpha)
            if callable(coef):
                cv = np.asarray(coef(points, normals), dtype=float)
                out += (cv[:, None] * sig[sum(alpha)]) * wa
            else:
                out += (coef * wa) * sig[sum(alpha)]
        return out

    def apply(self, derivs: dict, points, normals=None) -> np.ndarray:
        """Apply to a function given its partial derivatives ``{alpha: values}``."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        total = np.zeros(len(points))
        for coef, alpha in self.terms:
            c = coef(points, normals) if callable(coef) else coef
            total = total + c * derivs[tuple(alpha)]
        return total


def _nx(points, normals):
    return normals[:, 0]


def _ny(points, normals):
    return normals[:, 1]


def identity():
    return DiffOp(((1.0, (0, 0)),), "u")


def laplacian(scale=1.0):
    return DiffOp(((scale, (2, 0)), (scale, (0, 2))), "lap")


def biharmonic(scale=1.0):
    return DiffOp(((scale, (4, 0)), (2.0 * scale, (2, 2)), (scale, (0, 4))), "bilap")


def normal_derivative():
    return DiffOp(((_nx, (1, 0)), (_ny, (0, 1))), "dn")


def normal_laplacian_derivative():
    return DiffOp(
        ((_nx, (3, 0)), (_nx, (1, 2)), (_ny, (2, 1)), (_ny, (0, 3))),
        "dn_lap",
    )


@dataclass(frozen=True)
class _Field:
    fn: Callable
    sign: float = 1.0
    component: int | None = None

    def __call__(self, points, normals=None):
        v = self.fn(points)
        if self.component is not None:
            v = v[:, self.component]
        return self.sign * v


def variable_diffusion(rho, grad_rho):
    """``-div(rho grad u) = -rho lap u - grad rho . grad u``."""
    return DiffOp(
        (
            (_Field(rho, -1.0), (2, 0)),
            (_Field(rho, -1.0), (0, 2)),
            (_Field(grad_rho, -1.0, 0), (1, 0)),
            (_Field(grad_rho, -1.0, 1), (0, 1)),
        ),
        "div_rho_grad",
    )


@dataclass(frozen=True, eq=False)
class ProblemDef:
    """A linear PDE with Dirichlet-type outer data and its transmission pairs.

    ``traces[t]`` is the quantity whose interface value is unknown block ``t``;
    ``fluxes`` are required to be continuous (sum to zero across a face).
    """

    name: str
    interior: DiffOp
    rhs: Callable
    boundary: tuple
    traces: tuple
    fluxes: tuple
    exact: Callable | None = None
    exact_grad: Callable | None = None
    diffusion: Callable | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.boundary or not self.traces or not self.fluxes:
            raise ValueError("problem needs boundary, trace and flux operators")


@dataclass(eq=False)
class LocalBlocks:
    """Discrete blocks of one subdomain.

    ``interface_map[i]`` is the global unknown coupled (coefficient -1) to row
    ``trace_rows[i]`` of ``K``; unknown ``t*G + g`` is trace kind ``t`` at
    global interface point ``g``. ``flux_index[i]`` is the global flux row of
    ``A[i]``, kind ``f`` occupying rows ``f*n_flux .. (f+1)*n_flux - 1``.
    """

    sid: int
    K: np.ndarray
    F: np.ndarray
    A: np.ndarray
    trace_rows: np.ndarray
    interface_map: np.ndarray
    flux_index: np.ndarray
    row_groups: dict

    @property
    def n_cols(self) -> int:
        return self.K.shape[1]

    def scatter(self, u_gamma) -> np.ndarray:
        """``B^s u``: -u on trace rows, zero elsewhere."""
        v = np.zeros(self.K.shape[0])
        v[self.trace_rows] = -u_gamma[self.interface_map]
        return v

    def gather(self, y, out) -> None:
        """Accumulate ``B^{sT} y`` into the global interface vector ``out``."""
        out[self.interface_map] -= y[self.trace_rows]


def assemble_local(problem: ProblemDef, layout: SubdomainLayout, s: int, basis: BasisParams) -> LocalBlocks:
    sd = layout.subdomains[s]
    if basis.subdomain != s:
        raise ValueError(f"basis belongs to subdomain {basis.subdomain}, not {s}")
    G = layout.n_interface
    blocks, rhs, groups = [], [], {}
    row = 0

    def push(name, mat, vec):
        nonlocal row
        blocks.append(mat)
        rhs.append(vec)
        groups[name] = (row, row + len(mat))
        row += len(mat)

    push("interior", problem.interior.rows(basis, sd.interior), problem.rhs(sd.interior))
    for bi, (op, g) in enumerate(problem.boundary):
        push(f"boundary{bi}", op.rows(basis, sd.boundary), g(sd.boundary))
    trace_rows, imap = [], []
    for t, op in enumerate(problem.traces):
        start = row
        push(f"trace{t}", op.rows(basis, sd.interface), np.zeros(sd.m_gamma))
        trace_rows.append(np.arange(start, row))
        imap.append(t * G + sd.gamma_index)

    A, fidx = [], []
    for f, op in enumerate(problem.fluxes):
        A.append(op.rows(basis, sd.flux_points, sd.flux_normals))
        fidx.append(f * layout.n_flux_rows + sd.flux_index)

    return LocalBlocks(
        sid=s,
        K=np.vstack(blocks),
        F=np.concatenate(rhs).astype(float),
        A=np.vstack(A),
        trace_rows=np.concatenate(trace_rows).astype(int),
        interface_map=np.concatenate(imap).astype(int),
        flux_index=np.concatenate(fidx).astype(int),
        row_groups=groups,
    )


def interface_size(problem: ProblemDef, layout: SubdomainLayout) -> int:
    return len(problem.traces) * layout.n_interface


def flux_size(problem: ProblemDef, layout: SubdomainLayout) -> int:
    return len(problem.fluxes) * layout.n_flux_rows


ORACLE_MAX_COLUMNS = 2000


def global_blocks(blocks: list[LocalBlocks], n_gamma: int, n_flux: int):
    """Dense ``K`` (block diagonal), ``B``, ``A`` and ``F`` of the coupled system."""
    rows = [b.K.shape[0] for b in blocks]
    cols = [b.n_cols for b in blocks]
    ro = np.concatenate([[0], np.cumsum(rows)])
    co = np.concatenate([[0], np.cumsum(cols)])
    K = np.zeros((ro[-1], co[-1]))
    B = np.zeros((ro[-1], n_gamma))
    A = np.zeros((n_flux, co[-1]))
    for i, b in enumerate(blocks):
        K[ro[i]:ro[i + 1], co[i]:co[i + 1]] = b.K
        B[ro[i] + b.trace_rows, b.interface_map] = -1.0
        np.add.at(A, (b.flux_index[:, None], co[i] + np.arange(b.n_cols)[None, :]), b.A)
    F = np.concatenate([b.F for b in blocks])
    return K, B, A, F


def assemble_global_eliminated(blocks: list[LocalBlocks], n_gamma: int, n_flux: int,
                               max_columns=ORACLE_MAX_COLUMNS):
    """Explicit eliminated system ``[[K, B], [0, -A K^+ B]]``, rhs ``[F; -A K^+ F]``.

    Oracle only: ``K^+`` is formed with an SVD pseudo-inverse, independently
    of the factorizations used by the Schur path.
    """
    total = sum(b.n_cols for b in blocks) + n_gamma
    if total > max_columns:
        raise ValueError(f"eliminated oracle limited to {max_columns} columns, got {total}")
    K, B, A, F = global_blocks(blocks, n_gamma, n_flux)
    Kp = sla.block_diag(*[np.linalg.pinv(b.K) for b in blocks])
    AKp = A @ Kp
    top = np.hstack([K, B])
    bottom = np.hstack([np.zeros((n_flux, K.shape[1])), -AKp @ B])
    return np.vstack([top, bottom]), np.concatenate([F, -AKp @ F])
