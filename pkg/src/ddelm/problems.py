"""Model problems on the unit square and a finite-difference reference solver.

Catalog (see ``build_problem``):

* ``poisson``  -lap u = f with u = sin(2 pi x) exp(y)
* ``grf``      -lap u = grf(x), u = 0 on the boundary
* ``varcoef``  -div(rho grad u) = 1, rho = tanh(grf / std) + 1.1, u = 0
* ``plate``    simply supported Kirchhoff plate, lap^2 u = q / D

``grf`` is a 256-term random sine series approximating a Gaussian random
field whose oscillation is set by ``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RegularGridInterpolator

from .assembly import (
    ProblemDef,
    biharmonic,
    identity,
    laplacian,
    normal_derivative,
    normal_laplacian_derivative,
    variable_diffusion,
)
from .geometry import UNIT_SQUARE, Rect
from .seeding import stream

TWO_PI = 2.0 * math.pi


class UnsupportedProblem(ValueError):
    pass


def _xy(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    return p[:, 0], p[:, 1]


def _zeros(points):
    return np.zeros(len(np.atleast_2d(points)))


def _ones(points):
    return np.ones(len(np.atleast_2d(points)))


@dataclass(frozen=True)
class ExactField:
    """Closed-form field with gradient, usable as an error reference."""

    fn: object
    grad_fn: object = None

    def value(self, points):
        return self.fn(points)

    def grad(self, points):
        if self.grad_fn is None:
            raise ValueError("field has no gradient")
        return self.grad_fn(points)


# --- manufactured Poisson -------------------------------------------------

def poisson_exact(points):
    x, y = _xy(points)
    return np.sin(TWO_PI * x) * np.exp(y)


def poisson_exact_grad(points):
    x, y = _xy(points)
    e = np.exp(y)
    return np.column_stack([TWO_PI * np.cos(TWO_PI * x) * e, np.sin(TWO_PI * x) * e])


def poisson_forcing(points):
    return (4.0 * math.pi**2 - 1.0) * poisson_exact(points)


def poisson_manufactured() -> ProblemDef:
    return ProblemDef(
        name="poisson",
        interior=laplacian(-1.0),
        rhs=poisson_forcing,
        boundary=((identity(), poisson_exact),),
        traces=(identity(),),
        fluxes=(normal_derivative(),),
        exact=poisson_exact,
        exact_grad=poisson_exact_grad,
    )


# --- random fields --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GrfField:
    """``f(x) = sum_i a_i sin(w_i . x + b_i)``."""

    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    alpha: float

    def __call__(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.sin(p @ self.frequencies.T + self.phases) @ self.amplitudes

    def grad(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        c = np.cos(p @ self.frequencies.T + self.phases) * self.amplitudes
        return c @ self.frequencies

    @property
    def std(self) -> float:
        """Pointwise standard deviation implied by the amplitude law."""
        return self.alpha**2 / math.sqrt(2.0)

    def scaled(self, factor: float) -> GrfField:
        return GrfField(self.amplitudes * factor, self.frequencies, self.phases, self.alpha)


def grf_sample(alpha: float, seed, n_terms: int = 256) -> GrfField:
    """Draw ``a ~ N(0, alpha^4/n_terms)``, ``w ~ N(0, alpha^2 I)``, ``b ~ U(0, 2 pi)``.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    a = rng.normal(0.0, alpha**2 / math.sqrt(n_terms), size=n_terms)
    w = rng.normal(0.0, alpha, size=(n_terms, 2))
    b = rng.uniform(0.0, TWO_PI, size=n_terms)
    return GrfField(a, w, b, float(alpha))


def grf_poisson(alpha: float = 16.0, seed: int = 0) -> ProblemDef:
    f = grf_sample(alpha, stream(seed, "grf"))
    return ProblemDef(
        name="grf",
        interior=laplacian(-1.0),
        rhs=f,
        boundary=((identity(), _zeros),),
        traces=(identity(),),
        fluxes=(normal_derivative(),),
        params={"alpha": alpha, "seed": seed},
    )


@dataclass(frozen=True, eq=False)
class Coefficient:
    """``rho = tanh(grf) + 1.1`` with analytic gradient."""

    field: GrfField
    shift: float = 1.1

    def __call__(self, points):
        return np.tanh(self.field(points)) + self.shift

    def grad(self, points):
        t = np.tanh(self.field(points))
        return (1.0 - t * t)[:, None] * self.field.grad(points)


def varcoef_problem(alpha: float = 16.0, seed: int = 0, normalize: bool = True) -> ProblemDef:
    """``-div(rho grad u) = 1`` with ``rho = tanh(grf) + 1.1`` and ``u = 0`` on the boundary.

    ``normalize`` (default) rescales the field inside tanh to unit pointwise
    variance, so rho sweeps (0.1, 2.1) smoothly on the length scale
    ``1/alpha``. With ``normalize=False`` the raw series is used; its variance
    is ``alpha**4 / 2`` and rho becomes a near step function with transition
    layers far thinner than any practical collocation lattice.
    """
    field = grf_sample(alpha, stream(seed, "coefficient"))
    if normalize:
        field = field.scaled(1.0 / field.std)
    rho = Coefficient(field)
    return ProblemDef(
        name="varcoef",
        interior=variable_diffusion(rho, rho.grad),
        rhs=_ones,
        boundary=((identity(), _zeros),),
        traces=(identity(),),
        fluxes=(normal_derivative(),),
        diffusion=rho,
        params={"alpha": alpha, "seed": seed, "normalize": normalize},
    )


# --- plate ------------------------------------------------------------------

@dataclass(frozen=True)
class PlateConstants:
    E: float = 1e7
    H: float = 1e-3
    nu: float = 0.3

    @property
    def D(self) -> float:
        return self.E * self.H**3 / (12.0 * (1.0 - self.nu**2))


@dataclass(frozen=True)
class _PlateSolution:
    D: float

    def __call__(self, points):
        x, y = _xy(points)
        return np.sin(math.pi * x) * np.sin(math.pi * y) / (4.0 * math.pi**4 * self.D)

    def grad(self, points):
        x, y = _xy(points)
        s = math.pi / (4.0 * math.pi**4 * self.D)
        return s * np.column_stack([
            np.cos(math.pi * x) * np.sin(math.pi * y),
            np.sin(math.pi * x) * np.cos(math.pi * y),
        ])


@dataclass(frozen=True)
class _PlateLoad:
    D: float

    def __call__(self, points):
        x, y = _xy(points)
        return np.sin(math.pi * x) * np.sin(math.pi * y) / self.D


def plate_problem(constants: PlateConstants = PlateConstants()) -> ProblemDef:
    D = constants.D
    exact = _PlateSolution(D)
    return ProblemDef(
        name="plate",
        interior=biharmonic(),
        rhs=_PlateLoad(D),
        boundary=((identity(), _zeros), (laplacian(), _zeros)),
        traces=(identity(), laplacian()),
        fluxes=(normal_derivative(), normal_laplacian_derivative()),
        exact=exact,
        exact_grad=exact.grad,
        params={"E": constants.E, "H": constants.H, "nu": constants.nu},
    )


CATALOG = {
    "poisson": lambda **kw: poisson_manufactured(),
    "grf": lambda alpha=16.0, seed=0, **kw: grf_poisson(alpha, seed),
    "varcoef": lambda alpha=16.0, seed=0, normalize=True, **kw: varcoef_problem(alpha, seed, normalize),
    "plate": lambda **kw: plate_problem(),
}


def build_problem(name: str, **params) -> ProblemDef:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)


def exact_reference(problem: ProblemDef):
    if problem.exact is None:
        return None
    return ExactField(problem.exact, problem.exact_grad)


# --- finite-difference reference -------------------------------------------

class FdField:
    """Nodal field on a uniform grid, ``values[iy, ix]``."""

    def __init__(self, values, domain: Rect = UNIT_SQUARE):
        self.values = np.asarray(values, dtype=float)
        self.domain = domain
        ny, nx = self.values.shape
        self.xs = np.linspace(domain.lo[0], domain.hi[0], nx)
        self.ys = np.linspace(domain.lo[1], domain.hi[1], ny)
        dy, dx = np.gradient(self.values, self.ys, self.xs, edge_order=2)
        self._interp = RegularGridInterpolator((self.ys, self.xs), self.values)
        self._gx = RegularGridInterpolator((self.ys, self.xs), dx)
        self._gy = RegularGridInterpolator((self.ys, self.xs), dy)

    def value(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return self._interp(p[:, ::-1])

    def grad(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=float))[:, ::-1]
        return np.column_stack([self._gx(p), self._gy(p)])

    def save(self, prefix) -> None:
        """Write ``prefix.bin`` (row-major little-endian float64) and ``prefix.txt``."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        ny, nx = self.values.shape
        self.values.astype("<f8").tofile(prefix.with_suffix(".bin"))
        lo, hi = self.domain.lo, self.domain.hi
        prefix.with_suffix(".txt").write_text(
            f"nx={nx}\nny={ny}\nlo={lo[0]!r},{lo[1]!r}\nhi={hi[0]!r},{hi[1]!r}\n"
            "dtype=float64-le\norder=row-major,rows=y\n"
        )

    @classmethod
    def load(cls, prefix) -> FdField:
        prefix = Path(prefix)
        meta = dict(
            line.split("=", 1) for line in prefix.with_suffix(".txt").read_text().splitlines() if "=" in line
        )
        nx, ny = int(meta["nx"]), int(meta["ny"])
        lo = tuple(float(v) for v in meta["lo"].split(","))
        hi = tuple(float(v) for v in meta["hi"].split(","))
        vals = np.fromfile(prefix.with_suffix(".bin"), dtype="<f8")
        if vals.size != nx * ny:
            raise ValueError(f"{prefix}: expected {nx * ny} values, found {vals.size}")
        return cls(vals.reshape(ny, nx), Rect(lo, hi))


def fd_reference_solve(problem: ProblemDef, m: int = 257, domain: Rect = UNIT_SQUARE,
                       tol: float = 1e-10) -> FdField:
    """Second-order finite differences for ``-div(rho grad u) = f``, Dirichlet data.

    Constant coefficient gives the 5-point Laplacian; a variable coefficient
    uses the flux form with harmonic means of nodal ``rho`` on cell faces.
    The interior system is solved by Jacobi-preconditioned CG.
    """
    if problem.interior.order != 2 or len(problem.boundary) != 1:
        raise UnsupportedProblem(f"no finite-difference reference for problem {problem.name!r}")
    if m < 3:
        raise ValueError("grid needs at least 3 nodes per side")
    xs = np.linspace(domain.lo[0], domain.hi[0], m)
    ys = np.linspace(domain.lo[1], domain.hi[1], m)
    hx, hy = xs[1] - xs[0], ys[1] - ys[0]
    X, Y = np.meshgrid(xs, ys)  # [iy, ix]
    pts = np.column_stack([X.ravel(), Y.ravel()])
    if problem.diffusion is None:
        rho = np.ones((m, m))
    else:
        rho = problem.diffusion(pts).reshape(m, m)

    def hmean(a, b):
        return 2.0 * a * b / (a + b)

    re = hmean(rho[1:-1, 1:-1], rho[1:-1, 2:]) / hx**2
    rw = hmean(rho[1:-1, 1:-1], rho[1:-1, :-2]) / hx**2
    rn = hmean(rho[1:-1, 1:-1], rho[2:, 1:-1]) / hy**2
    rs = hmean(rho[1:-1, 1:-1], rho[:-2, 1:-1]) / hy**2

    idx = np.arange(m * m).reshape(m, m)
    inner = idx[1:-1, 1:-1]
    bmask = np.ones((m, m), bool)
    bmask[1:-1, 1:-1] = False
    g = np.zeros(m * m)
    g[bmask.ravel()] = problem.boundary[0][1](pts[bmask.ravel()])

    rows = np.concatenate([inner.ravel()] * 5)
    cols = np.concatenate([
        inner.ravel(), idx[1:-1, 2:].ravel(), idx[1:-1, :-2].ravel(),
        idx[2:, 1:-1].ravel(), idx[:-2, 1:-1].ravel(),
    ])
    vals = np.concatenate([(re + rw + rn + rs).ravel(), -re.ravel(), -rw.ravel(), -rn.ravel(), -rs.ravel()])
    full = sp.csr_matrix((vals, (rows, cols)), shape=(m * m, m * m))
    I = inner.ravel()
    A = full[I][:, I].tocsr()
    rhs = problem.rhs(pts[I]) - full[I] @ g

    dinv = 1.0 / A.diagonal()
    M = sp.diags(dinv)
    u, info = spla.cg(A, rhs, rtol=tol, atol=0.0, maxiter=50 * len(I), M=M)
    if info != 0:
        raise RuntimeError(f"finite-difference CG did not converge (info={info})")
    out = g.copy()
    out[I] = u
    return FdField(out.reshape(m, m), domain)
