"""Rectangular nonoverlapping decompositions and collocation lattices.

The domain is a rectangle split into an ``N_x x N_y`` grid of equal tiles.
Collocation points live on a uniform ``(2**k + 1) x (2**k + 1)`` lattice whose
lines include every tile edge, so classification is done on integer lattice
indices and never on floating point comparisons.

Subdomains are numbered row-major with x varying fastest:
``s = iy * N_x + ix``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[lo, hi]``."""

    lo: tuple[float, float]
    hi: tuple[float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != 2 or len(hi) != 2:
            raise ValueError("Rect needs 2-vectors")
        if not (lo[0] < hi[0] and lo[1] < hi[1]):
            raise ValueError(f"Rect requires lo < hi componentwise, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def size(self) -> np.ndarray:
        return np.subtract(self.hi, self.lo)

    @property
    def diam(self) -> float:
        return float(np.hypot(*self.size))

    @property
    def area(self) -> float:
        w, h = self.size
        return float(w * h)

    def distance(self, points) -> np.ndarray:
        """Euclidean distance from each point to the closed rectangle."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        d = np.maximum(np.maximum(np.subtract(self.lo, p), np.subtract(p, self.hi)), 0.0)
        return np.hypot(d[:, 0], d[:, 1])

    def contains(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)


UNIT_SQUARE = Rect((0.0, 0.0), (1.0, 1.0))


def decompose(domain: Rect, grid: tuple[int, int]) -> list[Rect]:
    """Split ``domain`` into ``grid = (N_x, N_y)`` equal tiles, row-major."""
    nx, ny = _check_grid(grid)
    xs = np.linspace(domain.lo[0], domain.hi[0], nx + 1)
    ys = np.linspace(domain.lo[1], domain.hi[1], ny + 1)
    return [
        Rect((xs[ix], ys[iy]), (xs[ix + 1], ys[iy + 1]))
        for iy in range(ny)
        for ix in range(nx)
    ]


def _check_grid(grid) -> tuple[int, int]:
    try:
        nx, ny = (int(g) for g in grid)
    except (TypeError, ValueError):
        raise ValueError(f"grid must be a pair of integers, got {grid!r}") from None
    if nx < 1 or ny < 1:
        raise ValueError(f"grid dimensions must be >= 1, got {grid!r}")
    return nx, ny


@dataclass(frozen=True)
class Face:
    """Segment shared by two grid-adjacent subdomains.

    ``minus`` is the subdomain on the low side along ``axis``; its outward
    normal on the face is ``+e_axis`` and ``plus`` sees ``-e_axis``.
    ``points`` holds global interface indices, ordered along the face.
    """

    id: int
    axis: int
    minus: int
    plus: int
    points: np.ndarray
    flux_offset: int

    def normal(self, s: int) -> np.ndarray:
        n = np.zeros(2)
        if s == self.minus:
            n[self.axis] = 1.0
        elif s == self.plus:
            n[self.axis] = -1.0
        else:
            raise ValueError(f"subdomain {s} is not adjacent to face {self.id}")
        return n


@dataclass(frozen=True)
class Subdomain:
    """Collocation data owned by one tile.

    ``gamma_index[i]`` is the global interface index of ``interface[i]``.
    Flux rows follow the corner rule: a cross point appears once per incident
    face, each time with that face's outward normal.
    """

    id: int
    rect: Rect
    interior: np.ndarray
    boundary: np.ndarray
    interface: np.ndarray
    gamma_index: np.ndarray
    flux_points: np.ndarray
    flux_normals: np.ndarray
    flux_index: np.ndarray
    faces: tuple[int, ...]

    @property
    def m_i(self) -> int:
        return len(self.interior)

    @property
    def m_b(self) -> int:
        return len(self.boundary)

    @property
    def m_gamma(self) -> int:
        return len(self.interface)


@dataclass(frozen=True)
class SubdomainLayout:
    domain: Rect
    grid: tuple[int, int]
    k: int
    subdomains: tuple[Subdomain, ...]
    interface_points: np.ndarray
    interface_index: dict = field(repr=False)
    faces: tuple[Face, ...]
    n_flux_rows: int

    @property
    def n_subdomains(self) -> int:
        return len(self.subdomains)

    @property
    def n_interface(self) -> int:
        return len(self.interface_points)

    @property
    def rects(self) -> list[Rect]:
        return [sd.rect for sd in self.subdomains]

    @property
    def lattice_size(self) -> int:
        return (2**self.k + 1) ** 2

    def flux_row(self, face_id: int, j: int) -> int:
        """Global flux-row index of the ``j``-th point on face ``face_id``."""
        face = self.faces[face_id]
        if not 0 <= j < len(face.points):
            raise IndexError(j)
        return face.flux_offset + j

    def owner(self, points) -> np.ndarray:
        """Subdomain id owning each point; ties on tile edges go to the lower id."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        nx, ny = self.grid
        rel = (p - self.domain.lo) / self.domain.size
        ix = np.clip(np.floor(rel[:, 0] * nx).astype(int), 0, nx - 1)
        iy = np.clip(np.floor(rel[:, 1] * ny).astype(int), 0, ny - 1)
        # a point on an internal tile edge snaps down to the lower tile
        ix = np.where((ix > 0) & np.isclose(rel[:, 0] * nx, ix), ix - 1, ix)
        iy = np.where((iy > 0) & np.isclose(rel[:, 1] * ny, iy), iy - 1, iy)
        return iy * nx + ix


def generate_points(domain: Rect, grid: tuple[int, int], k: int) -> SubdomainLayout:
    """Build the ``(2**k+1)**2`` lattice and classify it per subdomain.

    A lattice point on the outer boundary is a boundary point of every tile
    that contains it. Other points on a tile edge are interface points and are
    replicated into each tile that touches them.
    """
    nx, ny = _check_grid(grid)
    k = int(k)
    if k < 1:
        raise ValueError(f"lattice exponent must be >= 1, got {k}")
    M = 2**k
    if M % nx or M % ny:
        raise ValueError(f"grid {grid} does not divide the 2**{k} lattice")
    px, py = M // nx, M // ny
    lo = np.asarray(domain.lo)
    h = domain.size / M

    def coords(ij):
        return lo + np.asarray(ij, dtype=float).reshape(-1, 2) * h

    # global interface points: off the outer boundary and on some tile edge
    I, J = np.meshgrid(np.arange(M + 1), np.arange(M + 1), indexing="ij")
    on_outer = (I == 0) | (I == M) | (J == 0) | (J == M)
    on_edge = (I % px == 0) | (J % py == 0)
    gmask = on_edge & ~on_outer
    # meshgrid with indexing="ij" flattened in C order is lexicographic in (i, j)
    gij = np.column_stack([I[gmask], J[gmask]])
    interface_index = {(int(i), int(j)): g for g, (i, j) in enumerate(gij)}

    faces = []
    flux_offset = 0
    # vertical faces (normal along x), then horizontal faces (normal along y)
    for iy in range(ny):
        for ix in range(nx - 1):
            i = (ix + 1) * px
            js = [j for j in range(iy * py, (iy + 1) * py + 1) if 0 < j < M]
            pts = np.array([interface_index[(i, j)] for j in js], dtype=int)
            faces.append(Face(len(faces), 0, iy * nx + ix, iy * nx + ix + 1, pts, flux_offset))
            flux_offset += len(pts)
    for iy in range(ny - 1):
        for ix in range(nx):
            j = (iy + 1) * py
            is_ = [i for i in range(ix * px, (ix + 1) * px + 1) if 0 < i < M]
            pts = np.array([interface_index[(i, j)] for i in is_], dtype=int)
            faces.append(Face(len(faces), 1, iy * nx + ix, (iy + 1) * nx + ix, pts, flux_offset))
            flux_offset += len(pts)

    rects = decompose(domain, (nx, ny))
    subdomains = []
    for s, rect in enumerate(rects):
        ix, iy = s % nx, s // nx
        i0, i1, j0, j1 = ix * px, (ix + 1) * px, iy * py, (iy + 1) * py
        Is, Js = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1), indexing="ij")
        Is, Js = Is.ravel(), Js.ravel()
        outer = (Is == 0) | (Is == M) | (Js == 0) | (Js == M)
        edge = (Is == i0) | (Is == i1) | (Js == j0) | (Js == j1)
        bnd = outer
        gam = edge & ~outer
        inn = ~edge
        gam_ij = np.column_stack([Is[gam], Js[gam]])
        gamma_index = np.array([interface_index[(int(i), int(j))] for i, j in gam_ij], dtype=int)

        incident = [f for f in faces if s in (f.minus, f.plus)]
        fpts, fnrm, fidx = [], [], []
        for f in incident:
            fpts.append(f.points)
            fnrm.append(np.tile(f.normal(s), (len(f.points), 1)))
            fidx.append(f.flux_offset + np.arange(len(f.points)))
        if incident:
            fpts = gij[np.concatenate(fpts)]
            fnrm = np.concatenate(fnrm)
            fidx = np.concatenate(fidx)
        else:
            fpts, fnrm, fidx = np.zeros((0, 2), int), np.zeros((0, 2)), np.zeros(0, int)

        subdomains.append(
            Subdomain(
                id=s,
                rect=rect,
                interior=coords(np.column_stack([Is[inn], Js[inn]])),
                boundary=coords(np.column_stack([Is[bnd], Js[bnd]])),
                interface=coords(gam_ij),
                gamma_index=gamma_index,
                flux_points=coords(fpts),
                flux_normals=fnrm,
                flux_index=fidx.astype(int),
                faces=tuple(f.id for f in incident),
            )
        )

    return SubdomainLayout(
        domain=domain,
        grid=(nx, ny),
        k=k,
        subdomains=tuple(subdomains),
        interface_points=coords(gij),
        interface_index=interface_index,
        faces=tuple(faces),
        n_flux_rows=flux_offset,
    )


def sample_collar(rect: Rect, r: float, rng: np.random.Generator, size: int | None = None):
    """Uniform samples from ``{x : dist(x, rect) <= r}``.

    Rejection sampling from the bounding box ``[lo - r, hi + r]``. Returns a
    2-vector when ``size`` is None, else a ``(size, 2)`` array.
    """
    if r < 0:
        raise ValueError(f"collar radius must be >= 0, got {r}")
    n = 1 if size is None else int(size)
    lo = np.subtract(rect.lo, r)
    hi = np.add(rect.hi, r)
    out = np.empty((n, 2))
    filled = 0
    # acceptance ratio is at least pi/4 (r >> tile) so batches stay small
    while filled < n:
        need = n - filled
        cand = rng.uniform(lo, hi, size=(max(2 * need, 16), 2))
        cand = cand[rect.distance(cand) <= r][:need]
        out[filled:filled + len(cand)] = cand
        filled += len(cand)
    return out[0] if size is None else out
