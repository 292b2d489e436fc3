"""Error norms on a uniform evaluation grid.

Integrals use the composite trapezoid rule on a ``resolution x resolution``
grid, so relative errors do not depend on where the collocation points lie.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import UNIT_SQUARE, Rect

DEFAULT_RESOLUTION = 257


@dataclass(frozen=True)
class ErrorReport:
    l2_rel: float
    h1_rel: float | None
    interface_rmse: float | None
    resolution: int
    h1_kind: str = "full"  # "full": ||e||^2 + ||grad e||^2, both sides


def eval_grid(resolution: int = DEFAULT_RESOLUTION, domain: Rect = UNIT_SQUARE):
    """Grid points (row-major, ``y`` slowest) and matching trapezoid weights."""
    if resolution < 2:
        raise ValueError("evaluation grid needs at least 2 points per side")
    xs = np.linspace(domain.lo[0], domain.hi[0], resolution)
    ys = np.linspace(domain.lo[1], domain.hi[1], resolution)
    wx = np.full(resolution, xs[1] - xs[0])
    wy = np.full(resolution, ys[1] - ys[0])
    wx[[0, -1]] *= 0.5
    wy[[0, -1]] *= 0.5
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(wy, wx).ravel()


def _ratio(num, den):
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return float(np.sqrt(num / den))


def relative_error(u, ref, norm: str = "l2", resolution=DEFAULT_RESOLUTION,
                   domain: Rect = UNIT_SQUARE) -> float:
    """``||u - ref|| / ||ref||`` in ``"l2"`` or ``"h1"``.

    ``u`` and ``ref`` expose ``value(points)``; H1 also needs ``grad(points)``.
    """
    if norm not in ("l2", "h1"):
        raise ValueError(f"unknown norm {norm!r}")
    pts, w = eval_grid(resolution, domain)
    e = u.value(pts) - ref.value(pts)
    num = w @ (e * e)
    r = ref.value(pts)
    den = w @ (r * r)
    if norm == "h1":
        if not hasattr(ref, "grad"):
            raise ValueError("H1 error needs a reference gradient")
        try:
            gr = ref.grad(pts)
        except ValueError as exc:
            raise ValueError("H1 error needs a reference gradient") from exc
        ge = u.grad(pts) - gr
        num += w @ np.sum(ge * ge, axis=1)
        den += w @ np.sum(gr * gr, axis=1)
    return _ratio(num, den)


def interface_rmse(u_gamma_values, exact_values) -> float:
    """Root mean square of ``u_gamma - u_exact`` over the interface points."""
    a = np.asarray(u_gamma_values, dtype=float)
    b = np.asarray(exact_values, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.sqrt(np.mean((a - b) ** 2)))


def error_report(solution, ref, resolution=DEFAULT_RESOLUTION, domain: Rect = UNIT_SQUARE,
                 exact_fn=None) -> ErrorReport:
    """L2, H1 (when ``ref`` has a gradient) and interface RMSE (when ``exact_fn`` is given)."""
    l2 = relative_error(solution, ref, "l2", resolution, domain)
    try:
        h1 = relative_error(solution, ref, "h1", resolution, domain)
    except ValueError:
        h1 = None
    rmse = None
    layout = getattr(solution, "layout", None)
    if exact_fn is not None and layout is not None and layout.n_interface:
        rmse = interface_rmse(solution.u_trace, exact_fn(layout.interface_points))
    return ErrorReport(l2, h1, rmse, resolution)
