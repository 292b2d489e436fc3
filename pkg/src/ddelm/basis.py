"""Random-feature hidden layers: ``phi_j(x) = sigma(w_j . x + b_j)``.

Hidden parameters are drawn once and never trained. Derivatives of ridge
functions are closed form, ``d^alpha phi_j = w_j^alpha * sigma^(|alpha|)``,
and activations provide derivatives up to fourth order (enough for the
biharmonic operator).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Rect, sample_collar

MAX_ORDER = 4


def _tanh_derivs(z, max_order):
    t = np.tanh(z)
    out = [t]
    if max_order >= 1:
        d1 = 1.0 - t * t
        out.append(d1)
    if max_order >= 2:
        d2 = -2.0 * t * d1
        out.append(d2)
    if max_order >= 3:
        d3 = -2.0 * d1 * d1 - 2.0 * t * d2
        out.append(d3)
    if max_order >= 4:
        out.append(-6.0 * d1 * d2 - 2.0 * t * d3)
    return out


def _sin_derivs(z, max_order):
    s, c = np.sin(z), np.cos(z)
    cycle = [s, c, -s, -c]
    return [cycle[k % 4] for k in range(max_order + 1)]


ACTIVATIONS = {"tanh": _tanh_derivs, "sin": _sin_derivs}


def activation_derivs(z, max_order: int = MAX_ORDER, activation: str = "tanh"):
    """Return ``[sigma(z), sigma'(z), ..., sigma^(max_order)(z)]``."""
    if not 0 <= max_order <= MAX_ORDER:
        raise ValueError(f"derivative order must be in 0..{MAX_ORDER}, got {max_order}")
    try:
        fn = ACTIVATIONS[activation]
    except KeyError:
        raise ValueError(f"unknown activation {activation!r}") from None
    return fn(np.asarray(z, dtype=float), max_order)


@dataclass(frozen=True, eq=False)
class BasisParams:
    """Hidden layer of one local network.

    weights: (n_N, 2), biases: (n_N,). ``centers`` records the points
    ``xi_j`` used to place the biases (None for zero-bias schemes).
    """

    weights: np.ndarray
    biases: np.ndarray
    activation: str = "tanh"
    subdomain: int = 0
    centers: np.ndarray | None = None

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        b = np.ascontiguousarray(self.biases, dtype=float)
        if w.ndim != 2 or w.shape[1] != 2 or b.shape != (w.shape[0],):
            raise ValueError(f"inconsistent basis shapes {w.shape}, {b.shape}")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    def preactivation(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return p @ self.weights.T + self.biases

    def sigma_stack(self, points, max_order: int):
        return activation_derivs(self.preactivation(points), max_order, self.activation)

    def weight_power(self, alpha) -> np.ndarray:
        """``w_j^alpha = w_j1**a1 * w_j2**a2`` for each neuron."""
        a1, a2 = alpha
        return self.weights[:, 0] ** a1 * self.weights[:, 1] ** a2


def eval_basis(params: BasisParams, points, deriv=(0, 0)) -> np.ndarray:
    """Matrix of ``d^deriv phi_j(x_i)``, shape (len(points), n_N)."""
    a1, a2 = (int(a) for a in deriv)
    if a1 < 0 or a2 < 0 or a1 + a2 > MAX_ORDER:
        raise ValueError(f"unsupported derivative multi-index {deriv!r}")
    order = a1 + a2
    sig = params.sigma_stack(points, order)[order]
    return sig * params.weight_power((a1, a2))


@dataclass(frozen=True)
class InitSpec:
    """How to draw hidden parameters.

    scheme: ``suggested`` (geometry-aware biases, half-width ``c*sqrt(n)``),
    ``he`` (half-width ``sqrt(2/n_N)``, zero bias) or ``manual`` (half-width
    ``l``, zero bias). ``r=None`` means half the subdomain diameter.
    """

    scheme: str = "suggested"
    c: float = 0.125
    r: float | None = None
    l: float = 1.0
    activation: str = "tanh"

    def __post_init__(self):
        if self.scheme not in ("suggested", "he", "manual"):
            raise ValueError(f"unknown init scheme {self.scheme!r}")
        if self.c <= 0 or self.l <= 0:
            raise ValueError("init constants c and l must be positive")
        if self.r is not None and self.r < 0:
            raise ValueError("collar radius r must be >= 0")


def local_width(n_total: int, n_sub: int) -> int:
    if n_total % n_sub:
        raise ValueError(f"n={n_total} is not divisible by N={n_sub}")
    return n_total // n_sub


def init_suggested(n_total, n_sub, subdomain: Rect, c, r, rng, *, sid=0, activation="tanh"):
    n_local = local_width(n_total, n_sub)
    half = c * math.sqrt(n_total)
    w = rng.uniform(-half, half, size=(n_local, 2))
    xi = sample_collar(subdomain, r, rng, size=n_local)
    b = -np.einsum("ij,ij->i", w, xi)
    return BasisParams(w, b, activation, sid, centers=xi)


def init_he(n_local, rng, *, sid=0, activation="tanh"):
    if n_local < 1:
        raise ValueError("n_N must be >= 1")
    half = math.sqrt(2.0 / n_local)
    w = rng.uniform(-half, half, size=(n_local, 2))
    return BasisParams(w, np.zeros(n_local), activation, sid)


def init_manual(n_local, l, rng, *, sid=0, activation="tanh"):
    if n_local < 1:
        raise ValueError("n_N must be >= 1")
    if l <= 0:
        raise ValueError("half-width l must be positive")
    w = rng.uniform(-l, l, size=(n_local, 2))
    return BasisParams(w, np.zeros(n_local), activation, sid)


def make_basis(spec: InitSpec, n_total: int, rects: list[Rect], s: int, rng) -> BasisParams:
    """Draw the hidden layer of subdomain ``s`` out of ``len(rects)``."""
    N = len(rects)
    n_local = local_width(n_total, N)
    if spec.scheme == "suggested":
        r = rects[s].diam / 2 if spec.r is None else spec.r
        return init_suggested(n_total, N, rects[s], spec.c, r, rng, sid=s, activation=spec.activation)
    if spec.scheme == "he":
        return init_he(n_local, rng, sid=s, activation=spec.activation)
    return init_manual(n_local, spec.l, rng, sid=s, activation=spec.activation)
