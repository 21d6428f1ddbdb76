"""Hermite spline bases and differentiable field reconstruction.

The basis of order L consists of L+1 compactly supported piecewise
polynomials h_l on z in [-1, 1], each of degree 2L+1 per piece, fixed
by the interpolation conditions

    d^j h_l / dz^j (0)   = delta_{jl}   for j, l in 0..L
    d^j h_l / dz^j (+-1) = 0            for j in 0..L

so a coefficient grid carries nodal derivative data and the spline
vanishes (with all matched derivatives) at cell boundaries.

Coefficient convention: channel l of a SplineField stores the l-th
spatial derivative in physical units, c^l[n] = f^(l)(x_n).  The
expansion on cell [x_n, x_{n+1}] is

    f(x) = sum_l h^l * ( c^l[n] h_l(z) + c^l[n+1] h_l(z - 1) ),  z = (x - x_n)/h,

which makes the coefficient target independent of the grid spacing; the
h^l channel factor and the h^{-d} chain-rule factor of a d-th
derivative are both applied by ``reconstruct``.  In 2D the basis is the
tensor product of two 1D bases and channel (l, m) stores the mixed
derivative d_x^l d_y^m f.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from numpy.polynomial import polynomial as npoly

from . import autodiff as ad

_SUPPORTED_ORDERS = (1, 2)
_BASIS_CACHE: dict[int, "HermiteBasis"] = {}


class HermiteBasis:
    """Immutable piecewise-polynomial Hermite basis of order L."""

    __slots__ = ("L", "_left", "_right")

    def __init__(self, L: int, left: np.ndarray, right: np.ndarray):
        self.L = L
        self._left = left    # [L+1, 2L+2] power coefficients on [-1, 0]
        self._right = right  # [L+1, 2L+2] power coefficients on [0, 1]

    def evaluate(self, l: int, d: int, z) -> np.ndarray:
        """d-th derivative of h_l at z; the piece at z = 0 is the right one.

        Points with |z| > 1 evaluate to zero (compact support).
        """
        if not 0 <= l <= self.L:
            raise ValueError(f"channel {l} outside 0..{self.L}")
        if not 0 <= d <= 2 * self.L + 1:
            raise ValueError(f"derivative order {d} beyond polynomial smoothness")
        z = np.asarray(z, dtype=np.float64)
        left = npoly.polyval(z, npoly.polyder(self._left[l], d) if d else self._left[l])
        right = npoly.polyval(z, npoly.polyder(self._right[l], d) if d else self._right[l])
        out = np.where(z < 0.0, left, right)
        return np.where(np.abs(z) > 1.0, 0.0, out)


def _solve_piece(L: int, l: int, z_end: float) -> np.ndarray:
    # degree 2L+1 polynomial with p^(j)(0) = delta_{jl}, p^(j)(z_end) = 0
    n = 2 * L + 2
    A = np.zeros((n, n))
    b = np.zeros(n)
    row = 0
    for j in range(L + 1):
        for k in range(j, n):
            A[row, k] = factorial(k) // factorial(k - j) * (0.0 ** (k - j) if k > j else 1.0)
        b[row] = 1.0 if j == l else 0.0
        row += 1
    for j in range(L + 1):
        for k in range(j, n):
            A[row, k] = factorial(k) // factorial(k - j) * z_end ** (k - j)
        row += 1
    coeffs = np.linalg.solve(A, b)
    coeffs[np.abs(coeffs) < 1e-12] = 0.0
    return coeffs


def build_basis(L: int) -> HermiteBasis:
    if L not in _SUPPORTED_ORDERS:
        raise ValueError(f"unsupported spline order {L}; expected one of {_SUPPORTED_ORDERS}")
    cached = _BASIS_CACHE.get(L)
    if cached is not None:
        return cached
    right = np.stack([_solve_piece(L, l, 1.0) for l in range(L + 1)])
    left = np.stack([_solve_piece(L, l, -1.0) for l in range(L + 1)])
    basis = HermiteBasis(L, left, right)
    _BASIS_CACHE[L] = basis
    return basis


def derivative_kernel(basis: HermiteBasis, d: int, h: float,
                      samples_per_cell: int = 1) -> np.ndarray:
    """Discrete per-channel kernels of the d-th derivative.

    Returns K[l, tap, j] = h^{-d} * d^d h_l/dz^d at z = j/s (tap 0, the
    cell's left node) and z = j/s - 1 (tap 1, its right node), for
    j = 0..s-1.  A node's influence therefore spans only its two
    adjacent cells.  Exact zeros from the vanishing conditions are
    snapped so callers can skip dead taps.
    """
    if not 0 <= d <= 2 * basis.L:
        raise ValueError(f"derivative order {d} beyond polynomial smoothness")
    if h <= 0.0:
        raise ValueError("spacing must be positive")
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be >= 1")
    s = samples_per_cell
    zr = np.arange(s) / s
    zl = zr - 1.0
    K = np.empty((basis.L + 1, 2, s))
    for l in range(basis.L + 1):
        K[l, 0] = basis.evaluate(l, d, zr)
        K[l, 1] = basis.evaluate(l, d, zl)
    K[np.abs(K) < 1e-13 * max(1.0, np.max(np.abs(K)))] = 0.0
    return K * h ** (-d)


@dataclass
class SplineField:
    """Coefficient grid [batch, (L+1)^dim, nodes...] plus geometry."""

    coeffs: ad.Tensor
    spacing: tuple
    boundary: str = "periodic"
    order: int = 2

    def __post_init__(self):
        if isinstance(self.spacing, (int, float)):
            self.spacing = (float(self.spacing),)
        self.spacing = tuple(float(h) for h in self.spacing)
        dim = self.coeffs.ndim - 2
        if dim != len(self.spacing):
            raise ValueError(f"{dim}-d coefficients with {len(self.spacing)} spacings")
        if dim not in (1, 2):
            raise ValueError("only 1D and 2D fields are supported")
        if self.boundary not in ("periodic", "clamped"):
            raise ValueError(f"unsupported boundary mode {self.boundary!r}")
        expected = (self.order + 1) ** dim
        if self.coeffs.shape[1] != expected:
            raise ValueError(
                f"order {self.order} in {dim}D needs {expected} channels, "
                f"got {self.coeffs.shape[1]}")
        if any(h <= 0 for h in self.spacing):
            raise ValueError("spacing must be positive")

    @property
    def dim(self) -> int:
        return self.coeffs.ndim - 2


def _neighbor(x: ad.Tensor, axis: int, boundary: str) -> ad.Tensor:
    # value at node n+1 aligned to position n
    if boundary == "periodic":
        return ad.roll(x, -1, axis)
    return ad.shift_zero(x, -1, axis)


def reconstruct(field: SplineField, d, samples_per_cell: int = 1) -> ad.Tensor:
    """Field derivative values on the sample grid, differentiable in coeffs.

    ``d`` is the derivative order (an int in 1D, a pair in 2D), each
    entry at most 2L.  With s = samples_per_cell the output covers every
    cell at offsets j/s, giving N*s points per axis; node-centred
    evaluation is s = 1.  Clamped fields zero-extend their coefficients,
    so trailing samples of the last cell read the extension.
    """
    L = field.order
    basis = build_basis(L)
    dim = field.dim
    if isinstance(d, int):
        d = (d,) * dim if dim == 1 else None
    if d is None or len(d) != dim:
        raise ValueError("derivative order must match field dimension")
    s = samples_per_cell
    coeffs = field.coeffs
    batch = coeffs.shape[0]
    nodes = coeffs.shape[2:]

    # per-axis kernels with the h^l channel factor folded in
    kernels = []
    for ax in range(dim):
        K = derivative_kernel(basis, d[ax], field.spacing[ax], s)
        K = K * (field.spacing[ax] ** np.arange(L + 1))[:, None, None]
        kernels.append(K)

    taken: dict[int, ad.Tensor] = {}
    shifted: dict[tuple, ad.Tensor] = {}

    def channel(c_idx: int) -> ad.Tensor:
        t = taken.get(c_idx)
        if t is None:
            t = ad.take(coeffs, (slice(None), c_idx))
            taken[c_idx] = t
        return t

    def tapped(c_idx: int, taps: tuple) -> ad.Tensor:
        key = (c_idx,) + taps
        t = shifted.get(key)
        if t is None:
            t = channel(c_idx)
            for ax, tap in enumerate(taps):
                if tap:
                    t = _neighbor(t, 1 + ax, field.boundary)
            shifted[key] = t
        return t

    def zeros_like_sample():
        return ad.constant(np.zeros((batch,) + nodes))

    if dim == 1:
        Kx = kernels[0]
        parts = []
        for j in range(s):
            acc = None
            for l in range(L + 1):
                for tap in (0, 1):
                    w = Kx[l, tap, j]
                    if w == 0.0:
                        continue
                    term = ad.scale(tapped(l, (tap,)), w)
                    acc = term if acc is None else ad.add(acc, term)
            parts.append(acc if acc is not None else zeros_like_sample())
        if s == 1:
            return parts[0]
        out = ad.stack(parts, axis=-1)
        return ad.reshape(out, (batch, nodes[0] * s))

    Kx, Ky = kernels
    rows = []
    for jx in range(s):
        cols = []
        for jy in range(s):
            acc = None
            for l in range(L + 1):
                for m in range(L + 1):
                    c_idx = l * (L + 1) + m
                    for tx in (0, 1):
                        wx = Kx[l, tx, jx]
                        if wx == 0.0:
                            continue
                        for ty in (0, 1):
                            w = wx * Ky[m, ty, jy]
                            if w == 0.0:
                                continue
                            term = ad.scale(tapped(c_idx, (tx, ty)), w)
                            acc = term if acc is None else ad.add(acc, term)
            cols.append(acc if acc is not None else zeros_like_sample())
        if s == 1:
            rows.append(cols[0])
        else:
            stacked = ad.stack(cols, axis=-1)  # [B, Nx, Ny, s]
            rows.append(ad.reshape(stacked, (batch, nodes[0], nodes[1] * s)))
    if s == 1:
        return rows[0]
    out = ad.stack(rows, axis=2)  # [B, Nx, s, Ny*s]
    return ad.reshape(out, (batch, nodes[0] * s, nodes[1] * s))
