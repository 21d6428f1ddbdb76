"""Plain-numpy spectral utilities on periodic grids.

Fourier differentiation, 2/3 dealiasing, Gaussian-random-field sampling
and spectral Poisson inversion, shared by the reference solvers, the
residual losses and the diagnostics.  Nothing here records on an
autodiff tape; the loss module builds differentiable counterparts from
the same wavenumber arrays.
"""

from __future__ import annotations

import numpy as np

GENERATOR_ID = "philox4x64"


def rng_for(seed, index: int | None = None) -> np.random.Generator:
    """Counter-based generator; (seed, index) keys independent streams."""
    key = [int(seed), 0 if index is None else int(index) + 1]
    return np.random.Generator(np.random.Philox(key=key))


class WaveGrid:
    """Integer and angular wavenumbers of a uniform periodic grid."""

    def __init__(self, extents, lengths=None):
        if isinstance(extents, int):
            extents = (extents,)
        self.extents = tuple(int(n) for n in extents)
        if lengths is None:
            lengths = (1.0,) * len(self.extents)
        if isinstance(lengths, (int, float)):
            lengths = (float(lengths),) * len(self.extents)
        self.lengths = tuple(float(L) for L in lengths)
        if len(self.lengths) != len(self.extents):
            raise ValueError("one length per axis required")
        # FFT ordering 0, 1, ..., N/2, -N/2+1, ..., -1
        self.k = tuple(np.fft.fftfreq(n, d=1.0 / n) for n in self.extents)
        self.angular = tuple(2.0 * np.pi * k / L
                             for k, L in zip(self.k, self.lengths))

    @property
    def dim(self) -> int:
        return len(self.extents)

    def axis_view(self, ax: int, arr: np.ndarray) -> np.ndarray:
        """Reshape a per-axis 1D array to broadcast over the trailing dims."""
        shape = [1] * self.dim
        shape[ax] = self.extents[ax]
        return arr.reshape(shape)

    def derivative_factor(self, orders) -> np.ndarray:
        """Product of (i * 2 pi k / L)^order; odd orders zero the Nyquist."""
        if isinstance(orders, int):
            orders = (orders,)
        if len(orders) != self.dim:
            raise ValueError("one derivative order per axis required")
        factor = np.ones((1,) * self.dim, dtype=np.complex128)
        for ax, order in enumerate(orders):
            if order == 0:
                continue
            base = (1j * self.angular[ax]) ** order
            n = self.extents[ax]
            if order % 2 == 1 and n % 2 == 0:
                base = base.copy()
                base[n // 2] = 0.0
            factor = factor * self.axis_view(ax, base)
        return factor

    def laplacian_symbol(self) -> np.ndarray:
        """|2 pi k / L|^2, the symbol of -Laplace."""
        sym = np.zeros((1,) * self.dim)
        for ax in range(self.dim):
            sym = sym + self.axis_view(ax, self.angular[ax] ** 2)
        return sym

    def dealias_mask(self) -> np.ndarray:
        mask = np.ones((1,) * self.dim, dtype=bool)
        for ax, n in enumerate(self.extents):
            keep = np.abs(self.k[ax]) <= n // 3
            mask = mask & self.axis_view(ax, keep)
        return mask


def _trailing_axes(grid: WaveGrid, field: np.ndarray):
    return tuple(range(field.ndim - grid.dim, field.ndim))


def spectral_derivative(field: np.ndarray, orders, grid: WaveGrid) -> np.ndarray:
    """Differentiate a real periodic field spectrally; exact when band-limited."""
    axes = _trailing_axes(grid, field)
    spec = np.fft.fftn(field, axes=axes) * grid.derivative_factor(orders)
    return np.fft.ifftn(spec, axes=axes).real


def dealias_two_thirds(spectrum: np.ndarray, grid: WaveGrid) -> np.ndarray:
    """Zero modes with |k| > floor(N/3) on each axis (orthogonal projection)."""
    return spectrum * grid.dealias_mask()


def invert_laplacian(omega: np.ndarray, grid: WaveGrid) -> np.ndarray:
    """Solve -Laplace(psi) = omega spectrally; psi gauge-fixed to zero mean."""
    axes = _trailing_axes(grid, omega)
    mean = omega.mean(axis=axes)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(omega))) if omega.size else 1.0)
    if np.any(np.abs(mean) > tol):
        raise ValueError("vorticity mean exceeds the zero-circulation tolerance")
    sym = grid.laplacian_symbol().copy()
    flat_dc = (0,) * grid.dim
    sym[flat_dc] = 1.0  # avoid 0/0; the DC mode is zeroed below
    spec = np.fft.fftn(omega, axes=axes) / sym
    spec[(Ellipsis,) + flat_dc] = 0.0
    return np.fft.ifftn(spec, axes=axes).real


# ---------------------------------------------------------------------------
# Gaussian random fields


def grf_1d_scale(n: int, tau: float, gamma: float) -> float:
    """Normalization making the pointwise standard deviation exactly one."""
    k = np.arange(1, n // 2 + 1)
    c = ((2.0 * np.pi * k) ** 2 + tau ** 2) ** (-gamma / 2.0)
    total = 2.0 * np.sum(c[:-1]) + c[-1]
    return float(1.0 / np.sqrt(total))


def _check_pow2(n: int):
    if n < 4 or (n & (n - 1)) != 0:
        raise ValueError(f"grid size {n} is not a power of two")


def sample_grf_1d(n: int, tau: float = 5.0, gamma: float = 4.0,
                  seed=0, index: int | None = None) -> np.ndarray:
    """Zero-mean real periodic field with mode variance prop. to
    ((2 pi k)^2 + tau^2)^(-gamma/2), pinned to unit pointwise variance."""
    _check_pow2(n)
    if tau <= 0 or gamma <= 1:
        raise ValueError("need tau > 0 and gamma > 1")
    rng = rng_for(seed, index)
    half = n // 2
    ab = rng.standard_normal(size=(2, half - 1))
    nyq = rng.standard_normal()
    k = np.arange(1, half + 1)
    sigma = grf_1d_scale(n, tau, gamma) * (
        (2.0 * np.pi * k) ** 2 + tau ** 2) ** (-gamma / 4.0)
    spec = np.zeros(n, dtype=np.complex128)
    spec[1:half] = n * sigma[:-1] * (ab[0] + 1j * ab[1]) / np.sqrt(2.0)
    spec[half] = n * sigma[-1] * nyq
    spec[half + 1:] = np.conj(spec[1:half][::-1])
    return np.fft.ifft(spec).real


def sample_grf_2d(n: int, alpha: float = 2.5, tau: float = 7.0,
                  seed=0, index: int | None = None) -> np.ndarray:
    """Zero-mean real periodic 2D field, mode std tau^(alpha-1) *
    (4 pi^2 |k|^2 + tau^2)^(-alpha/2), DC removed."""
    _check_pow2(n)
    if tau <= 0 or alpha <= 1:
        raise ValueError("need tau > 0 and alpha > 1")
    rng = rng_for(seed, index)
    a = rng.standard_normal(size=(n, n))
    b = rng.standard_normal(size=(n, n))
    k = np.fft.fftfreq(n, d=1.0 / n)
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    sigma = tau ** (alpha - 1.0) * (4.0 * np.pi ** 2 * k2 + tau ** 2) ** (-alpha / 2.0)
    sigma[0, 0] = 0.0
    spec = n * n * sigma * (a + 1j * b)
    # Re o ifft averages each mode with its conjugate partner, so the
    # realized per-mode standard deviation is exactly sigma
    return np.fft.ifft2(spec).real
