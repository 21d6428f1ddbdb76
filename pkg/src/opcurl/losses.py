"""Boundary-band and PDE-residual losses, differentiable end to end.

All losses are plain mean squares so they compose linearly; the
combined objective is exactly lam_bd * boundary + lam_res * residual.
Spatial derivatives in the residuals come from the spline head's
coefficient channels except where a spectral path is requested; the
time derivative is the forward difference between snapshots, with the
nonlinear and diffusive terms evaluated at the later snapshot.

Band conventions: the boundary loss covers a band of ``band_width``
cells along every domain edge (both ends in 1D, a frame in 2D) and the
residual losses exclude exactly that band, so the two supervision
regions partition the grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .spectral import WaveGrid
from .spline import SplineField, reconstruct


def _values(x) -> ad.Tensor:
    if isinstance(x, SplineField):
        return reconstruct(x, (0,) * x.dim if x.dim > 1 else 0, 1)
    if isinstance(x, ad.Tensor):
        return x
    return ad.constant(np.asarray(x, dtype=np.float64))


def _band_keys(spatial, b):
    if len(spatial) == 1:
        n, = spatial
        return [(Ellipsis, slice(0, b)), (Ellipsis, slice(n - b, n))]
    n1, n2 = spatial
    return [
        (Ellipsis, slice(0, b), slice(None)),
        (Ellipsis, slice(n1 - b, n1), slice(None)),
        (Ellipsis, slice(b, n1 - b), slice(0, b)),
        (Ellipsis, slice(b, n1 - b), slice(n2 - b, n2)),
    ]


def _interior_key(spatial, b):
    if len(spatial) == 1:
        n, = spatial
        return (Ellipsis, slice(b, n - b))
    n1, n2 = spatial
    return (Ellipsis, slice(b, n1 - b), slice(b, n2 - b))


def _check_band(spatial, b, allow_zero=False):
    if allow_zero and b == 0:
        return
    if b < 1:
        raise ValueError("band_width must be at least 1")
    if any(4 * b > n for n in spatial):
        raise ValueError(f"band {b} exceeds domain {spatial}")


def _mean_square(t: ad.Tensor) -> ad.Tensor:
    return ad.tmean(ad.mul(t, t))


def boundary_band_loss(pred, target, band_width: int) -> ad.Tensor:
    """Mean squared error over the boundary band cells only."""
    p = _values(pred)
    t = _values(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    spatial = p.shape[1:]
    _check_band(spatial, band_width)
    diff = ad.sub(p, t)
    acc = None
    count = 0
    for key in _band_keys(spatial, band_width):
        part = ad.take(diff, key)
        count += part.size
        s = ad.tsum(ad.mul(part, part))
        acc = s if acc is None else ad.add(acc, s)
    return ad.scale(acc, 1.0 / count)


def _restrict(r: ad.Tensor, band_width: int) -> ad.Tensor:
    if band_width == 0:
        return r
    return ad.take(r, _interior_key(r.shape[1:], band_width))


def poisson_residual_loss(field: SplineField, f, band_width: int = 1) -> ad.Tensor:
    """mean |Laplacian psi + f|^2 over the interior (band excluded)."""
    if field.dim != 2:
        raise ValueError("poisson residual needs a 2D field")
    _check_band(field.coeffs.shape[2:], band_width, allow_zero=True)
    lap = ad.add(reconstruct(field, (2, 0), 1), reconstruct(field, (0, 2), 1))
    r = ad.add(lap, _values(f))
    return _mean_square(_restrict(r, band_width))


def burgers_residual_loss(field: SplineField, u0, dt: float, nu: float,
                          band_width: int = 0) -> ad.Tensor:
    """Forward-difference Burgers residual with spatial terms at the
    predicted (later) snapshot: (u - u0)/dt + u u_x - nu u_xx."""
    if field.dim != 1:
        raise ValueError("burgers residual needs a 1D field")
    if dt <= 0:
        raise ValueError("dt must be positive")
    _check_band(field.coeffs.shape[2:], band_width, allow_zero=True)
    u = reconstruct(field, 0, 1)
    ux = reconstruct(field, 1, 1)
    uxx = reconstruct(field, 2, 1)
    dudt = ad.scale(ad.sub(u, _values(u0)), 1.0 / dt)
    r = ad.sub(ad.add(dudt, ad.mul(u, ux)), ad.scale(uxx, nu))
    return _mean_square(_restrict(r, band_width))


def _spectral_mul(x: ad.Tensor, factor: np.ndarray, axes) -> ad.Tensor:
    return ad.real(ad.ifft(ad.mul(ad.fft(x, axes), ad.constant(factor)), axes))


def ns_residual_loss(snapshots, dt: float, nu: float, forcing=None,
                     lengths=None, band_width: int = 0,
                     spline_derivatives: bool = False) -> ad.Tensor:
    """Vorticity-form residual averaged over consecutive snapshot pairs.

    snapshots: sequence of 2D fields (SplineField or [B, N, N] values);
    predicted entries should be SplineFields so gradients flow.  For the
    later snapshot of each pair the residual is

        (w1 - w0)/dt + dealias(u . grad w1) - nu Lap w1 - forcing,

    with velocity from the streamfunction psi = Lap^-1(w1 - mean); the
    mean mode is projected out inside the inversion, which keeps the
    path differentiable. ``spline_derivatives`` switches grad w1 and
    Lap w1 to the spline coefficient channels (the velocity stays
    spectral; there is no local inverse Laplacian).
    """
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    if dt <= 0:
        raise ValueError("dt must be positive")
    vals = [_values(s) for s in snapshots]
    n1, n2 = vals[0].shape[1:]
    _check_band((n1, n2), band_width, allow_zero=True)
    grid = WaveGrid((n1, n2), lengths)
    axes = (-2, -1)
    sym = grid.laplacian_symbol()
    inv_sym = np.zeros_like(sym)
    inv_sym[sym != 0] = 1.0 / sym[sym != 0]
    dx = grid.derivative_factor((1, 0))
    dy = grid.derivative_factor((0, 1))
    mask = grid.dealias_mask().astype(np.float64)
    f = None if forcing is None else _values(forcing)

    acc = None
    for (s1, w0, w1) in zip(snapshots[1:], vals[:-1], vals[1:]):
        wh = ad.fft(w1, axes)
        psi_hat = ad.mul(wh, ad.constant(inv_sym))
        u = ad.real(ad.ifft(ad.mul(psi_hat, ad.constant(dy)), axes))
        v = ad.neg(ad.real(ad.ifft(ad.mul(psi_hat, ad.constant(dx)), axes)))
        if spline_derivatives:
            if not isinstance(s1, SplineField):
                raise ValueError("spline_derivatives needs SplineField snapshots")
            wx = reconstruct(s1, (1, 0), 1)
            wy = reconstruct(s1, (0, 1), 1)
            lap = ad.add(reconstruct(s1, (2, 0), 1), reconstruct(s1, (0, 2), 1))
        else:
            wx = ad.real(ad.ifft(ad.mul(wh, ad.constant(dx)), axes))
            wy = ad.real(ad.ifft(ad.mul(wh, ad.constant(dy)), axes))
            lap = ad.real(ad.ifft(ad.mul(wh, ad.constant(-sym)), axes))
        adv = ad.add(ad.mul(u, wx), ad.mul(v, wy))
        adv = _spectral_mul(adv, mask, axes)
        r = ad.sub(ad.add(ad.scale(ad.sub(w1, w0), 1.0 / dt), adv),
                   ad.scale(lap, nu))
        if f is not None:
            r = ad.sub(r, f)
        term = _mean_square(_restrict(r, band_width))
        acc = term if acc is None else ad.add(acc, term)
    return ad.scale(acc, 1.0 / (len(vals) - 1))


@dataclass
class LossBreakdown:
    boundary: ad.Tensor
    residual: ad.Tensor
    total: ad.Tensor
    lam_bd: float
    lam_res: float

    def floats(self):
        return (self.boundary.item(), self.residual.item(), self.total.item())


def combine(boundary: ad.Tensor, residual: ad.Tensor,
            lam_bd: float, lam_res: float) -> LossBreakdown:
    if lam_bd < 0 or lam_res < 0:
        raise ValueError("loss weights must be non-negative")
    total = ad.add(ad.scale(boundary, lam_bd), ad.scale(residual, lam_res))
    return LossBreakdown(boundary, residual, total, lam_bd, lam_res)


def l2_metric(pred, target) -> ad.Tensor:
    """Mean squared error over everything; works on fields or arrays."""
    p = _values(pred)
    t = _values(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    return _mean_square(ad.sub(p, t))
