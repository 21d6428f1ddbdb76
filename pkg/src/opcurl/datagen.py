"""Reference solvers and dataset construction.

Burgers uses an exponential time differencing RK4 scheme whose
coefficient functions are evaluated by a 32-point contour average, so
near-zero linear factors stay accurate.  Navier-Stokes (vorticity form)
uses Crank-Nicolson diffusion with explicit dealiased advection.  Both
work in Fourier space on periodic grids and accept batched initial
conditions along a leading axis.

Datasets are a manifest.json plus one directory per sample of raw
little-endian float64 blobs, so reruns with the same config are
byte-identical.  Samples whose trajectory blows up are skipped and
recorded in the manifest.
"""

from __future__ import annotations

import os

import numpy as np

from . import fsio
from .spectral import (
    GENERATOR_ID,
    WaveGrid,
    sample_grf_1d,
    sample_grf_2d,
)

BLOWUP_LIMIT = 1e6


class BlowupError(RuntimeError):
    pass


def _row_ok(u):
    # u: [S, ...spatial]; finite and bounded per sample
    flat = u.reshape(u.shape[0], -1)
    with np.errstate(invalid="ignore"):
        return np.all(np.isfinite(flat), axis=1) & (np.max(np.abs(flat), axis=1) < BLOWUP_LIMIT)


def _steps(t_end, dt):
    n = int(round(t_end / dt))
    if abs(n * dt - t_end) > 1e-9 * max(1.0, abs(t_end)):
        raise ValueError(f"t_end {t_end} is not a multiple of dt {dt}")
    return n


def burgers_etdrk4(u0, nu, length=2 * np.pi, dt=1e-4, t_end=0.1,
                   save_every=None, strict=True):
    """Integrate u_t + u u_x = nu u_xx on a periodic grid.

    u0: [N] or [S, N].  Returns (times, traj) with traj[S, n_save, N]
    (leading axis squeezed for 1D input).  save_every counts solver
    steps; default saves only the endpoints.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    squeeze = u0.ndim == 1
    u = u0[None] if squeeze else u0
    n = u.shape[-1]
    n_steps = _steps(t_end, dt)
    if save_every is None:
        save_every = max(n_steps, 1)
    if n_steps % save_every != 0:
        raise ValueError("save_every must divide the step count")

    grid = WaveGrid((n,), (length,))
    k = grid.angular[0]
    lin = -nu * k ** 2
    E = np.exp(dt * lin)
    E2 = np.exp(dt * lin / 2)
    m = 32
    r = np.exp(1j * np.pi * (np.arange(1, m + 1) - 0.5) / m)
    LR = dt * lin[:, None] + r[None, :]
    Q = dt * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
    f1 = dt * np.real(np.mean(
        (-4 - LR + np.exp(LR) * (4 - 3 * LR + LR ** 2)) / LR ** 3, axis=1))
    f2 = dt * np.real(np.mean(
        (2 + LR + np.exp(LR) * (-2 + LR)) / LR ** 3, axis=1))
    f3 = dt * np.real(np.mean(
        (-4 - 3 * LR - LR ** 2 + np.exp(LR) * (4 - LR)) / LR ** 3, axis=1))
    g = -0.5j * k * grid.dealias_mask()

    def nonlinear(vh):
        real_u = np.fft.ifft(vh, axis=-1).real
        return g * np.fft.fft(real_u ** 2, axis=-1)

    times = [0.0]
    traj = [u.copy()]
    v = np.fft.fft(u, axis=-1)
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_steps + 1):
            nv = nonlinear(v)
            a = E2 * v + Q * nv
            na = nonlinear(a)
            b = E2 * v + Q * na
            nb = nonlinear(b)
            c = E2 * a + Q * (2 * nb - nv)
            nc = nonlinear(c)
            v = E * v + nv * f1 + 2 * (na + nb) * f2 + nc * f3
            if step % save_every == 0:
                cur = np.fft.ifft(v, axis=-1).real
                if strict and not np.all(_row_ok(cur)):
                    raise BlowupError(f"burgers blow-up at t={step * dt:g}")
                times.append(step * dt)
                traj.append(cur)
    out = np.stack(traj, axis=1)
    return np.array(times), (out[0] if squeeze else out)


def ns_crank_nicolson(w0, nu, forcing=None, length=1.0, dt=1e-3, t_end=1.0,
                      save_every=None, strict=True):
    """Integrate vorticity w_t + u . grad w = nu Lap w + f, periodic.

    w0: [N, N] or [S, N, N] with zero spatial mean.  Diffusion is
    treated implicitly at the half step, advection explicitly with 2/3
    dealiasing; the advection mean mode is projected out so mean(w)
    stays exactly zero.
    """
    w0 = np.asarray(w0, dtype=np.float64)
    squeeze = w0.ndim == 2
    w = w0[None] if squeeze else w0
    n = w.shape[-1]
    means = np.abs(w.reshape(w.shape[0], -1).mean(axis=1))
    if np.any(means > 1e-10 * max(1.0, np.max(np.abs(w)))):
        raise ValueError("initial vorticity must have zero mean")
    n_steps = _steps(t_end, dt)
    if save_every is None:
        save_every = max(n_steps, 1)
    if n_steps % save_every != 0:
        raise ValueError("save_every must divide the step count")

    grid = WaveGrid((n, n), (length, length))
    sym = grid.laplacian_symbol()
    inv_sym = np.zeros_like(sym)
    inv_sym[sym != 0] = 1.0 / sym[sym != 0]
    dx = grid.derivative_factor((1, 0))
    dy = grid.derivative_factor((0, 1))
    mask = grid.dealias_mask()
    denom = 1.0 + 0.5 * dt * nu * sym
    numer = 1.0 - 0.5 * dt * nu * sym
    axes = (-2, -1)
    if forcing is not None:
        fh = np.fft.fft2(np.asarray(forcing, dtype=np.float64), axes=axes)
        fh[0, 0] = 0.0
    else:
        fh = None

    times = [0.0]
    traj = [w.copy()]
    wh = np.fft.fft2(w, axes=axes)
    wh[..., 0, 0] = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_steps + 1):
            psi_h = wh * inv_sym
            u = np.fft.ifft2(psi_h * dy, axes=axes).real
            v = -np.fft.ifft2(psi_h * dx, axes=axes).real
            wx = np.fft.ifft2(wh * dx, axes=axes).real
            wy = np.fft.ifft2(wh * dy, axes=axes).real
            advh = np.fft.fft2(u * wx + v * wy, axes=axes) * mask
            advh[..., 0, 0] = 0.0
            rhs = numer * wh - dt * advh
            if fh is not None:
                rhs = rhs + dt * fh
            wh = rhs / denom
            if step % save_every == 0:
                cur = np.fft.ifft2(wh, axes=axes).real
                if strict and not np.all(_row_ok(cur)):
                    raise BlowupError(f"vorticity blow-up at t={step * dt:g}")
                times.append(step * dt)
                traj.append(cur)
    out = np.stack(traj, axis=1)
    return np.array(times), (out[0] if squeeze else out)


def make_forcing(kind: str, n: int) -> np.ndarray:
    """Named zero-mean forcing fields on the unit square, [N, N]."""
    x = np.arange(n) / n
    xx, yy = np.meshgrid(x, x, indexing="ij")
    if kind == "trig_ns":
        return 0.1 * (np.sin(2 * np.pi * (xx + yy)) + np.cos(2 * np.pi * (xx + yy)))
    if kind == "four_pi":
        return -4 * np.pi ** 2 * (np.sin(4 * np.pi * xx) + np.sin(4 * np.pi * yy))
    if kind == "kolmogorov":
        return -2.0 * np.cos(4 * np.pi * yy)
    if kind == "none":
        return np.zeros((n, n))
    raise ValueError(f"unknown forcing {kind!r}")


def poisson_reference(n: int):
    """Manufactured Dirichlet problem on [0,1]^2 (endpoints included):
    -Lap psi = ... with f = sin(2 pi x) sin(2 pi y); Lap psi + f = 0 has
    the solution psi = f / (8 pi^2), zero on the boundary."""
    x = np.linspace(0.0, 1.0, n)
    s = np.sin(2 * np.pi * x)
    f = np.outer(s, s)
    return f, f / (8 * np.pi ** 2)


def restrict_resolution(u: np.ndarray, n_target: int, dim: int) -> np.ndarray:
    """Band-limit projection onto a coarser grid (trailing ``dim`` axes).

    Keeps signed modes |k| < n_target/2 and drops the target Nyquist
    slot, so the result is the spectral truncation of the fine field.
    """
    n = u.shape[-1]
    if n_target > n or n_target < 2:
        raise ValueError("bad target resolution")
    if n_target == n:
        return u.copy()
    half = n_target // 2
    lo = list(range(half))
    hi_src = list(range(n - half + 1, n))
    hi_dst = list(range(half + 1, n_target))
    scale = n_target / n
    if dim == 1:
        spec = np.fft.fft(u, axis=-1)
        out = np.zeros(u.shape[:-1] + (n_target,), dtype=complex)
        out[..., lo] = spec[..., lo]
        out[..., hi_dst] = spec[..., hi_src]
        return np.fft.ifft(out * scale, axis=-1).real
    spec = np.fft.fft2(u, axes=(-2, -1))
    out = np.zeros(u.shape[:-2] + (n_target, n_target), dtype=complex)
    src = np.ix_(lo + hi_src, lo + hi_src)
    dst = np.ix_(lo + hi_dst, lo + hi_dst)
    out[(Ellipsis,) + dst] = spec[(Ellipsis,) + src]
    return np.fft.ifft2(out * scale ** 2, axes=(-2, -1)).real


# ---------------------------------------------------------------------------
# dataset writing / loading

def _write_sample(sample_dir: str, arrays: dict):
    os.makedirs(sample_dir, exist_ok=True)
    for name, arr in arrays.items():
        fsio.atomic_write_bytes(
            os.path.join(sample_dir, name + ".f64"),
            np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _write_manifest(out_dir, pde, resolution, params, fields, times, entries):
    manifest = {
        "schema": 1,
        "pde": pde,
        "resolution": resolution,
        "params": {**params, "generator": GENERATOR_ID},
        "fields": {name: list(shape) for name, shape in fields.items()},
        "times": [float(t) for t in times],
        "samples": entries,
    }
    fsio.dump_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def build_burgers_dataset(out_dir, n=1024, n_samples=20, nu=0.1,
                          length=2 * np.pi, dt_solver=1e-4, t_final=0.1,
                          seed=0, tau=5.0, gamma=4.0):
    os.makedirs(out_dir, exist_ok=True)
    u0 = np.stack([sample_grf_1d(n, tau, gamma, seed, i) for i in range(n_samples)])
    times, traj = burgers_etdrk4(u0, nu, length, dt_solver, t_final, strict=False)
    ok = _row_ok(traj.reshape(n_samples, -1))
    x = np.arange(n) / n * length
    entries = []
    for i in range(n_samples):
        entry = {"index": i, "dir": f"sample_{i}", "skipped": bool(~ok[i])}
        if ok[i]:
            _write_sample(os.path.join(out_dir, entry["dir"]),
                          {"a": u0[i], "u": traj[i, -1], "x": x, "t": times})
        entries.append(entry)
    fields = {"a": (n,), "u": (n,), "x": (n,), "t": times.shape}
    params = {"nu": nu, "length": length, "dt_solver": dt_solver,
              "t_final": t_final, "seed": seed, "tau": tau, "gamma": gamma}
    return _write_manifest(out_dir, "burgers", [n], params, fields, times, entries)


def build_burgers_family(out_root, resolutions, n_samples=20, nu=0.1,
                         length=2 * np.pi, dt_solver=1e-4, t_final=0.1,
                         seed=0, tau=5.0, gamma=4.0):
    """One dataset per resolution, all spectral restrictions of a single
    fine-grid solve, so the family shares the same underlying functions."""
    resolutions = sorted(resolutions)
    n_max = resolutions[-1]
    u0 = np.stack([sample_grf_1d(n_max, tau, gamma, seed, i)
                   for i in range(n_samples)])
    times, traj = burgers_etdrk4(u0, nu, length, dt_solver, t_final, strict=False)
    ok = _row_ok(traj.reshape(n_samples, -1))
    manifests = {}
    for n in resolutions:
        out_dir = os.path.join(out_root, f"r{n}")
        os.makedirs(out_dir, exist_ok=True)
        a_n = restrict_resolution(u0, n, 1)
        u_n = restrict_resolution(traj[:, -1], n, 1)
        x = np.arange(n) / n * length
        entries = []
        for i in range(n_samples):
            entry = {"index": i, "dir": f"sample_{i}", "skipped": bool(~ok[i])}
            if ok[i]:
                _write_sample(os.path.join(out_dir, entry["dir"]),
                              {"a": a_n[i], "u": u_n[i], "x": x, "t": times})
            entries.append(entry)
        fields = {"a": (n,), "u": (n,), "x": (n,), "t": times.shape}
        params = {"nu": nu, "length": length, "dt_solver": dt_solver,
                  "t_final": t_final, "seed": seed, "tau": tau, "gamma": gamma,
                  "family_base": n_max}
        manifests[n] = _write_manifest(out_dir, "burgers", [n], params,
                                       fields, times, entries)
    return manifests


def build_ns_dataset(out_dir, n=32, n_samples=12, nu=1e-3, forcing="trig_ns",
                     dt_solver=1e-3, t_in=40.0, n_frames=10, dt_frame=0.25,
                     seed=0, alpha=2.5, tau=7.0):
    """Spin each GRF vorticity sample to t_in, then record a window of
    n_frames snapshots dt_frame apart."""
    os.makedirs(out_dir, exist_ok=True)
    w0 = np.stack([sample_grf_2d(n, alpha, tau, seed, i) for i in range(n_samples)])
    force = make_forcing(forcing, n)
    if t_in > 0:
        _, spin = ns_crank_nicolson(w0, nu, force, 1.0, dt_solver, t_in,
                                    strict=False)
        w_start = spin[:, -1]
    else:
        w_start = w0
    t_window = (n_frames - 1) * dt_frame
    save_every = _steps(dt_frame, dt_solver)
    times, traj = ns_crank_nicolson(w_start, nu, force, 1.0, dt_solver,
                                    t_window, save_every, strict=False)
    ok = _row_ok(traj.reshape(n_samples, -1))
    x = np.arange(n) / n
    entries = []
    for i in range(n_samples):
        entry = {"index": i, "dir": f"sample_{i}", "skipped": bool(~ok[i])}
        if ok[i]:
            _write_sample(os.path.join(out_dir, entry["dir"]),
                          {"a": traj[i, 0], "omega": traj[i], "x": x,
                           "t": times + t_in})
        entries.append(entry)
    fields = {"a": (n, n), "omega": (n_frames, n, n), "x": (n,),
              "t": (n_frames,)}
    params = {"nu": nu, "forcing": forcing, "dt_solver": dt_solver,
              "t_in": t_in, "n_frames": n_frames, "dt_frame": dt_frame,
              "seed": seed, "alpha": alpha, "tau": tau}
    return _write_manifest(out_dir, "ns", [n, n], params, fields,
                           times + t_in, entries)


def load_dataset(dataset_dir: str):
    """Returns (manifest, samples); each sample maps field name to an
    ndarray with the manifest shape.  Skipped samples are omitted."""
    manifest = fsio.read_json(os.path.join(dataset_dir, "manifest.json"))
    samples = []
    for entry in manifest["samples"]:
        if entry.get("skipped"):
            continue
        sample = {"index": entry["index"]}
        for name, shape in manifest["fields"].items():
            path = os.path.join(dataset_dir, entry["dir"], name + ".f64")
            arr = np.fromfile(path, dtype="<f8").astype(np.float64)
            sample[name] = arr.reshape(shape)
        samples.append(sample)
    return manifest, samples
