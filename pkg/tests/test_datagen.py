import os

import numpy as np
import pytest

from opcurl.datagen import (
    build_burgers_dataset,
    build_burgers_family,
    build_ns_dataset,
    burgers_etdrk4,
    load_dataset,
    make_forcing,
    ns_crank_nicolson,
    poisson_reference,
    restrict_resolution,
)
from opcurl.spectral import sample_grf_1d, sample_grf_2d


class TestBurgersSolver:
    def test_momentum_conserved(self):
        u0 = sample_grf_1d(256, seed=1)
        _, traj = burgers_etdrk4(u0, nu=0.1, dt=1e-3, t_end=0.1, save_every=10)
        m0 = np.mean(traj[0])
        for snap in traj:
            assert abs(np.mean(snap) - m0) < 1e-10

    def test_linear_regime_decay(self):
        # tiny amplitude: u u_x negligible, decay is e^(-nu k^2 t)
        n, nu, t_end = 256, 0.1, 0.1
        x = np.arange(n) / n * 2 * np.pi
        u0 = 1e-5 * np.sin(x)
        _, traj = burgers_etdrk4(u0, nu, dt=1e-3, t_end=t_end)
        ref = 1e-5 * np.exp(-nu * t_end) * np.sin(x)
        err = np.linalg.norm(traj[-1] - ref) / np.linalg.norm(ref)
        assert err < 1e-4

    def test_energy_non_increasing(self):
        u0 = sample_grf_1d(256, seed=3)
        _, traj = burgers_etdrk4(u0, nu=0.1, dt=1e-3, t_end=0.05, save_every=5)
        e = [np.sum(s ** 2) for s in traj]
        assert all(b <= a + 1e-12 for a, b in zip(e, e[1:]))

    def test_fourth_order_refinement(self):
        # steep enough that temporal error sits well above roundoff
        n, nu, t_end = 128, 0.05, 0.5
        x = np.arange(n) / n * 2 * np.pi
        u0 = 2 * np.sin(x)
        _, ref = burgers_etdrk4(u0, nu, dt=1e-4, t_end=t_end)
        _, c1 = burgers_etdrk4(u0, nu, dt=2e-2, t_end=t_end)
        _, c2 = burgers_etdrk4(u0, nu, dt=1e-2, t_end=t_end)
        e1 = np.linalg.norm(c1[-1] - ref[-1])
        e2 = np.linalg.norm(c2[-1] - ref[-1])
        assert e1 / e2 > 8  # fourth order would give 16

    def test_batched_matches_single(self):
        u0 = np.stack([sample_grf_1d(128, seed=4, index=i) for i in range(3)])
        _, batch = burgers_etdrk4(u0, nu=0.1, dt=1e-3, t_end=0.02)
        _, single = burgers_etdrk4(u0[1], nu=0.1, dt=1e-3, t_end=0.02)
        assert np.array_equal(batch[1], single)

    def test_time_grid_validation(self):
        with pytest.raises(ValueError):
            burgers_etdrk4(np.zeros(64), nu=0.1, dt=3e-4, t_end=0.1)
        with pytest.raises(ValueError):
            burgers_etdrk4(np.zeros(64), nu=0.1, dt=1e-3, t_end=0.1, save_every=7)


class TestNSSolver:
    def test_taylor_green_decay(self):
        # advection vanishes identically; each mode decays at nu (2pi)^2
        n, nu, t_end = 64, 1e-2, 1.0
        x = np.arange(n) / n
        xx, yy = np.meshgrid(x, x, indexing="ij")
        w0 = np.cos(2 * np.pi * xx) + np.cos(2 * np.pi * yy)
        _, traj = ns_crank_nicolson(w0, nu, None, 1.0, 1e-3, t_end)
        ref = np.exp(-4 * np.pi ** 2 * nu * t_end) * w0
        err = np.linalg.norm(traj[-1] - ref) / np.linalg.norm(ref)
        assert err < 1e-3

    def test_crank_nicolson_second_order(self):
        n, nu, t_end = 32, 1e-2, 0.5
        x = np.arange(n) / n
        xx, yy = np.meshgrid(x, x, indexing="ij")
        w0 = np.cos(2 * np.pi * xx) + np.cos(2 * np.pi * yy)
        ref = np.exp(-4 * np.pi ** 2 * nu * t_end) * w0
        dts = [0.05, 0.025, 0.0125]
        errs = []
        for dt in dts:
            _, traj = ns_crank_nicolson(w0, nu, None, 1.0, dt, t_end)
            errs.append(np.linalg.norm(traj[-1] - ref))
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert 1.8 < slope < 2.2

    def test_enstrophy_monotone_without_forcing(self):
        w0 = sample_grf_2d(32, seed=5)
        _, traj = ns_crank_nicolson(w0, nu=5e-2, forcing=None, dt=5e-3,
                                    t_end=0.25, save_every=1)
        ens = [np.sum(s ** 2) for s in traj]
        assert all(b <= a + 1e-12 for a, b in zip(ens, ens[1:]))

    def test_mean_vorticity_preserved(self):
        w0 = sample_grf_2d(32, seed=6)
        force = make_forcing("trig_ns", 32)
        _, traj = ns_crank_nicolson(w0, nu=1e-3, forcing=force, dt=1e-2,
                                    t_end=0.5, save_every=10)
        for s in traj:
            assert abs(np.mean(s)) < 1e-12

    def test_nonzero_mean_rejected(self):
        with pytest.raises(ValueError):
            ns_crank_nicolson(np.ones((16, 16)), nu=1e-3, dt=1e-2, t_end=0.1)


class TestForcing:
    def test_trig_ns_origin(self):
        f = make_forcing("trig_ns", 32)
        assert abs(f[0, 0] - 0.1) < 1e-14

    def test_kolmogorov_y0(self):
        f = make_forcing("kolmogorov", 32)
        assert np.allclose(f[:, 0], -2.0)

    def test_zero_mean(self):
        for kind in ("trig_ns", "four_pi", "kolmogorov"):
            f = make_forcing(kind, 64)
            assert abs(f.mean()) < 1e-12

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_forcing("windy", 32)


class TestPoissonReference:
    def test_pointwise_value(self):
        f, psi = poisson_reference(5)  # grid hits x=0.25 exactly
        assert abs(psi[1, 1] - 1 / (8 * np.pi ** 2)) < 1e-14

    def test_laplace_identity(self):
        f, psi = poisson_reference(33)
        assert np.max(np.abs(8 * np.pi ** 2 * psi - f)) < 1e-12

    def test_boundary_zero(self):
        f, psi = poisson_reference(17)
        assert np.max(np.abs(f[0, :])) < 1e-12
        assert np.max(np.abs(psi[:, -1])) < 1e-12


class TestRestrict:
    def test_bandlimited_exact_1d(self):
        n, m = 256, 64
        xf = np.arange(n) / n
        xc = np.arange(m) / m
        fn = lambda x: np.sin(2 * np.pi * x) + 0.5 * np.cos(2 * np.pi * 3 * x)
        coarse = restrict_resolution(fn(xf), m, 1)
        assert np.max(np.abs(coarse - fn(xc))) < 1e-12

    def test_high_modes_dropped(self):
        n, m = 256, 64
        xf = np.arange(n) / n
        u = np.sin(2 * np.pi * 40 * xf)  # above coarse Nyquist
        coarse = restrict_resolution(u, m, 1)
        assert np.max(np.abs(coarse)) < 1e-12

    def test_mean_preserved_2d(self):
        u = sample_grf_2d(64, seed=7) + 0.3
        coarse = restrict_resolution(u, 16, 2)
        assert abs(coarse.mean() - u.mean()) < 1e-12

    def test_bandlimited_exact_2d(self):
        n, m = 128, 32
        xf = np.arange(n) / n
        xc = np.arange(m) / m
        fn = lambda x, y: np.sin(2 * np.pi * np.add.outer(x, y))
        coarse = restrict_resolution(fn(xf, xf), m, 2)
        assert np.max(np.abs(coarse - fn(xc, xc))) < 1e-12


class TestDatasets:
    def test_burgers_roundtrip_and_determinism(self, tmp_path):
        kw = dict(n=64, n_samples=3, nu=0.1, dt_solver=1e-3, t_final=0.01, seed=9)
        d1, d2 = str(tmp_path / "a"), str(tmp_path / "b")
        man1 = build_burgers_dataset(d1, **kw)
        build_burgers_dataset(d2, **kw)
        assert man1["schema"] == 1
        assert man1["params"]["generator"] == "philox4x64"
        loaded, samples = load_dataset(d1)
        assert len(samples) == 3
        assert samples[0]["a"].shape == (64,)
        assert samples[0]["u"].shape == (64,)
        assert np.array_equal(samples[0]["t"], [0.0, 0.01])
        for rel in ["manifest.json", "sample_0/a.f64", "sample_2/u.f64"]:
            with open(os.path.join(d1, rel), "rb") as fh:
                b1 = fh.read()
            with open(os.path.join(d2, rel), "rb") as fh:
                assert fh.read() == b1, rel

    def test_burgers_blowup_skipped(self, tmp_path):
        # negative viscosity blows every sample up
        out = str(tmp_path / "bad")
        man = build_burgers_dataset(out, n=64, n_samples=2, nu=-0.5,
                                    dt_solver=1e-3, t_final=0.5, seed=0)
        assert all(e["skipped"] for e in man["samples"])
        _, samples = load_dataset(out)
        assert samples == []

    def test_ns_dataset_window(self, tmp_path):
        out = str(tmp_path / "ns")
        man = build_ns_dataset(out, n=16, n_samples=2, nu=1e-3,
                               dt_solver=0.01, t_in=0.05, n_frames=3,
                               dt_frame=0.05, seed=2)
        _, samples = load_dataset(out)
        assert len(samples) == 2
        om = samples[0]["omega"]
        assert om.shape == (3, 16, 16)
        assert np.array_equal(samples[0]["a"], om[0])
        assert np.allclose(samples[0]["t"], [0.05, 0.10, 0.15])
        assert np.allclose(man["times"], [0.05, 0.10, 0.15])

    def test_family_shared_functions(self, tmp_path):
        root = str(tmp_path / "fam")
        build_burgers_family(root, [32, 64], n_samples=2, nu=0.1,
                             dt_solver=1e-3, t_final=0.01, seed=4)
        _, coarse = load_dataset(os.path.join(root, "r32"))
        _, fine = load_dataset(os.path.join(root, "r64"))
        # coarse dataset is the spectral restriction of the fine one
        want = restrict_resolution(fine[0]["a"], 32, 1)
        assert np.max(np.abs(coarse[0]["a"] - want)) < 1e-12
