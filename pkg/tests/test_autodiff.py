import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opcurl import autodiff as ad


def fd_grad(f, x, step=1e-6):
    """Central finite differences of a scalar function of a real array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    out = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f(x)
        flat[i] = orig - step
        fm = f(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * step)
    return g


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / denom


def grad_of(build, x0):
    """Autodiff gradient of a scalar-valued graph w.r.t. a real leaf array."""
    leaf = ad.tensor(x0, requires_grad=True)
    with ad.Tape() as tape:
        loss = build(leaf)
        grads = tape.backward(loss)
    return grads[leaf]


class TestTensor:
    def test_dtype_promotion(self):
        assert ad.tensor([1, 2, 3]).dtype == np.float64
        assert ad.tensor(np.zeros(3, dtype=np.complex64)).dtype == np.complex128

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            ad.tensor([1.0, np.nan])
        with pytest.raises(ValueError):
            ad.tensor([np.inf, 0.0])

    def test_rejects_bad_dtype(self):
        with pytest.raises(TypeError):
            ad.tensor(np.array(["a"]))


class TestElementwise:
    def test_add(self):
        out = ad.add(ad.tensor([1.0, 2.0]), ad.tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_mul_by_one_is_identity(self):
        x = ad.tensor(np.linspace(-2, 2, 7))
        out = ad.mul(x, ad.tensor(1.0))
        np.testing.assert_array_equal(out.data, x.data)

    def test_gelu_zero(self):
        assert ad.gelu(ad.tensor([0.0])).data[0] == 0.0

    def test_gelu_known_value(self):
        # gelu(x) = x * Phi(x); Phi(1) = 0.841344746...
        out = ad.gelu(ad.tensor([1.0])).data[0]
        assert abs(out - 0.8413447460685429) < 1e-12

    def test_gelu_rejects_complex(self):
        with pytest.raises(TypeError):
            ad.gelu(ad.tensor(np.array([1 + 1j])))

    def test_shape_mismatch_raises(self):
        with pytest.raises(ValueError):
            ad.add(ad.tensor(np.zeros(3)), ad.tensor(np.zeros(4)))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_arith_grads_match_fd(self, seed):
        rng = np.random.default_rng(seed)
        x0 = rng.normal(size=5)
        y = ad.constant(rng.normal(size=5))

        def build(x):
            return ad.tsum(ad.mul(ad.add(x, y), ad.sub(x, y)))

        def f(arr):
            return float(np.sum((arr + y.data) * (arr - y.data)))

        assert rel_err(grad_of(build, x0), fd_grad(f, x0.copy())) < 1e-6

    def test_gelu_grad_matches_fd(self):
        rng = np.random.default_rng(0)
        x0 = rng.normal(size=11)

        def build(x):
            return ad.tsum(ad.gelu(x))

        g = grad_of(build, x0)
        from scipy.special import erf

        def f(arr):
            return float(np.sum(arr * 0.5 * (1 + erf(arr / np.sqrt(2)))))

        assert rel_err(g, fd_grad(f, x0.copy())) < 1e-6


class TestChannelMap:
    def test_identity(self):
        v = ad.tensor(np.random.default_rng(1).normal(size=(2, 3, 8)))
        out = ad.channel_map(v, ad.tensor(np.eye(3)), ad.tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, v.data, atol=0)

    def test_sum_channels(self):
        v = ad.tensor(np.array([[[3.0], [4.0]]]))  # [1, 2, 1]
        out = ad.channel_map(v, ad.tensor([[1.0, 1.0]]))
        assert out.data.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 7.0

    def test_channel_mismatch(self):
        with pytest.raises(ValueError):
            ad.channel_map(ad.tensor(np.zeros((1, 3, 4))), ad.tensor(np.zeros((2, 2))))

    def test_grad_w_matches_fd(self):
        rng = np.random.default_rng(2)
        v = ad.constant(rng.normal(size=(2, 3, 5)))
        W0 = rng.normal(size=(4, 3))
        b = ad.constant(rng.normal(size=4))

        def build(W):
            return ad.tsum(ad.channel_map(v, W, b))

        def f(Wa):
            y = np.einsum("oc,bcx->box", Wa, v.data) + b.data[None, :, None]
            return float(y.sum())

        assert rel_err(grad_of(build, W0), fd_grad(f, W0.copy())) < 1e-6

    def test_grad_v_and_bias_match_fd(self):
        rng = np.random.default_rng(3)
        v0 = rng.normal(size=(2, 3, 4))
        W = ad.constant(rng.normal(size=(2, 3)))
        b0 = rng.normal(size=2)

        def build_v(v):
            return ad.tsum(ad.mul(ad.channel_map(v, W, ad.constant(b0)),
                                  ad.channel_map(v, W, ad.constant(b0))))

        def f_v(va):
            y = np.einsum("oc,bcx->box", W.data, va) + b0[None, :, None]
            return float((y * y).sum())

        assert rel_err(grad_of(build_v, v0), fd_grad(f_v, v0.copy())) < 1e-6


class TestFFT:
    @pytest.mark.parametrize("n", [4, 16, 64, 256, 1024, 4096])
    def test_roundtrip(self, n):
        rng = np.random.default_rng(n)
        x = ad.tensor(rng.normal(size=n))
        back = ad.ifft(ad.fft(x))
        assert rel_err(back.data.real, x.data) < 1e-12
        assert np.max(np.abs(back.data.imag)) < 1e-12

    def test_constant_field_spectrum(self):
        c = 2.5
        x = ad.tensor(np.full(8, c))
        spec = ad.fft(x).data
        assert abs(spec[0] - 8 * c) < 1e-12
        assert np.max(np.abs(spec[1:])) < 1e-12

    def test_parseval(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=512)
        spec = ad.fft(ad.tensor(x)).data
        lhs = np.sum(x * x)
        rhs = np.sum(np.abs(spec) ** 2) / 512
        assert abs(lhs - rhs) / abs(lhs) < 1e-12

    def test_zero_length_axis_raises(self):
        with pytest.raises(ValueError):
            ad.fft(ad.tensor(np.zeros((2, 0))), axes=(-1,))

    def test_fft_2d_roundtrip(self):
        rng = np.random.default_rng(9)
        x = ad.tensor(rng.normal(size=(3, 8, 8)))
        back = ad.ifft(ad.fft(x, axes=(-2, -1)), axes=(-2, -1))
        assert rel_err(back.data.real, x.data) < 1e-12

    def test_spectral_quadratic_grad_matches_fd(self):
        # gradient of ||ifft(R * fft(v))||^2 w.r.t. v
        rng = np.random.default_rng(11)
        n = 16
        R = rng.normal(size=n) + 1j * rng.normal(size=n)
        Rc = ad.constant(R)
        v0 = rng.normal(size=n)

        def build(v):
            y = ad.real(ad.ifft(ad.mul(ad.fft(v), Rc)))
            return ad.tsum(ad.mul(y, y))

        def f(va):
            y = np.fft.ifft(np.fft.fft(va) * R).real
            return float(np.sum(y * y))

        assert rel_err(grad_of(build, v0), fd_grad(f, v0.copy())) < 1e-6

    def test_mode_mix_grads_match_fd(self):
        rng = np.random.default_rng(13)
        B, C, S = 2, 3, 4
        v = rng.normal(size=(B, C, S)) + 1j * rng.normal(size=(B, C, S))
        vc = ad.constant(v)
        R0 = rng.normal(size=(S, C, C))

        def build(Rre):
            y = ad.mode_mix(vc, Rre)
            return ad.tsum(ad.mul(ad.real(y), ad.real(y)))

        def f(Ra):
            y = np.einsum("soi,bis->bos", Ra, v)
            return float(np.sum(y.real ** 2))

        assert rel_err(grad_of(build, R0), fd_grad(f, R0.copy())) < 1e-6


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = ad.tensor(np.arange(3.0), requires_grad=True)
        with ad.Tape() as tape:
            grads = tape.backward(ad.tsum(x))
        np.testing.assert_array_equal(grads[x], np.ones(3))

    def test_quadratic_gradient(self):
        x = ad.tensor([1.0, 2.0], requires_grad=True)
        with ad.Tape() as tape:
            grads = tape.backward(ad.tsum(ad.mul(x, x)))
        np.testing.assert_allclose(grads[x], [2.0, 4.0])

    def test_fanout_accumulates(self):
        x = ad.tensor([1.5, -0.5], requires_grad=True)

        def once(leaf):
            return ad.tsum(ad.mul(leaf, leaf))

        with ad.Tape() as tape:
            g2 = tape.backward(ad.add(once(x), once(x)))[x]
        with ad.Tape() as tape:
            g1 = tape.backward(once(x))[x]
        np.testing.assert_allclose(g2, 2 * g1)

    def test_loss_must_be_scalar(self):
        x = ad.tensor(np.ones(3), requires_grad=True)
        with ad.Tape() as tape:
            y = ad.mul(x, x)
            with pytest.raises(ValueError):
                tape.backward(y)

    def test_loss_not_on_tape(self):
        x = ad.tensor(np.ones(3), requires_grad=True)
        with ad.Tape() as tape:
            with pytest.raises(ValueError):
                tape.backward(ad.tensor(1.0))

    def test_tape_consumed(self):
        x = ad.tensor(np.ones(3), requires_grad=True)
        with ad.Tape() as tape:
            loss = ad.tsum(x)
            tape.backward(loss)
            with pytest.raises(RuntimeError):
                tape.backward(loss)

    def test_no_tape_no_recording(self):
        x = ad.tensor(np.ones(3), requires_grad=True)
        y = ad.tsum(x)
        assert not y.requires_grad

    def test_composite_spline_like_fft_loss_fd(self):
        # shifted/weighted combination plus an FFT quadratic, checked
        # against central differences over 50 random parameters
        rng = np.random.default_rng(17)
        n = 32
        x0 = rng.normal(size=n)
        w = ad.constant(rng.normal(size=n) + 1j * rng.normal(size=n))

        def build(x):
            a = ad.add(ad.scale(ad.roll(x, 1, 0), 0.25), ad.scale(x, 0.5))
            b = ad.real(ad.ifft(ad.mul(ad.fft(a), w)))
            return ad.tmean(ad.mul(b, b))

        def f(arr):
            a = 0.25 * np.roll(arr, 1) + 0.5 * arr
            b = np.fft.ifft(np.fft.fft(a) * w.data).real
            return float(np.mean(b * b))

        g = grad_of(build, x0)
        gf = fd_grad(f, x0.copy())
        idx = rng.choice(n, size=min(50, n), replace=False)
        assert rel_err(g[idx], gf[idx]) < 1e-6


class TestShapeOps:
    def test_roll_grad(self):
        x0 = np.random.default_rng(19).normal(size=6)
        w = ad.constant(np.arange(6.0))

        def build(x):
            return ad.tsum(ad.mul(ad.roll(x, 2, 0), w))

        np.testing.assert_allclose(grad_of(build, x0), np.roll(np.arange(6.0), -2))

    def test_shift_zero_forward(self):
        x = ad.tensor([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(ad.shift_zero(x, 1, 0).data, [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(ad.shift_zero(x, -1, 0).data, [2.0, 3.0, 0.0])
        np.testing.assert_array_equal(ad.shift_zero(x, 0, 0).data, x.data)
        np.testing.assert_array_equal(ad.shift_zero(x, 5, 0).data, np.zeros(3))

    def test_shift_zero_adjoint(self):
        rng = np.random.default_rng(23)
        x0 = rng.normal(size=5)
        w = ad.constant(rng.normal(size=5))

        def build(x):
            return ad.tsum(ad.mul(ad.shift_zero(x, 2, 0), w))

        def f(arr):
            out = np.zeros(5)
            out[2:] = arr[:-2]
            return float(np.sum(out * w.data))

        assert rel_err(grad_of(build, x0), fd_grad(f, x0.copy())) < 1e-6

    def test_take_embed_roundtrip_grad(self):
        rng = np.random.default_rng(29)
        x0 = rng.normal(size=(4, 6))
        key = (slice(None), slice(1, 4))

        def build(x):
            y = ad.take(x, key)
            z = ad.embed(y, (4, 6), key)
            return ad.tsum(ad.mul(z, z))

        def f(arr):
            z = np.zeros((4, 6))
            z[key] = arr[key]
            return float(np.sum(z * z))

        assert rel_err(grad_of(build, x0), fd_grad(f, x0.copy())) < 1e-6

    def test_stack_reshape_grad(self):
        rng = np.random.default_rng(31)
        x0 = rng.normal(size=4)

        def build(x):
            s = ad.stack([x, ad.scale(x, 2.0)], axis=1)
            return ad.tsum(ad.mul(ad.reshape(s, (8,)), ad.reshape(s, (8,))))

        def f(arr):
            s = np.stack([arr, 2 * arr], axis=1).reshape(8)
            return float(np.sum(s * s))

        assert rel_err(grad_of(build, x0), fd_grad(f, x0.copy())) < 1e-6

    def test_freq_mirror_involution(self):
        rng = np.random.default_rng(37)
        x = rng.normal(size=(5, 8)) + 1j * rng.normal(size=(5, 8))
        t = ad.constant(x)
        twice = ad.freq_mirror(ad.freq_mirror(t, (-1,)), (-1,))
        np.testing.assert_array_equal(twice.data, x)

    def test_freq_mirror_matches_conjugate_symmetry(self):
        # for real u, fft(u)[-k] = conj(fft(u)[k])
        u = np.random.default_rng(41).normal(size=16)
        spec = np.fft.fft(u)
        mirrored = ad.freq_mirror(ad.constant(spec), (0,)).data
        np.testing.assert_allclose(mirrored, np.conj(spec), atol=1e-12)

    def test_mean_axis_grad(self):
        rng = np.random.default_rng(43)
        x0 = rng.normal(size=(3, 4))

        def build(x):
            m = ad.tmean(x, axes=1)
            return ad.tsum(ad.mul(m, m))

        def f(arr):
            m = arr.mean(axis=1)
            return float(np.sum(m * m))

        assert rel_err(grad_of(build, x0), fd_grad(f, x0.copy())) < 1e-6


class TestComplexConvention:
    def test_complex_param_grad_components_match_fd(self):
        # real/imag parts of a complex leaf behave as two real parameters
        rng = np.random.default_rng(47)
        n = 8
        re0 = rng.normal(size=n)
        im0 = rng.normal(size=n)
        v = ad.constant(rng.normal(size=n))

        def loss_np(re, im):
            R = re + 1j * im
            y = np.fft.ifft(R * np.fft.fft(v.data)).real
            return float(np.sum(y * y))

        leaf = ad.tensor(re0 + 1j * im0, requires_grad=True)
        with ad.Tape() as tape:
            y = ad.real(ad.ifft(ad.mul(leaf, ad.fft(v))))
            g = tape.backward(ad.tsum(ad.mul(y, y)))[leaf]

        gre = fd_grad(lambda r: loss_np(r, im0), re0.copy())
        gim = fd_grad(lambda i: loss_np(re0, i), im0.copy())
        assert rel_err(g.real, gre) < 1e-6
        assert rel_err(g.imag, gim) < 1e-6

    def test_conj_grad(self):
        rng = np.random.default_rng(53)
        re0 = rng.normal(size=4)

        def build(x):
            y = ad.imag(ad.mul(ad.conj(x), ad.constant(np.full(4, 2.0 + 1.0j))))
            return ad.tsum(ad.mul(y, y))

        def f(arr):
            y = (np.conj(arr) * (2.0 + 1.0j)).imag
            return float(np.sum(y * y))

        assert rel_err(grad_of(build, re0), fd_grad(f, re0.copy())) < 1e-6
