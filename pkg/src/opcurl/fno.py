"""Spectral neural operators with spline-coefficient or direct heads.

The model is the usual lift / spectral-block / project stack: a
pointwise lifting map P, n_blocks of

    v' = gelu( W v + b + IFFT( R(k) . truncate(FFT(v)) ) ),

and a two-layer pointwise projection Q.  The learned multiplier R acts
on the retained low modes |k| <= m-1 per axis; the truncated product is
scattered back into a full spectrum and Hermitian-projected, Y(k) =
(S(k) + conj(S(-k)))/2, so the inverse transform is exactly real and
every R entry stays in the gradient path.  Because the forward DFT is
unnormalized and the inverse carries 1/N, the same weights evaluate at
any resolution >= 2*modes.

With the spline head the projection output is interpreted as a
SplineField whose channels are nodal derivative data; the direct head
returns the raw channel tensor.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import fsio
from .spectral import rng_for
from .spline import SplineField

Q_HIDDEN = 128


@dataclass(frozen=True)
class OperatorConfig:
    dim: int
    in_channels: int
    modes: int
    width: int
    n_blocks: int = 4
    head: str = "spline"
    spline_order: int = 2
    out_channels: int = 0  # derived for the spline head

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")
        if self.modes < 1 or self.width < 1 or self.n_blocks < 1:
            raise ValueError("invalid mode/width combination")
        if self.in_channels < 1:
            raise ValueError("in_channels must be positive")
        if self.head not in ("spline", "direct"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == "spline":
            want = (self.spline_order + 1) ** self.dim
            if self.out_channels not in (0, want):
                raise ValueError(
                    f"spline head of order {self.spline_order} in {self.dim}D "
                    f"fixes out_channels = {want}")
            object.__setattr__(self, "out_channels", want)
        elif self.out_channels < 1:
            raise ValueError("direct head needs explicit out_channels")

    @property
    def mode_slots(self) -> int:
        return self.modes if self.dim == 1 else (2 * self.modes - 1) * self.modes


def parameter_count(config: OperatorConfig) -> int:
    """Closed-form parameter count; complex entries count once."""
    d, da, du = config.width, config.in_channels, config.out_channels
    per_block = config.mode_slots * d * d + d * d + d
    return (da * d + d) + config.n_blocks * per_block \
        + (d * Q_HIDDEN + Q_HIDDEN) + (Q_HIDDEN * du + du)


class OperatorModel:
    """Parameter container; all tensors require gradients."""

    def __init__(self, config: OperatorConfig, params: dict):
        self.config = config
        self.params = params

    def block(self, i: int):
        return (self.params[f"block{i}.R"], self.params[f"block{i}.W"],
                self.params[f"block{i}.bias"])

    def n_parameters(self) -> int:
        return sum(t.size for t in self.params.values())


def init_model(config: OperatorConfig, seed=0) -> OperatorModel:
    """Deterministic init: R complex at scale 1/width^2, the rest
    symmetric uniform with bound 1/sqrt(fan_in)."""
    rng = rng_for(seed)
    d, da, du = config.width, config.in_channels, config.out_channels

    def uniform(shape, bound):
        return ad.tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    params = {}
    params["P.weight"] = uniform((d, da), 1.0 / np.sqrt(da))
    params["P.bias"] = uniform((d,), 1.0 / np.sqrt(da))
    r_scale = 1.0 / d ** 2
    for i in range(config.n_blocks):
        re = rng.uniform(-r_scale, r_scale, size=(config.mode_slots, d, d))
        im = rng.uniform(-r_scale, r_scale, size=(config.mode_slots, d, d))
        params[f"block{i}.R"] = ad.tensor(re + 1j * im, requires_grad=True)
        params[f"block{i}.W"] = uniform((d, d), 1.0 / np.sqrt(d))
        params[f"block{i}.bias"] = uniform((d,), 1.0 / np.sqrt(d))
    params["Q1.weight"] = uniform((Q_HIDDEN, d), 1.0 / np.sqrt(d))
    params["Q1.bias"] = uniform((Q_HIDDEN,), 1.0 / np.sqrt(d))
    params["Q2.weight"] = uniform((du, Q_HIDDEN), 1.0 / np.sqrt(Q_HIDDEN))
    params["Q2.bias"] = uniform((du,), 1.0 / np.sqrt(Q_HIDDEN))
    model = OperatorModel(config, params)
    assert model.n_parameters() == parameter_count(config)
    return model


def _mode_key(config: OperatorConfig, spatial):
    """Index key selecting the retained modes of a full spectrum."""
    m = config.modes
    for n in spatial:
        if n < 2 * m:
            raise ValueError(f"resolution {n} below 2*modes ({2 * m})")
    if config.dim == 1:
        return (Ellipsis, slice(0, m)), (m,)
    n1, _ = spatial
    rows = np.concatenate([np.arange(m), np.arange(n1 - m + 1, n1)])
    cols = np.arange(m)
    return (Ellipsis,) + np.ix_(rows, cols), (2 * m - 1, m)


def spectral_conv_complex(v: ad.Tensor, R: ad.Tensor, config: OperatorConfig) -> ad.Tensor:
    """Truncate, mix modes with R, scatter back, Hermitian-project.

    Returns the complex spatial field before the real projection; its
    imaginary part is roundoff by construction.
    """
    spatial = v.shape[2:]
    axes = tuple(range(2, v.ndim))
    key, modeshape = _mode_key(config, spatial)
    batch, d = v.shape[0], v.shape[1]

    vh = ad.fft(v, axes)
    vm = ad.reshape(ad.take(vh, key), (batch, d, config.mode_slots))
    s = ad.mode_mix(vm, R)
    s = ad.reshape(s, (batch, d) + modeshape)
    S = ad.embed(s, vh.shape, key)
    Y = ad.scale(ad.add(S, ad.conj(ad.freq_mirror(S, axes))), 0.5)
    return ad.ifft(Y, axes)


def spectral_block(v: ad.Tensor, R: ad.Tensor, W: ad.Tensor, bias: ad.Tensor,
                   config: OperatorConfig) -> ad.Tensor:
    spec = ad.real(spectral_conv_complex(v, R, config))
    return ad.gelu(ad.add(ad.channel_map(v, W, bias), spec))


def forward(model: OperatorModel, x: ad.Tensor, spacing=None,
            boundary: str = "periodic"):
    """Lift, apply the spectral blocks, project.

    x: [batch, in_channels, spatial...] with any coordinate channels
    already appended by the caller.  Returns a SplineField for the
    spline head (grid geometry from ``spacing``, default 1/N per axis)
    or a raw tensor for the direct head.
    """
    cfg = model.config
    if x.ndim != 2 + cfg.dim:
        raise ValueError(f"expected {2 + cfg.dim}-d input, got shape {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise ValueError(
            f"input has {x.shape[1]} channels, config wants {cfg.in_channels}")

    v = ad.channel_map(x, model.params["P.weight"], model.params["P.bias"])
    for i in range(cfg.n_blocks):
        v = spectral_block(v, *model.block(i), cfg)
    q = ad.gelu(ad.channel_map(v, model.params["Q1.weight"], model.params["Q1.bias"]))
    out = ad.channel_map(q, model.params["Q2.weight"], model.params["Q2.bias"])
    if cfg.head == "direct":
        return out
    if spacing is None:
        spacing = tuple(1.0 / n for n in x.shape[2:])
    return SplineField(out, spacing, boundary, cfg.spline_order)


# ---------------------------------------------------------------------------
# checkpoints: JSON metadata plus one raw little-endian blob per group

_DTYPE_TAGS = {np.dtype(np.float64): "float64", np.dtype(np.complex128): "complex128"}
_TAG_DTYPES = {"float64": "<f8", "complex128": "<c16"}


def save_checkpoint(model: OperatorModel, path: str, extra: dict | None = None):
    os.makedirs(path, exist_ok=True)
    groups = []
    for name, t in model.params.items():
        tag = _DTYPE_TAGS[t.dtype]
        fsio.atomic_write_bytes(
            os.path.join(path, name + ".bin"),
            t.data.astype(_TAG_DTYPES[tag]).tobytes())
        groups.append({"name": name, "shape": list(t.shape), "dtype": tag})
    meta = {"schema": 1, "config": asdict(model.config), "groups": groups}
    if extra:
        meta.update(extra)
    fsio.dump_json(os.path.join(path, "meta.json"), meta)


def load_checkpoint(path: str):
    meta = fsio.read_json(os.path.join(path, "meta.json"))
    config = OperatorConfig(**meta["config"])
    params = {}
    for g in meta["groups"]:
        raw = np.fromfile(os.path.join(path, g["name"] + ".bin"),
                          dtype=_TAG_DTYPES[g["dtype"]])
        arr = raw.astype(g["dtype"]).reshape(g["shape"])
        params[g["name"]] = ad.tensor(arr, requires_grad=True)
    return OperatorModel(config, params), meta
