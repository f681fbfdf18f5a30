"""Complex-valued layers and the dual-task autoencoder.

The network maps an A x A complex image through a convolutional encoder to
a flat symbol vector, normalizes it per sample, runs the quantized ODE
block (digitally, or through a caller-supplied over-the-air function),
denormalizes, and decodes with two heads: image reconstruction and
semantic tagging.

The ODE block's three stages are 1 x K complex convolutions whose weights
are snapped to finite per-tap codebooks by a straight-through estimator;
in deployment each snapped weight is realized by one reconfigurable
surface, which is why the codebooks are injected from outside.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from . import nnops as F

__all__ = [
    "NetworkConfig",
    "CConv2d",
    "CLinear",
    "CBatchNorm2d",
    "QCConv1d",
    "OdeBlock",
    "Encoder",
    "DecoderRI",
    "DecoderST",
    "AirOdeNetwork",
    "codebook_fingerprint",
    "save_checkpoint",
    "load_checkpoint",
]


def codebook_fingerprint(codebooks):
    """SHA-256 over the stacked per-group codebook entries (order matters)."""
    h = hashlib.sha256()
    for arr in codebooks:
        a = np.ascontiguousarray(arr, dtype=np.complex128)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters; (image_size, pool_stages,
    feature_channels) jointly set the bottleneck length C."""

    image_size: int = 14
    hidden_channels: int = 8
    feature_channels: int = 1
    pool_stages: int = 1
    kernel_size: int = 3
    num_classes: int = 10
    st_channels: int = 4
    init_seed: int = 0

    def __post_init__(self):
        if self.image_size < 2 or self.pool_stages < 0:
            raise ValueError(f"bad network config: {self}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.bottleneck_size() < 2:
            raise ValueError("bottleneck collapsed to fewer than 2 symbols")

    def spatial_sizes(self):
        """Feature-map side lengths before each pool (odd sizes are
        zero-padded to even on the bottom/right before pooling)."""
        sizes = [self.image_size]
        for _ in range(self.pool_stages):
            s = sizes[-1]
            sizes.append((s + (s % 2)) // 2)
        return sizes

    def feature_size(self):
        return self.spatial_sizes()[-1]

    def bottleneck_size(self):
        b = self.feature_size()
        return self.feature_channels * b * b


def _init_complex(rng, shape, fan_in):
    scale = np.sqrt(1.0 / (2.0 * fan_in))
    w = rng.normal(0.0, scale, size=shape) + 1j * rng.normal(0.0, scale, size=shape)
    return T.tensor(w, requires_grad=True)


class CConv2d:
    """Complex 2-D convolution layer (NCHW, odd kernel, 'same'-style pad)."""

    def __init__(self, in_ch, out_ch, kernel, padding, rng, stride=1, bias=True):
        fan_in = in_ch * kernel * kernel
        self.weight = _init_complex(rng, (out_ch, in_ch, kernel, kernel), fan_in)
        self.bias = T.zeros((out_ch,), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


class CLinear:
    def __init__(self, in_f, out_f, rng, bias=True):
        self.weight = _init_complex(rng, (out_f, in_f), in_f)
        self.bias = T.zeros((out_f,), requires_grad=True) if bias else None

    def __call__(self, x):
        return F.linear(x, self.weight, self.bias)

    def params(self):
        out = [("weight", self.weight)]
        if self.bias is not None:
            out.append(("bias", self.bias))
        return out


class CBatchNorm2d:
    """Channelwise batch norm; re/im standardized independently, then a
    complex affine (gamma, beta). Running stats are plain arrays: mean is
    complex, var packs var(re) in .real and var(im) in .imag."""

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.gamma = T.tensor(np.ones(channels, dtype=np.complex128), requires_grad=True)
        self.beta = T.zeros((channels,), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=np.complex128)
        self.running_var = np.ones(channels, dtype=np.complex128) * (1.0 + 1.0j)
        self.eps = eps
        self.momentum = momentum

    def __call__(self, x, training):
        return F.batchnorm2d(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            training, self.eps, self.momentum,
        )

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_state(self, st):
        self.running_mean[...] = st["running_mean"]
        self.running_var[...] = st["running_var"]


class QCConv1d:
    """1 x K complex convolution with codebook-quantized weights.

    Holds a free latent weight per tap; the forward pass snaps each
    latent to the nearest entry of that tap's codebook (straight-through
    backward). `last_indices` records the snap for deployment.
    """

    def __init__(self, kernel, rng):
        if kernel % 2 == 0:
            raise ValueError(f"quantized conv kernel must be odd, got {kernel}")
        self.kernel = kernel
        self.codebook = None  # (K, Nc) complex, one row per tap
        self.latent = T.zeros((kernel,), requires_grad=True)
        self._rng = rng
        self.last_indices = None

    def set_codebook(self, entries, reinit_latent=True):
        entries = np.ascontiguousarray(entries, dtype=np.complex128)
        if entries.ndim != 2 or entries.shape[0] != self.kernel:
            raise ValueError(
                f"codebook shape {entries.shape} does not match kernel {self.kernel}"
            )
        self.codebook = entries
        if reinit_latent:
            picks = self._rng.integers(0, entries.shape[1], size=self.kernel)
            self.latent = T.tensor(
                entries[np.arange(self.kernel), picks], requires_grad=True
            )

    def quantize(self):
        if self.codebook is None:
            raise RuntimeError("quantized conv used before set_codebook")
        eff, idx = F.ste_snap(self.latent, self.codebook)
        self.last_indices = idx
        return eff, idx

    def __call__(self, x):
        # x: (N, C) -> same-length 1-D convolution via the 2-D kernel
        eff, _ = self.quantize()
        n, c = x.shape
        x4 = T.reshape(x, (n, 1, 1, c))
        w4 = T.reshape(eff, (1, 1, 1, self.kernel))
        y = F.conv2d(x4, w4, None, 1, (0, self.kernel // 2))
        return T.reshape(y, (n, c))

    def params(self):
        return [("latent", self.latent)]


class OdeBlock:
    """One integration step i = 0.5*Psi2(Psi1(s)+s) + 0.5*Psi3(s) + s,
    with Psi_p = quantized 1 x K conv composed after a complex ReLU."""

    def __init__(self, kernel, rng):
        self.psi1 = QCConv1d(kernel, rng)
        self.psi2 = QCConv1d(kernel, rng)
        self.psi3 = QCConv1d(kernel, rng)

    def stages(self):
        return [("psi1", self.psi1), ("psi2", self.psi2), ("psi3", self.psi3)]

    def set_codebooks(self, codebooks, reinit_latent=True):
        if len(codebooks) != 3:
            raise ValueError(f"need 3 group codebooks, got {len(codebooks)}")
        for (_, st), cb in zip(self.stages(), codebooks):
            st.set_codebook(cb, reinit_latent)

    def __call__(self, s):
        u = T.crelu(s)
        a = self.psi1(u)
        b = T.crelu(T.add(a, s))
        c = self.psi2(b)
        d = self.psi3(u)
        return T.add(T.add(T.smul(c, 0.5), T.smul(d, 0.5)), s)

    def chosen_indices(self):
        """(3, K) snapped codebook indices from the latest forward pass."""
        rows = []
        for _, st in self.stages():
            if st.last_indices is None:
                st.quantize()
            rows.append(st.last_indices)
        return np.stack(rows)

    def params(self):
        return [(f"{n}.{pn}", p) for n, st in self.stages() for pn, p in st.params()]


class Encoder:
    """conv-relu-conv-relu, pool stage(s), relu, batch norm."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.conv1 = CConv2d(1, cfg.hidden_channels, cfg.kernel_size,
                             cfg.kernel_size // 2, rng)
        self.conv2 = CConv2d(cfg.hidden_channels, cfg.feature_channels,
                             cfg.kernel_size, cfg.kernel_size // 2, rng)
        self.bn = CBatchNorm2d(cfg.feature_channels)
        self.sizes = cfg.spatial_sizes()

    def __call__(self, x, training):
        h = T.crelu(self.conv1(x))
        h = T.crelu(self.conv2(h))
        for s in self.sizes[:-1]:
            if s % 2:
                h = T.pad(h, [(0, 0), (0, 0), (0, 1), (0, 1)])
            h = F.avgpool2d(h, 2)
        h = T.crelu(h)
        return self.bn(h, training)

    def params(self):
        return (
            [(f"conv1.{n}", p) for n, p in self.conv1.params()]
            + [(f"conv2.{n}", p) for n, p in self.conv2.params()]
            + [(f"bn.{n}", p) for n, p in self.bn.params()]
        )


class DecoderRI:
    """Upsample back to the image grid, then conv-relu-conv. The final
    layer is linear so reconstructed parts can go negative."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        self.sizes = cfg.spatial_sizes()
        self.conv1 = CConv2d(cfg.feature_channels, cfg.hidden_channels,
                             cfg.kernel_size, cfg.kernel_size // 2, rng)
        self.conv2 = CConv2d(cfg.hidden_channels, 1, cfg.kernel_size,
                             cfg.kernel_size // 2, rng)

    def __call__(self, h):
        for s in reversed(self.sizes[:-1]):
            h = F.upsample2d(h, 2)
            if s % 2:  # drop the row/col added before the matching pool
                h = T.crop(h, (slice(None), slice(None), slice(0, s), slice(0, s)))
        h = T.crelu(self.conv1(h))
        return self.conv2(h)

    def params(self):
        return (
            [(f"conv1.{n}", p) for n, p in self.conv1.params()]
            + [(f"conv2.{n}", p) for n, p in self.conv2.params()]
        )


class DecoderST:
    """Semantic tagging head: conv, 4 x 4 max pool (stride 4), linear."""

    def __init__(self, cfg, rng):
        self.cfg = cfg
        b = cfg.feature_size()
        self.pooled = -(-b // 4)  # pad up to a multiple of 4, then /4
        self.conv = CConv2d(cfg.feature_channels, cfg.st_channels,
                            cfg.kernel_size, cfg.kernel_size // 2, rng)
        self.fc = CLinear(cfg.st_channels * self.pooled**2, cfg.num_classes, rng)

    def __call__(self, h):
        h = self.conv(h)
        b = h.shape[2]
        padded = self.pooled * 4
        if padded != b:
            h = T.pad(h, [(0, 0), (0, 0), (0, padded - b), (0, padded - b)])
        h = F.maxpool2d(h, 4, 4)
        n = h.shape[0]
        h = T.reshape(h, (n, self.cfg.st_channels * self.pooled**2))
        return self.fc(h)

    def params(self):
        return (
            [(f"conv.{n}", p) for n, p in self.conv.params()]
            + [(f"fc.{n}", p) for n, p in self.fc.params()]
        )


class AirOdeNetwork:
    """The full dual-task transceiver network.

    codebooks: list of 3 complex arrays (K, Nc), the feasible effective
    weights of the three surface groups after channel tracking. They fix
    what the ODE block's quantizer may output, and their fingerprint ties
    a trained checkpoint to one channel realization.
    """

    def __init__(self, config, codebooks=None, channel_info=None):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([config.init_seed, 7]))
        self.encoder = Encoder(config, rng)
        self.ode = OdeBlock(config.kernel_size, rng)
        self.decoder_ri = DecoderRI(config, rng)
        self.decoder_st = DecoderST(config, rng)
        self.codebooks = None
        self.fingerprint = None
        self.channel_info = dict(channel_info) if channel_info else {}
        if codebooks is not None:
            self.set_codebooks(codebooks)

    def set_codebooks(self, codebooks, reinit_latent=True):
        codebooks = [np.ascontiguousarray(cb, dtype=np.complex128) for cb in codebooks]
        self.ode.set_codebooks(codebooks, reinit_latent)
        self.codebooks = codebooks
        self.fingerprint = codebook_fingerprint(codebooks)

    def forward(self, images, mode="digital", training=False, air_fn=None):
        """images: (N, A, A) tensor -> (reconstruction (N, A, A), tag
        scores (N, Q)).

        mode "digital" runs the ODE block in-graph; mode "analog" hands
        the normalized symbol matrix (plain ndarray) to `air_fn`, which
        must return the received normalized symbols. The analog path is
        deployment-only: no gradient flows through it.
        """
        cfg = self.config
        n = images.shape[0]
        a = cfg.image_size
        if images.shape != (n, a, a):
            raise ValueError(f"expected images shaped (N, {a}, {a}), got {images.shape}")
        x = T.reshape(images, (n, 1, a, a))
        feats = self.encoder(x, training)
        b = cfg.feature_size()
        flat = T.reshape(feats, (n, cfg.bottleneck_size()))
        s_norm, mu, sg, _ = F.normalize_rows(flat)
        if mode == "digital":
            z = self.ode(s_norm)
        elif mode == "analog":
            if air_fn is None:
                raise ValueError("analog mode needs an air_fn")
            received = air_fn(s_norm.data)
            if received.shape != s_norm.data.shape:
                raise ValueError(
                    f"air_fn returned {received.shape}, expected {s_norm.data.shape}"
                )
            z = T.tensor(received)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        sym = F.denormalize_rows(z, mu, sg)
        h = T.reshape(sym, (n, cfg.feature_channels, b, b))
        img = self.decoder_ri(h)
        img = T.reshape(img, (n, a, a))
        tags = self.decoder_st(h)
        return img, tags

    def __call__(self, images, **kw):
        return self.forward(images, **kw)

    def blocks(self):
        return {
            "encoder": self.encoder,
            "ode": self.ode,
            "decoder_ri": self.decoder_ri,
            "decoder_st": self.decoder_st,
        }

    def parameters(self):
        """Flat list of (qualified_name, tensor), deterministic order."""
        out = []
        for bname, block in self.blocks().items():
            out.extend((f"{bname}.{pname}", p) for pname, p in block.params())
        return out

    def chosen_indices(self):
        return self.ode.chosen_indices()


# ---------------------------------------------------------------------------
# checkpoint I/O (JSON; arrays stored as flat re/im lists)
# ---------------------------------------------------------------------------

def _arr_to_json(a):
    a = np.asarray(a, dtype=np.complex128)
    return {
        "shape": list(a.shape),
        "re": a.real.ravel().tolist(),
        "im": a.imag.ravel().tolist(),
    }


def _arr_from_json(d):
    re = np.array(d["re"], dtype=np.float64)
    im = np.array(d["im"], dtype=np.float64)
    return (re + 1j * im).reshape(d["shape"])


def save_checkpoint(net, path, extra=None):
    doc = {
        "format": "airode-checkpoint",
        "version": 1,
        "config": asdict(net.config),
        "params": {name: _arr_to_json(p.data) for name, p in net.parameters()},
        "bn": {k: _arr_to_json(v) for k, v in net.encoder.bn.state().items()},
        "codebooks": [_arr_to_json(cb) for cb in (net.codebooks or [])],
        "fingerprint": net.fingerprint,
        "channel_info": net.channel_info,
        "extra": extra or {},
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "airode-checkpoint":
        raise ValueError(f"{path}: not a checkpoint file")
    cfg = NetworkConfig(**doc["config"])
    net = AirOdeNetwork(cfg, channel_info=doc.get("channel_info") or None)
    if doc["codebooks"]:
        net.set_codebooks([_arr_from_json(cb) for cb in doc["codebooks"]],
                          reinit_latent=False)
        if net.fingerprint != doc["fingerprint"]:
            raise ValueError(f"{path}: codebook fingerprint mismatch")
    params = dict(net.parameters())
    for name, blob in doc["params"].items():
        if name not in params:
            raise ValueError(f"{path}: unknown parameter {name}")
        arr = _arr_from_json(blob)
        if arr.shape != params[name].data.shape:
            raise ValueError(
                f"{path}: parameter {name} shape {arr.shape} vs {params[name].data.shape}"
            )
        params[name].data = arr
    net.encoder.bn.load_state(
        {k: _arr_from_json(v) for k, v in doc["bn"].items()}
    )
    return net, doc.get("extra") or {}
