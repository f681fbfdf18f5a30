"""Over-the-air execution of the ODE block.

Instead of computing the three quantized 1 x K convolutions digitally,
the transmitter radiates time-staggered copies of the activated symbol
vector through the surface groups; propagation does the multiply, the
air does the sum. One frame of C + 2*floor(K/2) slots per hop:

  hop 1: K group-1 tap streams + the direct transmitter-relay stream
         combine at the relay into Psi1(s) + s;
  relay: buffers C slots, applies the complex ReLU, retransmits K
         half-amplitude streams through group 2;
  hop 2: those plus K half-amplitude group-3 streams and the direct
         transmitter-receiver stream combine into the ODE output.

Per-antenna streams are precoded with the tracking precoders (and 1/d
for the direct links), so with zero noise the received frame equals the
digital ODE block exactly. Noise per hop is calibrated from a noiseless
dry run: variance = mean received power * 10**(-snr_db/10).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nnops import relu_c

__all__ = [
    "NormStats",
    "normalize_symbols",
    "denormalize_symbols",
    "AnalogContext",
    "SymbolFrame",
    "build_frame",
    "transmit",
    "transmit_normalized",
    "deploy_pipeline",
    "CodebookMismatchError",
]


class CodebookMismatchError(RuntimeError):
    """The context's codebooks are not the ones the network trained on."""


@dataclass
class NormStats:
    mean: np.ndarray    # (N,) complex per-row mean
    scale: np.ndarray   # (N,) real rms deviation (1.0 where clamped)
    clamped: np.ndarray  # (N,) bool, rows that were constant


def normalize_symbols(s):
    """Zero-mean, unit-variance per row; returns (normalized, stats).

    Plain-array twin of the differentiable bottleneck op. Constant rows
    get scale 1 and are flagged in stats.clamped.
    """
    s = np.asarray(s, dtype=np.complex128)
    squeeze = s.ndim == 1
    if squeeze:
        s = s[None, :]
    if s.shape[1] < 2:
        raise ValueError(f"need at least 2 symbols per row, got shape {s.shape}")
    mu = s.mean(axis=1)
    d = s - mu[:, None]
    sigma = np.sqrt(np.mean(np.abs(d) ** 2, axis=1))
    clamped = sigma == 0.0
    sig = np.where(clamped, 1.0, sigma)
    out = d / sig[:, None]
    if squeeze:
        out = out[0]
    return out, NormStats(mean=mu, scale=sig, clamped=clamped)


def denormalize_symbols(y, stats):
    y = np.asarray(y, dtype=np.complex128)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[None, :]
    out = y * stats.scale[:, None] + stats.mean[:, None]
    return out[0] if squeeze else out


@dataclass
class AnalogContext:
    """Everything the air needs: which codebook entry each surface is
    set to, the raw (untracked) weights those settings realize, the
    precoders, the direct-link coefficients, and the noise setting."""

    codebooks: object          # CodebookBundle
    indices: np.ndarray        # (3, K) chosen codebook entries
    d1: complex
    d2: complex
    snr_db: float = None       # None -> noiseless
    seed: int = 0
    no_ode: bool = False       # direct links only (surfaces switched off)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        k = len(self.codebooks.sets[0])
        if self.indices.shape != (3, k):
            raise ValueError(f"indices shape {self.indices.shape}, expected (3, {k})")
        nc = self.codebooks.size()
        if np.any(self.indices < 0) or np.any(self.indices >= nc):
            raise ValueError(f"codebook index out of range [0, {nc})")
        if self.d1 == 0 or self.d2 == 0:
            raise ValueError("direct link coefficient is zero; cannot invert")
        self.raw_sel = np.array(
            [[self.codebooks.raw(p, kk, self.indices[p, kk]) for kk in range(k)]
             for p in range(3)]
        )
        self.pre = np.array(
            [[self.codebooks.precoder(p, kk) for kk in range(k)] for p in range(3)]
        )

    @property
    def taps(self):
        return self.indices.shape[1]

    @property
    def fingerprint(self):
        return self.codebooks.fingerprint

    @classmethod
    def from_channel(cls, realization, codebooks, indices, snr_db=None, seed=0,
                     no_ode=False):
        return cls(codebooks=codebooks, indices=indices, d1=realization.d1,
                   d2=realization.d2, snr_db=snr_db, seed=seed, no_ode=no_ode)


@dataclass
class SymbolFrame:
    """Per-antenna transmit streams for one batch of frames.

    streams: (N, 2K+2, L) with L = C + 2*floor(K/2); rows 0..K-1 are the
    group-1 tap streams, K..2K-1 the group-3 tap streams (half
    amplitude), row 2K the direct-to-relay stream, row 2K+1 the
    direct-to-receiver stream. Tap row k is read at offset k, direct
    rows at offset floor(K/2); the guard slots are exact zeros.
    """

    streams: np.ndarray
    slot_count: int
    guard: int
    stats: NormStats = None


def build_frame(s_norm, context, stats=None):
    s = np.asarray(s_norm, dtype=np.complex128)
    if s.ndim == 1:
        s = s[None, :]
    n, c = s.shape
    k = context.taps
    if k % 2 == 0:
        raise ValueError(f"tap count must be odd, got {k}")
    p = k // 2
    padded = np.pad(s, ((0, 0), (p, p)))
    act = relu_c(padded)
    streams = np.zeros((n, 2 * k + 2, c + 2 * p), dtype=np.complex128)
    for kk in range(k):
        streams[:, kk] = context.pre[0, kk] * act
        streams[:, k + kk] = 0.5 * context.pre[2, kk] * act
    streams[:, 2 * k] = padded / context.d1
    streams[:, 2 * k + 1] = padded / context.d2
    return SymbolFrame(streams=streams, slot_count=c, guard=p, stats=stats)


def _propagate(frame, context, n1, n2, trace=None):
    """One pass through both hops with the given noise (arrays or 0)."""
    k, p, c = context.taps, frame.guard, frame.slot_count
    st = frame.streams
    n = st.shape[0]
    relay_in = st[:, 2 * k, p : p + c] * context.d1
    if not context.no_ode:
        for kk in range(k):
            relay_in = relay_in + context.raw_sel[0, kk] * st[:, kk, kk : kk + c]
    relay_in = relay_in + n1
    relay_act = relu_c(relay_in)
    rx = st[:, 2 * k + 1, p : p + c] * context.d2
    if not context.no_ode:
        relay_pad = np.pad(relay_act, ((0, 0), (p, p)))
        for kk in range(k):
            # relay retransmits half-amplitude precoded copies through group 2
            rx = rx + context.raw_sel[1, kk] * (
                0.5 * context.pre[1, kk] * relay_pad[:, kk : kk + c]
            )
            rx = rx + context.raw_sel[2, kk] * st[:, k + kk, kk : kk + c]
    rx = rx + n2
    if trace is not None:
        for ni in range(n):
            for t in range(c):
                trace.append((ni, t, "relay_in", relay_in[ni, t]))
                trace.append((ni, t, "rx_out", rx[ni, t]))
    return relay_in, rx


def transmit_normalized(frame, context, rng=None, trace_path=None):
    """Run the frame over the air; returns the received normalized-domain
    symbol matrix (N, C).

    Noiseless when context.snr_db is None; otherwise per-hop noise with
    variance calibrated against the noiseless received power of this
    very frame (a dry run), so the stated SNR holds at each combiner.
    """
    n, _, _ = frame.streams.shape
    c = frame.slot_count
    relay0, rx0 = _propagate(frame, context, 0.0, 0.0)
    if context.snr_db is None or math.isinf(context.snr_db):
        received = rx0
        trace_rows = None
        if trace_path:
            trace_rows = []
            _propagate(frame, context, 0.0, 0.0, trace_rows)
    else:
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence([context.seed]))
        att = 10.0 ** (-context.snr_db / 10.0)
        var1 = np.mean(np.abs(relay0) ** 2, axis=1, keepdims=True) * att
        var2 = np.mean(np.abs(rx0) ** 2, axis=1, keepdims=True) * att
        n1 = np.sqrt(var1 / 2) * (rng.normal(size=(n, c)) + 1j * rng.normal(size=(n, c)))
        n2 = np.sqrt(var2 / 2) * (rng.normal(size=(n, c)) + 1j * rng.normal(size=(n, c)))
        trace_rows = [] if trace_path else None
        _, received = _propagate(frame, context, n1, n2, trace_rows)
    if trace_path:
        with open(trace_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["frame", "slot", "stage", "re", "im"])
            for ni, t, stage, z in trace_rows:
                w.writerow([ni, t, stage, f"{z.real:.12e}", f"{z.imag:.12e}"])
    return received


def transmit(frame, context, rng=None, trace_path=None):
    """Like transmit_normalized, but undoes the symbol normalization
    using the stats carried in the frame (when present)."""
    received = transmit_normalized(frame, context, rng, trace_path)
    if frame.stats is None:
        return received
    return denormalize_symbols(received, frame.stats)


def deploy_pipeline(net, images, context, rng=None):
    """Full analog inference: encode, normalize, run the air, decode.

    Refuses to run if the context's codebooks differ from the ones the
    network was trained against, or if the tap counts disagree.
    Returns (reconstructions (N, A, A), tag scores (N, Q)).
    """
    if net.fingerprint is None:
        raise CodebookMismatchError("network has no codebooks attached")
    if context.fingerprint != net.fingerprint:
        raise CodebookMismatchError(
            "context codebooks do not match the network's training codebooks"
        )
    if context.taps != net.config.kernel_size:
        raise ValueError(
            f"context has {context.taps} taps, network kernel is {net.config.kernel_size}"
        )
    imgs = np.asarray(images, dtype=np.complex128)
    if imgs.ndim == 2:
        imgs = imgs[None]

    def air(s_norm):
        frame = build_frame(s_norm, context)
        return transmit_normalized(frame, context, rng)

    with T.no_grad():
        img, tags = net.forward(T.tensor(imgs), mode="analog", air_fn=air)
    return img.data, tags.data
