"""Wireless channel model for the distributed reconfigurable surfaces.

Three surface groups assist the two-hop link: group 1 between the
transmitter and the relay, group 2 between the relay and the receiver,
group 3 spanning transmitter to receiver directly. Each surface has M
one-bit elements (phase 0 or pi/4), so a surface realizes 2**M cascaded
weights; after channel-inversion tracking the feasible effective weights
form the codebook the network's quantizer snaps to.

Geometry (positions, steering angles) is fixed per geometry seed; fading
is redrawn per channel seed with one counter-derived stream per panel,
so any single panel can be regenerated independently.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = [
    "ChannelModelParams",
    "SystemGeometry",
    "RisPanel",
    "ChannelRealization",
    "FeasibleWeightSet",
    "CodebookBundle",
    "DegenerateChannelError",
    "path_loss_db",
    "path_gain",
    "steering_vector",
    "sample_channel",
    "enumerate_codebook",
    "track_and_rotate",
    "build_codebooks",
    "snr_linear",
    "channel_hash",
    "channel_to_json",
    "channel_from_json",
]

ENUMERATION_LIMIT = 16  # beyond 2**16 configs, exhaustive enumeration is refused


class DegenerateChannelError(RuntimeError):
    """Raised when the baseline cascaded weight is exactly zero, so the
    channel-inversion precoder does not exist."""


@dataclass(frozen=True)
class ChannelModelParams:
    rician_factor: float = 10.0
    path_loss_offset_db: float = 35.6
    path_loss_exponent: float = 2.2
    phase_levels: tuple = (0.0, math.pi / 4)
    tx_power: float = 1.0

    def __post_init__(self):
        if self.rician_factor < 0 or self.tx_power <= 0:
            raise ValueError(f"invalid channel params: {self}")
        if len(self.phase_levels) < 2:
            raise ValueError("need at least two phase levels")


def path_loss_db(r, params=None):
    """PL(r) = offset + 10 * exponent * log10(r) in dB, r in meters."""
    p = params or ChannelModelParams()
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError(f"path loss needs positive distance, got {r}")
    return p.path_loss_offset_db + 10.0 * p.path_loss_exponent * np.log10(r)


def path_gain(r, params=None):
    """Linear amplitude-squared gain 10**(-PL/10)."""
    return 10.0 ** (-path_loss_db(r, params) / 10.0)


def steering_vector(m, angle):
    """Uniform array response: entry i is exp(j*pi*i*sin(angle))."""
    return np.exp(1j * math.pi * np.arange(m) * math.sin(angle))


@dataclass
class SystemGeometry:
    """Node placement and per-panel steering angles.

    Transmitter at x=0, relay at x=20, receiver at x=40 (meters) on a
    line; panels of each group sit near the midpoint of the hop they
    assist, offset a few meters laterally. Angles of arrival/departure
    are drawn uniformly in [-pi/3, pi/3] once per panel.
    """

    ris_per_group: int
    elements_x: int
    elements_y: int
    seed: int
    panel_positions: np.ndarray  # (3, K, 2)
    hop_endpoints: np.ndarray    # (3, 2, 2): per group, (source, destination)
    angles_in: np.ndarray        # (3, K) angle of arrival at the panel
    angles_out: np.ndarray       # (3, K) angle of departure toward the hop end
    direct_distances: np.ndarray = field(default=None)  # (2,): tx-relay, tx-rx

    GROUPS = 3

    def __post_init__(self):
        k = self.ris_per_group
        if self.panel_positions.shape != (3, k, 2):
            raise ValueError(f"panel_positions shape {self.panel_positions.shape}")
        if self.angles_in.shape != (3, k) or self.angles_out.shape != (3, k):
            raise ValueError("angle arrays must be (3, K)")
        if self.direct_distances is None:
            tx, relay = self.hop_endpoints[0, 0], self.hop_endpoints[0, 1]
            rx = self.hop_endpoints[2, 1]
            self.direct_distances = np.array(
                [np.linalg.norm(relay - tx), np.linalg.norm(rx - tx)]
            )

    @property
    def elements(self):
        return self.elements_x * self.elements_y

    @classmethod
    def build(cls, ris_per_group=3, elements_x=3, elements_y=3, seed=0):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
        tx = np.array([0.0, 0.0])
        relay = np.array([20.0, 0.0])
        rx = np.array([40.0, 0.0])
        ends = np.array([[tx, relay], [relay, rx], [tx, rx]])
        mid_x = np.array([10.0, 30.0, 20.0])
        k = ris_per_group
        pos = np.zeros((3, k, 2))
        for p in range(3):
            pos[p, :, 0] = mid_x[p] + rng.uniform(-2.0, 2.0, size=k)
            pos[p, :, 1] = rng.uniform(2.0, 6.0, size=k)
        a_in = rng.uniform(-math.pi / 3, math.pi / 3, size=(3, k))
        a_out = rng.uniform(-math.pi / 3, math.pi / 3, size=(3, k))
        return cls(ris_per_group=k, elements_x=elements_x, elements_y=elements_y,
                   seed=seed, panel_positions=pos, hop_endpoints=ends,
                   angles_in=a_in, angles_out=a_out)

    def r_in(self, p, k):
        return float(np.linalg.norm(self.panel_positions[p, k] - self.hop_endpoints[p, 0]))

    def r_out(self, p, k):
        return float(np.linalg.norm(self.hop_endpoints[p, 1] - self.panel_positions[p, k]))

    def to_dict(self):
        return {
            "ris_per_group": self.ris_per_group,
            "elements_x": self.elements_x,
            "elements_y": self.elements_y,
            "seed": self.seed,
            "panel_positions": self.panel_positions.tolist(),
            "hop_endpoints": self.hop_endpoints.tolist(),
            "angles_in": self.angles_in.tolist(),
            "angles_out": self.angles_out.tolist(),
            "direct_distances": self.direct_distances.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            ris_per_group=d["ris_per_group"],
            elements_x=d["elements_x"],
            elements_y=d["elements_y"],
            seed=d["seed"],
            panel_positions=np.array(d["panel_positions"]),
            hop_endpoints=np.array(d["hop_endpoints"]),
            angles_in=np.array(d["angles_in"]),
            angles_out=np.array(d["angles_out"]),
            direct_distances=np.array(d["direct_distances"]),
        )


@dataclass
class RisPanel:
    """One surface: incoming channel h (hop source -> elements) and
    outgoing channel g (elements -> hop destination)."""

    group: int
    index: int
    h: np.ndarray  # (M,)
    g: np.ndarray  # (M,)

    @property
    def cascade(self):
        """Per-element cascaded coefficient g_m * h_m."""
        return self.g * self.h


@dataclass
class ChannelRealization:
    geometry: SystemGeometry
    params: ChannelModelParams
    seed: int
    panels: list  # [group][k] -> RisPanel
    d1: complex   # direct tx -> relay coefficient
    d2: complex   # direct tx -> rx coefficient


def _rician(rng, m, angle, gain, rician_factor):
    los = steering_vector(m, angle)
    nlos = (rng.normal(size=m) + 1j * rng.normal(size=m)) / math.sqrt(2.0)
    k = rician_factor
    return math.sqrt(gain) * (
        math.sqrt(k / (1.0 + k)) * los + math.sqrt(1.0 / (1.0 + k)) * nlos
    )


def sample_channel(geometry, params, seed):
    """Draw one fading realization over the fixed geometry.

    Each panel uses its own generator seeded by (seed, group, index), so
    redrawing for a different seed changes only the scattered component.
    Incoming h is drawn before outgoing g.
    """
    m = geometry.elements
    panels = []
    for p in range(SystemGeometry.GROUPS):
        row = []
        for k in range(geometry.ris_per_group):
            rng = np.random.default_rng(np.random.SeedSequence([seed, p, k]))
            h = _rician(rng, m, geometry.angles_in[p, k],
                        path_gain(geometry.r_in(p, k), params), params.rician_factor)
            g = _rician(rng, m, geometry.angles_out[p, k],
                        path_gain(geometry.r_out(p, k), params), params.rician_factor)
            row.append(RisPanel(group=p, index=k, h=h, g=g))
        panels.append(row)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 99, 0]))
    ga1, ga2 = path_gain(geometry.direct_distances, params)
    d1 = math.sqrt(ga1) * (rng.normal() + 1j * rng.normal()) / math.sqrt(2.0)
    d2 = math.sqrt(ga2) * (rng.normal() + 1j * rng.normal()) / math.sqrt(2.0)
    return ChannelRealization(geometry=geometry, params=params, seed=seed,
                              panels=panels, d1=complex(d1), d2=complex(d2))


def enumerate_codebook(panel, params=None):
    """All 2**M raw cascaded weights of one panel, in binary order.

    Configuration n sets element m to phase_levels[bit m of n] (bit 0 =
    least significant); n = 0 is the all-baseline configuration.
    """
    p = params or ChannelModelParams()
    cascade = panel.cascade
    m = cascade.shape[0]
    if m > ENUMERATION_LIMIT:
        raise ValueError(
            f"refusing to enumerate 2**{m} configurations (limit 2**{ENUMERATION_LIMIT})"
        )
    if len(p.phase_levels) != 2:
        raise ValueError("exhaustive enumeration assumes one-bit elements")
    n = np.arange(2**m)
    bits = (n[:, None] >> np.arange(m)) & 1
    phases = np.asarray(p.phase_levels)[bits]
    return np.exp(1j * phases) @ cascade


@dataclass
class FeasibleWeightSet:
    """Tracked codebook of one panel: entries = precoder * raw weights,
    with entry 0 pinned to exactly 1+0j (the baseline configuration)."""

    group: int
    index: int
    entries: np.ndarray
    precoder: complex
    baseline_index: int = 0

    def restrict(self, n):
        if not 1 <= n <= self.entries.shape[0]:
            raise ValueError(f"cannot restrict codebook of {self.entries.shape[0]} to {n}")
        return FeasibleWeightSet(self.group, self.index,
                                 self.entries[:n].copy(), self.precoder)


def track_and_rotate(raw, group=0, index=0):
    """Channel-inversion tracking: divide by the baseline raw weight so
    the all-baseline configuration maps to exactly 1+0j."""
    raw = np.asarray(raw, dtype=np.complex128)
    base = raw[0]
    if base == 0:
        raise DegenerateChannelError(
            f"panel ({group},{index}): baseline cascaded weight is zero"
        )
    v = 1.0 / base
    entries = raw * v
    entries[0] = 1.0 + 0.0j
    return FeasibleWeightSet(group=group, index=index, entries=entries, precoder=v)


@dataclass
class CodebookBundle:
    """The P x K tracked codebooks of one channel realization."""

    sets: list  # [group][k] -> FeasibleWeightSet
    raws: list  # [group][k] -> raw weight arrays (pre-tracking)

    def arrays(self):
        """Per-group stacked entries, shape (K, Nc), for the network."""
        return [np.stack([s.entries for s in row]) for row in self.sets]

    def precoder(self, p, k):
        return self.sets[p][k].precoder

    def raw(self, p, k, idx):
        return self.raws[p][k][idx]

    def size(self):
        return self.sets[0][0].entries.shape[0]

    def restrict(self, n):
        return CodebookBundle(
            sets=[[s.restrict(n) for s in row] for row in self.sets],
            raws=[[r[:n].copy() for r in row] for row in self.raws],
        )

    @property
    def fingerprint(self):
        from .layers import codebook_fingerprint

        return codebook_fingerprint(self.arrays())


def build_codebooks(realization, restrict=None):
    sets, raws = [], []
    for p, row in enumerate(realization.panels):
        srow, rrow = [], []
        for k, panel in enumerate(row):
            raw = enumerate_codebook(panel, realization.params)
            srow.append(track_and_rotate(raw, group=p, index=k))
            rrow.append(raw)
        sets.append(srow)
        raws.append(rrow)
    bundle = CodebookBundle(sets=sets, raws=raws)
    if restrict is not None:
        bundle = bundle.restrict(restrict)
    return bundle


def snr_linear(gains, symbols, noise_variance):
    """|sum(gains * symbols)|^2 / noise_variance; infinite when noiseless."""
    gains = np.asarray(gains, dtype=np.complex128)
    symbols = np.asarray(symbols, dtype=np.complex128)
    if gains.shape != symbols.shape:
        raise ValueError(f"shape mismatch {gains.shape} vs {symbols.shape}")
    if noise_variance < 0:
        raise ValueError("noise variance must be non-negative")
    power = abs(np.sum(gains * symbols)) ** 2
    if noise_variance == 0.0:
        return math.inf
    return power / noise_variance


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def channel_hash(geometry, params, seed):
    doc = {
        "geometry": geometry.to_dict(),
        "params": asdict(params) | {"phase_levels": list(params.phase_levels)},
        "seed": seed,
    }
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def _c2l(z):
    z = np.asarray(z, dtype=np.complex128)
    return [z.real.tolist(), z.imag.tolist()]


def _l2c(pair):
    return np.asarray(pair[0]) + 1j * np.asarray(pair[1])


def channel_to_json(real, path=None):
    doc = {
        "format": "airode-channel",
        "version": 1,
        "hash": channel_hash(real.geometry, real.params, real.seed),
        "geometry": real.geometry.to_dict(),
        "params": asdict(real.params) | {"phase_levels": list(real.params.phase_levels)},
        "seed": real.seed,
        "panels": [[{"h": _c2l(pn.h), "g": _c2l(pn.g)} for pn in row]
                   for row in real.panels],
        "d1": [real.d1.real, real.d1.imag],
        "d2": [real.d2.real, real.d2.imag],
    }
    if path is not None:
        with open(path, "w") as f:
            json.dump(doc, f)
    return doc


def channel_from_json(doc_or_path):
    if isinstance(doc_or_path, (str, bytes)):
        with open(doc_or_path) as f:
            doc = json.load(f)
    else:
        doc = doc_or_path
    if doc.get("format") != "airode-channel":
        raise ValueError("not a channel document")
    geo = SystemGeometry.from_dict(doc["geometry"])
    pd = dict(doc["params"])
    pd["phase_levels"] = tuple(pd["phase_levels"])
    params = ChannelModelParams(**pd)
    expect = channel_hash(geo, params, doc["seed"])
    if doc["hash"] != expect:
        raise ValueError("channel hash mismatch (document edited?)")
    panels = [
        [RisPanel(group=p, index=k, h=_l2c(pn["h"]), g=_l2c(pn["g"]))
         for k, pn in enumerate(row)]
        for p, row in enumerate(doc["panels"])
    ]
    return ChannelRealization(
        geometry=geo, params=params, seed=doc["seed"], panels=panels,
        d1=complex(doc["d1"][0], doc["d1"][1]),
        d2=complex(doc["d2"][0], doc["d2"][1]),
    )
