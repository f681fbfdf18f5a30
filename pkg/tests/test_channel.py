"""Channel model checks: fading statistics, codebook enumeration against
a brute-force oracle, tracking, and serialization."""

import math

import numpy as np
import pytest

from airode import channel as ch


def small_geometry(seed=0, k=3):
    return ch.SystemGeometry.build(ris_per_group=k, elements_x=3, elements_y=3,
                                   seed=seed)


class TestBasics:
    def test_steering_vector(self):
        v = ch.steering_vector(4, 0.3)
        np.testing.assert_allclose(np.abs(v), 1.0)
        np.testing.assert_allclose(
            v, np.exp(1j * math.pi * np.arange(4) * math.sin(0.3))
        )
        assert v[0] == 1.0 + 0.0j

    def test_path_loss_reference_point(self):
        # offset 35.6 dB plus 22 dB per decade: PL(10 m) = 57.6 dB
        np.testing.assert_allclose(ch.path_loss_db(10.0), 57.6)
        np.testing.assert_allclose(ch.path_loss_db(100.0), 79.6)
        with pytest.raises(ValueError, match="positive"):
            ch.path_loss_db(0.0)

    def test_path_gain_inverse(self):
        g = ch.path_gain(10.0)
        np.testing.assert_allclose(10 * np.log10(1 / g), 57.6)

    def test_geometry_layout(self):
        geo = small_geometry()
        assert geo.elements == 9
        np.testing.assert_array_equal(geo.hop_endpoints[0, 0], [0, 0])
        np.testing.assert_array_equal(geo.hop_endpoints[0, 1], [20, 0])
        np.testing.assert_array_equal(geo.hop_endpoints[2, 1], [40, 0])
        np.testing.assert_allclose(geo.direct_distances, [20.0, 40.0])
        assert np.all(np.abs(geo.angles_in) <= math.pi / 3)

    def test_geometry_deterministic(self):
        a, b = small_geometry(5), small_geometry(5)
        np.testing.assert_array_equal(a.panel_positions, b.panel_positions)
        c = small_geometry(6)
        assert not np.array_equal(a.panel_positions, c.panel_positions)


class TestFading:
    def test_determinism_and_seed_sensitivity(self):
        geo = small_geometry()
        p = ch.ChannelModelParams()
        r1 = ch.sample_channel(geo, p, 42)
        r2 = ch.sample_channel(geo, p, 42)
        np.testing.assert_array_equal(r1.panels[0][0].h, r2.panels[0][0].h)
        assert r1.d1 == r2.d1
        r3 = ch.sample_channel(geo, p, 43)
        assert not np.array_equal(r1.panels[0][0].h, r3.panels[0][0].h)

    def test_rician_mean_power_matches_path_gain(self):
        geo = small_geometry()
        p = ch.ChannelModelParams()
        gain = ch.path_gain(geo.r_in(0, 0), p)
        powers = []
        for s in range(400):
            r = ch.sample_channel(geo, p, s)
            powers.append(np.mean(np.abs(r.panels[0][0].h) ** 2))
        np.testing.assert_allclose(np.mean(powers), gain, rtol=0.05)

    def test_strong_rician_factor_approaches_los(self):
        geo = small_geometry()
        p = ch.ChannelModelParams(rician_factor=1e9)
        r = ch.sample_channel(geo, p, 0)
        h = r.panels[0][0].h
        los = math.sqrt(ch.path_gain(geo.r_in(0, 0), p)) * ch.steering_vector(
            9, geo.angles_in[0, 0]
        )
        np.testing.assert_allclose(h, los, rtol=1e-3)


class TestCodebook:
    def test_enumeration_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        m = 3
        panel = ch.RisPanel(0, 0,
                            h=rng.normal(size=m) + 1j * rng.normal(size=m),
                            g=rng.normal(size=m) + 1j * rng.normal(size=m))
        params = ch.ChannelModelParams()
        book = ch.enumerate_codebook(panel, params)
        assert book.shape == (8,)
        lv = params.phase_levels
        for n in range(8):
            acc = 0j
            for mm in range(m):
                bit = (n >> mm) & 1
                acc += panel.g[mm] * np.exp(1j * lv[bit]) * panel.h[mm]
            np.testing.assert_allclose(book[n], acc, rtol=1e-12)

    def test_baseline_is_plain_cascade(self):
        rng = np.random.default_rng(1)
        panel = ch.RisPanel(0, 0, h=rng.normal(size=4) + 0j, g=rng.normal(size=4) + 0j)
        book = ch.enumerate_codebook(panel)
        np.testing.assert_allclose(book[0], np.sum(panel.g * panel.h), rtol=1e-12)

    def test_enumeration_limit(self):
        panel = ch.RisPanel(0, 0, h=np.ones(17, complex), g=np.ones(17, complex))
        with pytest.raises(ValueError, match="refusing"):
            ch.enumerate_codebook(panel)

    def test_full_size_is_512_for_nine_elements(self):
        geo = small_geometry()
        r = ch.sample_channel(geo, ch.ChannelModelParams(), 7)
        book = ch.enumerate_codebook(r.panels[1][2])
        assert book.shape == (512,)


class TestTracking:
    def test_baseline_entry_exactly_one(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            raw = rng.normal(size=8) * 1e-6 + 1j * rng.normal(size=8) * 1e-6
            fws = ch.track_and_rotate(raw)
            assert fws.entries[0] == 1.0 + 0.0j  # bit-exact
            np.testing.assert_allclose(fws.entries[1:], raw[1:] / raw[0], rtol=1e-12)

    def test_degenerate_channel_raises(self):
        raw = np.zeros(4, complex)
        with pytest.raises(ch.DegenerateChannelError):
            ch.track_and_rotate(raw)

    def test_restrict_keeps_prefix_and_baseline(self):
        raw = np.arange(1, 9) + 1j
        fws = ch.track_and_rotate(raw)
        sub = fws.restrict(3)
        assert sub.entries.shape == (3,)
        assert sub.entries[0] == 1.0 + 0.0j
        np.testing.assert_array_equal(sub.entries, fws.entries[:3])
        with pytest.raises(ValueError):
            fws.restrict(0)
        with pytest.raises(ValueError):
            fws.restrict(9)

    def test_bundle_shapes_and_restrict(self):
        geo = small_geometry()
        r = ch.sample_channel(geo, ch.ChannelModelParams(), 3)
        bundle = ch.build_codebooks(r)
        arrays = bundle.arrays()
        assert len(arrays) == 3 and arrays[0].shape == (3, 512)
        assert bundle.size() == 512
        small = bundle.restrict(64)
        assert small.size() == 64
        np.testing.assert_array_equal(small.arrays()[0], arrays[0][:, :64])
        assert small.fingerprint != bundle.fingerprint

    def test_entries_times_inverse_precoder_recovers_raw(self):
        geo = small_geometry()
        r = ch.sample_channel(geo, ch.ChannelModelParams(), 3)
        bundle = ch.build_codebooks(r)
        fws = bundle.sets[1][0]
        raw = bundle.raws[1][0]
        np.testing.assert_allclose(fws.entries[5] / fws.precoder, raw[5], rtol=1e-12)


class TestSnr:
    def test_hand_value(self):
        g = np.array([1 + 0j, 0 + 1j])
        s = np.array([1 + 0j, 1 + 0j])
        # received = 1 + j, power 2
        np.testing.assert_allclose(ch.snr_linear(g, s, 0.5), 4.0)

    def test_noiseless_is_infinite(self):
        assert ch.snr_linear(np.ones(2, complex), np.ones(2, complex), 0.0) == math.inf

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            ch.snr_linear(np.ones(2, complex), np.ones(3, complex), 1.0)


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        geo = small_geometry(4)
        params = ch.ChannelModelParams()
        r = ch.sample_channel(geo, params, 17)
        path = tmp_path / "chan.json"
        ch.channel_to_json(r, path)
        r2 = ch.channel_from_json(str(path))
        np.testing.assert_array_equal(r.panels[2][1].g, r2.panels[2][1].g)
        assert r.d1 == r2.d1 and r.d2 == r2.d2
        np.testing.assert_array_equal(r.geometry.panel_positions,
                                      r2.geometry.panel_positions)

    def test_hash_detects_tampering(self, tmp_path):
        geo = small_geometry(4)
        r = ch.sample_channel(geo, ch.ChannelModelParams(), 17)
        doc = ch.channel_to_json(r)
        doc["seed"] = 18
        with pytest.raises(ValueError, match="hash mismatch"):
            ch.channel_from_json(doc)

    def test_hash_stable(self):
        geo = small_geometry(4)
        p = ch.ChannelModelParams()
        assert ch.channel_hash(geo, p, 1) == ch.channel_hash(geo, p, 1)
        assert ch.channel_hash(geo, p, 1) != ch.channel_hash(geo, p, 2)
