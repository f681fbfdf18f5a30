"""Over-the-air deployment checks.

The central property: with zero noise, running the frame protocol over
the tracked surfaces reproduces the digital quantized ODE block to
floating-point accuracy, end to end through the full network.
"""

import numpy as np
import pytest

from airode import analog as an
from airode import channel as ch
from airode import nnops as F
from airode import tensor as T
from airode.layers import AirOdeNetwork, NetworkConfig
from conftest import cgauss


def make_setup(seed=0, snr_db=None, no_ode=False, restrict=None):
    geo = ch.SystemGeometry.build(seed=0)
    params = ch.ChannelModelParams()
    real = ch.sample_channel(geo, params, seed)
    bundle = ch.build_codebooks(real, restrict=restrict)
    net = AirOdeNetwork(NetworkConfig(image_size=14, init_seed=seed),
                        codebooks=bundle.arrays())
    ctx = an.AnalogContext.from_channel(real, bundle, net.chosen_indices(),
                                        snr_db=snr_db, seed=seed + 100, no_ode=no_ode)
    return net, ctx, real, bundle


class TestNormalization:
    def test_matches_differentiable_twin(self, rng):
        x = cgauss(rng, (5, 12))
        y_np, stats = an.normalize_symbols(x)
        y_t, mu, sg, clamped = F.normalize_rows(T.tensor(x))
        np.testing.assert_array_equal(y_np, y_t.data)
        np.testing.assert_array_equal(stats.mean, mu.data)
        np.testing.assert_array_equal(stats.scale, sg.data.real)
        np.testing.assert_array_equal(stats.clamped, clamped)

    def test_roundtrip(self, rng):
        x = cgauss(rng, (3, 9))
        y, stats = an.normalize_symbols(x)
        np.testing.assert_allclose(an.denormalize_symbols(y, stats), x, rtol=1e-12)

    def test_unit_power_zero_mean(self, rng):
        y, _ = an.normalize_symbols(cgauss(rng, (4, 50)))
        np.testing.assert_allclose(y.mean(axis=1), 0, atol=1e-12)
        np.testing.assert_allclose(np.mean(np.abs(y) ** 2, axis=1), 1, rtol=1e-12)

    def test_constant_row(self):
        y, stats = an.normalize_symbols(np.full((1, 6), 3 + 4j))
        assert stats.clamped[0] and stats.scale[0] == 1.0
        np.testing.assert_array_equal(y, np.zeros((1, 6)))

    def test_single_vector_api(self, rng):
        x = cgauss(rng, (8,))
        y, stats = an.normalize_symbols(x)
        assert y.shape == (8,)
        np.testing.assert_allclose(an.denormalize_symbols(y, stats), x, rtol=1e-12)


class TestFrame:
    def test_stream_layout(self, rng):
        net, ctx, real, bundle = make_setup()
        s = cgauss(rng, (2, 10))
        frame = an.build_frame(s, ctx)
        k = ctx.taps
        assert frame.streams.shape == (2, 2 * k + 2, 10 + 2 * (k // 2))
        # guard slots of the direct rows are exact zeros
        assert np.all(frame.streams[:, 2 * k, : frame.guard] == 0)
        assert np.all(frame.streams[:, 2 * k, -frame.guard :] == 0)
        # direct rows carry the *unactivated* precoded symbols
        np.testing.assert_allclose(
            frame.streams[0, 2 * k, frame.guard : frame.guard + 10] * real.d1,
            s[0], rtol=1e-12,
        )

    def test_tap_streams_activated(self, rng):
        net, ctx, _, _ = make_setup()
        s = cgauss(rng, (1, 6))
        frame = an.build_frame(s, ctx)
        pad = np.pad(s, ((0, 0), (1, 1)))
        act = np.maximum(pad.real, 0) + 1j * np.maximum(pad.imag, 0)
        np.testing.assert_allclose(frame.streams[:, 0], ctx.pre[0, 0] * act, rtol=1e-12)


class TestNoiselessEquivalence:
    def test_ode_block_alone(self, rng):
        """Slot protocol vs digital ODE block on raw normalized symbols."""
        net, ctx, _, _ = make_setup(seed=3)
        s, _ = an.normalize_symbols(cgauss(rng, (4, 49)))
        with T.no_grad():
            digital = net.ode(T.tensor(s)).data
        frame = an.build_frame(s, ctx)
        air = an.transmit_normalized(frame, ctx)
        err = np.abs(air - digital) / np.maximum(np.abs(digital), 1e-30)
        assert err.max() < 1e-6

    def test_full_network_many_seeds(self, rng):
        for seed in range(5):
            net, ctx, _, _ = make_setup(seed=seed)
            imgs = cgauss(np.random.default_rng(seed), (2, 14, 14), 0.5)
            with T.no_grad():
                d_img, d_tag = net.forward(T.tensor(imgs), mode="digital")
            a_img, a_tag = an.deploy_pipeline(net, imgs, ctx)
            for d, a in ((d_img.data, a_img), (d_tag.data, a_tag)):
                rel = np.abs(a - d) / np.maximum(np.abs(d), 1e-30)
                assert rel.max() < 1e-6, f"seed {seed}: rel err {rel.max():.2e}"

    def test_restricted_codebook_still_equivalent(self, rng):
        net, ctx, _, _ = make_setup(seed=1, restrict=64)
        imgs = cgauss(rng, (1, 14, 14), 0.5)
        with T.no_grad():
            d_img, _ = net.forward(T.tensor(imgs), mode="digital")
        a_img, _ = an.deploy_pipeline(net, imgs, ctx)
        rel = np.abs(a_img - d_img.data) / np.maximum(np.abs(d_img.data), 1e-30)
        assert rel.max() < 1e-6


class TestNoise:
    def test_noise_reproducible_and_seeded(self, rng):
        net, ctx, real, bundle = make_setup(seed=2, snr_db=10.0)
        s, _ = an.normalize_symbols(cgauss(rng, (2, 49)))
        frame = an.build_frame(s, ctx)
        y1 = an.transmit_normalized(frame, ctx)
        y2 = an.transmit_normalized(frame, ctx)
        np.testing.assert_array_equal(y1, y2)  # same context seed
        y3 = an.transmit_normalized(frame, ctx,
                                    rng=np.random.default_rng(777))
        assert not np.array_equal(y1, y3)

    def test_high_snr_closer_to_noiseless(self, rng):
        net, ctx0, real, bundle = make_setup(seed=2)
        s, _ = an.normalize_symbols(cgauss(rng, (4, 49)))
        frame = an.build_frame(s, ctx0)
        clean = an.transmit_normalized(frame, ctx0)
        errs = {}
        for snr in (0.0, 30.0):
            ctx = an.AnalogContext.from_channel(real, bundle, ctx0.indices,
                                                snr_db=snr, seed=55)
            noisy = an.transmit_normalized(an.build_frame(s, ctx), ctx)
            errs[snr] = np.mean(np.abs(noisy - clean) ** 2)
        assert errs[30.0] < errs[0.0] / 10

    def test_calibrated_snr_measured(self, rng):
        """Empirical per-hop SNR at the receiver combiner matches the dial."""
        net, ctx, real, bundle = make_setup(seed=4, snr_db=10.0)
        s, _ = an.normalize_symbols(cgauss(np.random.default_rng(0), (64, 49)))
        frame = an.build_frame(s, ctx)
        clean = an.transmit_normalized(an.build_frame(s, an.AnalogContext.from_channel(
            real, bundle, ctx.indices, snr_db=None)), ctx.__class__.from_channel(
            real, bundle, ctx.indices, snr_db=None))
        noisy = an.transmit_normalized(frame, ctx)
        # second-hop noise dominates the deviation; check the total
        # perturbation power is within a factor ~3 of the 10 dB target
        sig_p = np.mean(np.abs(clean) ** 2)
        err_p = np.mean(np.abs(noisy - clean) ** 2)
        measured_snr_db = 10 * np.log10(sig_p / err_p)
        assert 4.0 < measured_snr_db < 13.0

    def test_no_ode_routes_only_direct(self, rng):
        net, ctx, _, _ = make_setup(seed=5, no_ode=True)
        s, _ = an.normalize_symbols(cgauss(rng, (2, 49)))
        y = an.transmit_normalized(an.build_frame(s, ctx), ctx)
        np.testing.assert_allclose(y, s, rtol=1e-10)


class TestPipelineGuards:
    def test_fingerprint_mismatch_refused(self, rng):
        net, ctx, real, bundle = make_setup(seed=6)
        other = ch.sample_channel(real.geometry, real.params, 999)
        other_bundle = ch.build_codebooks(other)
        bad = an.AnalogContext.from_channel(other, other_bundle, ctx.indices)
        imgs = cgauss(rng, (1, 14, 14))
        with pytest.raises(an.CodebookMismatchError):
            an.deploy_pipeline(net, imgs, bad)

    def test_index_out_of_range(self):
        net, ctx, real, bundle = make_setup(seed=6)
        bad = ctx.indices.copy()
        bad[0, 0] = 512
        with pytest.raises(ValueError, match="out of range"):
            an.AnalogContext.from_channel(real, bundle, bad)

    def test_trace_csv_written(self, rng, tmp_path):
        net, ctx, _, _ = make_setup(seed=7)
        s, _ = an.normalize_symbols(cgauss(rng, (1, 49)))
        path = tmp_path / "trace.csv"
        an.transmit_normalized(an.build_frame(s, ctx), ctx, trace_path=str(path))
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "frame,slot,stage,re,im"
        assert len(rows) == 1 + 2 * 49
