"""Losses, optimizer, freezing, and the two-stage schedule.

Includes a miniature end-to-end training run checking loss descent,
byte-identical determinism of the log, and bit-exact resume.
"""

import numpy as np
import pytest

from airode import data as D
from airode import tensor as T
from airode import training as tr
from airode.layers import AirOdeNetwork, NetworkConfig
from conftest import assert_grads_match, cgauss


def tiny_books(rng, k=3, nc=8):
    return [cgauss(rng, (k, nc)) for _ in range(3)]


def tiny_net(rng, **kw):
    cfg = dict(image_size=8, hidden_channels=3, feature_channels=1,
               pool_stages=1, kernel_size=3, num_classes=4, st_channels=2,
               init_seed=0)
    cfg.update(kw)
    return AirOdeNetwork(NetworkConfig(**cfg), codebooks=tiny_books(rng))


def tiny_data(rng, n=32, a=8, q=4):
    imgs = np.zeros((n, a, a))
    labs = np.arange(n) % q
    yy, xx = np.mgrid[0:a, 0:a]
    for i in range(n):
        cy, cx = divmod(labs[i], 2)
        imgs[i] = np.exp(-(((yy - 2 - 4 * cy) ** 2 + (xx - 2 - 4 * cx) ** 2) / 4.0))
    z = D.encode_pixels(imgs)
    onehot = D.to_onehot(labs, q)

    class Split:
        train_images, train_labels = z, onehot
        val_images, val_labels = z[: n // 2], onehot[: n // 2]

    return Split()


class TestLosses:
    def test_mse_hand_value(self):
        a = T.tensor(np.zeros((2, 3, 3)))
        b = T.tensor(np.full((2, 3, 3), 1 + 1j))
        # per image: 9 pixels * (1+1) / (2*9) = 1; batch mean stays 1
        assert tr.mse_loss(a, b).data.real == pytest.approx(1.0)

    def test_mse_matches_metric(self, rng):
        from airode import metrics as M

        a = cgauss(rng, (4, 5, 5))
        b = cgauss(rng, (4, 5, 5))
        loss = tr.mse_loss(T.tensor(a), T.tensor(b)).data.real
        assert loss == pytest.approx(np.mean(M.complex_mse(a, b)))

    def test_mse_grad(self, rng):
        a = T.tensor(cgauss(rng, (2, 3, 3)), requires_grad=True)
        b = T.tensor(cgauss(rng, (2, 3, 3)))
        assert_grads_match(lambda: tr.mse_loss(a, b), [a])

    def test_ce_uses_moduli(self, rng):
        from scipy.special import log_softmax

        scores = cgauss(rng, (3, 4))
        onehot = np.eye(4)[[0, 1, 2]]
        loss = tr.ce_loss(T.tensor(scores), onehot).data.real
        ref = -np.mean(np.sum(onehot * log_softmax(np.abs(scores), axis=1), axis=1))
        assert loss == pytest.approx(ref)

    def test_ce_grad(self, rng):
        s = T.tensor(cgauss(rng, (3, 4)) + (1 + 1j), requires_grad=True)
        onehot = np.eye(4)[[0, 1, 2]]
        assert_grads_match(lambda: tr.ce_loss(s, onehot), [s])

    def test_joint_is_weighted_sum(self, rng):
        a = T.tensor(cgauss(rng, (2, 3, 3)))
        b = T.tensor(cgauss(rng, (2, 3, 3)))
        s = T.tensor(cgauss(rng, (2, 4)))
        lab = np.eye(4)[[1, 3]]
        cfg = tr.LossConfig(alpha=0.3, beta=1.7)
        j = tr.joint_loss(a, b, s, lab, cfg).data.real
        m = tr.mse_loss(a, b).data.real
        c = tr.ce_loss(s, lab).data.real
        assert j == pytest.approx(0.3 * m + 1.7 * c)

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            tr.LossConfig(alpha=-1.0)


class TestAdam:
    def test_zero_gradient_no_move(self):
        p = T.tensor([1 + 2j], requires_grad=True)
        opt = tr.Adam([("p", p)], lr=0.1)
        p.grad = np.zeros(1, dtype=np.complex128)
        opt.step()
        np.testing.assert_array_equal(p.data, [1 + 2j])

    def test_first_step_magnitude(self):
        # with constant unit gradient the bias-corrected first step is lr
        p = T.tensor([0j], requires_grad=True)
        opt = tr.Adam([("p", p)], lr=0.05)
        p.grad = np.ones(1, dtype=np.complex128)
        opt.step()
        assert p.data[0].real == pytest.approx(-0.05, rel=1e-6)

    def test_components_independent(self):
        p = T.tensor([0j], requires_grad=True)
        opt = tr.Adam([("p", p)], lr=0.05)
        p.grad = np.array([1j])  # gradient only on the imaginary part
        opt.step()
        assert p.data[0].real == 0.0
        assert p.data[0].imag == pytest.approx(-0.05, rel=1e-6)

    def test_converges_on_quadratic(self):
        target = 2 - 3j
        p = T.tensor([0j], requires_grad=True)
        opt = tr.Adam([("p", p)], lr=0.2)
        for _ in range(200):
            d = T.sadd(p, -target)
            loss = T.real(T.sum_all(T.mul(d, T.conj(d))))
            opt.zero_grad()
            T.backward(loss)
            opt.step()
        assert abs(p.data[0] - target) < 1e-3

    def test_state_roundtrip(self):
        p = T.tensor([1 + 1j], requires_grad=True)
        opt = tr.Adam([("p", p)], lr=0.1)
        p.grad = np.array([0.5 + 0.25j])
        opt.step()
        st = opt.state_dict()
        opt2 = tr.Adam([("p", p)], lr=0.1)
        opt2.load_state_dict(st)
        assert opt2.t == 1
        np.testing.assert_array_equal(opt2.m["p"], opt.m["p"])


class TestFreeze:
    def test_stage_masks(self):
        assert tr.FreezeMask.stage1().frozen_blocks() == ["decoder_st"]
        assert tr.FreezeMask.stage2().frozen_blocks() == ["encoder", "ode"]

    def test_apply_freeze_partitions(self, rng):
        net = tiny_net(rng)
        trainable = tr.apply_freeze(net, tr.FreezeMask.stage2())
        names = [n for n, _ in trainable]
        assert all(n.startswith(("decoder_ri", "decoder_st")) for n in names)
        assert not net.encoder.conv1.weight.requires_grad
        assert net.decoder_ri.conv1.weight.requires_grad

    def test_frozen_params_not_updated(self, rng):
        net = tiny_net(rng)
        data = tiny_data(np.random.default_rng(0))
        before = net.encoder.conv1.weight.data.copy()
        sched = tr.TrainSchedule(stage1_epochs=0, stage2_epochs=1,
                                 batch_size=8, learning_rate=1e-2, seed=0)
        tr.train_two_stage(net, data, sched)
        np.testing.assert_array_equal(net.encoder.conv1.weight.data, before)


class TestTwoStage:
    def test_loss_descends_and_logs(self, rng, tmp_path):
        net = tiny_net(rng)
        data = tiny_data(np.random.default_rng(0))
        log = tmp_path / "log.csv"
        sched = tr.TrainSchedule(stage1_epochs=6, stage2_epochs=4, batch_size=8,
                                 learning_rate=5e-3, seed=1, val_every=2)
        res = tr.train_two_stage(net, data, sched, log_path=str(log))
        losses1 = [float(r[2]) for r in res.log_rows if r[1] == "1"]
        assert losses1[-1] < losses1[0]
        text = log.read_text().splitlines()
        assert text[0] == "epoch,stage,train_loss,val_psnr,val_ssim,val_accuracy"
        assert len(text) == 1 + 10
        assert res.chosen_indices.shape == (3, 3)
        assert 1 in res.stage_end_val and 2 in res.stage_end_val

    def test_stage2_does_not_change_encoder_or_codebook_choice(self, rng):
        net = tiny_net(rng)
        data = tiny_data(np.random.default_rng(0))
        sched = tr.TrainSchedule(stage1_epochs=3, stage2_epochs=0, batch_size=8,
                                 learning_rate=5e-3, seed=1)
        tr.train_two_stage(net, data, sched)
        idx1 = net.chosen_indices().copy()
        enc1 = net.encoder.conv1.weight.data.copy()
        sched2 = tr.TrainSchedule(stage1_epochs=0, stage2_epochs=3, batch_size=8,
                                  learning_rate=5e-3, seed=1)
        tr.train_two_stage(net, data, sched2)
        np.testing.assert_array_equal(net.chosen_indices(), idx1)
        np.testing.assert_array_equal(net.encoder.conv1.weight.data, enc1)

    def test_run_deterministic(self, rng, tmp_path):
        outs = []
        for _ in range(2):
            net = tiny_net(np.random.default_rng(7))
            data = tiny_data(np.random.default_rng(0))
            log = tmp_path / f"log{_}.csv"
            sched = tr.TrainSchedule(stage1_epochs=3, stage2_epochs=2,
                                     batch_size=8, learning_rate=5e-3, seed=3)
            tr.train_two_stage(net, data, sched, log_path=str(log))
            outs.append((log.read_bytes(),
                         {n: p.data.copy() for n, p in net.parameters()}))
        assert outs[0][0] == outs[1][0]  # byte-identical logs
        for n in outs[0][1]:
            np.testing.assert_array_equal(outs[0][1][n], outs[1][1][n])

    def test_resume_bitexact(self, rng, tmp_path):
        # straight run
        net_a = tiny_net(np.random.default_rng(7))
        data = tiny_data(np.random.default_rng(0))
        sched = tr.TrainSchedule(stage1_epochs=4, stage2_epochs=2, batch_size=8,
                                 learning_rate=5e-3, seed=3, val_every=2)
        res_a = tr.train_two_stage(net_a, data, sched)

        # interrupted after stage-1 epoch 2, then resumed
        net_b = tiny_net(np.random.default_rng(7))
        state = tmp_path / "state.json"
        tr.train_two_stage(
            net_b, data,
            tr.TrainSchedule(stage1_epochs=2, stage2_epochs=0, batch_size=8,
                             learning_rate=5e-3, seed=3, val_every=2),
            state_path=str(state),
        )
        net_c = tiny_net(np.random.default_rng(7))
        res_c = tr.train_two_stage(net_c, data, sched, resume_from=str(state))
        for (n1, p1), (n2, p2) in zip(net_a.parameters(), net_c.parameters()):
            np.testing.assert_array_equal(p1.data, p2.data), n1
        assert res_a.final_val == res_c.final_val

    def test_evaluate_returns_metrics(self, rng):
        net = tiny_net(rng)
        data = tiny_data(np.random.default_rng(0))
        out = tr.evaluate(net, data.val_images, data.val_labels)
        assert set(out) == {"mse", "psnr", "ssim", "accuracy"}
        assert 0.0 <= out["accuracy"] <= 1.0
