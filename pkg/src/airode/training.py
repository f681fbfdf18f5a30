"""Losses, the Adam optimizer, and the two-stage training procedure.

Stage 1 trains encoder + ODE block + reconstruction decoder under the
reconstruction loss with the tagging head frozen; stage 2 freezes the
encoder and the ODE block and trains both decoders under the joint loss
alpha*MSE + beta*CE. Epoch shuffling is seeded per (seed, stage, epoch),
so runs are reproducible and resumable mid-training to the bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from . import nnops as F
from . import metrics as M
from .layers import _arr_to_json, _arr_from_json

__all__ = [
    "LossConfig",
    "mse_loss",
    "ce_loss",
    "joint_loss",
    "Adam",
    "FreezeMask",
    "TrainSchedule",
    "train_two_stage",
    "evaluate",
    "save_train_state",
    "load_train_state",
]


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 1.0  # reconstruction weight
    beta: float = 1.0   # tagging weight

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")


def mse_loss(pred, target):
    """Reconstruction loss: sum of squared re/im errors over the batch,
    normalized by 2 * (pixels per image) * batch size."""
    if pred.shape != target.shape:
        raise ValueError(f"mse: shape mismatch {pred.shape} vs {target.shape}")
    d = T.sub(pred, target)
    total = T.real(T.sum_all(T.mul(d, T.conj(d))))
    n = pred.shape[0] if len(pred.shape) == 3 else 1
    pixels = pred.size // n
    return T.smul(total, 1.0 / (2.0 * pixels * n))


def ce_loss(scores, onehot):
    """Tagging loss: cross-entropy of softmax over the score moduli."""
    s = scores
    if len(s.shape) == 1:
        s = T.reshape(s, (1, s.shape[0]))
        onehot = np.asarray(onehot).reshape(1, -1)
    return F.cross_entropy(T.cabs(s), onehot)


def joint_loss(pred, target, scores, onehot, cfg):
    a = T.smul(mse_loss(pred, target), cfg.alpha)
    b = T.smul(ce_loss(scores, onehot), cfg.beta)
    return T.add(a, b)


class Adam:
    """Adam over complex parameters: first moment is complex, second
    moment tracks re and im squared gradients separately (packed into
    one complex array), so each real component gets its own step size."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)  # [(name, tensor)]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1 - b2) * (
                g.real**2 + 1j * g.imag**2
            )
            mh = m / c1
            vre = v.real / c2
            vim = v.imag / c2
            step = mh.real / (np.sqrt(vre) + self.eps) + 1j * (
                mh.imag / (np.sqrt(vim) + self.eps)
            )
            p.data = p.data - self.lr * step

    def state_dict(self):
        return {
            "t": self.t,
            "m": {n: _arr_to_json(a) for n, a in self.m.items()},
            "v": {n: _arr_to_json(a) for n, a in self.v.items()},
        }

    def load_state_dict(self, st):
        self.t = st["t"]
        for n in self.m:
            self.m[n] = _arr_from_json(st["m"][n])
            self.v[n] = _arr_from_json(st["v"][n])


@dataclass(frozen=True)
class FreezeMask:
    """Which network blocks are excluded from optimization."""

    encoder: bool = False
    ode: bool = False
    decoder_ri: bool = False
    decoder_st: bool = False

    @classmethod
    def stage1(cls):
        return cls(decoder_st=True)

    @classmethod
    def stage2(cls):
        return cls(encoder=True, ode=True)

    def frozen_blocks(self):
        return [n for n in ("encoder", "ode", "decoder_ri", "decoder_st")
                if getattr(self, n)]


def apply_freeze(net, mask):
    """Set requires_grad per block; returns the trainable (name, tensor)
    list in deterministic order."""
    trainable = []
    for bname, block in net.blocks().items():
        frozen = getattr(mask, bname)
        for pname, p in block.params():
            p.requires_grad = not frozen
            if not frozen:
                trainable.append((f"{bname}.{pname}", p))
    return trainable


@dataclass(frozen=True)
class TrainSchedule:
    stage1_epochs: int = 40
    stage2_epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    val_every: int = 5

    def __post_init__(self):
        if self.stage1_epochs < 0 or self.stage2_epochs < 0 or self.batch_size < 1:
            raise ValueError(f"bad schedule: {self}")


@dataclass
class TrainResult:
    log_rows: list
    final_val: dict
    stage_end_val: dict  # stage index -> metrics dict
    chosen_indices: np.ndarray


def evaluate(net, images, labels, batch_size=256):
    """Digital-mode evaluation on a split; returns mean metrics."""
    n = images.shape[0]
    mses, psnrs, ssims = [], [], []
    scores_all = []
    with T.no_grad():
        for lo in range(0, n, batch_size):
            hi = min(lo + batch_size, n)
            img, tags = net.forward(T.tensor(images[lo:hi]), mode="digital",
                                    training=False)
            mses.append(M.complex_mse(images[lo:hi], img.data))
            psnrs.append(M.psnr(images[lo:hi], img.data))
            ssims.append(M.ssim(images[lo:hi], img.data))
            scores_all.append(tags.data)
    scores = np.concatenate(scores_all)
    return {
        "mse": float(np.mean(np.concatenate(mses))),
        "psnr": float(np.mean(np.concatenate(psnrs))),
        "ssim": float(np.mean(np.concatenate(ssims))),
        "accuracy": M.accuracy(scores, labels),
    }


LOG_HEADER = ["epoch", "stage", "train_loss", "val_psnr", "val_ssim", "val_accuracy"]


def _write_log(path, rows):
    if path is None:
        return
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LOG_HEADER)
        w.writerows(rows)


def _fmt(x):
    return "" if x is None else f"{x:.10g}"


def train_two_stage(net, data, schedule, loss_cfg=None, log_path=None,
                    state_path=None, resume_from=None):
    """Run both stages (or continue from a saved state).

    data: object with train_images (N,A,A), train_labels (N,Q one-hot),
    val_images, val_labels. Returns a TrainResult; `state_path` (if set)
    receives a resumable snapshot after every epoch.
    """
    loss_cfg = loss_cfg or LossConfig()
    stages = [
        (1, schedule.stage1_epochs, FreezeMask.stage1()),
        (2, schedule.stage2_epochs, FreezeMask.stage2()),
    ]
    log_rows = []
    stage_end_val = {}
    start_stage, start_epoch = 1, 0
    optimizer_state = None
    if resume_from is not None:
        snap = load_train_state(resume_from, net)
        start_stage = snap["stage"]
        start_epoch = snap["epoch_done"]
        optimizer_state = snap["optimizer"]
        log_rows = snap["log_rows"]
        stage_end_val = {int(k): v for k, v in snap["stage_end_val"].items()}

    xtr, ytr = data.train_images, data.train_labels
    xval, yval = data.val_images, data.val_labels
    ntr = xtr.shape[0]
    epoch_global = sum(e for s, e, _ in stages if s < start_stage) + start_epoch

    for stage_idx, n_epochs, mask in stages:
        if stage_idx < start_stage:
            continue
        trainable = apply_freeze(net, mask)
        opt = Adam(trainable, lr=schedule.learning_rate, beta1=schedule.beta1,
                   beta2=schedule.beta2, eps=schedule.eps)
        first_epoch = start_epoch if stage_idx == start_stage else 0
        if optimizer_state is not None and stage_idx == start_stage and first_epoch > 0:
            opt.load_state_dict(optimizer_state)
        optimizer_state = None

        for epoch in range(first_epoch, n_epochs):
            rng = np.random.default_rng(
                np.random.SeedSequence([schedule.seed, stage_idx, epoch])
            )
            perm = rng.permutation(ntr)
            losses = []
            for lo in range(0, ntr, schedule.batch_size):
                sel = perm[lo : lo + schedule.batch_size]
                imgs = T.tensor(xtr[sel])
                pred, scores = net.forward(imgs, mode="digital", training=True)
                if stage_idx == 1:
                    loss = mse_loss(pred, imgs.detach())
                else:
                    loss = joint_loss(pred, imgs.detach(), scores, ytr[sel], loss_cfg)
                opt.zero_grad()
                T.backward(loss)
                opt.step()
                losses.append(float(loss.data.real))
            epoch_global += 1
            last = epoch == n_epochs - 1
            if last or (epoch + 1) % schedule.val_every == 0:
                val = evaluate(net, xval, yval)
                row = [str(epoch_global), str(stage_idx), _fmt(np.mean(losses)),
                       _fmt(val["psnr"]), _fmt(val["ssim"]), _fmt(val["accuracy"])]
                if last:
                    stage_end_val[stage_idx] = val
            else:
                row = [str(epoch_global), str(stage_idx), _fmt(np.mean(losses)),
                       "", "", ""]
            log_rows.append(row)
            _write_log(log_path, log_rows)
            if state_path is not None:
                save_train_state(state_path, net, stage_idx, epoch + 1, opt,
                                 log_rows, stage_end_val)

    final_val = stage_end_val.get(2) or stage_end_val.get(1) or evaluate(net, xval, yval)
    return TrainResult(log_rows=log_rows, final_val=final_val,
                       stage_end_val=stage_end_val,
                       chosen_indices=net.chosen_indices())


def save_train_state(path, net, stage, epoch_done, opt, log_rows, stage_end_val):
    doc = {
        "format": "airode-train-state",
        "stage": stage,
        "epoch_done": epoch_done,
        "params": {n: _arr_to_json(p.data) for n, p in net.parameters()},
        "bn": {k: _arr_to_json(v) for k, v in net.encoder.bn.state().items()},
        "optimizer": opt.state_dict(),
        "log_rows": log_rows,
        "stage_end_val": stage_end_val,
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_train_state(path, net):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("format") != "airode-train-state":
        raise ValueError(f"{path}: not a training state file")
    params = dict(net.parameters())
    for n, blob in doc["params"].items():
        params[n].data = _arr_from_json(blob)
    net.encoder.bn.load_state({k: _arr_from_json(v) for k, v in doc["bn"].items()})
    return doc
