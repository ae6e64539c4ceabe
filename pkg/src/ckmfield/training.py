"""Loss, optimizer, plateau scheduler and the training loop."""
from __future__ import annotations

import csv
import json
import math
import os
import time
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from . import wirare
from .channel import ArrayGeometry
from .cplx import ComplexPair
from .errors import ConfigError, DimensionError, DomainError, NumericalError

LOG_COLUMNS = ("epoch", "train_nmse", "val_nmse", "val_psnr_median", "lr", "wall_time")


# loss ------------------------------------------------------------------------

def nmse_loss(pred: ComplexPair, truth):
    """Mean over samples and subcarriers of ``||pred - truth||^2 / ||truth||^2``.

    ``truth`` is a complex array shaped like ``pred`` ((B,) N_c, N_u, N_b);
    norms are taken over the two antenna axes.
    """
    truth = np.asarray(truth)
    if truth.shape != pred.shape:
        raise DimensionError(f"nmse_loss: prediction shape {pred.shape} != truth shape {truth.shape}")
    energy = (np.abs(truth) ** 2).sum(axis=(-2, -1))
    if np.any(energy == 0):
        raise DomainError("nmse_loss: a ground-truth subcarrier slice has zero energy")
    dt = pred.re.dtype
    dre = T.sub(pred.re, T.tensor(truth.real.astype(dt)))
    dim = T.sub(pred.im, T.tensor(truth.imag.astype(dt)))
    err = T.reduce_sum(T.add(T.square(dre), T.square(dim)), (-2, -1))
    ratio = T.mul(err, T.tensor((1.0 / energy).astype(dt)))
    return T.scale(T.sum_all(ratio), 1.0 / ratio.data.size)


def nmse_numpy(pred, truth):
    """Per-sample NMSE of complex arrays (B, N_c, N_u, N_b)."""
    err = (np.abs(pred - truth) ** 2).sum(axis=(-2, -1))
    energy = (np.abs(truth) ** 2).sum(axis=(-2, -1))
    return (err / energy).mean(axis=-1)


# optimizer -------------------------------------------------------------------

class Adam:
    """Adam with bias correction over a ``name -> DiffTensor`` dict."""

    def __init__(self, params, lr=5e-5, betas=(0.9, 0.999), eps=1e-8):
        if not lr > 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = float(lr)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = OrderedDict((k, np.zeros_like(p.data)) for k, p in params.items())
        self.v = OrderedDict((k, np.zeros_like(p.data)) for k, p in params.items())

    def step(self):
        for name, p in self.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                bad = int((~np.isfinite(p.grad)).sum())
                raise NumericalError(f"non-finite gradient in {name}: {bad} of {p.grad.size} entries")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            update = (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)
            p.data = p.data - update.astype(p.data.dtype, copy=False)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self):
        return {"t": self.t, "lr": self.lr}, {"m": self.m, "v": self.v}

    def load_state(self, scalars, moments):
        self.t = int(scalars["t"])
        self.lr = float(scalars["lr"])
        for key in ("m", "v"):
            table = getattr(self, key)
            for name in table:
                table[name] = np.array(moments[key][name], dtype=self.params[name].data.dtype)


# scheduler -------------------------------------------------------------------

class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` validations without strict improvement."""

    def __init__(self, lr, patience=10, factor=0.9):
        if patience < 1:
            raise ConfigError(f"patience must be >= 1, got {patience}")
        if not 0 < factor < 1:
            raise ConfigError(f"factor must lie in (0, 1), got {factor}")
        self.lr = float(lr)
        self.patience = int(patience)
        self.factor = float(factor)
        self.best = math.inf
        self.bad = 0

    def step(self, val_loss):
        if val_loss < self.best:
            self.best = float(val_loss)
            self.bad = 0
        else:
            self.bad += 1
            if self.bad >= self.patience:
                self.lr *= self.factor
                self.bad = 0
        return self.lr

    def state(self):
        return {"best": self.best, "bad": self.bad, "lr": self.lr}

    def load_state(self, s):
        self.best = float(s["best"])
        self.bad = int(s["bad"])
        self.lr = float(s["lr"])


def lr_schedule(val_losses, lr=5e-5, patience=10, factor=0.9):
    """Learning-rate sequence produced by a fresh scheduler fed ``val_losses``."""
    sch = PlateauScheduler(lr, patience, factor)
    return [sch.step(v) for v in val_losses]


# training loop ------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch: int = 8
    epochs: int = 50
    patience: int = 10
    factor: float = 0.9
    seed: int = 0
    precision: str = "single"
    rays: int = 24
    radiators: int = 32
    range: float = 9.0
    hidden: int = 32
    depth: int = 4
    shaping_width: int = 96
    shaping_layers: int = 1
    down_mult: int = 2
    sigma_bias: float = 0.0
    input_norm: str = "sample"

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.factor < 1:
            raise ConfigError(f"factor must lie in (0, 1), got {self.factor}")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.batch < 1 or self.epochs < 0:
            raise ConfigError("batch must be >= 1 and epochs >= 0")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be 'single' or 'double', got {self.precision!r}")
        if not self.range > 0:
            raise ConfigError("range must be positive")
        if self.input_norm not in ("global", "sample"):
            raise ConfigError(f"input_norm must be 'global' or 'sample', got {self.input_norm!r}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})

    def net_config(self, n_sub, n_rx, n_tx):
        return wirare.NetConfig(
            n_sub=n_sub, n_rx=n_rx, n_tx=n_tx, n_rays=self.rays, n_radiators=self.radiators,
            hidden=self.hidden, depth=self.depth, shaping_width=self.shaping_width,
            shaping_layers=self.shaping_layers, down_mult=self.down_mult, sigma_bias=self.sigma_bias,
            dtype="float32" if self.precision == "single" else "float64")


@dataclass
class TrainState:
    epoch: int = 0
    best_val: float = math.inf
    history: list = field(default_factory=list)


def input_scale(uplink):
    """RMS magnitude of the uplink entries (network input normaliser)."""
    s = float(np.sqrt(np.mean(np.abs(uplink) ** 2)))
    if not s > 0:
        raise DomainError("training uplink data is identically zero")
    return s


def rx_from_meta(meta, n_rx):
    """Receive array geometry from dataset metadata, or a square half-wavelength default."""
    r = (meta or {}).get("rx")
    if r:
        return ArrayGeometry(r["rows"], r["cols"], r["spacing"],
                             orientation=tuple(tuple(v) for v in r.get("orientation", ArrayGeometry(1, 1, 1).orientation)))
    side = int(round(math.sqrt(n_rx)))
    rows, cols = (side, n_rx // side) if side * (n_rx // side) == n_rx else (1, n_rx)
    return ArrayGeometry(rows, cols, 299_792_458.0 / 2.415e9 / 2)


def evaluate_nmse(model, ds, batch=16):
    pred = model.predict(ds.uplink, batch)
    per = nmse_numpy(pred, ds.downlink)
    return float(per.mean()), float(np.median(-10 * np.log10(per))), pred


class Trainer:
    """Owns model, optimizer and scheduler; one call to :meth:`run` trains to ``epochs``."""

    def __init__(self, train_ds, val_ds, cfg: TrainConfig, model=None):
        from .model import CsiPredictor

        self.train_ds = train_ds
        self.val_ds = val_ds
        self.cfg = cfg
        if model is None:
            _, n_c, n_u, n_b = train_ds.dims
            net = cfg.net_config(n_c, n_u, n_b)
            rx = rx_from_meta(train_ds.meta, n_u)
            model = CsiPredictor(net, rx, cfg.range, train_ds.downlink_frequencies(),
                                 input_scale(train_ds.uplink), seed=cfg.seed, input_norm=cfg.input_norm)
        self.model = model
        self.opt = Adam(model.params, cfg.lr)
        self.sched = PlateauScheduler(cfg.lr, cfg.patience, cfg.factor)
        self.state = TrainState()

    # checkpoint state --------------------------------------------------------

    def state_dict(self):
        scalars, moments = self.opt.state()
        return {
            "epoch": self.state.epoch,
            "best_val": self.state.best_val,
            "seed": self.cfg.seed,
            "adam_t": scalars["t"],
            "lr": self.opt.lr,
            "scheduler": json.dumps(self.sched.state(), sort_keys=True),
            "train_config": json.dumps(self.cfg.to_dict(), sort_keys=True),
            "m": moments["m"],
            "v": moments["v"],
        }

    def load_state_dict(self, s):
        self.state.epoch = int(s["epoch"])
        self.state.best_val = float(s["best_val"])
        self.opt.load_state({"t": s["adam_t"], "lr": s["lr"]}, {"m": s["m"], "v": s["v"]})
        self.sched.load_state(json.loads(s["scheduler"]))

    # loop ------------------------------------------------------------------------

    def train_epoch(self, epoch):
        ds = self.train_ds
        rng = np.random.default_rng([self.cfg.seed, epoch])
        order = rng.permutation(len(ds))
        total, count = 0.0, 0
        for i in range(0, len(order), self.cfg.batch):
            idx = np.sort(order[i:i + self.cfg.batch])
            self.opt.zero_grad()
            loss = nmse_loss(self.model.forward(ds.uplink[idx]), ds.downlink[idx])
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch starting {i}")
            loss.backward()
            self.opt.step()
            total += value * len(idx)
            count += len(idx)
        return total / count

    def run(self, epochs=None, out_dir=None, log=None):
        """Train until ``epochs`` total epochs have been completed.

        When ``out_dir`` is given, appends to ``train_log.csv`` there and
        writes ``last.ckpt`` every epoch plus ``best.ckpt`` on strict
        validation improvement.
        """
        epochs = self.cfg.epochs if epochs is None else epochs
        writer = None
        fh = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            path = os.path.join(out_dir, "train_log.csv")
            fresh = self.state.epoch == 0 or not os.path.exists(path)
            fh = open(path, "w" if fresh else "a", newline="")
            writer = csv.writer(fh)
            if fresh:
                writer.writerow(LOG_COLUMNS)
        try:
            if self.state.epoch == 0 and math.isinf(self.sched.best):
                # reference validation before any update
                val, psnr, _ = evaluate_nmse(self.model, self.val_ds)
                self.sched.step(val)
                self.state.best_val = val
                self._record(writer, log, (0, float("nan"), val, psnr, self.opt.lr, 0.0))
            while self.state.epoch < epochs:
                epoch = self.state.epoch + 1
                t0 = time.perf_counter()
                tr = self.train_epoch(epoch)
                val, psnr, _ = evaluate_nmse(self.model, self.val_ds)
                self.opt.lr = self.sched.step(val)
                self.state.epoch = epoch
                improved = val < self.state.best_val
                if improved:
                    self.state.best_val = val
                row = (epoch, tr, val, psnr, self.opt.lr, time.perf_counter() - t0)
                self._record(writer, log, row)
                if out_dir is not None:
                    self.model.save(os.path.join(out_dir, "last.ckpt"), self.state_dict())
                    if improved:
                        self.model.save(os.path.join(out_dir, "best.ckpt"), self.state_dict())
                if fh is not None:
                    fh.flush()
        finally:
            if fh is not None:
                fh.close()
        return self.state

    def _record(self, writer, log, row):
        self.state.history.append(dict(zip(LOG_COLUMNS, row)))
        if writer is not None:
            writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        if log is not None:
            log(dict(zip(LOG_COLUMNS, row)))

    @classmethod
    def resume(cls, train_ds, val_ds, ckpt_path, epochs=None):
        from .model import CsiPredictor

        model, state = CsiPredictor.load(ckpt_path)
        cfg = TrainConfig.from_dict(json.loads(state["train_config"]))
        if epochs is not None:
            cfg.epochs = epochs
        tr = cls(train_ds, val_ds, cfg, model=model)
        tr.load_state_dict(state)
        return tr
