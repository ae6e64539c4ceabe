"""End-to-end predictor: uplink CSI in, rendered downlink CSI out."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import render
from . import tensor as T
from . import wirare
from .channel import ArrayGeometry
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DimensionError, FormatError, NumericalError
from .sampler import RayBundle


class CsiPredictor:
    """Network parameters plus everything needed to render a downlink estimate.

    Parameters
    ----------
    cfg : NetConfig
    rx : ArrayGeometry
        Receive array; only its element offsets matter (distance calibration).
    range_m : float
        Radial sampling range along every ray.
    downlink_freqs : (N_c,) Hz
    input_scale : float
        Typical uplink magnitude (training-set RMS).
    input_norm : {"global", "sample"}
        ``"global"`` divides every uplink grid by ``input_scale``.
        ``"sample"`` divides each grid by its own RMS and multiplies the
        rendered downlink by ``rms / input_scale``; since the channel is
        linear in the path gains, the network then only has to model the
        structure of the mapping, not the path-loss level that group norm
        would otherwise wash out.
    """

    def __init__(self, cfg, rx, range_m, downlink_freqs, input_scale=1.0, params=None, seed=0, init="identity",
                 input_norm="global"):
        if input_norm not in ("global", "sample"):
            raise ConfigError(f"input_norm must be 'global' or 'sample', got {input_norm!r}")
        self.cfg = cfg
        self.input_norm = input_norm
        self.rx = rx
        self.range_m = float(range_m)
        self.downlink_freqs = np.asarray(downlink_freqs, dtype=float)
        self.input_scale = float(input_scale)
        if self.downlink_freqs.shape != (cfg.n_sub,):
            raise DimensionError(f"{self.downlink_freqs.size} downlink frequencies for N_c={cfg.n_sub}")
        if rx.n_elements != cfg.n_rx:
            raise DimensionError(f"rx array has {rx.n_elements} elements, network expects N_u={cfg.n_rx}")
        self.params = params if params is not None else wirare.init_params(cfg, seed, init)
        self.bundle = RayBundle.build(cfg.n_rays, cfg.n_radiators, self.range_m, rx, cfg.n_tx)

    def _scales(self, up):
        """Per-sample input divisor, shape (B, 1, 1, 1)."""
        if self.input_norm == "global":
            return np.full((up.shape[0], 1, 1, 1), self.input_scale)
        rms = np.sqrt(np.mean(np.abs(up) ** 2, axis=(1, 2, 3), keepdims=True))
        if np.any(~np.isfinite(rms)):
            raise NumericalError("non-finite uplink CSI")
        # an all-zero grid predicts zero either way; avoid 0/0
        return np.where(rms > 0, rms, self.input_scale)

    def field(self, uplink, fca=True):
        up = np.asarray(uplink)
        s = self._scales(up[None] if up.ndim == 3 else up)
        x = wirare.uplink_to_real(up / (s[0] if up.ndim == 3 else s))
        return wirare.wirare_forward(x, self.bundle, self.downlink_freqs / 1e9, self.params, self.cfg, fca=fca)

    def forward(self, uplink, fca=True):
        """Predicted downlink as a ComplexPair of shape (B, N_c, N_u, N_b)."""
        up = np.asarray(uplink)
        if up.ndim == 3:
            up = up[None]
        out = render.aggregate(self.field(up, fca), self.bundle, self.downlink_freqs)
        if self.input_norm == "global":
            return out
        gain = (self._scales(up) / self.input_scale).astype(self.cfg.np_dtype)
        return out.scale_real(T.DiffTensor(gain))

    def predict(self, uplink, batch=16):
        """Numpy complex prediction without building a graph."""
        up = np.asarray(uplink)
        single = up.ndim == 3
        if single:
            up = up[None]
        out = []
        with T.no_grad():
            for i in range(0, up.shape[0], batch):
                out.append(self.forward(up[i:i + batch]).numpy())
        res = np.concatenate(out, axis=0)
        return res[0] if single else res

    # persistence --------------------------------------------------------------

    def header(self):
        rx = self.rx
        return {
            "format": "ckmfield-model",
            "net": self.cfg.to_dict(),
            "rx": {"rows": rx.rows, "cols": rx.cols, "spacing": rx.spacing,
                   "orientation": [list(r) for r in rx.orientation]},
            "range_m": self.range_m,
            "downlink_freqs": [float(f) for f in self.downlink_freqs],
            "input_scale": self.input_scale,
            "input_norm": self.input_norm,
        }

    @classmethod
    def from_header(cls, header, params=None):
        if header.get("format") != "ckmfield-model":
            raise FormatError("checkpoint header does not describe a ckmfield model")
        cfg = wirare.NetConfig.from_dict(header["net"])
        r = header["rx"]
        rx = ArrayGeometry(r["rows"], r["cols"], r["spacing"],
                           orientation=tuple(tuple(v) for v in r["orientation"]))
        model = cls(cfg, rx, header["range_m"], header["downlink_freqs"], header["input_scale"],
                    input_norm=header.get("input_norm", "global"))
        if params is not None:
            model.load_params(params)
        return model

    def load_params(self, arrays):
        if list(arrays) != list(self.params):
            missing = set(self.params) ^ set(arrays)
            raise FormatError(f"parameter names differ from the configured network: {sorted(missing)[:5]}")
        for name, arr in arrays.items():
            p = self.params[name]
            if arr.shape != p.shape:
                raise FormatError(f"parameter {name}: stored shape {arr.shape} != expected {p.shape}")
            p.data = np.ascontiguousarray(arr, dtype=self.cfg.np_dtype)

    def save(self, path, state=None):
        save_checkpoint(path, self.header(), self.params, state)

    @classmethod
    def load(cls, path):
        header, params, state = load_checkpoint(path)
        return cls.from_header(header, params), state

    def param_arrays(self):
        return OrderedDict((k, v.data) for k, v in self.params.items())
