"""Compact convolutional EEG classifiers.

One family with three depth presets:

* ``standard`` -- temporal conv, depthwise spatial conv, separable conv
  (depthwise + pointwise), ELU, average pooling.
* ``shallow`` -- temporal conv, full spatial conv, square, wide average
  pooling, log.
* ``deep`` -- temporal + spatial block followed by three plain conv blocks.

Every preset opens with a bias-free temporal convolution shared across
channels. That layer commutes with a channel-mixing filter W, which the
attack code exploits to precompute it once per dataset.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from advfilter import gradcore as gc
from advfilter.errors import ConfigError, DimensionError

PRESETS = ("shallow", "standard", "deep")


@dataclass(frozen=True)
class CnnArch:
    preset: str = "standard"
    temporal_kernel: int = 32
    temporal_filters: int = 8
    depth_multiplier: int = 2
    separable_kernel: int = 16
    separable_filters: int = 16
    pool1: int = 4
    pool2: int = 8
    activation: str = "elu"

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown CNN preset {self.preset!r}; choose from {PRESETS}")
        if self.activation not in ("elu", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "CnnArch":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


class CompactCnn:
    def __init__(self, n_channels: int, n_samples: int, n_classes: int, arch: CnnArch = CnnArch(), seed: int = 0):
        self.n_channels, self.n_samples, self.n_classes = int(n_channels), int(n_samples), int(n_classes)
        self.arch = arch
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.params: dict[str, gc.Tensor] = {}
        for name, shape, fan_in, fan_out, init in self._layout():
            value = np.zeros(shape) if init == "zeros" else _glorot(rng, shape, fan_in, fan_out)
            self.params[name] = gc.Tensor(_f32(value), requires_grad=True)

    # -- architecture ------------------------------------------------------
    def _layout(self):
        a, C, T, K = self.arch, self.n_channels, self.n_samples, self.n_classes
        F1, kt = a.temporal_filters, a.temporal_kernel
        out = [("temporal", (F1, 1, 1, kt), kt, F1 * kt, "glorot")]
        if a.preset == "standard":
            FD, F2 = F1 * a.depth_multiplier, a.separable_filters
            t_out = (T // a.pool1) // a.pool2
            if t_out < 1:
                raise ConfigError(f"T={T} too short for pools {a.pool1}x{a.pool2}")
            out += [
                ("spatial", (FD, 1, C, 1), C, a.depth_multiplier * C, "glorot"),
                ("spatial_b", (FD,), 0, 0, "zeros"),
                ("sep_depth", (FD, 1, 1, a.separable_kernel), a.separable_kernel, a.separable_kernel, "glorot"),
                ("sep_point", (F2, FD, 1, 1), FD, F2, "glorot"),
                ("sep_b", (F2,), 0, 0, "zeros"),
                ("dense", (K, F2 * t_out), F2 * t_out, K, "glorot"),
                ("dense_b", (K,), 0, 0, "zeros"),
            ]
        elif a.preset == "shallow":
            FS = F1
            pool = a.pool1 * a.pool2
            t_out = T // pool
            if t_out < 1:
                raise ConfigError(f"T={T} too short for pool {pool}")
            out += [
                ("spatial", (FS, F1, C, 1), F1 * C, FS, "glorot"),
                ("spatial_b", (FS,), 0, 0, "zeros"),
                ("dense", (K, FS * t_out), FS * t_out, K, "glorot"),
                ("dense_b", (K,), 0, 0, "zeros"),
            ]
        else:
            widths = [F1, 2 * F1, 2 * F1, 4 * F1]
            k = max(3, a.separable_kernel // 2)
            t_out = T // 16
            if t_out < 1:
                raise ConfigError(f"T={T} too short for the deep preset (needs >= 16)")
            out += [
                ("spatial", (F1, F1, C, 1), F1 * C, F1, "glorot"),
                ("spatial_b", (F1,), 0, 0, "zeros"),
            ]
            for i in range(1, 4):
                cin, cout = widths[i - 1], widths[i]
                out += [
                    (f"conv{i}", (cout, cin, 1, k), cin * k, cout * k, "glorot"),
                    (f"conv{i}_b", (cout,), 0, 0, "zeros"),
                ]
            out += [
                ("dense", (K, widths[-1] * t_out), widths[-1] * t_out, K, "glorot"),
                ("dense_b", (K,), 0, 0, "zeros"),
            ]
        return out

    def _act(self, x):
        return gc.elu(x) if self.arch.activation == "elu" else gc.relu(x)

    def parameters(self) -> list[gc.Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def _check(self, shape):
        if len(shape) != 3 or tuple(shape[1:]) != (self.n_channels, self.n_samples):
            raise DimensionError(
                f"model expects (B, {self.n_channels}, {self.n_samples}) input, got {tuple(shape)}"
            )

    def temporal(self, x) -> gc.Tensor:
        """Bias-free temporal convolution: (B, C, T) -> (B, F1, C, T)."""
        x = gc.as_tensor(x)
        self._check(x.shape)
        x4 = gc.reshape(x, (x.shape[0], 1, self.n_channels, self.n_samples))
        return gc.conv2d(x4, self.params["temporal"], padding="same")

    def head(self, h: gc.Tensor) -> gc.Tensor:
        """Everything after the temporal convolution."""
        p, a = self.params, self.arch
        if a.preset == "standard":
            h = gc.conv2d(h, p["spatial"], p["spatial_b"], groups=a.temporal_filters)
            h = gc.avg_pool(self._act(h), (1, a.pool1))
            FD = a.temporal_filters * a.depth_multiplier
            h = gc.conv2d(h, p["sep_depth"], padding="same", groups=FD)
            h = gc.conv2d(h, p["sep_point"], p["sep_b"])
            h = gc.avg_pool(self._act(h), (1, a.pool2))
        elif a.preset == "shallow":
            h = gc.conv2d(h, p["spatial"], p["spatial_b"])
            h = gc.avg_pool(gc.square(h), (1, a.pool1 * a.pool2))
            h = gc.log(gc.add(h, 1e-6))
        else:
            h = gc.conv2d(h, p["spatial"], p["spatial_b"])
            h = gc.avg_pool(self._act(h), (1, 2))
            for i in range(1, 4):
                h = gc.conv2d(h, p[f"conv{i}"], p[f"conv{i}_b"], padding="same")
                h = gc.avg_pool(self._act(h), (1, 2))
        h = gc.flatten(h)
        return gc.add(gc.matmul(h, gc.transpose(p["dense"])), p["dense_b"])

    def logits(self, x) -> gc.Tensor:
        return self.head(self.temporal(x))

    # attack hooks --------------------------------------------------------
    def prepare_filtered(self, X: np.ndarray) -> np.ndarray:
        """Temporal features of clean trials; valid while the model is frozen."""
        return self.temporal(gc.Tensor(np.asarray(X, dtype=np.float64))).data

    def filtered_logits(self, W: gc.Tensor, prepared: np.ndarray) -> gc.Tensor:
        """Logits of W @ x given ``prepare_filtered(x)``.

        temporal(W x) == W temporal(x) because the temporal kernel acts on
        each channel row independently and has no bias.
        """
        return self.head(gc.matmul(W, prepared))

    # serialization -------------------------------------------------------
    def descriptor(self) -> dict:
        return {
            "family": "cnn",
            "arch": asdict(self.arch),
            "n_channels": self.n_channels,
            "n_samples": self.n_samples,
            "n_classes": self.n_classes,
            "seed": self.seed,
            "parameter_count": self.parameter_count(),
        }

    def state(self) -> list[tuple[str, np.ndarray]]:
        return [(k, v.data) for k, v in self.params.items()]

    def state_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, shape) for name, shape, *_ in self._layout()]

    @classmethod
    def from_state(cls, desc: dict, arrays: dict[str, np.ndarray]) -> "CompactCnn":
        model = cls(desc["n_channels"], desc["n_samples"], desc["n_classes"],
                    CnnArch.from_dict(desc["arch"]), seed=desc.get("seed", 0))
        for k, p in model.params.items():
            p.data = _f32(arrays[k]).reshape(p.shape)
        return model
