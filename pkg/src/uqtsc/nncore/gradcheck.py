"""Finite-difference gradient verification for every layer kind.

Backward passes in this package carry no proof other than this check: a
layer is evaluated in 64-bit deterministic mode, its analytic gradients
(inputs and all trainable parameters) are compared against central
differences, and the max relative error must stay tiny.  Inputs for
kinked layers (relu, maxpool) are resampled until every element sits far
enough from a kink that the eps-perturbation cannot cross it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L


@dataclass(frozen=True)
class LayerSpec:
    """A layer kind plus the sizes needed to build a small instance."""

    kind: str
    sizes: dict = field(default_factory=dict)

    def describe(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in sorted(self.sizes.items()))
        return f"{self.kind}({inner})"


# Reference specs covering every differentiable kind (plus the stacked-LSTM
# and 2-D batchnorm variants, whose backward code paths differ).
GRAD_CHECKED_KINDS = [
    LayerSpec("dense", {"batch": 2, "n_in": 3, "n_out": 2}),
    LayerSpec("conv1d", {"batch": 2, "n_in": 2, "filters": 3, "kernel": 4,
                         "length": 12, "padding": "same"}),
    LayerSpec("conv1d", {"batch": 2, "n_in": 2, "filters": 3, "kernel": 4,
                         "length": 12, "padding": "valid"}),
    LayerSpec("batchnorm1d", {"batch": 4, "n_ch": 3, "length": 6}),
    LayerSpec("batchnorm1d", {"batch": 5, "n_ch": 4, "length": 0}),  # [B,F]
    LayerSpec("maxpool1d", {"batch": 2, "n_ch": 3, "length": 13, "pool": 3}),
    LayerSpec("globalavgpool", {"batch": 2, "n_ch": 3, "length": 7}),
    LayerSpec("relu", {"batch": 2, "n_ch": 3, "length": 9}),
    LayerSpec("flatten", {"batch": 2, "n_ch": 3, "length": 5}),
    LayerSpec("lstm", {"batch": 2, "n_in": 3, "units": 4, "length": 5}),
    LayerSpec("lstm", {"batch": 2, "n_in": 3, "units": 4, "length": 5,
                       "return_sequences": 1}),
    LayerSpec("softmax", {"batch": 4, "n_classes": 2}),
]


def _sample_input(spec: LayerSpec, rng: np.random.Generator) -> np.ndarray:
    s = spec.sizes
    if spec.kind == "dense":
        shape = (s["batch"], s["n_in"])
    elif spec.kind == "lstm":
        shape = (s["batch"], s["length"], s["n_in"])
    elif spec.kind == "softmax":
        shape = (s["batch"], s["n_classes"])
    elif spec.kind == "batchnorm1d" and s.get("length", 0) == 0:
        shape = (s["batch"], s["n_ch"])
    elif spec.kind == "conv1d":
        shape = (s["batch"], s["n_in"], s["length"])
    else:
        shape = (s["batch"], s["n_ch"], s["length"])
    x = rng.normal(size=shape)

    if spec.kind == "relu":
        # keep every element at least 1e-3 from the kink at zero
        while np.any(np.abs(x) < 1e-3):
            x[np.abs(x) < 1e-3] = rng.normal(size=int((np.abs(x) < 1e-3).sum()))
    elif spec.kind == "maxpool1d":
        # keep within-window values separated so argmax cannot flip
        p = s["pool"]
        while True:
            n = shape[2] // p
            xr = x[:, :, :n * p].reshape(shape[0], shape[1], n, p)
            srt = np.sort(xr, axis=3)
            if p == 1 or np.all(np.diff(srt, axis=3) > 1e-3):
                break
            x = rng.normal(size=shape)
    return x


def _build(spec: LayerSpec, rng: np.random.Generator):
    s = spec.sizes
    if spec.kind == "dense":
        return L.Dense(s["n_in"], s["n_out"], rng)
    if spec.kind == "conv1d":
        return L.Conv1D(s["n_in"], s["filters"], s["kernel"], rng,
                        padding=s.get("padding", "same"))
    if spec.kind == "batchnorm1d":
        bn = L.BatchNorm1D(s["n_ch"])
        # non-trivial affine so dgamma/dbeta are exercised
        bn.gamma.value = rng.uniform(0.5, 1.5, size=s["n_ch"])
        bn.beta.value = rng.normal(size=s["n_ch"])
        return bn
    if spec.kind == "maxpool1d":
        return L.MaxPool1D(s["pool"])
    if spec.kind == "globalavgpool":
        return L.GlobalAvgPool1D()
    if spec.kind == "relu":
        return L.ReLU()
    if spec.kind == "flatten":
        return L.Flatten()
    if spec.kind == "lstm":
        return L.LSTM(s["n_in"], s["units"], rng,
                      return_sequences=bool(s.get("return_sequences", 0)))
    raise ValueError(f"unknown layer kind {spec.kind!r}")


def _rel_err(a: np.ndarray, n: np.ndarray) -> float:
    denom = np.maximum(np.abs(a) + np.abs(n), 1e-3)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def grad_check(spec: LayerSpec, eps: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference grads."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0FFEE)))
    x = _sample_input(spec, rng)

    if spec.kind == "softmax":
        labels = rng.integers(0, spec.sizes["n_classes"], size=x.shape[0])

        def f(logits):
            return L.softmax_cross_entropy(logits, labels)[0]

        _, probs = L.softmax_cross_entropy(x, labels)
        analytic = L.softmax_cross_entropy_backward(probs, labels)
        numeric = np.zeros_like(x)
        flat_a, flat_n = x.reshape(-1), numeric.reshape(-1)
        for i in range(flat_a.size):
            orig = flat_a[i]
            flat_a[i] = orig + eps
            fp = f(x)
            flat_a[i] = orig - eps
            fm = f(x)
            flat_a[i] = orig
            flat_n[i] = (fp - fm) / (2.0 * eps)
        return _rel_err(analytic, numeric)

    layer = _build(spec, rng)
    mode = "train"
    y = layer.forward(x, mode=mode)
    proj = rng.uniform(-1.0, 1.0, size=y.shape)

    for p in layer.params():
        p.zero_grad()
    analytic_dx = layer.backward(proj)
    analytic_dp = {p.name: p.grad.copy() for p in layer.params() if p.trainable}

    def loss_at() -> float:
        return float(np.sum(layer.forward(x, mode=mode) * proj))

    worst = 0.0
    flat_x = x.reshape(-1)
    numeric_dx = np.zeros_like(flat_x)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        fp = loss_at()
        flat_x[i] = orig - eps
        fm = loss_at()
        flat_x[i] = orig
        numeric_dx[i] = (fp - fm) / (2.0 * eps)
    worst = max(worst, _rel_err(analytic_dx.reshape(-1), numeric_dx))

    for p in layer.params():
        if not p.trainable:
            continue
        flat_p = p.value.reshape(-1)
        numeric_dp = np.zeros_like(flat_p)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + eps
            fp = loss_at()
            flat_p[i] = orig - eps
            fm = loss_at()
            flat_p[i] = orig
            numeric_dp[i] = (fp - fm) / (2.0 * eps)
        worst = max(worst, _rel_err(analytic_dp[p.name].reshape(-1), numeric_dp))
    return worst
