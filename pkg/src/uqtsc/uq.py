"""Uncertainty mechanisms: MC Dropout, MC DropConnect, Flipout, ELBO.

All three stay stochastic at inference time (mode "mc_infer") so repeated
forward passes sample the predictive posterior; mode "infer" switches
them off for a deterministic baseline pass.  Dropout and DropConnect use
inverted scaling — survivors are divided by (1-p) at mask time — which
makes every masked pass an unbiased estimate of the deterministic one.
"""

from __future__ import annotations

import numpy as np

from .nncore.layers import Conv1D, Dense, Layer, Param, ShapeMismatch

_ACTIVE_MODES = ("train", "mc_infer")


class InvalidRate(Exception):
    pass


class NonPositiveSigma(Exception):
    pass


def _check_rate(p: float):
    if not (0.0 <= p < 1.0):
        raise InvalidRate(f"dropout rate must lie in [0, 1), got {p}")


class MCDropout(Layer):
    """Bernoulli activation masking, active in train and mc_infer modes."""

    def __init__(self, p: float, name: str = "dropout"):
        _check_rate(p)
        self.name = name
        self.p = p
        self._mask = None

    def forward(self, x, mode="train", rng=None):
        if mode in _ACTIVE_MODES and self.p > 0.0:
            if rng is None:
                raise ValueError(f"{self.name}: active mode needs an rng")
            keep = 1.0 - self.p
            self._mask = (rng.random(x.shape) < keep) / keep
            return x * self._mask
        self._mask = None
        return x

    def backward(self, dy):
        return dy if self._mask is None else dy * self._mask


class DropConnectDense(Dense):
    """Dense layer whose weight matrix (never bias) is Bernoulli-masked."""

    def __init__(self, base: Dense, p: float):
        _check_rate(p)
        self.name = f"{base.name}"
        self.n_in, self.n_out = base.n_in, base.n_out
        self.w, self.b = base.w, base.b
        self.p = p
        self._x = None
        self._mask = None

    def _weight(self, mode, rng):
        if mode in _ACTIVE_MODES and self.p > 0.0:
            if rng is None:
                raise ValueError(f"{self.name}: active mode needs an rng")
            keep = 1.0 - self.p
            self._mask = (rng.random(self.w.value.shape) < keep) / keep
            return self.w.value * self._mask
        self._mask = None
        return self.w.value

    def _backprop_weight(self, dw_eff):
        self.w.grad += dw_eff if self._mask is None else dw_eff * self._mask


class DropConnectConv1D(Conv1D):
    """Conv1D whose filter bank (never bias) is Bernoulli-masked."""

    def __init__(self, base: Conv1D, p: float):
        _check_rate(p)
        self.name = f"{base.name}"
        self.n_in, self.filters, self.kernel = base.n_in, base.filters, base.kernel
        self.padding = base.padding
        self.w, self.b = base.w, base.b
        self.p = p
        self._xp = None
        self._pads = (0, 0)
        self._mask = None

    def _weight(self, mode, rng):
        if mode in _ACTIVE_MODES and self.p > 0.0:
            if rng is None:
                raise ValueError(f"{self.name}: active mode needs an rng")
            keep = 1.0 - self.p
            self._mask = (rng.random(self.w.value.shape) < keep) / keep
            return self.w.value * self._mask
        self._mask = None
        return self.w.value

    def _backprop_weight(self, dw_eff):
        self.w.grad += dw_eff if self._mask is None else dw_eff * self._mask


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


# rho giving softplus(rho) ~= 0.05, the initial posterior spread
RHO_INIT = float(np.log(np.expm1(0.05)))


class FlipoutDense(Layer):
    """Dense layer with a factorized Gaussian weight posterior.

    Each forward pass in an active mode draws one shared weight
    perturbation dW = sigma * E and decorrelates it across the batch with
    per-example Rademacher sign vectors r, s:

        y = x mu_W + ((x * r) @ dW) * s + mu_b + sigma_b * e_b

    In "infer" mode only the posterior means are used.  freeze_noise()
    pins the random draws, which gradient checking needs.
    """

    def __init__(self, base: Dense, name: str | None = None):
        self.name = name or base.name
        self.n_in, self.n_out = base.n_in, base.n_out
        self.mu_w = Param(f"{self.name}_muw", base.w.value.copy())
        self.rho_w = Param(f"{self.name}_rhow",
                           np.full((self.n_in, self.n_out), RHO_INIT))
        self.mu_b = Param(f"{self.name}_mub", base.b.value.copy())
        self.rho_b = Param(f"{self.name}_rhob", np.full(self.n_out, RHO_INIT))
        self._frozen = None
        self._cache = None

    def params(self):
        return [self.mu_w, self.rho_w, self.mu_b, self.rho_b]

    def freeze_noise(self, rng: np.random.Generator, batch: int):
        self._frozen = self._draw(rng, batch)

    def unfreeze_noise(self):
        self._frozen = None

    def _draw(self, rng, batch):
        r = rng.choice((-1.0, 1.0), size=(batch, self.n_in))
        s = rng.choice((-1.0, 1.0), size=(batch, self.n_out))
        e_w = rng.normal(size=(self.n_in, self.n_out))
        e_b = rng.normal(size=self.n_out)
        return r, s, e_w, e_b

    def forward(self, x, mode="train", rng=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeMismatch(
                f"{self.name}: expected [batch, {self.n_in}], got {x.shape}")
        if mode == "infer" and self._frozen is None:
            self._cache = (x, None)
            return x @ self.mu_w.value + self.mu_b.value
        if self._frozen is not None:
            r, s, e_w, e_b = self._frozen
            if r.shape[0] != x.shape[0]:
                raise ShapeMismatch(f"{self.name}: frozen noise batch mismatch")
        else:
            if rng is None:
                raise ValueError(f"{self.name}: active mode needs an rng")
            r, s, e_w, e_b = self._draw(rng, x.shape[0])
        sig_w = softplus(self.rho_w.value)
        sig_b = softplus(self.rho_b.value)
        dw = sig_w * e_w
        xr = x * r
        y = x @ self.mu_w.value + (xr @ dw) * s \
            + self.mu_b.value + sig_b * e_b
        self._cache = (x, (r, s, e_w, e_b, xr, dw))
        return y

    def backward(self, dy):
        x, noise = self._cache
        self.mu_w.grad += x.T @ dy
        self.mu_b.grad += dy.sum(axis=0)
        if noise is None:
            return dy @ self.mu_w.value.T
        r, s, e_w, e_b, xr, dw = noise
        dys = dy * s
        d_dw = xr.T @ dys
        # d softplus(rho) / d rho = sigmoid(rho)
        self.rho_w.grad += d_dw * e_w / (1.0 + np.exp(-self.rho_w.value))
        self.rho_b.grad += dy.sum(axis=0) * e_b / (1.0 + np.exp(-self.rho_b.value))
        return dy @ self.mu_w.value.T + (dys @ dw.T) * r

    def kl(self) -> float:
        """KL(posterior || N(0,1)) summed over every weight and bias."""
        total = gaussian_kl(self.mu_w.value, softplus(self.rho_w.value))
        total += gaussian_kl(self.mu_b.value, softplus(self.rho_b.value))
        return total

    def accumulate_kl_grads(self, kl_weight: float):
        """Add d(kl_weight * KL)/d{mu, rho} into the existing grads.

        Per element KL = -ln(sigma) + (sigma^2 + mu^2)/2 - 1/2, so
        dKL/dmu = mu and dKL/drho = (sigma - 1/sigma) * sigmoid(rho).
        """
        for mu, rho in ((self.mu_w, self.rho_w), (self.mu_b, self.rho_b)):
            sig = softplus(rho.value)
            mu.grad += kl_weight * mu.value
            rho.grad += kl_weight * (sig - 1.0 / sig) \
                / (1.0 + np.exp(-rho.value))


# ---------------------------------------------------------------------------
# functional forms


def mc_dropout_forward(x, p, mode, rng):
    return MCDropout(p).forward(x, mode=mode, rng=rng)


def dropconnect_forward(x, layer, p, mode, rng):
    if isinstance(layer, Conv1D):
        return DropConnectConv1D(layer, p).forward(x, mode=mode, rng=rng)
    if isinstance(layer, Dense):
        return DropConnectDense(layer, p).forward(x, mode=mode, rng=rng)
    raise TypeError(f"dropconnect supports dense/conv1d, not {type(layer).__name__}")


def flipout_dense_forward(x, layer: FlipoutDense, rng):
    return layer.forward(x, mode="mc_infer", rng=rng)


def gaussian_kl(mu: np.ndarray, sigma: np.ndarray) -> float:
    """Sum of KL(N(mu, sigma^2) || N(0,1)) over all elements."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0.0):
        raise NonPositiveSigma("sigma must be positive elementwise")
    return float(np.sum(-np.log(sigma) + (sigma * sigma + mu * mu) / 2.0 - 0.5))


def elbo_loss(ce_loss: float, kl: float, kl_weight: float) -> float:
    """Negative ELBO up to constants: data term plus weighted complexity."""
    if kl_weight <= 0.0:
        raise ValueError("kl_weight must be positive")
    return ce_loss + kl_weight * kl


def flipout_grad_check(eps: float = 1e-5, seed: int = 0) -> float:
    """Finite-difference check of FlipoutDense with frozen noise.

    Covers the input and all four posterior parameters (mu/rho for weight
    and bias); returns the max relative error.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xF11b0)))
    base = Dense(3, 2, rng)
    layer = FlipoutDense(base)
    layer.rho_w.value = rng.normal(-2.5, 0.3, size=layer.rho_w.value.shape)
    layer.rho_b.value = rng.normal(-2.5, 0.3, size=layer.rho_b.value.shape)
    x = rng.normal(size=(2, 3))
    layer.freeze_noise(rng, batch=2)

    y = layer.forward(x, mode="mc_infer")
    proj = rng.uniform(-1.0, 1.0, size=y.shape)
    for p in layer.params():
        p.zero_grad()
    analytic_dx = layer.backward(proj)
    analytic = {p.name: p.grad.copy() for p in layer.params()}

    def loss_at():
        return float(np.sum(layer.forward(x, mode="mc_infer") * proj))

    def fd(flat, i):
        orig = flat[i]
        flat[i] = orig + eps
        fp = loss_at()
        flat[i] = orig - eps
        fm = loss_at()
        flat[i] = orig
        return (fp - fm) / (2.0 * eps)

    worst = 0.0
    flat_x = x.reshape(-1)
    num = np.array([fd(flat_x, i) for i in range(flat_x.size)])
    ana = analytic_dx.reshape(-1)
    denom = np.maximum(np.abs(ana) + np.abs(num), 1e-3)
    worst = max(worst, float(np.max(np.abs(ana - num) / denom)))
    for p in layer.params():
        flat_p = p.value.reshape(-1)
        num = np.array([fd(flat_p, i) for i in range(flat_p.size)])
        ana = analytic[p.name].reshape(-1)
        denom = np.maximum(np.abs(ana) + np.abs(num), 1e-3)
        worst = max(worst, float(np.max(np.abs(ana - num) / denom)))
    layer.unfreeze_noise()
    return worst
