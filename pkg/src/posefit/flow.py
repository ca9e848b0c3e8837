"""Invertible normalizing flows over pose vectors.

Two architectures are provided: a low-capacity stack of fully connected
layers with parametric-ReLU activations, and a Real-NVP variant where each
activation is replaced by an affine coupling step. Likelihoods are exact via
the change-of-variables log-determinant; inversion is exact via LU solves
(linear layers) and closed forms (activations, coupling steps).

All gradients (w.r.t. inputs for fitting, w.r.t. parameters for training)
are hand-derived reverse-mode sweeps over the layer stack.
"""

from __future__ import annotations

import json
import struct

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import (DimensionMismatch, DivergedTraining, EmptyDataset,
                     InvalidConfig, IoError, NonInvertibleLayer)

LOG_2PI = float(np.log(2.0 * np.pi))
DET_FLOOR = 1e-12
PRELU_ALPHA_FLOOR = 1e-4


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    return float(np.log(np.expm1(y)))


class InvertibleLinear:
    """y = x W^T + b with a full square weight matrix."""

    kind = "linear"

    def __init__(self, dim, rng=None):
        self.dim = dim
        if rng is None:
            self.W = np.eye(dim)
        else:
            self.W = np.eye(dim) + 1e-3 * rng.standard_normal((dim, dim))
        self.b = np.zeros(dim)
        self._lu = None

    def params(self):
        return [self.W, self.b]

    def zero_like_params(self):
        return [np.zeros_like(self.W), np.zeros_like(self.b)]

    def invalidate(self):
        self._lu = None

    def _factor(self):
        if self._lu is None:
            self._lu = lu_factor(self.W)
        return self._lu

    def logabsdet(self):
        lu, _ = self._factor()
        diag = np.abs(np.diag(lu))
        if np.any(diag < DET_FLOOR):
            raise NonInvertibleLayer("linear layer determinant underflow")
        return float(np.sum(np.log(diag)))

    def forward(self, x):
        y = x @ self.W.T + self.b
        return y, {"x": x}

    def logdet(self, cache, n):
        return np.full(n, self.logabsdet())

    def backward(self, cache, gy, glogdet, grads):
        x = cache["x"]
        gW, gb = grads
        gW += gy.T @ x
        gb += gy.sum(axis=0)
        total = float(np.sum(glogdet))
        if total != 0.0:
            # d log|det W| / dW = W^{-T}
            gW += total * lu_solve(self._factor(), np.eye(self.dim)).T
        return gy @ self.W

    def inverse(self, y):
        self.logabsdet()
        return lu_solve(self._factor(), (y - self.b).T).T

    def inverse_vjp(self, y, gx):
        # x = (y - b) W^{-T}  =>  gy = gx W^{-1}
        return lu_solve(self._factor(), gx.T, trans=1).T


class PReLU:
    """Elementwise leaky activation with a single trainable positive slope.

    The slope is stored as an unconstrained scalar rho with
    alpha = softplus(rho) + 1e-4, which keeps the layer invertible.
    """

    kind = "prelu"

    def __init__(self, dim):
        self.dim = dim
        self.rho = np.array([_softplus_inv(1.0 - PRELU_ALPHA_FLOOR)])

    @property
    def alpha(self):
        return float(_softplus(self.rho[0]) + PRELU_ALPHA_FLOOR)

    def params(self):
        return [self.rho]

    def zero_like_params(self):
        return [np.zeros_like(self.rho)]

    def invalidate(self):
        pass

    def forward(self, x):
        neg = x < 0.0
        y = np.where(neg, self.alpha * x, x)
        return y, {"x": x, "neg": neg}

    def logdet(self, cache, n):
        return cache["neg"].sum(axis=1) * np.log(self.alpha)

    def backward(self, cache, gy, glogdet, grads):
        x, neg = cache["x"], cache["neg"]
        alpha = self.alpha
        galpha = float(np.sum(gy[neg] * x[neg]))
        galpha += float(np.sum(glogdet * neg.sum(axis=1))) / alpha
        sig = 1.0 / (1.0 + np.exp(-self.rho[0]))
        grads[0][0] += galpha * sig
        return np.where(neg, alpha * gy, gy)

    def inverse(self, y):
        return np.where(y < 0.0, y / self.alpha, y)

    def inverse_vjp(self, y, gx):
        return np.where(y < 0.0, gx / self.alpha, gx)


class _CouplingNet:
    """FC-Tanh-FC-Tanh-FC net predicting scale and shift from the pass-through half."""

    def __init__(self, d_in, d_out, hidden, rng):
        self.W1 = 1e-2 * rng.standard_normal((hidden, d_in))
        self.b1 = np.zeros(hidden)
        self.W2 = 1e-2 * rng.standard_normal((hidden, hidden))
        self.b2 = np.zeros(hidden)
        self.W3 = 1e-2 * rng.standard_normal((d_out, hidden))
        self.b3 = np.zeros(d_out)

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2, self.W3, self.b3]

    def forward(self, x1):
        h1 = np.tanh(x1 @ self.W1.T + self.b1)
        h2 = np.tanh(h1 @ self.W2.T + self.b2)
        o = h2 @ self.W3.T + self.b3
        return o, {"x1": x1, "h1": h1, "h2": h2}

    def backward(self, cache, go, grads):
        x1, h1, h2 = cache["x1"], cache["h1"], cache["h2"]
        gW1, gb1, gW2, gb2, gW3, gb3 = grads
        gW3 += go.T @ h2
        gb3 += go.sum(axis=0)
        gh2 = (go @ self.W3) * (1.0 - h2 * h2)
        gW2 += gh2.T @ h1
        gb2 += gh2.sum(axis=0)
        gh1 = (gh2 @ self.W2) * (1.0 - h1 * h1)
        gW1 += gh1.T @ x1
        gb1 += gh1.sum(axis=0)
        return gh1 @ self.W1


class RealNVPStep:
    """Affine coupling: the first d coordinates pass through and drive an
    elementwise scale/shift of the rest. Invertible by construction."""

    kind = "realnvp"

    def __init__(self, dim, hidden, rng):
        self.dim = dim
        self.d = dim // 2
        self.m = dim - self.d
        self.hidden = hidden
        self.net = _CouplingNet(self.d, 2 * self.m, hidden, rng)

    def params(self):
        return self.net.params()

    def zero_like_params(self):
        return [np.zeros_like(p) for p in self.net.params()]

    def invalidate(self):
        pass

    def forward(self, x):
        x1, x2 = x[:, :self.d], x[:, self.d:]
        o, ncache = self.net.forward(x1)
        s, t = o[:, :self.m], o[:, self.m:]
        es = np.exp(s)
        y = np.concatenate([x1, x2 * es + t], axis=1)
        return y, {"x2": x2, "s": s, "es": es, "net": ncache}

    def logdet(self, cache, n):
        return cache["s"].sum(axis=1)

    def backward(self, cache, gy, glogdet, grads):
        x2, s, es = cache["x2"], cache["s"], cache["es"]
        gy1, gy2 = gy[:, :self.d], gy[:, self.d:]
        gx2 = gy2 * es
        gs = gy2 * x2 * es + glogdet[:, None]
        gt = gy2
        go = np.concatenate([gs, gt], axis=1)
        gx1 = self.net.backward(cache["net"], go, grads) + gy1
        return np.concatenate([gx1, gx2], axis=1)

    def inverse(self, y):
        y1, y2 = y[:, :self.d], y[:, self.d:]
        o, _ = self.net.forward(y1)
        s, t = o[:, :self.m], o[:, self.m:]
        return np.concatenate([y1, (y2 - t) * np.exp(-s)], axis=1)

    def inverse_vjp(self, y, gx):
        y1, y2 = y[:, :self.d], y[:, self.d:]
        o, ncache = self.net.forward(y1)
        s, t = o[:, :self.m], o[:, self.m:]
        ens = np.exp(-s)
        x2 = (y2 - t) * ens
        gx1, gx2 = gx[:, :self.d], gx[:, self.d:]
        gy2 = gx2 * ens
        gs = -gx2 * x2
        gt = -gy2
        go = np.concatenate([gs, gt], axis=1)
        dummy = [np.zeros_like(p) for p in self.net.params()]
        gy1 = self.net.backward(ncache, go, dummy) + gx1
        return np.concatenate([gy1, gy2], axis=1)


ARCHITECTURES = ("low-capacity", "real-nvp")


class FlowModel:
    """Ordered invertible layer stack mapping poses to latent Gaussian codes."""

    def __init__(self, dim, layers, architecture, representation="angle_axis",
                 seed=None, hidden=128, steps_trained=0, training_curve=None):
        self.dim = dim
        self.layers = layers
        self.architecture = architecture
        self.representation = representation
        self.seed = seed
        self.hidden = hidden
        self.steps_trained = steps_trained
        self.training_curve = training_curve or []
        self.metadata = {}

    # -- construction ------------------------------------------------------

    @classmethod
    def build(cls, architecture, dim, seed=None, hidden=128,
              representation="angle_axis", identity_init=False):
        if architecture not in ARCHITECTURES:
            raise InvalidConfig(f"unknown flow architecture {architecture!r}")
        rng = None if identity_init else np.random.default_rng(seed)
        layers = []
        n_blocks = 4 if architecture == "low-capacity" else 5
        for i in range(n_blocks):
            layers.append(InvertibleLinear(dim, rng))
            if architecture == "low-capacity":
                layers.append(PReLU(dim))
            else:
                layers.append(RealNVPStep(dim, hidden,
                                          rng or np.random.default_rng(0)))
        layers.append(InvertibleLinear(dim, rng))
        return cls(dim, layers, architecture, representation=representation,
                   seed=seed, hidden=hidden)

    @classmethod
    def identity(cls, dim, architecture="low-capacity", hidden=128):
        """Identity-initialized flow: z = theta, logdet = 0 (coupling nets zeroed)."""
        model = cls.build(architecture, dim, hidden=hidden, identity_init=True)
        for layer in model.layers:
            if layer.kind == "realnvp":
                for p in layer.params():
                    p[...] = 0.0
        return model

    def n_params(self):
        return int(sum(p.size for layer in self.layers for p in layer.params()))

    def get_flat_params(self):
        return np.concatenate([p.ravel() for layer in self.layers
                               for p in layer.params()])

    def set_flat_params(self, flat):
        flat = np.asarray(flat, dtype=float)
        if flat.size != self.n_params():
            raise DimensionMismatch("parameter vector length mismatch")
        i = 0
        for layer in self.layers:
            for p in layer.params():
                p[...] = flat[i:i + p.size].reshape(p.shape)
                i += p.size
            layer.invalidate()

    # -- evaluation ----------------------------------------------------------

    def _as_batch(self, theta):
        theta = np.asarray(theta, dtype=float)
        single = theta.ndim == 1
        batch = theta[None, :] if single else theta
        if batch.shape[1] != self.dim:
            raise DimensionMismatch(
                f"input dim {batch.shape[1]} != flow dim {self.dim}")
        return batch, single

    def forward(self, theta):
        """Returns (z, logdet); both lose the batch axis for 1-D input."""
        x, single = self._as_batch(theta)
        logdet = np.zeros(x.shape[0])
        for layer in self.layers:
            x, cache = layer.forward(x)
            logdet += layer.logdet(cache, x.shape[0])
        if single:
            return x[0], float(logdet[0])
        return x, logdet

    def _forward_with_caches(self, x):
        caches = []
        logdet = np.zeros(x.shape[0])
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
            logdet += layer.logdet(cache, x.shape[0])
        return x, logdet, caches

    def inverse(self, z):
        x, single = self._as_batch(z)
        for layer in reversed(self.layers):
            x = layer.inverse(x)
        return x[0] if single else x

    def inverse_vjp(self, z, g_theta):
        """Gradient w.r.t. z of a scalar whose gradient w.r.t. theta = f^-1(z)
        is ``g_theta``. Intermediate activations are recomputed on the way down."""
        zb, single = self._as_batch(z)
        gb = np.atleast_2d(np.asarray(g_theta, dtype=float))
        # Recompute the chain of inverse inputs (top to bottom).
        inputs = [zb]
        for layer in reversed(self.layers):
            inputs.append(layer.inverse(inputs[-1]))
        inputs = inputs[:-1]           # inputs[i] feeds reversed(layers)[i]
        g = gb
        for layer, y in zip(self.layers, reversed(inputs)):
            g = layer.inverse_vjp(y, g)
        return g[0] if single else g

    def log_prob(self, theta):
        z, logdet = self.forward(theta)
        sq = np.sum(np.atleast_2d(z) ** 2, axis=1)
        out = -0.5 * self.dim * LOG_2PI - 0.5 * sq + np.atleast_1d(logdet)
        return float(out[0]) if np.asarray(theta).ndim == 1 else out

    def log_prob_and_grad(self, theta):
        """(log_prob, d log_prob / d theta) for a single pose vector."""
        x, single = self._as_batch(theta)
        z, logdet, caches = self._forward_with_caches(x)
        value = -0.5 * self.dim * LOG_2PI - 0.5 * np.sum(z * z, axis=1) + logdet
        # d(-||z||^2/2)/dz = -z ; logdet contributes +1 per sample.
        g = -z
        glog = np.ones(x.shape[0])
        dummies = [layer.zero_like_params() for layer in self.layers]
        for layer, cache, dummy in zip(reversed(self.layers), reversed(caches),
                                       reversed(dummies)):
            g = layer.backward(cache, g, glog, dummy)
            glog = glog  # logdet weights apply at every layer
        if single:
            return float(value[0]), g[0]
        return value, g

    def nll_and_param_grad(self, batch):
        """Mean negative log-likelihood over a batch and its parameter gradient."""
        x = np.asarray(batch, dtype=float)
        n = x.shape[0]
        z, logdet, caches = self._forward_with_caches(x)
        nll = 0.5 * self.dim * LOG_2PI + 0.5 * np.sum(z * z, axis=1) - logdet
        grads = [layer.zero_like_params() for layer in self.layers]
        g = z / n
        glog = np.full(n, -1.0 / n)
        for layer, cache, grad in zip(reversed(self.layers), reversed(caches),
                                      reversed(grads)):
            g = layer.backward(cache, g, glog, grad)
        flat = np.concatenate([a.ravel() for gs in grads for a in gs])
        return float(np.mean(nll)), flat

    # -- sampling ------------------------------------------------------------

    def sample(self, n, seed=0):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n, self.dim))
        return self.inverse(z)

    def interpolate(self, z_a, z_b, steps):
        z_a = np.asarray(z_a, dtype=float)
        z_b = np.asarray(z_b, dtype=float)
        if steps < 1:
            raise InvalidConfig("interpolation needs at least 1 step")
        if steps == 1:
            return self.inverse(z_a[None, :])
        w = np.linspace(0.0, 1.0, steps)[:, None]
        return self.inverse((1.0 - w) * z_a[None, :] + w * z_b[None, :])

    # -- checkpoint format: one JSON header line, then a float64-LE blob ------

    def header(self):
        return {
            "format": "posefit-flow-v1",
            "architecture": self.architecture,
            "dim": self.dim,
            "hidden": self.hidden,
            "representation": self.representation,
            "seed": self.seed,
            "steps_trained": self.steps_trained,
            "n_params": self.n_params(),
            "training_curve": self.training_curve,
            "metadata": self.metadata,
        }

    def save(self, path):
        blob = self.get_flat_params().astype("<f8").tobytes()
        header = json.dumps(self.header(), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(blob)

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as fh:
                (hlen,) = struct.unpack("<I", fh.read(4))
                header = json.loads(fh.read(hlen).decode())
                blob = fh.read()
        except (OSError, ValueError, struct.error) as exc:
            raise IoError(f"bad flow checkpoint: {exc}") from exc
        if header.get("format") != "posefit-flow-v1":
            raise IoError("not a posefit flow checkpoint")
        model = cls.build(header["architecture"], header["dim"],
                          seed=header.get("seed"), hidden=header["hidden"],
                          representation=header.get("representation", "angle_axis"))
        params = np.frombuffer(blob, dtype="<f8")
        model.set_flat_params(params)
        model.steps_trained = header.get("steps_trained", 0)
        model.training_curve = header.get("training_curve", [])
        model.metadata = header.get("metadata", {})
        return model


def train(dataset, architecture="low-capacity", steps=20000, batch_size=64,
          learning_rate=1e-4, decay_rate=0.99, decay_every=10000, hidden=128,
          seed=0, holdout_fraction=0.1, representation="angle_axis",
          log_every=500):
    """Maximum-likelihood training with Adam and a stepped exponential decay.

    Deterministic for a given seed. Raises DivergedTraining on NaN loss and
    NonInvertibleLayer if a linear layer's determinant underflows.
    """
    data = np.asarray(dataset, dtype=float)
    if data.ndim != 2 or data.shape[0] == 0:
        raise EmptyDataset("training data must be a nonempty (N, D) array")
    n, dim = data.shape
    rng = np.random.default_rng(seed)

    n_hold = int(round(n * holdout_fraction))
    perm = rng.permutation(n)
    hold, tr = data[perm[:n_hold]], data[perm[n_hold:]]
    if tr.shape[0] == 0:
        tr, hold = data[perm], data[perm[:0]]

    model = FlowModel.build(architecture, dim, seed=seed, hidden=hidden,
                            representation=representation)
    theta = model.get_flat_params()

    # Adam state.
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, eps = 0.9, 0.999, 1e-8

    initial_holdout = float(np.mean(model.log_prob(hold))) if len(hold) else None
    curve = []
    order = rng.permutation(len(tr))
    cursor = 0
    for step in range(1, steps + 1):
        if cursor + batch_size > len(tr):
            order = rng.permutation(len(tr))
            cursor = 0
        take = min(batch_size, len(tr))
        batch = tr[order[cursor:cursor + take]]
        cursor += take

        nll, grad = model.nll_and_param_grad(batch)
        if not np.isfinite(nll):
            raise DivergedTraining(f"NaN/Inf loss at step {step}")

        lr = learning_rate * decay_rate ** (step // decay_every)
        m = beta1 * m + (1 - beta1) * grad
        v = beta2 * v + (1 - beta2) * grad * grad
        mhat = m / (1 - beta1 ** step)
        vhat = v / (1 - beta2 ** step)
        theta = theta - lr * mhat / (np.sqrt(vhat) + eps)
        model.set_flat_params(theta)

        if step % log_every == 0 or step == 1 or step == steps:
            curve.append([step, nll])

    model.steps_trained = steps
    model.training_curve = curve
    if initial_holdout is not None and len(hold):
        final_holdout = float(np.mean(model.log_prob(hold)))
        model.holdout_log_prob = (initial_holdout, final_holdout)
    return model
