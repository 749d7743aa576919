"""Gaussian-mixture data model with closed-form diffusion quantities.

Every component has a covariance that is diagonal in a shared orthonormal
basis: either the pixel basis or the 2-D DCT basis of the image.  Noising
keeps that structure, so the noisy marginal, its score and Hessian, the
posterior of the clean signal and the posterior given a color map are all
exact and cost ``O(n * K * d)`` per call.

Signals are flattened row-major ``(H, W, C)`` images; every function accepts
a single vector ``(d,)`` or a batch ``(n, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy import fft
from scipy.special import logsumexp, softmax

from .colormap import ColorMap, ColorMapOperator
from .schedule import NoiseSchedule

BASES = ("pixel", "dct")
_LOG2PI = math.log(2 * math.pi)


@dataclass(frozen=True, eq=False)
class MixtureModel:
    """``sum_k w_k N(mean_k, U diag(variances_k) U^T)`` on flattened images.

    ``means`` live in pixel space, ``variances`` in the coordinates of
    ``basis`` (``U`` is the identity or the orthonormal 2-D DCT).
    Scalar-per-component variances are accepted and broadcast.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    image_shape: tuple[int, int, int]
    basis: str = "pixel"

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        shape = tuple(int(s) for s in self.image_shape)
        if len(shape) != 3:
            raise ValueError("image_shape must be (H, W, C)")
        d = int(np.prod(shape))
        k = len(w)
        if k < 1:
            raise ValueError("need at least one component")
        if means.shape != (k, d):
            raise ValueError(f"means must be ({k}, {d}), got {means.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be non-negative and sum to 1")
        var = np.asarray(self.variances, dtype=np.float64)
        if var.ndim == 1:
            var = var[:, None]
        var = np.array(np.broadcast_to(var, (k, d)))
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise ValueError("covariances must be positive definite")
        if self.basis not in BASES:
            raise ValueError(f"basis must be one of {BASES}")
        for arr in (w, means, var):
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", var)
        object.__setattr__(self, "image_shape", shape)
        mb = self.to_basis(means)
        mb.setflags(write=False)
        object.__setattr__(self, "_means_basis", mb)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def is_isotropic(self) -> bool:
        return bool(np.all(self.variances == self.variances[:, :1]))

    def to_basis(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.basis == "pixel":
            return z
        img = z.reshape(z.shape[:-1] + self.image_shape)
        return fft.dctn(img, type=2, norm="ortho", axes=(-3, -2)).reshape(z.shape)

    def from_basis(self, y):
        y = np.asarray(y, dtype=np.float64)
        if self.basis == "pixel":
            return y
        img = y.reshape(y.shape[:-1] + self.image_shape)
        return fft.idctn(img, type=2, norm="ortho", axes=(-3, -2)).reshape(y.shape)

    def rebased(self, basis: str) -> "MixtureModel":
        """Same distribution expressed in another basis (isotropic models only)."""
        if basis == self.basis:
            return self
        if not self.is_isotropic:
            raise ValueError("only isotropic components can change basis")
        return MixtureModel(self.weights, self.means, self.variances, self.image_shape, basis)

    def reweighted(self, weights) -> "MixtureModel":
        return MixtureModel(weights, self.means, self.variances, self.image_shape, self.basis)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        """Dense covariance matrix; only sensible for small ``d``."""
        d = self.dim
        basis_mat = self.from_basis(np.eye(d)).T  # columns are basis vectors
        mu = self.mean()
        cov = np.zeros((d, d))
        for w, m, v in zip(self.weights, self.means, self.variances):
            dm = m - mu
            cov += w * ((basis_mat * v) @ basis_mat.T + np.outer(dm, dm))
        return cov

    def sample(self, n: int, rng: np.random.Generator, return_labels=False):
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim)) * np.sqrt(self.variances[labels])
        x = self.means[labels] + self.from_basis(noise)
        return (x, labels) if return_labels else x

    # -- noisy marginals -------------------------------------------------

    def _component_terms(self, z, alpha):
        """Log-densities ``(..., K)`` and scores ``(..., K, d)`` in basis coords."""
        y = self.to_basis(z)
        var_t = alpha * self.variances + (1.0 - alpha)
        diff = y[..., None, :] - math.sqrt(alpha) * self._means_basis
        scores = -diff / var_t
        logn = -0.5 * (
            np.sum(diff * diff / var_t, axis=-1)
            + np.sum(np.log(var_t), axis=-1)
            + self.dim * _LOG2PI
        )
        return logn, scores, var_t

    def log_density(self, z, alpha: float = 1.0):
        """Exact ``log p`` of the model noised to signal level ``alpha``."""
        logn, _, _ = self._component_terms(z, alpha)
        return logsumexp(logn + np.log(self.weights), axis=-1)

    def responsibilities(self, z, alpha: float = 1.0):
        logn, _, _ = self._component_terms(z, alpha)
        return softmax(logn + np.log(self.weights), axis=-1)


def log_likelihood(model: MixtureModel, x):
    """Exact mixture log-density of clean images (realism proxy)."""
    return model.log_density(x, 1.0)


def marginal_score(model: MixtureModel, schedule: NoiseSchedule, z_t, t: int):
    """``grad log p_t(z_t)`` for the mixture noised to timestep ``t``."""
    return _ScoreEngine(model).score(z_t, schedule.alpha(t))


class _ScoreEngine:
    def __init__(self, model: MixtureModel, log_weights=None):
        self.model = model
        self.log_weights = np.log(model.weights) if log_weights is None else log_weights

    def terms(self, z, alpha):
        m = self.model
        logn, scores, var_t = m._component_terms(z, alpha)
        resp = softmax(logn + self.log_weights, axis=-1)
        mean_score = np.einsum("...k,...kd->...d", resp, scores)
        return resp, scores, mean_score, var_t

    def score(self, z, alpha):
        _, _, s, _ = self.terms(z, alpha)
        return self.model.from_basis(s)

    def hessian_vector(self, z, alpha, v):
        """Hessian of ``log p`` applied to ``v``; the Hessian is symmetric."""
        m = self.model
        resp, scores, s, var_t = self.terms(z, alpha)
        vb = m.to_basis(np.broadcast_to(v, np.shape(z)))
        proj = np.einsum("...kd,...d->...k", scores, vb)
        hv = (
            -np.einsum("...k,...kd->...d", resp, vb[..., None, :] / var_t)
            + np.einsum("...k,...kd->...d", resp * proj, scores)
            - s * np.sum(s * vb, axis=-1, keepdims=True)
        )
        return m.from_basis(hv)


class Denoiser(Protocol):
    """Noise predictor ``eps(z_t, t)`` with Jacobian-vector products.

    ``jvp`` returns ``J v`` where ``J = d eps / d z_t``; implementations here
    have symmetric Jacobians so the same call gives ``J^T v``.
    """

    def predict(self, z_t, t: int, ids=None) -> np.ndarray: ...

    def jvp(self, z_t, t: int, v) -> np.ndarray: ...


def dense_jacobian(denoiser, z_t, t: int) -> np.ndarray:
    """``d x d`` Jacobian of ``denoiser.predict`` at a single point."""
    z_t = np.asarray(z_t, dtype=np.float64)
    d = z_t.shape[-1]
    eye = np.eye(d)
    return denoiser.jvp(np.broadcast_to(z_t, (d, d)), t, eye).T


class ExactDenoiser:
    """Bayes-optimal noise prediction ``-sqrt(1 - alpha_t) * score``.

    ``log_weights`` of shape ``(n, K)`` gives every batch row its own
    component weights (used for semantically conditioned decoding).
    """

    def __init__(self, model: MixtureModel, schedule: NoiseSchedule, log_weights=None):
        self.model = model
        self.schedule = schedule
        self._engine = _ScoreEngine(model, log_weights)

    def predict(self, z_t, t, ids=None):
        a = self.schedule.alpha(t)
        return -math.sqrt(1.0 - a) * self._engine.score(z_t, a)

    def jvp(self, z_t, t, v):
        a = self.schedule.alpha(t)
        return -math.sqrt(1.0 - a) * self._engine.hessian_vector(z_t, a, v)

    def jacobian(self, z_t, t):
        return dense_jacobian(self, z_t, t)

    def posterior_mean(self, z_t, t):
        """``E[z_0 | z_t]`` by Tweedie's formula."""
        a = self.schedule.alpha(t)
        return (np.asarray(z_t) + (1.0 - a) * self._engine.score(z_t, a)) / math.sqrt(a)


def exact_denoiser(model: MixtureModel, schedule: NoiseSchedule) -> ExactDenoiser:
    return ExactDenoiser(model, schedule)


class PerturbedDenoiser:
    """``base`` plus isotropic Gaussian error of scale ``lambdas[t]``.

    The error for sample ``i`` at timestep ``t`` is drawn from a generator
    keyed on ``(seed, t, i)``, so results do not depend on batching or call
    order.  The error is independent of ``z_t``; the Jacobian is the base's.
    """

    def __init__(self, base, lambdas, seed: int = 0):
        lambdas = np.asarray(lambdas, dtype=np.float64)
        if np.any(lambdas < 0):
            raise ValueError("lambda profile must be non-negative")
        self.base = base
        self.lambdas = lambdas
        self.seed = int(seed)

    def error(self, t, ids, d):
        lam = self.lambdas[t]
        out = np.empty((len(ids), d))
        for row, i in enumerate(ids):
            out[row] = np.random.default_rng([self.seed, int(t), int(i)]).standard_normal(d)
        return lam * out

    def predict(self, z_t, t, ids=None):
        eps = self.base.predict(z_t, t, ids)
        if self.lambdas[t] == 0:
            return eps
        z_t = np.asarray(z_t)
        batch = z_t.reshape(-1, z_t.shape[-1])
        if ids is None:
            ids = np.arange(len(batch))
        return eps + self.error(t, np.atleast_1d(ids), z_t.shape[-1]).reshape(z_t.shape)

    def jvp(self, z_t, t, v):
        return self.base.jvp(z_t, t, v)


def perturbed_denoiser(base, lambda_profile, seed: int = 0) -> PerturbedDenoiser:
    return PerturbedDenoiser(base, lambda_profile, seed)


class ConjugatedDenoiser:
    """Denoiser for data ``Q x`` given one for ``x``, with ``Q`` orthogonal."""

    def __init__(self, base, q: np.ndarray):
        self.base = base
        self.q = np.asarray(q)

    def predict(self, z_t, t, ids=None):
        return self.base.predict(np.asarray(z_t) @ self.q, t, ids) @ self.q.T

    def jvp(self, z_t, t, v):
        return self.base.jvp(np.asarray(z_t) @ self.q, t, np.asarray(v) @ self.q) @ self.q.T


def _selected_coords(model: MixtureModel, op: ColorMapOperator) -> np.ndarray:
    """Flat DCT-coordinate indices of the retained block, in color-map order."""
    h, w, ch = model.image_shape
    idx = np.arange(h * w * ch).reshape(h, w, ch)
    return idx[: op.m, : op.m, :].ravel()


def exact_color_posterior(
    model: MixtureModel, op: ColorMapOperator, c: ColorMap, obs_noise: float
) -> MixtureModel:
    """Exact ``p(x | c)`` for observations ``c = A x + obs_noise * xi``.

    The model must be diagonal in the DCT basis (or isotropic), where ``A``
    simply selects coordinates.
    """
    if not obs_noise > 0:
        raise ValueError("obs_noise must be positive")
    if op.image_shape != model.image_shape:
        raise ValueError("operator and model image shapes differ")
    if model.basis != "dct":
        model = model.rebased("dct")
    sel = _selected_coords(model, op)
    obs = np.asarray(c.coeffs, dtype=np.float64).ravel()
    s2 = obs_noise**2
    mb = model.to_basis(model.means)
    var = np.array(model.variances)
    prior_m = mb[:, sel]
    prior_v = var[:, sel]
    post_v = 1.0 / (1.0 / prior_v + 1.0 / s2)
    post_m = post_v * (prior_m / prior_v + obs / s2)
    ev_var = prior_v + s2
    log_ev = -0.5 * np.sum((obs - prior_m) ** 2 / ev_var + np.log(2 * np.pi * ev_var), axis=1)
    log_w = np.log(model.weights) + log_ev
    weights = np.exp(log_w - logsumexp(log_w))
    mb[:, sel] = post_m
    var[:, sel] = post_v
    weights = weights / weights.sum()
    return MixtureModel(weights, model.from_basis(mb), var, model.image_shape, "dct")
