"""Server-side aggregation of the received one-bit gradients.

Every aggregator is a pure function of one round's messages: the ``K x M``
received matrix plus each device's prior descriptors and link state. All of
them are separable, i.e. a sum over devices of a per-device coordinate map,
and run through :func:`bayesfl.kernels.separable_sum`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .channel import LinkState
from .errors import InvalidInputError
from .prior import SQRT_2_OVER_PI, GaussianPriorParams, LaplacianPriorParams, PriorParams

TWO_OVER_PI = 2.0 / math.pi
MODES = ("corrected", "paper_literal")


@dataclass(frozen=True)
class AggregationInput:
    received: np.ndarray
    priors: Sequence[PriorParams]
    links: Sequence[LinkState]

    def __post_init__(self):
        y = np.asarray(self.received, dtype=np.float64)
        if y.ndim == 1:
            y = y[None, :]
        object.__setattr__(self, "received", y)
        if y.ndim != 2:
            raise InvalidInputError(f"received must be K x M, got shape {y.shape}")
        if not (len(self.priors) == len(self.links) == y.shape[0]):
            raise InvalidInputError(
                f"{y.shape[0]} received rows, {len(self.priors)} priors, {len(self.links)} links"
            )

    @property
    def K(self):
        return self.received.shape[0]

    @property
    def mu(self):
        return np.array([p.mu for p in self.priors], dtype=np.float64)

    @property
    def h(self):
        return np.array([link.h for link in self.links], dtype=np.float64)

    @property
    def sigma2(self):
        return np.array([link.sigma2 for link in self.links], dtype=np.float64)

    def device(self, k):
        """The single-device input for device ``k``."""
        return AggregationInput(self.received[k : k + 1], [self.priors[k]], [self.links[k]])


def _require(inp, prior_type, name):
    if not all(isinstance(p, prior_type) for p in inp.priors):
        raise InvalidInputError(f"{name} needs {prior_type.__name__} priors")


def _require_nonzero_gain(inp, name):
    if np.any(inp.h == 0.0):
        raise InvalidInputError(f"{name} is undefined for a zero fading gain")


def tanh_gain(h, sigma2, mode="corrected"):
    """Slope of the tanh argument, ``c`` in ``tanh(c * y)``.

    The posterior log-odds of the sent sign are ``2 h y / sigma^2`` and the
    posterior mean of the sign is tanh of *half* of that, so ``corrected``
    returns ``h / sigma^2``. ``paper_literal`` returns ``2 h / sigma^2``.
    """
    if mode == "corrected":
        return h / sigma2
    if mode == "paper_literal":
        return 2.0 * h / sigma2
    raise InvalidInputError(f"unknown mode {mode!r}; use one of {MODES}")


def _tanh_or_sign(inp, mean_abs, mode):
    """sum_k mu_k + E|g_k| * tanh(c_k y_k); noise-free links use the sign limit."""
    h, s2 = inp.h, inp.sigma2
    noisy = s2 > 0
    if np.any(~noisy & (h == 0.0)):
        raise InvalidInputError("noise-free link with zero fading gain")
    with np.errstate(over="ignore", divide="ignore"):
        gain = tanh_gain(h, np.where(noisy, s2, 1.0), mode)
    # a gain too steep to represent is the noise-free sign limit
    tanh_ok = noisy & np.isfinite(gain)
    gain = np.where(tanh_ok, gain, h)
    kind = np.where(tanh_ok, kernels.TANH, kernels.SIGN)
    return kernels.separable_sum(inp.received, inp.mu, mean_abs, gain, kind)


def mmse_gaussian(inp, mode="corrected"):
    """Conditional-mean aggregate under iid Gaussian priors.

    Per coordinate: ``sum_k mu_k + sqrt(2/pi) nu_k tanh(c_k y_k)`` with
    ``c_k`` from :func:`tanh_gain`.
    """
    _require(inp, GaussianPriorParams, "mmse_gaussian")
    nu = np.array([p.nu for p in inp.priors])
    return _tanh_or_sign(inp, SQRT_2_OVER_PI * nu, mode)


def mmse_laplacian(inp, mode="corrected"):
    """Conditional-mean aggregate under iid Laplace priors (weight ``lam_k``)."""
    _require(inp, LaplacianPriorParams, "mmse_laplacian")
    lam = np.array([p.lam for p in inp.priors])
    return _tanh_or_sign(inp, lam, mode)


def blmmse_coefficients(h, sigma2, nu, mode="corrected"):
    """Per-device gain of the Bussgang linear estimator.

    ``corrected`` divides by Var(y) = h^2 + sigma^2, the exact linear MMSE
    coefficient for a sign-quantized Gaussian. ``paper_literal`` divides by
    (2/pi) h^2 + sigma^2.
    """
    h = np.asarray(h, dtype=np.float64)
    if mode == "corrected":
        denom = h * h + sigma2
    elif mode == "paper_literal":
        denom = TWO_OVER_PI * h * h + sigma2
    else:
        raise InvalidInputError(f"unknown mode {mode!r}; use one of {MODES}")
    num = SQRT_2_OVER_PI * h * np.asarray(nu, dtype=np.float64)
    # h == 0 and sigma2 == 0 together make the channel useless; predict the mean.
    return np.divide(num, denom, out=np.zeros_like(num), where=denom > 0)


def blmmse(inp, mode="corrected"):
    """Best linear aggregate after Bussgang linearization of the sign quantizer."""
    _require(inp, GaussianPriorParams, "blmmse")
    nu = np.array([p.nu for p in inp.priors])
    coef = blmmse_coefficients(inp.h, inp.sigma2, nu, mode)
    ones = np.ones(inp.K)
    return kernels.separable_sum(
        inp.received, inp.mu, ones, coef, np.full(inp.K, kernels.LINEAR)
    )


def high_snr_mmse(inp):
    """Noise-free limit of the MMSE aggregate: prior-weighted sign sum."""
    _require_nonzero_gain(inp, "high_snr_mmse")
    scale = np.array([p.mean_abs for p in inp.priors])
    return kernels.separable_sum(
        inp.received, inp.mu, scale, inp.h, np.full(inp.K, kernels.SIGN)
    )


def high_snr_blmmse(inp):
    """Noise-free limit of the corrected BLMMSE aggregate: channel inversion."""
    _require(inp, GaussianPriorParams, "high_snr_blmmse")
    _require_nonzero_gain(inp, "high_snr_blmmse")
    scale = np.array([p.mean_abs for p in inp.priors])
    return kernels.separable_sum(
        inp.received, inp.mu, scale, 1.0 / inp.h, np.full(inp.K, kernels.LINEAR)
    )


def vote_sum(inp, rng=None):
    """Sum over devices of the ML sign decision ``sign(y) * sign(h)``.

    A device with ``h == 0`` carries no signal; its vote is a fair coin drawn
    from ``rng`` (required in that case).
    """
    h = inp.h
    dead = h == 0.0
    live = ~dead
    zeros = np.zeros(int(live.sum()))
    total = kernels.separable_sum(
        inp.received[live], zeros, np.ones_like(zeros), h[live], np.full(zeros.size, kernels.SIGN)
    ) if live.any() else np.zeros(inp.received.shape[1])
    if dead.any():
        if rng is None:
            raise InvalidInputError("a zero fading gain needs an rng for the coin-flip vote")
        for _ in range(int(dead.sum())):
            total = total + np.where(rng.uniform(size=total.size) < 0.5, 1.0, -1.0)
    return total


def majority_vote(inp, rng=None):
    """Sign of the vote sum, ties to +1."""
    return np.where(vote_sum(inp, rng) >= 0.0, 1.0, -1.0)


def conditional_mean_elementwise(y, prior, link, mode="corrected"):
    """E[g_bar | y] for one device and a zero-centered prior: E|g_bar| tanh(c y)."""
    if link.sigma2 <= 0:
        raise InvalidInputError("conditional mean needs a noisy link")
    arg = np.clip(tanh_gain(link.h, link.sigma2, mode) * np.asarray(y, dtype=np.float64),
                  -kernels.TANH_CLAMP, kernels.TANH_CLAMP)
    out = prior.mean_abs * np.tanh(arg)
    return float(out) if out.ndim == 0 else out


def get_aggregator(name, mode="corrected"):
    """Aggregator callable ``f(inp) -> values`` by name, bound to ``mode``."""
    table = {
        "mmse_gaussian": lambda inp: mmse_gaussian(inp, mode),
        "mmse_laplacian": lambda inp: mmse_laplacian(inp, mode),
        "blmmse": lambda inp: blmmse(inp, mode),
        "high_snr_mmse": high_snr_mmse,
        "high_snr_blmmse": high_snr_blmmse,
    }
    try:
        return table[name]
    except KeyError:
        raise InvalidInputError(f"unknown aggregator {name!r}") from None
