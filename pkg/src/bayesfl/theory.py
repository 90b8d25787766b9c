"""Numerical checks of the aggregation MSE and the convergence guarantee.

Three independent routes to the per-round aggregation MSE are provided:
adaptive quadrature of the exact MMSE integral, closed forms for the
high-SNR and linear estimators, and a Monte Carlo oracle that simulates the
full device -> channel -> server path.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from . import kernels
from .aggregate import TWO_OVER_PI, AggregationInput, tanh_gain
from .channel import LinkState, transmit
from .errors import CapabilityError, InvalidInputError, NumericalFailure
from .prior import GaussianPriorParams, sign_quantize

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TAIL_SIGMAS = 10.0


@dataclass(frozen=True)
class MseReport:
    value: float
    method: str
    stderr: float = 0.0

    def __post_init__(self):
        if self.method not in ("quadrature", "closed_form", "monte_carlo"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.value < 0 or self.stderr < 0:
            raise ValueError(f"negative MSE or stderr: {self}")


def _nu2(priors):
    return np.array([p.nu for p in priors], dtype=np.float64) ** 2


@functools.lru_cache(maxsize=65536)
def tanh_sq_expectation(h, sigma2, mode="corrected", epsabs=1e-10):
    """E[tanh(c y)^2] for y drawn from the two-point-input channel.

    ``c`` is the aggregator slope from :func:`bayesfl.aggregate.tanh_gain`.

    The marginal of ``y`` is an equal mixture of N(+h, s^2) and N(-h, s^2)
    and the integrand is even, so the expectation equals the integral over
    the ``+h`` component alone. In the standardized variable ``z`` with
    ``y = |h| + s z`` the truncation ``|y| <= |h| + 10 s`` becomes
    ``z in [-2|h|/s - 10, 10]``. Breakpoints at ``z = 0`` (the bump) and
    ``z = -|h|/s`` (the tanh zero) keep the adaptive rule from stepping over
    either feature when ``s`` is tiny.
    """
    a = abs(float(h))
    if a == 0.0:
        return 0.0
    if sigma2 <= 0:
        return 1.0
    s = math.sqrt(sigma2)
    lo, hi = -2.0 * a / s - _TAIL_SIGMAS, _TAIL_SIGMAS
    scale = tanh_gain(a, sigma2, mode)

    def integrand(z):
        t = math.tanh(min(scale * (a + s * z), kernels.TANH_CLAMP))
        return t * t * _INV_SQRT_2PI * math.exp(-0.5 * z * z)

    cuts = sorted({lo, hi, *(p for p in (-_TAIL_SIGMAS, -a / s, 0.0) if lo < p < hi)})
    total = err = 0.0
    for left, right in zip(cuts[:-1], cuts[1:]):
        val, abserr, info = integrate.quad(
            integrand, left, right, epsabs=epsabs / len(cuts), epsrel=1e-12,
            limit=200, full_output=1,
        )[:3]
        if abserr > epsabs:
            raise NumericalFailure(
                f"quadrature on [{left:.4g}, {right:.4g}] stalled at error {abserr:.3g}",
                achieved=abserr,
            )
        total += val
        err += abserr
    return total


def mse_quadrature(priors, links, M, mode="corrected", epsabs=1e-10):
    """Minimum MSE of the tanh aggregator for zero-mean iid Gaussian priors.

    ``M * sum_k nu_k^2 * (1 - (2/pi) E[tanh(c_k y)^2])``. This equals the
    aggregator's actual MSE only when the tanh is the true conditional mean,
    i.e. in ``corrected`` mode.
    """
    if len(priors) != len(links):
        raise InvalidInputError("priors and links must have equal length")
    total = 0.0
    for p, link in zip(priors, links):
        frac = tanh_sq_expectation(float(link.h), float(link.sigma2), mode, epsabs)
        total += p.nu**2 * (1.0 - TWO_OVER_PI * frac)
    return MseReport(value=max(M * total, 0.0), method="quadrature")


def mse_high_snr_closed_form(priors, M):
    """MSE of the noise-free sign-weighted aggregator."""
    return MseReport(value=M * (1.0 - TWO_OVER_PI) * float(np.sum(_nu2(priors))),
                     method="closed_form")


def blmmse_mse_closed_form(priors, links, M, mode="corrected"):
    """MSE of the Bussgang linear aggregator for zero-mean Gaussian priors.

    ``corrected`` is the exact linear-MMSE error for a sign-quantized
    Gaussian through the channel; ``paper_literal`` uses (2/pi) h^2 + s^2 in
    the denominator instead of h^2 + s^2.
    """
    h2 = np.array([link.h for link in links], dtype=np.float64) ** 2
    s2 = np.array([link.sigma2 for link in links], dtype=np.float64)
    if mode == "corrected":
        denom = h2 + s2
    elif mode == "paper_literal":
        denom = TWO_OVER_PI * h2 + s2
    else:
        raise InvalidInputError(f"unknown BLMMSE mode {mode!r}")
    explained = np.divide(TWO_OVER_PI * h2, denom, out=np.zeros_like(h2), where=denom > 0)
    return MseReport(value=M * float(np.sum(_nu2(priors) * (1.0 - explained))),
                     method="closed_form")


class _Moments:
    """Running mean / M2 merged per chunk (Chan et al.), deterministic order."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, x):
        nb = x.size
        mb = float(np.mean(x))
        m2b = float(np.sum((x - mb) ** 2))
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta * delta * self.n * nb / n
        self.n = n

    def report(self):
        var = self.m2 / (self.n - 1)
        return MseReport(value=self.mean, method="monte_carlo",
                         stderr=math.sqrt(var / self.n))


def mse_monte_carlo(aggregator, priors, links, M, n_samples, rng, chunk=2**18):
    """Monte Carlo MSE of one or several aggregators against the true gradient sum.

    Each sample draws a centered gradient ``g_bar_k ~ N(0, nu_k^2 I_M)`` per
    device, sends ``sign(g_bar_k)`` through the device's link and scores the
    aggregate against ``sum_k (mu_k + g_bar_k)``. Passing a sequence of
    aggregators evaluates all of them on the same draws (common random
    numbers) and returns a list of reports.
    """
    if n_samples < 1000:
        raise InvalidInputError("n_samples must be >= 1000")
    many = not callable(aggregator)
    aggs: Sequence[Callable] = list(aggregator) if many else [aggregator]
    if len(priors) != len(links):
        raise InvalidInputError("priors and links must have equal length")
    nu = np.sqrt(_nu2(priors))
    mu = np.array([p.mu for p in priors], dtype=np.float64)
    K = len(priors)
    per_chunk = max(1, chunk // max(M * K, 1))
    acc = [_Moments() for _ in aggs]
    done = 0
    while done < n_samples:
        n = min(per_chunk, n_samples - done)
        g_bar = nu[:, None] * rng.standard_normal((K, n * M))
        received = np.empty_like(g_bar)
        for k, link in enumerate(links):
            received[k] = transmit(sign_quantize(g_bar[k]), link, rng)
        truth = np.zeros(n * M)
        for k in range(K):
            truth += mu[k] + g_bar[k]
        inp = AggregationInput(received, priors, links)
        for fn, a in zip(aggs, acc):
            a.add(kernels.row_sq_error(fn(inp), truth, M))
        done += n
    reports = [a.report() for a in acc]
    return reports if many else reports[0]


def _rel_likelihoods(y, link):
    """(L(y|+1), L(y|-1)) rescaled so the larger is 1; scale cancels in ratios."""
    if link.sigma2 <= 0:
        raise InvalidInputError("genie oracle needs noisy links")
    ep = -((y - link.h) ** 2) / (2.0 * link.sigma2)
    em = -((y + link.h) ** 2) / (2.0 * link.sigma2)
    top = max(ep, em)
    return math.exp(ep - top), math.exp(em - top)


def _gauss_pdf(x, var):
    return math.exp(-0.5 * x * x / var) / math.sqrt(2.0 * math.pi * var)


def genie_bfl_conditional_mean(mean, cov, ys, links, epsabs=1e-13, epsrel=1e-10):
    """E[g_k | y_1..y_K] under a joint Gaussian prior on K scalar gradients.

    Follows the Markov-chain factorization: for each target device ``k`` the
    likelihood of a peer's observation given ``g_bar_k`` is
    ``int P(y_i | g_bar_i) P(g_bar_i | g_bar_k) d g_bar_i``, computed by
    nested adaptive quadrature, and the posterior mean of ``g_bar_k`` is a
    ratio of two outer integrals. Both the inner and outer integrands jump
    at zero (the sign quantizer), so each integral is split there.

    The factorization treats the peers' observations as independent given
    ``g_bar_k``, which is exact for ``K <= 2``. Capped at ``K = 3``.
    Returns ``mean + E[g_bar | y]``.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    ys = np.atleast_1d(np.asarray(ys, dtype=np.float64))
    K = ys.size
    if K > 3:
        raise CapabilityError(f"genie oracle is limited to K <= 3 (got {K})")
    if mean.shape != (K,) or cov.shape != (K, K) or len(links) != K:
        raise InvalidInputError("mean, cov, ys and links must agree in size")
    if not np.allclose(cov, cov.T):
        raise InvalidInputError("covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InvalidInputError("covariance must be positive definite") from None

    lik = [_rel_likelihoods(float(y), link) for y, link in zip(ys, links)]
    quad = functools.partial(integrate.quad, epsabs=epsabs, epsrel=epsrel, limit=200)

    def peer_likelihood(i, k, x):
        # g_bar_i | g_bar_k = x  ~  N(c x, v)
        c = cov[i, k] / cov[k, k]
        v = cov[i, i] - cov[i, k] ** 2 / cov[k, k]
        m = c * x
        lp, lm = lik[i]
        pos = quad(lambda u: _gauss_pdf(u - m, v), 0.0, math.inf)[0]
        neg = quad(lambda u: _gauss_pdf(u - m, v), -math.inf, 0.0)[0]
        return lp * pos + lm * neg

    out = np.empty(K)
    for k in range(K):
        var_k = cov[k, k]
        peers = [i for i in range(K) if i != k]

        def weight(x):
            own = lik[k][0] if x >= 0.0 else lik[k][1]
            w = own * _gauss_pdf(x, var_k)
            for i in peers:
                w *= peer_likelihood(i, k, x)
            return w

        num = den = 0.0
        for a, b in ((-math.inf, 0.0), (0.0, math.inf)):
            num += quad(lambda x: x * weight(x), a, b)[0]
            den += quad(weight, a, b)[0]
        if den <= 0.0:
            raise NumericalFailure("posterior normalizer underflowed", achieved=den)
        out[k] = mean[k] + num / den
    return out


@dataclass(frozen=True)
class ConvergenceBoundInputs:
    """Parameters of the averaged squared-gradient-norm bound.

    ``f0 - fstar`` and ``sigma_mse`` are in the units of the objective whose
    gradient is the aggregated gradient sum.
    """

    T: int
    gamma: float
    L: float
    sigma_mse: float
    f0: float
    fstar: float

    def __post_init__(self):
        if self.T < 1:
            raise InvalidInputError(f"T must be >= 1, got {self.T}")
        if not (self.gamma > 0 and self.L > 0):
            raise InvalidInputError("gamma and L must be positive")
        if self.gamma * self.L >= 2.0:
            raise InvalidInputError(
                f"gamma*L = {self.gamma * self.L:.4g} >= 2 makes the bound vacuous"
            )
        if self.f0 < self.fstar:
            raise InvalidInputError("f0 must be >= fstar")
        if self.sigma_mse < 0:
            raise InvalidInputError("sigma_mse must be >= 0")


def convergence_bound(inputs, mode="corrected"):
    """Upper bound on (1/T) sum_t E||g_sum^t||^2 for the inverse-sqrt schedule.

    The noise term is ``sigma_mse (1 + ln T) c / (1 - gamma L / 2)`` with
    ``c = gamma L / 2`` in ``corrected`` mode, the value obtained by dividing
    the telescoped descent inequality through by ``gamma``, and
    ``c = gamma^2 L / 2`` in ``paper_literal`` mode.
    """
    g, L, T = inputs.gamma, inputs.L, inputs.T
    if mode == "corrected":
        c = g * L / 2.0
    elif mode == "paper_literal":
        c = g * g * L / 2.0
    else:
        raise InvalidInputError(f"unknown bound mode {mode!r}")
    slack = 1.0 - g * L / 2.0
    optimization = (inputs.f0 - inputs.fstar) / (g * slack)
    noise = inputs.sigma_mse * (1.0 + math.log(T)) * c / slack
    return (optimization + noise) / math.sqrt(T)


def sigma_mse_over_rounds(nus, hs, sigma2s, M, mode="corrected"):
    """Largest per-round quadrature MSE over a sequence of rounds.

    Each argument is a ``T x K`` array of the realized per-device prior
    scales and link parameters.
    """
    best = 0.0
    for nu_t, h_t, s2_t in zip(nus, hs, sigma2s):
        priors = [GaussianPriorParams(0.0, float(n)) for n in nu_t]
        links = [LinkState(float(h), float(s2)) for h, s2 in zip(h_t, s2_t)]
        best = max(best, mse_quadrature(priors, links, M, mode).value)
    return best
