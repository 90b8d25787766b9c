"""Device-side processing: prior estimation, centering and quantization.

Everything a mobile device computes before it transmits: the two scalar
descriptors of its gradient's empirical distribution, the zero-mean shift,
the one-bit sign quantizer, and the B-bit scalar quantizer used for the
descriptors themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class GaussianPriorParams:
    """iid Gaussian model of one device's gradient coordinates."""

    mu: float
    nu: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.nu)):
            raise InvalidInputError(f"prior parameters must be finite: {self}")
        if self.nu < 0:
            raise InvalidInputError(f"nu must be >= 0, got {self.nu}")

    @property
    def mean_abs(self):
        """E|g - mu| under the model."""
        return SQRT_2_OVER_PI * self.nu

    @property
    def scale(self):
        return self.nu


@dataclass(frozen=True)
class LaplacianPriorParams:
    """iid Laplace model of one device's gradient coordinates."""

    mu: float
    lam: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.lam)):
            raise InvalidInputError(f"prior parameters must be finite: {self}")
        if self.lam < 0:
            raise InvalidInputError(f"lam must be >= 0, got {self.lam}")

    @property
    def mean_abs(self):
        return self.lam

    @property
    def scale(self):
        return self.lam


PriorParams = GaussianPriorParams | LaplacianPriorParams


def _as_vector(g):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1:
        raise InvalidInputError(f"expected a 1-D gradient vector, got shape {g.shape}")
    if g.size == 0:
        raise InvalidInputError("gradient vector is empty")
    return g


def estimate_gaussian_prior(g):
    """Sample mean and standard deviation of the gradient coordinates.

    The variance is the plug-in ``mean(g**2) - mean(g)**2``; a negative
    rounding residue is clamped to zero.
    """
    g = _as_vector(g)
    mu = float(np.mean(g))
    var = float(np.mean(g * g)) - mu * mu
    return GaussianPriorParams(mu=mu, nu=math.sqrt(max(var, 0.0)))


def estimate_laplacian_scale(g_centered):
    """Maximum-likelihood Laplace scale of an already centered vector."""
    g = _as_vector(g_centered)
    return float(np.mean(np.abs(g)))


def estimate_laplacian_prior(g):
    mu = float(np.mean(_as_vector(g)))
    return LaplacianPriorParams(mu=mu, lam=estimate_laplacian_scale(center(g, mu)))


def center(g, mu):
    return np.asarray(g, dtype=np.float64) - mu


def sign_quantize(g):
    """One-bit quantizer with values in {-1, +1}; zero maps to +1."""
    g = np.asarray(g, dtype=np.float64)
    return np.where(g >= 0.0, 1.0, -1.0)


@dataclass(frozen=True)
class QuantizerSpec:
    """B-bit scalar quantizer: ``2**B + 1`` boundaries and ``2**B`` outputs."""

    bits: int
    boundaries: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        q = np.asarray(self.outputs, dtype=np.float64)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "outputs", q)
        if self.bits < 1:
            raise InvalidInputError(f"bits must be >= 1, got {self.bits}")
        n = 2**self.bits
        if b.shape != (n + 1,) or q.shape != (n,):
            raise InvalidInputError(
                f"{self.bits}-bit quantizer needs {n + 1} boundaries and {n} outputs"
            )
        if not np.all(np.diff(b) > 0):
            raise InvalidInputError("boundaries must be strictly increasing")
        if np.any(q < b[:-1]) or np.any(q > b[1:]):
            raise InvalidInputError("each output must lie inside its bin")

    @classmethod
    def uniform(cls, lo, hi, bits):
        """Equal-width bins over ``[lo, hi]`` with midpoint outputs."""
        if not hi > lo:
            raise InvalidInputError(f"empty quantizer range [{lo}, {hi}]")
        edges = np.linspace(lo, hi, 2**bits + 1)
        return cls(bits=bits, boundaries=edges, outputs=0.5 * (edges[:-1] + edges[1:]))


def scalar_quantize(x, spec):
    """Map ``x`` to the output of the bin ``b[l] <= x < b[l+1]``.

    Bins are half-open, so a value on an interior boundary belongs to the
    upper bin. Values outside the range saturate to the extreme outputs.
    Accepts scalars or arrays.
    """
    idx = np.searchsorted(spec.boundaries, x, side="right") - 1
    idx = np.clip(idx, 0, spec.outputs.size - 1)
    out = spec.outputs[idx]
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class PriorQuantizer:
    """How devices quantize their prior descriptors before sending them.

    The scale (nu or lambda) uses a uniform quantizer on ``[0, scale_max]``.
    The mean uses a uniform quantizer on ``[-span*s, span*s]`` where ``s`` is
    the already quantized scale, so the server can rebuild both quantizers
    from what it receives. ``scale_max=None`` means "calibrate from the first
    round" (see ``bayesfl.learn``). With ``track`` set, each device's cap for
    round ``t+1`` is ``track`` times its decoded scale of round ``t``, a value
    device and server both hold, so the range follows the gradient's size.
    """

    bits: int = 4
    scale_max: float | None = None
    span: float = 4.0
    track: float | None = 2.0

    def __post_init__(self):
        if self.bits < 1:
            raise InvalidInputError(f"bits must be >= 1, got {self.bits}")
        if self.scale_max is not None and not self.scale_max > 0:
            raise InvalidInputError("scale_max must be positive")
        if not self.span > 0:
            raise InvalidInputError("span must be positive")
        if self.track is not None and not self.track > 1:
            raise InvalidInputError("track must exceed 1 so the range can grow")

    def with_scale_max(self, scale_max):
        return PriorQuantizer(bits=self.bits, scale_max=scale_max, span=self.span, track=self.track)

    def next_round(self, decoded):
        """Quantizer for the next round given this round's decoded prior."""
        if self.track is None or not decoded.scale > 0:
            return self
        return self.with_scale_max(self.track * decoded.scale)

    @property
    def payload_bits(self):
        return 2 * self.bits

    def quantize(self, prior):
        if self.scale_max is None:
            raise InvalidInputError("scale_max is not calibrated")
        scale_q = scalar_quantize(
            prior.scale, QuantizerSpec.uniform(0.0, self.scale_max, self.bits)
        )
        half = self.span * scale_q
        mu_q = scalar_quantize(prior.mu, QuantizerSpec.uniform(-half, half, self.bits))
        if isinstance(prior, LaplacianPriorParams):
            return LaplacianPriorParams(mu=mu_q, lam=scale_q)
        return GaussianPriorParams(mu=mu_q, nu=scale_q)
