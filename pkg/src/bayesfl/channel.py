"""Real-valued block-fading AWGN uplink.

Each device owns an orthogonal subchannel. Within a round the fading gain is
constant; the server knows it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class LinkState:
    """Fading gain ``h`` and noise variance ``sigma2`` of one subchannel.

    ``sigma2 == 0`` is accepted and means a noise-free link; densities are
    undefined there and raise.
    """

    h: float
    sigma2: float

    def __post_init__(self):
        if not (math.isfinite(self.h) and math.isfinite(self.sigma2)):
            raise InvalidInputError(f"link parameters must be finite: {self}")
        if self.sigma2 < 0:
            raise InvalidInputError(f"sigma2 must be >= 0, got {self.sigma2}")

    @property
    def sigma(self):
        return math.sqrt(self.sigma2)


def draw_fading(rng):
    """One real Rayleigh-type fading coefficient, h ~ N(0, 1)."""
    return float(rng.standard_normal())


def transmit(s, link, rng):
    """Pass a +/-1 vector through ``y = h*s + n``, ``n ~ N(0, sigma2 I)``.

    Noise is always drawn, even for a noise-free link, so the stream advances
    by the same amount regardless of the link quality.
    """
    s = np.asarray(s, dtype=np.float64)
    noise = rng.standard_normal(s.shape)
    return link.h * s + link.sigma * noise


def _require_noisy(link):
    if link.sigma2 <= 0:
        raise InvalidInputError("density undefined for a noise-free link")


def likelihood(y, s, link):
    """Per-coordinate density of ``y`` given the transmitted sign ``s``."""
    _require_noisy(link)
    y = np.asarray(y, dtype=np.float64)
    r = y - link.h * np.asarray(s, dtype=np.float64)
    out = np.exp(-(r * r) / (2.0 * link.sigma2)) / (_SQRT_2PI * link.sigma)
    return float(out) if out.ndim == 0 else out


def joint_likelihood(y, s, link):
    """Density of a whole received vector: the product over coordinates."""
    return float(np.prod(likelihood(np.atleast_1d(y), np.atleast_1d(s), link)))


def marginal_density(y, link):
    """Density of ``y`` when the sign is +1 or -1 with equal probability."""
    _require_noisy(link)
    y = np.asarray(y, dtype=np.float64)
    two_s2 = 2.0 * link.sigma2
    num = np.exp(-((y - link.h) ** 2) / two_s2) + np.exp(-((y + link.h) ** 2) / two_s2)
    out = num / (2.0 * _SQRT_2PI * link.sigma)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NetworkGeometry:
    """Single-cell layout and link budget.

    Distances in meters, frequency in MHz, powers in dBm.
    """

    cell_radius: float = 1000.0
    bs_height: float = 70.0
    device_height: float = 1.5
    carrier_freq: float = 2000.0
    tx_power: float = 23.0
    noise_floor: float = -100.0
    metropolitan: bool = True
    min_distance: float = 20.0

    def __post_init__(self):
        for name in ("cell_radius", "bs_height", "device_height", "carrier_freq", "min_distance"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")


def cost231_hata_path_loss(distance_m, geom):
    """COST-231 Hata urban path loss in dB.

    Uses the medium-city mobile antenna correction and adds the 3 dB
    metropolitan term when ``geom.metropolitan`` is set. Distances below
    ``geom.min_distance`` are clamped to it.
    """
    d_km = np.maximum(np.asarray(distance_m, dtype=np.float64), geom.min_distance) / 1000.0
    log_f = math.log10(geom.carrier_freq)
    log_hb = math.log10(geom.bs_height)
    a_hm = (1.1 * log_f - 0.7) * geom.device_height - (1.56 * log_f - 0.8)
    c_m = 3.0 if geom.metropolitan else 0.0
    loss = (
        46.3
        + 33.9 * log_f
        - 13.82 * log_hb
        - a_hm
        + (44.9 - 6.55 * log_hb) * np.log10(d_km)
        + c_m
    )
    return float(loss) if loss.ndim == 0 else loss


def sigma2_at_distance(distance_m, geom):
    """Noise variance for a unit-power fading model at the given distance.

    The link budget gives the SNR; with E[h^2] = 1 the per-symbol noise
    variance is its reciprocal.
    """
    snr_db = geom.tx_power - cost231_hata_path_loss(distance_m, geom) - geom.noise_floor
    return 10.0 ** (-np.asarray(snr_db) / 10.0)


def place_devices(geom, K, rng):
    """Horizontal distances of ``K`` devices dropped uniformly in the cell."""
    if K < 1:
        raise InvalidInputError(f"K must be >= 1, got {K}")
    return geom.cell_radius * np.sqrt(rng.uniform(size=K))


def geometry_to_links(geom, K, rng):
    """Per-device noise variances for a random drop of ``K`` devices."""
    return np.asarray(sigma2_at_distance(place_devices(geom, K, rng), geom), dtype=np.float64)
