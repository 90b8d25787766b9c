"""Federated training loops for the linear-regression task.

Each round, every device computes its local gradient at the shared model,
summarizes it by two prior scalars, sends the sign of the centered gradient
over its fading link, and the server aggregates. ``signSGD`` sends the raw
gradient sign and aggregates by majority vote instead.

All randomness is drawn from substreams keyed by ``(seed, purpose, device,
round)``, so a run is a pure function of its inputs and the seed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import aggregate as agg
from .channel import LinkState, NetworkGeometry, draw_fading, geometry_to_links, transmit
from .errors import DivergenceError, InvalidInputError
from .prior import (
    PriorQuantizer,
    center,
    estimate_gaussian_prior,
    estimate_laplacian_prior,
    sign_quantize,
)
from .rng import Stream, substream

ALGORITHMS = ("signSGD", "sbfl_gaussian", "sbfl_laplacian", "sbfl_blmmse", "sbfl_highsnr")
SCHEDULES = ("constant", "inverse_sqrt")
FADING = ("block", "fixed")
OBJECTIVES = ("sum", "mean")
_EXACT_PRIOR_BITS = 2 * 64
_FLOAT_BITS = 64


# ---------------------------------------------------------------- objective


def local_gradient_linreg(X, z, w):
    """Gradient of ``||X^T w - z||^2``: ``2 X (X^T w - z)``."""
    X = np.asarray(X, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if X.ndim != 2 or X.shape != (w.size, z.size):
        raise InvalidInputError(f"X must be {w.size} x {z.size}, got {X.shape}")
    return 2.0 * (X @ (X.T @ w - z))


def local_loss(X, z, w):
    r = X.T @ w - z
    return float(r @ r)


def _device_weight(dev, objective):
    if objective not in OBJECTIVES:
        raise InvalidInputError(f"objective must be one of {OBJECTIVES}")
    return 1.0 if objective == "sum" else 1.0 / dev.N


def objective_value(devices, w, objective="mean"):
    """``sum_k f_k(w)`` with ``f_k = ||X_k^T w - z_k||^2`` (``sum``) or that over ``N_k`` (``mean``).

    The aggregated gradient sum is the gradient of this function.
    """
    return sum(_device_weight(d, objective) * local_loss(d.X, d.z, w) for d in devices)


def global_loss(devices, w):
    """Average squared residual over all samples, ``(1/N) sum_k ||X_k^T w - z_k||^2``."""
    total = sum(local_loss(d.X, d.z, w) for d in devices)
    return total / sum(d.N for d in devices)


def optimal_model(devices, objective="mean"):
    """Minimizer of :func:`objective_value` from the normal equations (least-norm if singular)."""
    A = sum(_device_weight(d, objective) * (d.X @ d.X.T) for d in devices)
    b = sum(_device_weight(d, objective) * (d.X @ d.z) for d in devices)
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    return sol


def smoothness_constant(devices, objective="mean", rtol=1e-8, max_iter=100_000, seed=0):
    """Lipschitz constant of the gradient of a quadratic training objective.

    ``sum`` and ``mean`` refer to :func:`objective_value`, e.g.
    ``L = 2 lambda_max(sum_k X_k X_k^T)`` for ``sum``. ``global`` is the
    per-sample average loss :func:`global_loss`. The eigenvalue comes from
    power iteration, stopped when the eigen-residual
    ``||A v - lambda v|| <= rtol * lambda``.
    """
    M = devices[0].M
    if any(d.M != M for d in devices):
        raise InvalidInputError("all devices must share the model dimension")
    if objective == "global":
        n = sum(d.N for d in devices)
        A = sum(d.X @ d.X.T for d in devices) / n
    else:
        A = sum(_device_weight(d, objective) * (d.X @ d.X.T) for d in devices)
    v = np.random.default_rng(seed).standard_normal(M)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        Av = A @ v
        lam = float(v @ Av)
        if lam <= 0.0:
            break
        if np.linalg.norm(Av - lam * v) <= rtol * lam:
            break
        v = Av / np.linalg.norm(Av)
    return 2.0 * lam


# ---------------------------------------------------------------- types


@dataclass
class ModelState:
    w: np.ndarray
    momentum: np.ndarray
    round: int = 0

    @classmethod
    def initial(cls, w0):
        w0 = np.array(w0, dtype=np.float64)
        if not np.all(np.isfinite(w0)):
            raise InvalidInputError("initial model must be finite")
        return cls(w=w0, momentum=np.zeros_like(w0), round=0)


@dataclass(frozen=True)
class TrainingPlan:
    """Hyperparameters of one training run.

    ``prior_quantizer=None`` sends exact real-valued priors. ``mode``
    selects the ``corrected`` or ``paper_literal`` aggregator constants.
    ``objective`` picks the local loss scaling (see :func:`objective_value`).
    ``batch_size=None`` is full batch.
    """

    algorithm: str = "sbfl_gaussian"
    gamma: float = 1e-3
    delta: float = 0.0
    schedule: str = "constant"
    rounds: int = 100
    downlink_compression: bool = False
    prior_quantizer: PriorQuantizer | None = None
    mode: str = "corrected"
    batch_size: int | None = None
    divergence_threshold: float = 1e12
    objective: str = "mean"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidInputError(f"algorithm must be one of {ALGORITHMS}")
        if self.schedule not in SCHEDULES:
            raise InvalidInputError(f"schedule must be one of {SCHEDULES}")
        if self.mode not in agg.MODES:
            raise InvalidInputError(f"mode must be one of {agg.MODES}")
        if not self.gamma > 0:
            raise InvalidInputError("gamma must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise InvalidInputError("delta must lie in [0, 1)")
        if self.rounds < 1:
            raise InvalidInputError("rounds must be >= 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if self.objective not in OBJECTIVES:
            raise InvalidInputError(f"objective must be one of {OBJECTIVES}")
        if self.downlink_compression and self.algorithm == "signSGD":
            raise InvalidInputError("downlink compression applies to SBFL variants")

    def step_size(self, t):
        if self.schedule == "inverse_sqrt":
            return self.gamma / math.sqrt(t + 1)
        return self.gamma


@dataclass(frozen=True)
class Network:
    """Per-device noise variances and the fading process.

    ``block`` redraws every gain each round; ``fixed`` draws one gain per
    device for the whole run. Explicit ``gains`` override both.
    """

    sigma2: np.ndarray
    fading: str = "block"
    gains: np.ndarray | None = None

    def __post_init__(self):
        s2 = np.atleast_1d(np.asarray(self.sigma2, dtype=np.float64))
        object.__setattr__(self, "sigma2", s2)
        if np.any(s2 < 0) or not np.all(np.isfinite(s2)):
            raise InvalidInputError("sigma2 must be finite and >= 0")
        if self.fading not in FADING:
            raise InvalidInputError(f"fading must be one of {FADING}")
        if self.gains is not None:
            g = np.atleast_1d(np.asarray(self.gains, dtype=np.float64))
            if g.shape != s2.shape:
                raise InvalidInputError("gains and sigma2 must have the same length")
            object.__setattr__(self, "gains", g)

    @property
    def K(self):
        return self.sigma2.size

    @classmethod
    def from_geometry(cls, geom: NetworkGeometry, K, seed, fading="block"):
        return cls(geometry_to_links(geom, K, substream(seed, Stream.PLACEMENT)), fading)

    def links(self, seed, t):
        out = []
        for k in range(self.K):
            if self.gains is not None:
                h = float(self.gains[k])
            elif self.fading == "fixed":
                h = draw_fading(substream(seed, Stream.FADING, k))
            else:
                h = draw_fading(substream(seed, Stream.FADING, k, t))
            out.append(LinkState(h, float(self.sigma2[k])))
        return out


@dataclass(frozen=True)
class UplinkRound:
    """What the server receives in one round, plus ground truth for tracing."""

    received: np.ndarray
    priors: list
    links: list
    g_sum: np.ndarray
    exact_priors: list
    prior_bits: int


@dataclass
class RoundTrace:
    round: int
    loss: float
    grad_norm_sq: float
    mu: list
    scale: list
    h: list
    sigma2: list
    aggregate: np.ndarray
    step_size: float
    uplink_prior_bits: int
    downlink_bits: int
    wall_time: float = field(default=0.0, compare=False)

    def record(self, with_aggregate=False, with_wall_time=False):
        """JSON-ready dict; the aggregate vector and timing are opt-in."""
        out = {
            "round": self.round,
            "loss": self.loss,
            "grad_norm_sq": self.grad_norm_sq,
            "mu": self.mu,
            "scale": self.scale,
            "h": self.h,
            "sigma2": self.sigma2,
            "step_size": self.step_size,
            "uplink_prior_bits": self.uplink_prior_bits,
            "downlink_bits": self.downlink_bits,
            "aggregate_norm_sq": float(self.aggregate @ self.aggregate),
        }
        if with_aggregate:
            out["aggregate"] = self.aggregate.tolist()
        if with_wall_time:
            out["wall_time"] = self.wall_time
        return out


@dataclass
class TrainingRun:
    traces: list
    final_loss: float
    w: np.ndarray
    device_models: np.ndarray | None = None
    diverged: bool = False

    @property
    def losses(self):
        return np.array([tr.loss for tr in self.traces])

    @property
    def grad_norms_sq(self):
        return np.array([tr.grad_norm_sq for tr in self.traces])


# ---------------------------------------------------------------- rounds


def _prior_estimator(algorithm):
    return estimate_laplacian_prior if algorithm == "sbfl_laplacian" else estimate_gaussian_prior


def _device_gradient(dev, w, plan, seed, k, t):
    weight = _device_weight(dev, plan.objective)
    if plan.batch_size is None or plan.batch_size >= dev.N:
        return weight * local_gradient_linreg(dev.X, dev.z, w)
    idx = substream(seed, Stream.BATCH, k, t).choice(dev.N, plan.batch_size, replace=False)
    # rescaled so the mini-batch gradient is unbiased for the full local gradient
    scale = weight * dev.N / plan.batch_size
    return scale * local_gradient_linreg(dev.X[:, idx], dev.z[idx], w)


def calibrate_quantizer(plan, devices, w0):
    """Fix the scale cap of an uncalibrated quantizer from the round-0 priors.

    The cap is twice the largest device scale at ``w0``; it is a one-time
    configuration value shared by devices and server.
    """
    q = plan.prior_quantizer
    if q is None or q.scale_max is not None:
        return q
    estimate = _prior_estimator(plan.algorithm)
    top = max(
        estimate(_device_weight(d, plan.objective) * local_gradient_linreg(d.X, d.z, w0)).scale
        for d in devices
    )
    return q.with_scale_max(2.0 * top if top > 0 else 1.0)


def run_round_uplink(w, plan, devices, network, seed, t, quantizer=None, models=None):
    """Device side of one round plus the channel.

    ``quantizer`` is one :class:`PriorQuantizer` for all devices or a list
    with one per device. ``models`` optionally gives each device its own
    copy of the model (downlink-compressed training); otherwise all use
    ``w``.
    """
    quantizers = quantizer if isinstance(quantizer, (list, tuple)) else [quantizer] * len(devices)
    if len(devices) != network.K:
        raise InvalidInputError(f"{len(devices)} devices but {network.K} links")
    links = network.links(seed, t)
    estimate = _prior_estimator(plan.algorithm)
    received = np.empty((len(devices), devices[0].M))
    exact, sent = [], []
    g_sum = np.zeros(devices[0].M)
    for k, dev in enumerate(devices):
        w_k = w if models is None else models[k]
        g = _device_gradient(dev, w_k, plan, seed, k, t)
        g_sum += g
        prior = estimate(g)
        exact.append(prior)
        if plan.algorithm == "signSGD":
            s = sign_quantize(g)
            sent.append(None)
        else:
            s = sign_quantize(center(g, prior.mu))
            q = quantizers[k]
            sent.append(prior if q is None else q.quantize(prior))
        received[k] = transmit(s, links[k], substream(seed, Stream.NOISE, k, t))
    if plan.algorithm == "signSGD":
        bits = 0
    else:
        bits = _EXACT_PRIOR_BITS if quantizers[0] is None else quantizers[0].payload_bits
    return UplinkRound(received, sent, links, g_sum, exact, bits)


def server_aggregate(msg, plan, seed, t):
    """The server's gradient-sum estimate (signSGD: the majority-vote sign)."""
    if plan.algorithm == "signSGD":
        inp = agg.AggregationInput(msg.received, msg.exact_priors, msg.links)
        return agg.majority_vote(inp, substream(seed, Stream.VOTE, t))
    inp = agg.AggregationInput(msg.received, msg.priors, msg.links)
    if plan.algorithm in ("sbfl_gaussian", "sbfl_laplacian"):
        fn = agg.mmse_laplacian if plan.algorithm == "sbfl_laplacian" else agg.mmse_gaussian
        return fn(inp, plan.mode)
    if plan.algorithm == "sbfl_blmmse":
        return agg.blmmse(inp, plan.mode)
    return agg.high_snr_mmse(inp)


def _advance_quantizers(quantizers, msg):
    if quantizers[0] is None or msg.priors[0] is None:
        return quantizers
    return [q.next_round(p) for q, p in zip(quantizers, msg.priors)]


def _trace(t, loss, msg, aggregate, step, down_bits, t0):
    return RoundTrace(
        round=t,
        loss=loss,
        grad_norm_sq=float(msg.g_sum @ msg.g_sum),
        mu=[p.mu for p in msg.exact_priors],
        scale=[p.scale for p in msg.exact_priors],
        h=[link.h for link in msg.links],
        sigma2=[link.sigma2 for link in msg.links],
        aggregate=aggregate,
        step_size=step,
        uplink_prior_bits=msg.prior_bits,
        downlink_bits=down_bits,
        wall_time=time.perf_counter() - t0,
    )


def _check_divergence(loss, plan, traces, w, t):
    if not (math.isfinite(loss) and loss <= plan.divergence_threshold):
        partial = TrainingRun(traces=traces, final_loss=loss, w=w, diverged=True)
        raise DivergenceError(f"loss {loss:.3g} exceeded threshold at round {t}", partial=partial)


def run_training(plan, devices, network, seed, w0=None):
    """Run ``plan.rounds`` rounds; the server holds the model.

    ``m <- delta m + aggregate``, ``w <- w - gamma_t m``. Raises
    :class:`DivergenceError` (with the partial run) if the loss exceeds the
    plan's threshold.
    """
    if plan.downlink_compression:
        return run_training_downlink_compressed(plan, devices, network, seed, w0)
    M = devices[0].M
    state = ModelState.initial(np.zeros(M) if w0 is None else w0)
    quantizers = [calibrate_quantizer(plan, devices, state.w)] * len(devices)
    traces = []
    for t in range(plan.rounds):
        t0 = time.perf_counter()
        loss = global_loss(devices, state.w)
        _check_divergence(loss, plan, traces, state.w, t)
        msg = run_round_uplink(state.w, plan, devices, network, seed, t, quantizers)
        quantizers = _advance_quantizers(quantizers, msg)
        g_hat = server_aggregate(msg, plan, seed, t)
        step = plan.step_size(t)
        state.momentum = plan.delta * state.momentum + g_hat
        state.w = state.w - step * state.momentum
        state.round = t + 1
        traces.append(_trace(t, loss, msg, g_hat, step, _FLOAT_BITS * M, t0))
    final = global_loss(devices, state.w)
    _check_divergence(final, plan, traces, state.w, plan.rounds)
    return TrainingRun(traces=traces, final_loss=final, w=state.w)


def run_training_downlink_compressed(plan, devices, network, seed, w0=None):
    """SBFL where the server broadcasts only the sign of its aggregate.

    Every device keeps its own momentum and model and applies the broadcast
    from the previous round before computing its gradient, so round ``t``'s
    update is driven by round ``t-1``'s received signals. No broadcast exists
    before round 0, so round 0 applies the zero vector. The broadcast of the
    last round is applied before the final loss is measured.
    """
    if not plan.downlink_compression:
        raise InvalidInputError("plan.downlink_compression must be set")
    K, M = len(devices), devices[0].M
    w_init = np.zeros(M) if w0 is None else np.asarray(w0, dtype=np.float64)
    models = np.tile(w_init, (K, 1))
    moms = np.zeros((K, M))
    quantizers = [calibrate_quantizer(plan, devices, w_init)] * K
    broadcast = np.zeros(M)
    traces = []

    def apply(b, t):
        nonlocal models, moms
        step = plan.step_size(t)
        for k in range(K):
            moms[k] = plan.delta * moms[k] + b
            models[k] = models[k] - step * moms[k]
        return step

    for t in range(plan.rounds):
        t0 = time.perf_counter()
        step = apply(broadcast, t)
        loss = global_loss(devices, models[0])
        _check_divergence(loss, plan, traces, models[0], t)
        msg = run_round_uplink(models[0], plan, devices, network, seed, t, quantizers, models)
        quantizers = _advance_quantizers(quantizers, msg)
        g_hat = server_aggregate(msg, plan, seed, t)
        broadcast = sign_quantize(g_hat)
        traces.append(_trace(t, loss, msg, g_hat, step, M, t0))
    apply(broadcast, plan.rounds)
    final = global_loss(devices, models[0])
    _check_divergence(final, plan, traces, models[0], plan.rounds)
    return TrainingRun(traces=traces, final_loss=final, w=models[0].copy(), device_models=models)
