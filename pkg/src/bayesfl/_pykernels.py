"""numpy implementation of the hot loops; used when the extension is absent.

Operation order mirrors ``_ckernels.pyx`` term for term and both use
numpy's tanh, so the two backends agree up to floating-point contraction
by the C compiler (bit for bit on x86-64 builds without FMA).
"""

import numpy as np

TANH = 0
SIGN = 1
LINEAR = 2
TANH_CLAMP = 700.0


def separable_sum(received, offset, scale, gain, kind, out):
    """out[m] = sum_k offset[k] + scale[k] * phi_k(gain[k] * y[k, m]).

    ``phi`` is tanh (argument clamped to +/-700), a sign product
    ``sign(y) * sign(gain)`` with sign(0) = +1, or the identity.
    Devices are accumulated in index order.
    """
    out[:] = 0.0
    for k in range(received.shape[0]):
        y = received[k]
        if kind[k] == TANH:
            with np.errstate(over="ignore"):  # +/-inf is clamped like any large value
                phi = np.tanh(np.clip(gain[k] * y, -TANH_CLAMP, TANH_CLAMP))
        elif kind[k] == SIGN:
            g_sign = 1.0 if gain[k] >= 0.0 else -1.0
            phi = np.where(y >= 0.0, g_sign, -g_sign)
        else:
            phi = gain[k] * y
        out += offset[k] + scale[k] * phi
    return out


def row_sq_error(estimate, truth, width):
    """Squared error summed within consecutive blocks of ``width`` entries."""
    d = estimate - truth
    return np.einsum("ij,ij->i", d.reshape(-1, width), d.reshape(-1, width))
