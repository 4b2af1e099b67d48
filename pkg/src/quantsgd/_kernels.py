"""Compiled inner loops shared by the streaming API and the experiment harness.

Iterates are tracked as integer lattice offsets ``k`` from a start point, so
the value of an iterate is always ``start + k * spacing`` with
``spacing = eta / q``. An upward step adds ``p`` and a downward step subtracts
``q - p``; both loops below use exactly this rule so that the Python-level
``sgd_step`` and these kernels agree bit for bit.
"""

import numba as nb
import numpy as np

RECTANGLE = 0
EPANECHNIKOV = 1


@nb.njit(cache=True, nogil=True)
def kernel_value(kernel_id, u):
    if kernel_id == RECTANGLE:
        return 1.0 if abs(u) < 0.5 else 0.0
    if abs(u) <= 1.0:
        return 0.75 * (1.0 - u * u)
    return 0.0


@nb.njit(cache=True, nogil=True)
def walk(samples, start, spacing, p, q, k0, stride, out):
    """Advance one coordinate over ``samples``; returns the final offset.

    Every ``stride``-th post-step offset (1-based step count) is written into
    ``out`` when ``stride > 0``.
    """
    k = k0
    down = q - p
    j = 0
    for i in range(samples.shape[0]):
        if samples[i] > start + k * spacing:
            k += p
        else:
            k -= down
        if stride > 0 and (i + 1) % stride == 0:
            out[j] = k
            j += 1
    return k


@nb.njit(cache=True, nogil=True)
def sgd_kde_path(samples, start, spacing, p, q, k0, n0, numerator0, bsum0,
                 kernel_id, fixed_point, x_eval, checkpoints, ckpt_k, ckpt_f):
    """Joint SGD + recursive KDE pass over ``samples``.

    The kernel term at step ``n`` is evaluated at ``x_eval`` when
    ``fixed_point`` is true, otherwise at the iterate held *before* the
    sample is consumed. ``checkpoints`` holds ascending step counts (relative
    to the beginning of this call) at which the offset and density estimate
    are recorded. Returns ``(k, numerator, bandwidth_sum)``.
    """
    k = k0
    down = q - p
    num = numerator0
    bsum = bsum0
    c = 0
    nc = checkpoints.shape[0]
    while c < nc and checkpoints[c] == 0:
        ckpt_k[c] = k
        ckpt_f[c] = num / bsum if bsum > 0 else np.nan
        c += 1
    for i in range(samples.shape[0]):
        x = samples[i]
        theta = start + k * spacing
        b = (n0 + i + 1.0) ** -0.2
        if fixed_point:
            num += kernel_value(kernel_id, (x_eval - x) / b)
        else:
            num += kernel_value(kernel_id, (theta - x) / b)
        bsum += b
        if x > theta:
            k += p
        else:
            k -= down
        while c < nc and checkpoints[c] == i + 1:
            ckpt_k[c] = k
            ckpt_f[c] = num / bsum
            c += 1
    return k, num, bsum
