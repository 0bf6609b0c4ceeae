"""Small shared DSP helpers (internal)."""

from __future__ import annotations

import numpy as np
from scipy import signal


def periodic_lfilter(b, a, x: np.ndarray, period: int) -> np.ndarray:
    """lfilter initialized to the exact periodic steady state.

    `x` must consist of whole periods of `period` samples.  The one-period
    state map z' = M z + g is probed column-by-column (state dimension is
    1 or 2 here), then z* = (I - M)^-1 g seeds the run, so the output is
    exactly periodic with no leading transient.
    """
    if len(x) % period:
        raise ValueError("input must contain whole periods")
    nstate = max(len(a), len(b)) - 1
    if nstate == 0:
        return signal.lfilter(b, a, x)
    _, g = signal.lfilter(b, a, x[:period], zi=np.zeros(nstate))
    m = np.empty((nstate, nstate))
    zeros = np.zeros(period)
    for j in range(nstate):
        e = np.zeros(nstate)
        e[j] = 1.0
        _, zf = signal.lfilter(b, a, zeros, zi=e)
        m[:, j] = zf
    zstar = np.linalg.solve(np.eye(nstate) - m, g)
    y, _ = signal.lfilter(b, a, x, zi=zstar)
    return y


def onepole_bilinear(pole_hz: float, fs: float, prewarp_hz: float | None = None):
    """Unity-DC-gain single-pole low-pass, bilinear transform.

    With `prewarp_hz` the discrete response matches the continuous pole
    exactly (magnitude and phase) at that frequency; otherwise the
    standard 2*fs mapping is used.
    """
    wp = 2 * np.pi * pole_hz
    if prewarp_hz:
        w0 = 2 * np.pi * prewarp_hz
        k = w0 / np.tan(w0 / (2 * fs))
    else:
        k = 2 * fs
    b = np.array([wp, wp]) / (wp + k)
    a = np.array([1.0, (wp - k) / (wp + k)])
    return b, a


def dc_normalized(b, a):
    """Scale numerator so the filter's DC gain is exactly 1."""
    return b * (np.sum(a) / np.sum(b)), a


def gated_mean_exact(num, den, u: np.ndarray, gates, dt: float, period: int):
    """Exact period means of gate(t) * y(t) for a rational filter.

    `u` is one period of a piecewise-constant input (constant between
    samples); each gate is a +/-1 sequence constant between samples.  The
    transfer function num/den is realized in state space, augmented with
    an output integrator, and ZOH-discretized, so each step yields the
    exact continuous integral of y over that sample interval.  The
    physical state is first solved for the periodic steady state, making
    the returned means exact continuous-time cycle means (all hold-image
    content included), one per gate.
    """
    if len(u) != period:
        raise ValueError("u must be exactly one period")
    num = np.atleast_1d(np.asarray(num, dtype=float))
    den = np.atleast_1d(np.asarray(den, dtype=float))
    if len(den) == 1:  # pure gain: y piecewise constant, plain means are exact
        g = num[-1] / den[0] if len(num) == 1 else None
        if g is None:
            raise ValueError("improper transfer function")
        y = g * u
        return [float(np.mean(y * gate)) for gate in gates]

    a, b, c, d = signal.tf2ss(num, den)
    n = a.shape[0]
    a_aug = np.zeros((n + 1, n + 1))
    a_aug[:n, :n] = a
    a_aug[n, :n] = c[0]
    b_aug = np.vstack([b, [[d.item() if np.ndim(d) else float(d)]]])
    ad, bd, *_ = signal.cont2discrete(
        (a_aug, b_aug, np.zeros((1, n + 1)), [[0.0]]), dt, method="zoh"
    )
    adp = ad[:n, :n]
    bdp = bd[:n, 0]
    crow = ad[n, :n]
    dint = bd[n, 0]

    # periodic steady state of the physical states
    x = np.zeros(n)
    for uk in u:
        x = adp @ x + bdp * uk
    x = np.linalg.solve(np.eye(n) - np.linalg.matrix_power(adp, period), x)

    inc = np.empty(period)
    for k, uk in enumerate(u):
        inc[k] = crow @ x + dint * uk
        x = adp @ x + bdp * uk
    total_t = period * dt
    return [float(np.sum(inc * gate) / total_t) for gate in gates]
