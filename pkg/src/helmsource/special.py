"""
Bessel functions J0, J1, Y0, Y1 for real positive arguments.

Power series below ``CROSSOVER`` and the Hankel asymptotic expansion above.
At the crossover both branches agree to about 1e-11; the series loses
digits to cancellation as x grows while the asymptotic series gains them,
so 12 balances the two.
"""

import numpy as np

CROSSOVER = 12.0
EULER_GAMMA = 0.57721566490153286061
_SERIES_TERMS = 60
_ASYM_TERMS = 40


def _series(x):
    """J0, Y0, J1, Y1 by their ascending series (A&S 9.1.10, 9.1.11)."""
    q = 0.25 * x * x
    log_half = np.log(0.5 * x)
    j0 = np.zeros_like(x)
    j1s = np.zeros_like(x)
    y0s = np.zeros_like(x)
    y1s = np.zeros_like(x)
    t0 = np.ones_like(x)    # (-q)^k / (k!)^2
    t1 = np.ones_like(x)    # (-q)^k / (k!(k+1)!)
    harm = 0.0              # H_k
    for kk in range(_SERIES_TERMS):
        if kk > 0:
            t0 = t0 * (-q) / (kk * kk)
            t1 = t1 * (-q) / (kk * (kk + 1))
        j0 = j0 + t0
        j1s = j1s + t1
        if kk > 0:
            harm += 1.0 / kk
            y0s = y0s - t0 * harm
        # ψ(k+1) + ψ(k+2) = -2γ + 2H_k + 1/(k+1)
        y1s = y1s + t1 * (-2 * EULER_GAMMA + 2 * harm + 1.0 / (kk + 1))
        if np.all(np.abs(t0) < 1e-17 * np.abs(j0) + 1e-300) and kk > 5:
            break
    j1 = 0.5 * x * j1s
    y0 = (2 / np.pi) * ((log_half + EULER_GAMMA) * j0 + y0s)
    y1 = -2 / (np.pi * x) + (2 / np.pi) * log_half * j1 - (1 / np.pi) * 0.5 * x * y1s
    return j0, y0, j1, y1


def _asymptotic_hankel(x, nu):
    """H_nu^(1)(x) from the Hankel expansion, summed to the smallest term."""
    mu = 4.0 * nu * nu
    total = np.ones_like(x, dtype=complex)
    term = np.ones_like(x, dtype=complex)
    last = np.full(x.shape, np.inf)
    live = np.ones(x.shape, dtype=bool)
    for kk in range(1, _ASYM_TERMS):
        term = term * (1j * (mu - (2 * kk - 1) ** 2) / (8.0 * kk * x))
        mag = np.abs(term)
        live &= mag < last
        total = total + np.where(live, term, 0.0)
        last = np.where(live, mag, last)
        if not live.any():
            break
    phase = x - 0.5 * nu * np.pi - 0.25 * np.pi
    return np.sqrt(2.0 / (np.pi * x)) * np.exp(1j * phase) * total


def bessel_j0y0j1y1(x):
    """Return (J0, Y0, J1, Y1) at positive real ``x`` (any shape)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("Bessel evaluation needs x > 0")
    shape = x.shape
    xf = x.ravel()
    out = [np.empty_like(xf) for _ in range(4)]
    small = xf < CROSSOVER
    if small.any():
        for o, v in zip(out, _series(xf[small])):
            o[small] = v
    if (~small).any():
        xl = xf[~small]
        h0 = _asymptotic_hankel(xl, 0)
        h1 = _asymptotic_hankel(xl, 1)
        out[0][~small], out[1][~small] = h0.real, h0.imag
        out[2][~small], out[3][~small] = h1.real, h1.imag
    return tuple(o.reshape(shape) for o in out)


def hankel1_01(x):
    """H0^(1)(x) and H1^(1)(x)."""
    j0, y0, j1, y1 = bessel_j0y0j1y1(x)
    return j0 + 1j * y0, j1 + 1j * y1
