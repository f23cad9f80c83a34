"""Independent reference computations used by the test-suite.

Nothing here imports the package's numerics: each routine is a plain
transcription of the defining formula in scalar Python floats.
"""

import math


def cts_cubic_states(x0, lam, dt, dws, dns):
    """Compensated tamed recursion for dX = (-4X - X^3)dt + X dW + X dN."""
    y = x0
    out = [y]
    for dw, dn in zip(dws, dns):
        f = -4.0 * y - y * y * y
        h = y
        fl = f + lam * h
        tamed = dt * fl / (1.0 + dt * math.sqrt(fl * fl))
        y = y + tamed + y * dw + h * (dn - lam * dt)
        out.append(y)
    return out


def em_cubic_noise_free(x0, dt, steps):
    y = x0
    out = [y]
    for _ in range(steps):
        y = y + dt * (-4.0 * y - y ** 3)
        out.append(y)
    return out


def ols_slope(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    b = sxy / sxx
    return b, my - b * mx


def poisson_mgf_compensated(c, mean):
    """E exp(c (N - mean)) for N ~ Poisson(mean), from E exp(cN) = exp(mean (e^c - 1))."""
    return math.exp(mean * (math.exp(c) - 1.0) - c * mean)
