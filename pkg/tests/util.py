"""Shared helpers for hand-built test scenarios."""

import math

import numpy as np

from doabeam.arraymodel import WaveConfig, steering_vector, ula_half_wavelength
from doabeam.complexlin import ComplexMatrix
from doabeam.rng import Stream

WAVE = WaveConfig()


def ongrid_measurement(m, angles_deg, t, snr_db, seed, coherent=False):
    """Fixed-angle measurement X = A S + N with all pieces returned.

    Returns (x, a_active, s, n) as ComplexMatrix values; per-source power is
    1 and the noise variance is 10^(-snr_db/10).
    """
    geom = ula_half_wavelength(m, WAVE)
    k = len(angles_deg)
    stream = Stream(seed)
    cols = np.stack(
        [steering_vector(geom, WAVE, math.radians(d)) for d in angles_deg], axis=1
    )
    if coherent:
        wave = stream.cnormal(t)
        phases = stream.uniform(0.0, 2.0 * math.pi, k)
        s = np.exp(1j * phases)[:, None] * wave[None, :]
    else:
        s = stream.cnormal(k * t).reshape(k, t)
    sigma = 10.0 ** (-snr_db / 20.0)
    n = sigma * stream.cnormal(m * t).reshape(m, t)
    x = cols @ s + n
    return (
        ComplexMatrix.from_complex(x),
        ComplexMatrix.from_complex(cols),
        ComplexMatrix.from_complex(s),
        ComplexMatrix.from_complex(n),
    )
