"""Sensor geometry, steering vectors, and the angular grid manifold.

Conventions: a unit plane wave from azimuth theta (elevation phi) reaches
sensor j with delay tau_j = (x_j cos(theta)cos(phi) + y_j sin(theta)cos(phi)
+ z_j sin(phi)) / c, and the steering entry is exp(-j*omega0*tau_j). A ULA
lies on the y axis with the reference sensor at the origin, so phi = 0
throughout the shipped pipelines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .complexlin import ComplexMatrix
from .errors import ValidationError
from .rng import Stream

DEFAULT_F_HZ = 1000.0
DEFAULT_C_MPS = 340.0

_HALF_PI = math.pi / 2.0
_RANGE_TOL = 1e-12


@dataclass(frozen=True)
class WaveConfig:
    f_hz: float = DEFAULT_F_HZ
    c_mps: float = DEFAULT_C_MPS

    def __post_init__(self):
        if self.f_hz <= 0 or self.c_mps <= 0:
            raise ValidationError("frequency and wave speed must be positive")

    @property
    def wavelength(self) -> float:
        return self.c_mps / self.f_hz

    @property
    def omega0(self) -> float:
        return 2.0 * math.pi * self.f_hz


class ArrayGeometry:
    """Sensor positions, one (x, y, z) row per sensor, in meters."""

    __slots__ = ("positions",)

    def __init__(self, positions: np.ndarray):
        positions = np.ascontiguousarray(positions, dtype=np.float64)
        if positions.ndim != 2 or positions.shape[1] != 3:
            raise ValidationError(f"positions must be (M, 3), got {positions.shape}")
        if positions.shape[0] < 2:
            raise ValidationError("need at least 2 sensors")
        if not np.isfinite(positions).all():
            raise ValidationError("non-finite sensor position")
        positions.setflags(write=False)
        object.__setattr__(self, "positions", positions)

    @property
    def m(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def ula(cls, m: int, spacing: float) -> "ArrayGeometry":
        """Uniform linear array along y: y_j = j * spacing, reference at origin."""
        if spacing <= 0:
            raise ValidationError("ULA spacing must be positive")
        pos = np.zeros((m, 3))
        pos[:, 1] = spacing * np.arange(m)
        return cls(pos)

    @classmethod
    def from_positions(cls, positions) -> "ArrayGeometry":
        """Explicit geometry; the nominal frame puts sensor 0 at the origin."""
        geom = cls(np.asarray(positions, dtype=np.float64))
        if np.any(geom.positions[0] != 0.0):
            raise ValidationError("reference sensor must sit at (0, 0, 0)")
        return geom


def ula_half_wavelength(m: int, wave: WaveConfig) -> ArrayGeometry:
    return ArrayGeometry.ula(m, wave.wavelength / 2.0)


class AngleGrid:
    """Uniform azimuth grid over [-90, +90] degrees, endpoints included."""

    __slots__ = ("delta_rad", "thetas", "_degs")

    def __init__(self, delta_deg: float):
        if delta_deg <= 0:
            raise ValidationError("grid resolution must be positive")
        steps = 180.0 / delta_deg
        if abs(steps - round(steps)) > 1e-9:
            raise ValidationError(f"grid resolution {delta_deg} deg must divide 180")
        r = int(round(steps)) + 1
        degs = -90.0 + delta_deg * np.arange(r, dtype=np.float64)
        thetas = np.radians(degs)
        degs.setflags(write=False)
        thetas.setflags(write=False)
        object.__setattr__(self, "delta_rad", math.radians(delta_deg))
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "_degs", degs)

    @property
    def r(self) -> int:
        return self.thetas.shape[0]

    @property
    def thetas_deg(self) -> np.ndarray:
        return self._degs

    def nearest_label(self, theta_rad: float) -> int:
        """Index of the closest grid angle; exact ties take the lower index."""
        return int(np.argmin(np.abs(self.thetas - theta_rad)))


def _validate_theta(theta_rad: float) -> None:
    if not (-_HALF_PI - _RANGE_TOL <= theta_rad <= _HALF_PI + _RANGE_TOL):
        raise ValidationError(f"azimuth {theta_rad} rad outside [-pi/2, pi/2]")


def steering_vector(
    geom: ArrayGeometry,
    wave: WaveConfig,
    theta_rad: float,
    phi_rad: float = 0.0,
) -> np.ndarray:
    """Complex length-M array response exp(-j*omega0*tau) for one direction."""
    _validate_theta(theta_rad)
    x, y, z = geom.positions[:, 0], geom.positions[:, 1], geom.positions[:, 2]
    tau = (
        x * math.cos(theta_rad) * math.cos(phi_rad)
        + y * math.sin(theta_rad) * math.cos(phi_rad)
        + z * math.sin(phi_rad)
    ) / wave.c_mps
    return np.exp(-1j * wave.omega0 * tau)


def manifold(geom: ArrayGeometry, wave: WaveConfig, grid: AngleGrid) -> ComplexMatrix:
    """M x R matrix whose column i is the steering vector at grid angle i."""
    cols = np.empty((geom.m, grid.r), dtype=np.complex128)
    for i, theta in enumerate(grid.thetas):
        cols[:, i] = steering_vector(geom, wave, float(theta))
    return ComplexMatrix.from_complex(cols)


def perturb_positions(
    geom: ArrayGeometry,
    wave: WaveConfig,
    rho_err: float,
    stream: Stream,
) -> ArrayGeometry:
    """Shift every sensor's x and y by U(-rho_err*lambda/2, +rho_err*lambda/2).

    Draw order: M x-offsets, then M y-offsets. All sensors move, including
    the reference, so the perturbed geometry may leave the nominal frame.
    rho_err = 0 consumes no draws and returns the input unchanged.
    """
    if rho_err < 0:
        raise ValidationError("rho_err must be nonnegative")
    if rho_err == 0:
        return geom
    half = rho_err * wave.wavelength / 2.0
    pos = np.array(geom.positions)
    pos[:, 0] += stream.uniform(-half, half, geom.m)
    pos[:, 1] += stream.uniform(-half, half, geom.m)
    return ArrayGeometry(pos)
