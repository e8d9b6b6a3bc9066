"""Deterministic scenario generation and the binary dataset format.

Each sample owns an RNG stream derived from (base_seed, index), so any
sample can be regenerated in isolation bit-for-bit. The per-sample draw
order is fixed and documented in sample_scenario; changing it changes every
dataset, so treat it as part of the file format.

Dataset file (little-endian): magic "BFD1", u32 version=1, u32 M, u32 T,
u32 R, f64 delta_rad, f64 f_hz, f64 c_mps, u64 sample_count, u64 base_seed;
per sample: u32 K, u8 coherent, f64 snr_db, K x f64 angles_rad,
K x u32 grid_labels, X as M*T (re, im) f64 pairs row-major; trailing CRC32
(zlib polynomial) over every preceding byte.
"""

from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .arraymodel import (
    AngleGrid,
    ArrayGeometry,
    WaveConfig,
    perturb_positions,
    steering_vector,
)
from .complexlin import ComplexMatrix
from .errors import ChecksumError, FormatError, TruncatedError, ValidationError
from .fileio import atomic_write_bytes
from .rng import Stream, derive_seed

MAGIC = b"BFD1"
VERSION = 1

_MAX_ANGLE_ATTEMPTS = 100_000


@dataclass(frozen=True)
class SimConfig:
    """Everything sample_scenario needs besides the RNG stream."""

    geom: ArrayGeometry
    wave: WaveConfig
    grid: AngleGrid
    t: int
    k_choices: tuple[int, ...]
    snr_choices: tuple[float, ...]
    coherent: bool = False
    rho_err: float = 0.0
    on_grid: bool = False
    delta_theta_rad: Optional[float] = None

    def __post_init__(self):
        if self.t < 1:
            raise ValidationError("need at least one snapshot")
        if not self.k_choices:
            raise ValidationError("k_choices must be nonempty")
        for k in self.k_choices:
            if k < 1:
                raise ValidationError("source count must be >= 1")
            if k >= self.geom.m:
                raise ValidationError(f"K={k} must stay below M={self.geom.m}")
            if k > self.grid.r:
                raise ValidationError(f"K={k} distinct grid labels impossible at R={self.grid.r}")
        if not self.snr_choices:
            raise ValidationError("snr_choices must be nonempty")
        if self.rho_err < 0:
            raise ValidationError("rho_err must be nonnegative")
        if self.delta_theta_rad is not None:
            if tuple(self.k_choices) != (2,):
                raise ValidationError("fixed separation mode requires K=2 exactly")
            if not 0 < self.delta_theta_rad < math.pi:
                raise ValidationError("delta_theta must lie in (0, pi)")


@dataclass
class Scenario:
    """One simulated measurement with its ground truth.

    s_true and n_true are populated by the generator but are not part of the
    file format; scenarios read back from disk carry None there.
    """

    k: int
    t: int
    snr_db: float
    coherent: bool
    angles: np.ndarray
    grid_labels: np.ndarray
    x: ComplexMatrix
    s_true: Optional[ComplexMatrix] = None
    n_true: Optional[ComplexMatrix] = None


@dataclass(frozen=True)
class DatasetHeader:
    m: int
    t: int
    r: int
    delta_rad: float
    f_hz: float
    c_mps: float
    sample_count: int
    base_seed: int

    def __post_init__(self):
        if min(self.m, self.t, self.r) < 1 or self.sample_count < 0:
            raise ValidationError("header counts must be positive")


def _draw_angles(cfg: SimConfig, stream: Stream, k: int) -> tuple[np.ndarray, np.ndarray]:
    half_pi = math.pi / 2.0
    for _ in range(_MAX_ANGLE_ATTEMPTS):
        if cfg.delta_theta_rad is not None:
            half_sep = cfg.delta_theta_rad / 2.0
            center = stream.uniform(-(half_pi - half_sep), half_pi - half_sep, 1)[0]
            angles = np.array([center - half_sep, center + half_sep])
        else:
            angles = stream.uniform(-half_pi, half_pi, k)
        labels = np.array([cfg.grid.nearest_label(a) for a in angles], dtype=np.int64)
        if len(set(labels.tolist())) == k:
            if cfg.on_grid:
                angles = cfg.grid.thetas[labels].copy()
            return angles, labels
    raise ValidationError("could not draw distinct grid labels; widen the grid")


def _sample_scenario_full(cfg: SimConfig, stream: Stream) -> tuple[Scenario, ComplexMatrix]:
    """Generate one scenario; also return the steering matrix actually used.

    Draw order per sample: (1) K pick when k_choices has several entries;
    (2) SNR pick likewise; (3) angle vector, redrawn whole until the K grid
    labels are distinct; (4) source waveforms — incoherent: K*T CN(0,1)
    entries row-major; coherent: T shared CN(0,1) snapshots then K phases
    U(0, 2pi); (5) M*T CN(0,1) noise entries row-major, scaled to the target
    SNR; (6) geometry perturbation draws when rho_err > 0.
    """
    k = cfg.k_choices[stream.pick(len(cfg.k_choices))] if len(cfg.k_choices) > 1 else cfg.k_choices[0]
    snr_db = (
        cfg.snr_choices[stream.pick(len(cfg.snr_choices))]
        if len(cfg.snr_choices) > 1
        else cfg.snr_choices[0]
    )
    angles, labels = _draw_angles(cfg, stream, k)

    if cfg.coherent:
        waveform = stream.cnormal(cfg.t)
        phases = stream.uniform(0.0, 2.0 * math.pi, k)
        s = np.exp(1j * phases)[:, None] * waveform[None, :]
    else:
        s = stream.cnormal(k * cfg.t).reshape(k, cfg.t)

    # Per-source unit power; only the noise is rescaled to set the SNR.
    sigma = 10.0 ** (-snr_db / 20.0)
    n = sigma * stream.cnormal(cfg.geom.m * cfg.t).reshape(cfg.geom.m, cfg.t)

    geom = cfg.geom
    if cfg.rho_err > 0:
        geom = perturb_positions(cfg.geom, cfg.wave, cfg.rho_err, stream)
    a_cols = np.stack(
        [steering_vector(geom, cfg.wave, float(a)) for a in angles], axis=1
    )
    x = a_cols @ s + n
    scen = Scenario(
        k=k,
        t=cfg.t,
        snr_db=float(snr_db),
        coherent=cfg.coherent,
        angles=angles.astype(np.float64),
        grid_labels=labels,
        x=ComplexMatrix.from_complex(x),
        s_true=ComplexMatrix.from_complex(s),
        n_true=ComplexMatrix.from_complex(n),
    )
    return scen, ComplexMatrix.from_complex(a_cols)


def sample_scenario(cfg: SimConfig, stream: Stream) -> Scenario:
    return _sample_scenario_full(cfg, stream)[0]


def generate_scenario(cfg: SimConfig, base_seed: int, index: int) -> Scenario:
    """Sample ``index`` of the dataset rooted at ``base_seed``, in isolation."""
    return sample_scenario(cfg, Stream(derive_seed(base_seed, index)))


def make_header(cfg: SimConfig, sample_count: int, base_seed: int) -> DatasetHeader:
    return DatasetHeader(
        m=cfg.geom.m,
        t=cfg.t,
        r=cfg.grid.r,
        delta_rad=cfg.grid.delta_rad,
        f_hz=cfg.wave.f_hz,
        c_mps=cfg.wave.c_mps,
        sample_count=sample_count,
        base_seed=base_seed,
    )


def generate_dataset(
    cfg: SimConfig, sample_count: int, base_seed: int
) -> tuple[DatasetHeader, list[Scenario]]:
    header = make_header(cfg, sample_count, base_seed)
    scenarios = [generate_scenario(cfg, base_seed, i) for i in range(sample_count)]
    return header, scenarios


_HEADER_FMT = "<4sIIIIdddQQ"
_HEADER_SIZE = struct.calcsize(_HEADER_FMT)


def _pack_x(x: ComplexMatrix) -> bytes:
    m, t = x.shape
    pairs = np.empty((m, t, 2), dtype="<f8")
    pairs[:, :, 0] = x.re
    pairs[:, :, 1] = x.im
    return pairs.tobytes()


def dataset_bytes(header: DatasetHeader, scenarios: list[Scenario]) -> bytes:
    """Serialize to the documented layout, CRC32 appended."""
    if len(scenarios) != header.sample_count:
        raise ValidationError(
            f"header declares {header.sample_count} samples, got {len(scenarios)}"
        )
    out = bytearray()
    out += struct.pack(
        _HEADER_FMT,
        MAGIC,
        VERSION,
        header.m,
        header.t,
        header.r,
        header.delta_rad,
        header.f_hz,
        header.c_mps,
        header.sample_count,
        header.base_seed,
    )
    for i, s in enumerate(scenarios):
        if s.x.shape != (header.m, header.t):
            raise ValidationError(
                f"sample {i} has X shape {s.x.shape}, header says {(header.m, header.t)}"
            )
        out += struct.pack("<IBd", s.k, 1 if s.coherent else 0, s.snr_db)
        out += np.asarray(s.angles, dtype="<f8").tobytes()
        out += np.asarray(s.grid_labels, dtype="<u4").tobytes()
        out += _pack_x(s.x)
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


def write_dataset(path: str, header: DatasetHeader, scenarios: list[Scenario]) -> None:
    atomic_write_bytes(path, dataset_bytes(header, scenarios))


def _walk_samples(buf: bytes, header: DatasetHeader) -> None:
    """Structural pass over sample offsets; raises on truncation."""
    off, end = _HEADER_SIZE, len(buf) - 4
    for i in range(header.sample_count):
        if off + 13 > end:
            raise TruncatedError(f"sample {i} header runs past end of file")
        k = struct.unpack_from("<I", buf, off)[0]
        off += 13 + 12 * k + 16 * header.m * header.t
    if off > end:
        raise TruncatedError("last sample payload runs past end of file")


def parse_dataset(buf: bytes) -> tuple[DatasetHeader, list[Scenario]]:
    if len(buf) < 8:
        raise TruncatedError("file shorter than magic and version")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    version = struct.unpack_from("<I", buf, 4)[0]
    if version != VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if len(buf) < _HEADER_SIZE + 4:
        raise TruncatedError("file shorter than its fixed header")
    fields = struct.unpack_from(_HEADER_FMT, buf, 0)
    header = DatasetHeader(
        m=fields[2],
        t=fields[3],
        r=fields[4],
        delta_rad=fields[5],
        f_hz=fields[6],
        c_mps=fields[7],
        sample_count=fields[8],
        base_seed=fields[9],
    )
    _walk_samples(buf, header)
    stored_crc = struct.unpack_from("<I", buf, len(buf) - 4)[0]
    actual_crc = zlib.crc32(buf[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise ChecksumError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )
    off = _HEADER_SIZE
    end = len(buf) - 4
    scenarios: list[Scenario] = []
    for i in range(header.sample_count):
        if off + 13 > end:
            raise TruncatedError(f"sample {i} header runs past end of file")
        k, coh, snr_db = struct.unpack_from("<IBd", buf, off)
        off += 13
        need = 8 * k + 4 * k + 16 * header.m * header.t
        if off + need > end:
            raise TruncatedError(f"sample {i} payload runs past end of file")
        angles = np.frombuffer(buf, dtype="<f8", count=k, offset=off).copy()
        off += 8 * k
        labels = np.frombuffer(buf, dtype="<u4", count=k, offset=off).astype(np.int64)
        off += 4 * k
        pairs = np.frombuffer(
            buf, dtype="<f8", count=2 * header.m * header.t, offset=off
        ).reshape(header.m, header.t, 2)
        off += 16 * header.m * header.t
        scenarios.append(
            Scenario(
                k=int(k),
                t=header.t,
                snr_db=float(snr_db),
                coherent=bool(coh),
                angles=angles,
                grid_labels=labels,
                x=ComplexMatrix(pairs[:, :, 0], pairs[:, :, 1]),
            )
        )
    if off != end:
        raise FormatError(f"{end - off} trailing bytes after last sample")
    return header, scenarios


def read_dataset(path: str) -> tuple[DatasetHeader, list[Scenario]]:
    with open(path, "rb") as fh:
        return parse_dataset(fh.read())


def grid_from_header(header: DatasetHeader) -> AngleGrid:
    """Rebuild the angular grid, snapping the stored radians to degrees."""
    grid = AngleGrid(round(math.degrees(header.delta_rad), 9))
    if grid.r != header.r:
        raise FormatError(f"header R={header.r} inconsistent with delta ({grid.r})")
    return grid
