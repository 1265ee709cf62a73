"""Shoebox room impulse responses with the randomized image method.

Image sources of a rectangular room are enumerated up to the distance that
still fits inside the impulse-response length. Every image except the direct
path is displaced by a uniform random offset per coordinate, which breaks the
regular comb structure of the plain image method. Delays are rounded to the
nearest sample and the amplitude of each image is ``beta**k / (4 pi d)`` with
``k`` the number of wall reflections.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = [
    "GeometryError",
    "RoomSpec",
    "ScenarioGeometry",
    "ImpulseResponseBank",
    "place_sources_on_circle",
    "generate_rim_ir",
    "build_geometry",
    "build_ir_bank",
    "direct_path_delay",
]

SOURCE_ROLES = ("speech", "noise", "loudspeaker")


class GeometryError(ValueError):
    """Raised for positions outside the room or coincident source/mic."""


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room with a uniform wall reflection coefficient."""

    dimensions: tuple[float, float, float] = (5.0, 5.0, 3.0)
    reflection_coefficient: float = 0.15
    speed_of_sound: float = 343.0
    sample_rate: int = 16000
    ir_length: int = 128
    rim_displacement: float = 0.13

    def __post_init__(self):
        if len(self.dimensions) != 3 or min(self.dimensions) <= 0:
            raise ValueError(f"room dimensions must be three positive lengths, got {self.dimensions}")
        if self.ir_length < 1:
            raise ValueError("ir_length must be >= 1")
        if not 0.0 <= self.reflection_coefficient < 1.0:
            raise ValueError("reflection_coefficient must lie in [0, 1)")
        if self.rim_displacement < 0:
            raise ValueError("rim_displacement must be >= 0")

    def contains(self, position) -> bool:
        p = np.asarray(position, dtype=float)
        return bool(np.all(p > 0) and np.all(p < np.asarray(self.dimensions)))


@dataclass
class ScenarioGeometry:
    """Microphone and source positions of one acoustic scenario.

    ``source_positions`` and ``source_roles`` are aligned; the roles are one
    ``"speech"``, one ``"noise"`` and one ``"loudspeaker"`` per loudspeaker.
    """

    mic_positions: np.ndarray
    source_positions: np.ndarray
    source_roles: tuple[str, ...]
    circle_radius: float
    seed: int

    @property
    def center(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def n_loudspeakers(self) -> int:
        return sum(role == "loudspeaker" for role in self.source_roles)

    def index_of(self, role: str) -> list[int]:
        return [i for i, r in enumerate(self.source_roles) if r == role]


@dataclass
class ImpulseResponseBank:
    """FIR paths from every source to every microphone.

    ``irs`` has shape ``(n_sources, n_mics, ir_length)``.
    """

    irs: np.ndarray
    source_roles: tuple[str, ...]
    sample_rate: int = 16000

    def __post_init__(self):
        if self.irs.ndim != 3 or self.irs.shape[0] != len(self.source_roles):
            raise ValueError("irs must be (n_sources, n_mics, ir_length) with one role per source")
        for role in self.source_roles:
            if role not in SOURCE_ROLES:
                raise ValueError(f"unknown source role {role!r}")
        empty = [(i, m) for i in range(self.irs.shape[0]) for m in range(self.irs.shape[1])
                 if not np.any(self.irs[i, m])]
        if empty:
            raise ValueError(f"impulse responses without any nonzero tap: {empty}")

    def paths(self, role: str) -> np.ndarray:
        """IRs of all sources with ``role``, shape ``(n, n_mics, ir_length)``."""
        idx = [i for i, r in enumerate(self.source_roles) if r == role]
        return self.irs[idx]

    def export(self, directory) -> Path:
        """Write one float32 WAV per IR plus ``manifest.csv``; returns the manifest path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = directory / "manifest.csv"
        with open(manifest, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["source_index", "mic_index", "role", "filename"])
            for i, role in enumerate(self.source_roles):
                for m in range(self.irs.shape[1]):
                    name = f"ir_src{i}_mic{m}_{role}.wav"
                    wavfile.write(directory / name, self.sample_rate, self.irs[i, m].astype(np.float32))
                    writer.writerow([i, m, role, name])
        return manifest


def _check_inside(room: RoomSpec, positions, label: str):
    for i, p in enumerate(np.atleast_2d(positions)):
        if not room.contains(p):
            raise GeometryError(f"{label} {i} at {np.round(p, 4).tolist()} lies outside the room")


def place_sources_on_circle(center, radius: float, count: int, start_angle: float = 0.0,
                           room: RoomSpec | None = None) -> np.ndarray:
    """Positions equally spaced by ``2 pi / count`` on a horizontal circle.

    Returns an array of shape ``(count, 3)``. When ``room`` is given every
    position is checked to lie strictly inside it.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    center = np.asarray(center, dtype=float)
    angles = start_angle + 2 * np.pi * np.arange(count) / count
    pos = np.tile(center, (count, 1))
    pos[:, 0] += radius * np.cos(angles)
    pos[:, 1] += radius * np.sin(angles)
    if room is not None:
        _check_inside(room, pos, "source")
    return pos


def direct_path_delay(room: RoomSpec, src, mic) -> int:
    d = np.linalg.norm(np.asarray(src, float) - np.asarray(mic, float))
    return int(np.round(room.sample_rate * d / room.speed_of_sound))


def _image_candidates(room: RoomSpec, src: np.ndarray, mic: np.ndarray):
    """Enumerate image positions and reflection counts, direct path first.

    The candidate set only depends on the geometry and the IR length, not on
    the reflection coefficient, so random draws line up across coefficients.
    """
    dims = np.asarray(room.dimensions, dtype=float)
    max_dist = (room.ir_length + 0.5) * room.speed_of_sound / room.sample_rate \
        + np.sqrt(3.0) * room.rim_displacement
    n_max = np.ceil(max_dist / (2 * dims)).astype(int) + 1

    positions, orders = [], []
    ranges = [range(-n, n + 1) for n in n_max]
    for nx, ny, nz in itertools.product(*ranges):
        n = np.array([nx, ny, nz])
        for q in itertools.product((0, 1), repeat=3):
            q = np.array(q)
            img = (1 - 2 * q) * src + 2 * n * dims
            order = int(np.sum(np.abs(n - q) + np.abs(n)))
            if np.linalg.norm(img - mic) > max_dist:
                continue
            positions.append(img)
            orders.append(order)
    positions = np.array(positions)
    orders = np.array(orders)
    # direct path (order 0) first, remaining order is the enumeration order
    first = np.flatnonzero(orders == 0)[0]
    perm = np.r_[first, np.delete(np.arange(len(orders)), first)]
    return positions[perm], orders[perm]


def generate_rim_ir(room: RoomSpec, src, mic, seed: int = 0) -> np.ndarray:
    """Single randomized-image-method impulse response of ``room.ir_length`` taps."""
    src = np.asarray(src, dtype=float)
    mic = np.asarray(mic, dtype=float)
    _check_inside(room, src, "source")
    _check_inside(room, mic, "microphone")
    if np.linalg.norm(src - mic) < 1e-9:
        raise GeometryError("source and microphone coincide (singular distance)")

    positions, orders = _image_candidates(room, src, mic)
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(-room.rim_displacement, room.rim_displacement, size=positions.shape)
    jitter[0] = 0.0
    positions = positions + jitter

    dist = np.linalg.norm(positions - mic, axis=1)
    delay = np.round(room.sample_rate * dist / room.speed_of_sound).astype(int)
    amp = room.reflection_coefficient ** orders / (4 * np.pi * dist)
    keep = delay < room.ir_length
    ir = np.zeros(room.ir_length)
    np.add.at(ir, delay[keep], amp[keep])
    return ir


def build_geometry(seed: int, room: RoomSpec | None = None, n_loudspeakers: int = 2,
                   mic_positions=((2.0, 1.9, 1.0), (2.0, 1.8, 1.0)),
                   radius: float = 0.2) -> ScenarioGeometry:
    """Randomized scenario: sources at congruent angles around the mic centroid.

    The seed draws the start angle of the circle and the assignment of the
    speech, noise and loudspeaker roles to the circle positions.
    """
    room = room or RoomSpec()
    mics = np.asarray(mic_positions, dtype=float)
    _check_inside(room, mics, "microphone")
    count = 2 + n_loudspeakers
    rng = np.random.default_rng(seed)
    start = rng.uniform(0, 2 * np.pi / count)
    slots = rng.permutation(count)
    circle = place_sources_on_circle(mics.mean(axis=0), radius, count, start, room)
    roles = ("speech", "noise") + ("loudspeaker",) * n_loudspeakers
    return ScenarioGeometry(mic_positions=mics, source_positions=circle[slots],
                            source_roles=roles, circle_radius=radius, seed=seed)


def build_ir_bank(room: RoomSpec, geometry: ScenarioGeometry) -> ImpulseResponseBank:
    """IRs for every (source, mic) pair with per-pair seeds derived from the scenario seed."""
    n_src = len(geometry.source_positions)
    irs = np.zeros((n_src, geometry.n_mics, room.ir_length))
    for i, src in enumerate(geometry.source_positions):
        for m, mic in enumerate(geometry.mic_positions):
            pair_seed = np.random.SeedSequence([geometry.seed, i, m]).generate_state(1)[0]
            irs[i, m] = generate_rim_ir(room, src, mic, seed=int(pair_seed))
    return ImpulseResponseBank(irs=irs, source_roles=geometry.source_roles,
                               sample_rate=room.sample_rate)
