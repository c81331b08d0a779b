"""Synthetic multipath channel and CSI dataset generation.

A scenario is a set of box-shaped rooms with fixed devices inside. For a
transmitter/receiver pair the channel impulse response is built from the
line-of-sight path, first-order wall reflections (image sources), and
seeded random scatter paths. Sampling the continuous-time response onto
the receiver's grid uses the bandwidth-limited interpolation kernel, and
the CSI follows as the unnormalized forward DFT of the sampled response.

Pairs in different rooms get a through-wall attenuation on every path,
which is what separates copresent from non-copresent channel statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .channel import ChannelConfig, get_preset
from .measurement import (
    LABEL_COPRESENT,
    LABEL_NON_COPRESENT,
    CsiMeasurement,
)

SPEED_OF_LIGHT = 299792458.0


class ScenarioError(ValueError):
    """Raised for inconsistent scenario definitions or unknown devices."""


@dataclass(frozen=True)
class PathTap:
    """One propagation path: amplitude a, phase theta, delay tau (seconds)."""

    amplitude: float
    phase: float
    delay: float

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("tap amplitude must be >= 0")
        if self.delay < 0:
            raise ValueError("tap delay must be >= 0")

    @property
    def coefficient(self) -> complex:
        return self.amplitude * complex(math.cos(self.phase), math.sin(self.phase))


@dataclass
class SampledCir:
    """Bandwidth-limited CIR sampled on the receiver grid (K samples)."""

    taps: np.ndarray           # complex, length K
    time_resolution: float     # seconds between samples, = 1 / bandwidth
    bandwidth: float           # Hz

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.complex128)
        if not math.isclose(self.time_resolution, 1.0 / self.bandwidth, rel_tol=1e-9):
            raise ValueError("time_resolution must equal 1/bandwidth")


@dataclass(frozen=True)
class Room:
    name: str
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        if any(lo >= hi for lo, hi in zip(self.min_corner, self.max_corner)):
            raise ScenarioError(f"room {self.name!r} has non-positive extent")

    def contains(self, p) -> bool:
        return all(lo < x < hi for lo, x, hi in zip(self.min_corner, p, self.max_corner))

    @property
    def diagonal(self) -> float:
        return math.dist(self.min_corner, self.max_corner)

    def wall_planes(self):
        """(axis, value) for the six bounding planes."""
        for axis in range(3):
            yield axis, self.min_corner[axis]
            yield axis, self.max_corner[axis]


@dataclass(frozen=True)
class Device:
    id: str
    position: tuple[float, float, float]
    role: str = "prover"       # "prover" or "verifier"

    def __post_init__(self):
        if self.role not in ("prover", "verifier"):
            raise ScenarioError(f"device {self.id!r}: unknown role {self.role!r}")


@dataclass
class ScenarioSpec:
    """Full description of a synthetic environment.

    ``noise_std`` is the per-subcarrier standard deviation of each real
    component of the complex CSI-domain noise. ``min_tap_amplitude`` is a
    receiver sensitivity floor: paths whose (power-scaled) amplitude falls
    below it are invisible, so raising transmit power can reveal extra
    multipath structure even when AGC removes the overall power change.
    """

    rooms: list[Room]
    devices: list[Device]
    preset: str = "2g4"
    path_count_range: tuple[int, int] = (4, 8)
    noise_std: float = 0.01
    agc_enabled: bool = True
    tx_power_scale: float = 1.0
    rng_seed: int = 0
    wall_attenuation_db: float = 12.0
    reflection_coeff: float = 0.5
    scatter_decay: float = 0.7
    amp_jitter: float = 0.05
    delay_jitter: float = 1e-9
    phase_jitter: float = 0.05
    min_tap_amplitude: float = 0.0
    random_phase_offset: bool = False
    timing_offset_std: float = 0.0
    frame_rate: float = 3.0

    def __post_init__(self):
        if self.tx_power_scale <= 0:
            raise ScenarioError("tx_power_scale must be > 0")
        lo, hi = self.path_count_range
        if lo < 1 or hi < lo:
            raise ScenarioError(f"bad path_count_range {self.path_count_range}")
        seen: set[str] = set()
        for dev in self.devices:
            if dev.id in seen:
                raise ScenarioError(f"duplicate device id {dev.id!r}")
            seen.add(dev.id)
            homes = [r for r in self.rooms if r.contains(dev.position)]
            if len(homes) != 1:
                raise ScenarioError(
                    f"device {dev.id!r} lies in {len(homes)} rooms (must be exactly 1)"
                )

    @property
    def config(self) -> ChannelConfig:
        return get_preset(self.preset)

    def device(self, device_id: str) -> Device:
        for dev in self.devices:
            if dev.id == device_id:
                return dev
        raise ScenarioError(f"unknown device id {device_id!r}")

    def device_index(self, device_id: str) -> int:
        for i, dev in enumerate(self.devices):
            if dev.id == device_id:
                return i
        raise ScenarioError(f"unknown device id {device_id!r}")

    def room_of(self, device_id: str) -> Room:
        pos = self.device(device_id).position
        for room in self.rooms:
            if room.contains(pos):
                return room
        raise ScenarioError(f"device {device_id!r} is outside every room")

    def copresent(self, a: str, b: str) -> bool:
        return self.room_of(a) is self.room_of(b)

    @property
    def verifiers(self) -> list[Device]:
        return [d for d in self.devices if d.role == "verifier"]

    @property
    def provers(self) -> list[Device]:
        return [d for d in self.devices if d.role == "prover"]


def friis_amplitude(distance: float, carrier_freq_hz: float) -> float:
    """Free-space amplitude factor lambda / (4 pi d)."""
    wavelength = SPEED_OF_LIGHT / carrier_freq_hz
    return wavelength / (4.0 * math.pi * distance)


def _path_tap(length: float, carrier_freq_hz: float, gain: float, phase_shift: float) -> PathTap:
    delay = length / SPEED_OF_LIGHT
    phase = (-2.0 * math.pi * carrier_freq_hz * delay + phase_shift + math.pi) % (2.0 * math.pi) - math.pi
    return PathTap(
        amplitude=friis_amplitude(length, carrier_freq_hz) * gain,
        phase=phase,
        delay=delay,
    )


def _mirror(point, axis: int, plane_value: float):
    mirrored = list(point)
    mirrored[axis] = 2.0 * plane_value - mirrored[axis]
    return tuple(mirrored)


def ideal_cir(spec: ScenarioSpec, tx: str, rx: str) -> list[PathTap]:
    """Multipath taps for the tx->rx channel, sorted by nondecreasing delay.

    The first tap is the line-of-sight path. First-order reflections come
    from mirroring the transmitter across the walls of both endpoint
    rooms; remaining paths (up to the drawn path count) are seeded scatter
    taps with geometrically decaying amplitude. Non-copresent pairs have
    every amplitude scaled by the through-wall attenuation.
    """
    if tx == rx:
        raise ScenarioError("tx and rx must differ")
    tx_dev, rx_dev = spec.device(tx), spec.device(rx)
    fc = spec.config.carrier_freq_hz
    d_los = math.dist(tx_dev.position, rx_dev.position)

    rng = np.random.default_rng(
        np.random.SeedSequence([spec.rng_seed, 11, spec.device_index(tx), spec.device_index(rx)])
    )
    lo, hi = spec.path_count_range
    n_paths = int(rng.integers(lo, hi + 1))

    direct = _path_tap(d_los, fc, gain=1.0, phase_shift=0.0)

    rooms = [spec.room_of(tx)]
    rx_room = spec.room_of(rx)
    if rx_room is not rooms[0]:
        rooms.append(rx_room)
    reflections = []
    for room in rooms:
        for axis, value in room.wall_planes():
            tx_side = tx_dev.position[axis] - value
            rx_side = rx_dev.position[axis] - value
            # A specular bounce exists only with both endpoints on one side
            # of the wall plane; it is then strictly longer than the LOS.
            if tx_side == 0.0 or rx_side == 0.0 or (tx_side > 0.0) != (rx_side > 0.0):
                continue
            image = _mirror(tx_dev.position, axis, value)
            length = math.dist(image, rx_dev.position)
            reflections.append(_path_tap(length, fc, gain=spec.reflection_coeff, phase_shift=math.pi))
    reflections.sort(key=lambda t: t.delay)

    taps = [direct] + reflections[: max(0, n_paths - 1)]

    n_scatter = n_paths - len(taps)
    if n_scatter > 0:
        spread = rooms[0].diagonal / SPEED_OF_LIGHT
        extra = np.sort(rng.exponential(scale=spread, size=n_scatter)) + 1e-12
        factors = rng.uniform(0.5, 1.0, size=n_scatter)
        phases = rng.uniform(-math.pi, math.pi, size=n_scatter)
        for k in range(n_scatter):
            taps.append(PathTap(
                amplitude=direct.amplitude * spec.scatter_decay ** (k + 1) * factors[k],
                phase=float(phases[k]),
                delay=direct.delay + float(extra[k]),
            ))

    if not spec.copresent(tx, rx):
        wall = 10.0 ** (-spec.wall_attenuation_db / 20.0)
        taps = [replace(t, amplitude=t.amplitude * wall) for t in taps]

    taps.sort(key=lambda t: t.delay)
    return taps


def sample_cir(taps: list[PathTap], config: ChannelConfig) -> SampledCir:
    """Sample the ideal CIR onto the K-point receiver grid.

    Each path contributes through the bandwidth-limited kernel
    sin(pi u)/(pi u) with u = (n*dt - tau)/dt, so a delay on the sampling
    grid lands on exactly one sample and off-grid delays leak everywhere.
    """
    k = config.subcarrier_count
    bw = config.bandwidth_hz
    samples = np.zeros(k, dtype=np.complex128)
    if taps:
        n = np.arange(k)
        for tap in taps:
            samples += tap.coefficient * np.sinc(n - tap.delay * bw)
    return SampledCir(taps=samples, time_resolution=1.0 / bw, bandwidth=bw)


def cir_to_csi(cir: SampledCir) -> np.ndarray:
    """Forward DFT (no 1/K factor): H_k = sum_n c_n exp(-2j pi (k)(n)/K)."""
    return np.fft.fft(cir.taps)


def csi_to_cir(csi: np.ndarray, bandwidth_hz: float) -> SampledCir:
    """Exact inverse of cir_to_csi (the 1/K factor lives here)."""
    taps = np.fft.ifft(np.asarray(csi, dtype=np.complex128))
    return SampledCir(taps=taps, time_resolution=1.0 / bandwidth_hz, bandwidth=bandwidth_hz)


def _jittered(taps: list[PathTap], rng: np.random.Generator, spec: ScenarioSpec) -> list[PathTap]:
    out = []
    for t in taps:
        amp = t.amplitude * max(0.0, 1.0 + spec.amp_jitter * rng.standard_normal())
        delay = max(0.0, t.delay + spec.delay_jitter * rng.standard_normal())
        phase = t.phase + spec.phase_jitter * rng.standard_normal()
        out.append(PathTap(amplitude=amp, phase=phase, delay=delay))
    return out


def generate_dataset(
    spec: ScenarioSpec,
    frames_per_pair: int,
    noise_seed: int | None = None,
) -> list[CsiMeasurement]:
    """Simulate CSI capture: every verifier hears every prover.

    Per frame the pair's taps get small seeded jitter, amplitudes are
    scaled by tx_power_scale, paths below the sensitivity floor are
    dropped, and the CSI is formed, optionally AGC-normalized to unit
    mean magnitude, then perturbed with complex Gaussian noise.

    ``noise_seed`` redraws the per-frame jitter/noise streams while
    keeping the environment (the base multipath geometry seeded by
    ``spec.rng_seed``) fixed; by default it follows the scenario seed.
    """
    if frames_per_pair < 1:
        raise ScenarioError("frames_per_pair must be >= 1")
    verifiers = spec.verifiers
    provers = spec.provers
    if not verifiers or not provers:
        raise ScenarioError("scenario needs at least one verifier and one prover")
    if noise_seed is None:
        noise_seed = spec.rng_seed

    config = spec.config
    k = config.subcarrier_count
    out: list[CsiMeasurement] = []
    for v in verifiers:
        for p in provers:
            if p.id == v.id:
                continue
            base = ideal_cir(spec, tx=p.id, rx=v.id)
            label = LABEL_COPRESENT if spec.copresent(p.id, v.id) else LABEL_NON_COPRESENT
            rng = np.random.default_rng(np.random.SeedSequence(
                [noise_seed, 22, spec.device_index(v.id), spec.device_index(p.id)]
            ))
            for j in range(frames_per_pair):
                taps = _jittered(base, rng, spec)
                taps = [replace(t, amplitude=t.amplitude * spec.tx_power_scale) for t in taps]
                if spec.min_tap_amplitude > 0.0:
                    taps = [t for t in taps if t.amplitude >= spec.min_tap_amplitude]
                csi = cir_to_csi(sample_cir(taps, config))
                if spec.timing_offset_std > 0.0:
                    delta = spec.timing_offset_std * rng.standard_normal()
                    csi = csi * np.exp(-2j * math.pi * np.arange(k) * delta / k)
                if spec.random_phase_offset:
                    csi = csi * np.exp(1j * rng.uniform(-math.pi, math.pi))
                if spec.agc_enabled:
                    mean_mag = np.mean(np.abs(csi))
                    if mean_mag > 0.0:
                        csi = csi / mean_mag
                noise = rng.normal(0.0, spec.noise_std, size=(k, 2))
                csi = csi + noise[:, 0] + 1j * noise[:, 1]
                out.append(CsiMeasurement(
                    timestamp=j / spec.frame_rate,
                    tx_id=p.id, rx_id=v.id, config=config, csi=csi, label=label,
                ))
    return out


# -- scenario files ----------------------------------------------------------

def scenario_from_dict(data: dict) -> ScenarioSpec:
    rooms = [
        Room(name=r["name"], min_corner=tuple(r["min"]), max_corner=tuple(r["max"]))
        for r in data["rooms"]
    ]
    devices = [
        Device(id=d["id"], position=tuple(d["position"]), role=d.get("role", "prover"))
        for d in data["devices"]
    ]
    kwargs = {}
    for key in (
        "preset", "noise_std", "agc_enabled", "tx_power_scale", "rng_seed",
        "wall_attenuation_db", "reflection_coeff", "scatter_decay",
        "amp_jitter", "delay_jitter", "phase_jitter", "min_tap_amplitude",
        "random_phase_offset", "timing_offset_std", "frame_rate",
    ):
        if key in data:
            kwargs[key] = data[key]
    if "path_count_range" in data:
        kwargs["path_count_range"] = tuple(data["path_count_range"])
    return ScenarioSpec(rooms=rooms, devices=devices, **kwargs)


def load_scenario(path: str | Path) -> ScenarioSpec:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ScenarioError(f"scenario file {path} is not a mapping")
    try:
        return scenario_from_dict(data)
    except KeyError as exc:
        raise ScenarioError(f"scenario file {path} is missing key {exc}") from None


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario config shipped with the package."""
    base = resources.files("copresence") / "scenarios" / f"{name}.yaml"
    if not base.is_file():
        raise ScenarioError(f"no bundled scenario named {name!r}")
    return Path(str(base))


def resolve_scenario(name_or_path: str | Path) -> ScenarioSpec:
    """Accept either a filesystem path or a bundled scenario name."""
    p = Path(name_or_path)
    if p.is_file():
        return load_scenario(p)
    return load_scenario(bundled_scenario_path(str(name_or_path)))
