"""Wi-Fi channel layouts: subcarrier counts, null-subcarrier indices, presets."""

from __future__ import annotations

from dataclasses import dataclass, field


# Null layout for a 20 MHz channel with a 64-point FFT: DC bin plus the
# guard band straddling the spectrum edge (bins 29..35 in FFT order).
_NULLS_20MHZ_64 = (0, 29, 30, 31, 32, 33, 34, 35)

# 80 MHz extractor emits 255 bins; nulls are the DC region (0, 1, 254)
# plus the ten guard bins around the spectrum edge (123..132).
_NULLS_80MHZ_255 = (0, 1, 123, 124, 125, 126, 127, 128, 129, 130, 131, 132, 254)


@dataclass(frozen=True)
class ChannelConfig:
    """OFDM channel layout for one CSI capture configuration.

    ``subcarrier_count`` is the raw CSI vector length K; ``null_indices``
    are the bins that carry no information and are stripped before
    feature extraction, leaving K' useful subcarriers.
    """

    name: str
    band: str                      # "2.4GHz" or "5GHz"
    channel_number: int
    bandwidth_mhz: float
    subcarrier_count: int
    null_indices: tuple[int, ...] = field(default=())
    carrier_freq_hz: float = 0.0

    def __post_init__(self):
        if self.band not in ("2.4GHz", "5GHz"):
            raise ValueError(f"unknown band {self.band!r}")
        nulls = tuple(sorted(set(self.null_indices)))
        object.__setattr__(self, "null_indices", nulls)
        if nulls and (nulls[0] < 0 or nulls[-1] >= self.subcarrier_count):
            raise ValueError("null index outside subcarrier range")
        if self.useful_count <= 0:
            raise ValueError("no useful subcarriers left")

    @property
    def useful_count(self) -> int:
        """K': number of subcarriers after null removal."""
        return self.subcarrier_count - len(self.null_indices)

    @property
    def feature_count(self) -> int:
        """D = 2 K' (one magnitude and one phase per useful subcarrier)."""
        return 2 * self.useful_count

    @property
    def bandwidth_hz(self) -> float:
        return self.bandwidth_mhz * 1e6


# Channel 1 at 2.4 GHz (20 MHz) and channel 157 at 5 GHz (80 MHz).
PRESETS: dict[str, ChannelConfig] = {
    "2g4": ChannelConfig(
        name="2g4",
        band="2.4GHz",
        channel_number=1,
        bandwidth_mhz=20.0,
        subcarrier_count=64,
        null_indices=_NULLS_20MHZ_64,
        carrier_freq_hz=2.412e9,
    ),
    "5g": ChannelConfig(
        name="5g",
        band="5GHz",
        channel_number=157,
        bandwidth_mhz=80.0,
        subcarrier_count=255,
        null_indices=_NULLS_80MHZ_255,
        carrier_freq_hz=5.785e9,
    ),
}

# Default training epochs per preset.
PRESET_EPOCHS = {"2g4": 35, "5g": 25}


def get_preset(name: str) -> ChannelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown channel preset {name!r} (expected one of {sorted(PRESETS)})") from None
