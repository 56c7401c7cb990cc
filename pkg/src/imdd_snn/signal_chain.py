"""Simulated 112 GBd PAM4 IM/DD link.

The chain is: Gray mapping -> zero-stuffed upsampling + RRC + bias -> chromatic
dispersion (allpass on the field) -> square-law photodiode -> AWGN -> RRC ->
downsampling. Every filter is applied circularly over the whole frame with
centred taps, so the frame behaves like one period of a periodic transmission
and no group-delay bookkeeping at the frame edges is needed.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

SPEED_OF_LIGHT = 299_792_458.0

# symbol index -> (b1, b2); ascending amplitude order
GRAY_LABELS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)
# (b1, b2) read as 2*b1 + b2 -> symbol index
_BITS_TO_INDEX = np.array([0, 1, 3, 2], dtype=np.int64)

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class LinkParams:
    baudrate: float = 112e9
    wavelength: float = 1270e-9
    # s/m^2; -5 ps/nm/km
    dispersion: float = -5e-6
    fiber_length: float = 4e3
    alphabet: tuple[float, ...] = (-3.0, -1.0, 1.0, 3.0)
    seq_len: int = 10_000
    bias: float = 2.25
    rrc_rolloff: float = 0.2
    n_up: int = 3
    n_down: int = 3
    rrc_span: int = 40
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_up != self.n_down:
            raise ValueError("n_up and n_down must be equal")
        if len(self.alphabet) != 4 or any(np.diff(self.alphabet) <= 0):
            raise ValueError("alphabet must hold 4 strictly increasing levels")
        if self.seq_len * self.n_up < self.rrc_span * self.n_up + 1:
            raise ValueError("sequence shorter than the RRC filter")

    @property
    def sample_rate(self) -> float:
        return self.baudrate * self.n_up

    def replace(self, **changes) -> "LinkParams":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["alphabet"] = list(self.alphabet)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LinkParams":
        d = dict(d)
        if "alphabet" in d:
            d["alphabet"] = tuple(float(a) for a in d["alphabet"])
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        for k, v in list(d.items()):
            if k not in kinds:
                raise KeyError(f"unknown link parameter {k!r}")
            if kinds[k] == "int":
                d[k] = int(v)
            elif kinds[k] == "float":
                d[k] = float(v)
        return cls(**d)


@dataclass(frozen=True)
class SymbolFrame:
    bits: NDArray[np.uint8]
    indices: NDArray[np.int64]
    symbols: NDArray[np.float64]

    def __post_init__(self):
        if len(self.bits) != 2 * len(self.symbols) or len(self.indices) != len(self.symbols):
            raise ValueError("inconsistent frame lengths")


@dataclass(frozen=True)
class RxSamples:
    samples: NDArray[np.float64]
    noise_level_db: float | None
    params: LinkParams


@dataclass(frozen=True)
class LabeledDataset:
    """Frames for one noise level and one split.

    ``edge`` symbols at each end of every frame are excluded from chunking.
    """

    frames: list[tuple[SymbolFrame, RxSamples]]
    split: str
    noise_level_db: float | None
    edge: int = 0

    @property
    def params(self) -> LinkParams:
        return self.frames[0][1].params

    def chunks(self, n_tap: int) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
        """Stacked chunks over all frames and the matching symbol indices."""
        xs, ys = [], []
        for frame, rx in self.frames:
            x, keep = extract_chunks(rx, n_tap)
            xs.append(x)
            ys.append(frame.indices[keep])
        return np.concatenate(xs), np.concatenate(ys)


# --- mapping ---------------------------------------------------------------


def bits_to_index(bits: NDArray) -> NDArray[np.int64]:
    bits = np.asarray(bits, dtype=np.int64).reshape(-1, 2)
    return _BITS_TO_INDEX[2 * bits[:, 0] + bits[:, 1]]


def gray_demap(index) -> NDArray[np.uint8]:
    """Bit pair(s) for symbol index(es) 0..3."""
    index = np.asarray(index)
    if np.any((index < 0) | (index > 3)):
        raise ValueError("symbol index out of range")
    return GRAY_LABELS[index]


def map_bits_to_pam4(bits, params: LinkParams | None = None) -> SymbolFrame:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if len(bits) % 2:
        raise ValueError("bit sequence must have even length")
    if np.any(bits > 1):
        raise ValueError("bits must be 0 or 1")
    alphabet = np.asarray((params or LinkParams()).alphabet)
    idx = bits_to_index(bits)
    return SymbolFrame(bits=bits, indices=idx, symbols=alphabet[idx])


def random_frame(params: LinkParams, rng: np.random.Generator) -> SymbolFrame:
    bits = rng.integers(0, 2, size=2 * params.seq_len, dtype=np.uint8)
    return map_bits_to_pam4(bits, params)


# --- filters ---------------------------------------------------------------


def rrc_taps(rolloff: float, n_up: int, span: int = 40) -> NDArray[np.float64]:
    """Root-raised-cosine taps, ``span * n_up + 1`` long, with sum(h**2) = 1/n_up."""
    if not 0 < rolloff < 1:
        raise ValueError("rolloff must lie in (0, 1)")
    if span < 8:
        raise ValueError("span must be at least 8 symbols")
    t = np.arange(-span * n_up // 2, span * n_up // 2 + 1) / n_up
    b = rolloff
    h = np.empty_like(t)
    center = np.isclose(t, 0.0)
    sing = np.isclose(np.abs(t), 1 / (4 * b))
    reg = ~(center | sing)
    tr = t[reg]
    h[reg] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2)
    )
    h[center] = 1 - b + 4 * b / np.pi
    h[sing] = (b / np.sqrt(2)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return h * np.sqrt(1 / n_up / np.sum(h**2))


def circular_filter(x: NDArray, taps: NDArray) -> NDArray:
    """Circular convolution with zero-delay (centred) odd-length taps."""
    n = len(x)
    k = len(taps) // 2
    kernel = np.zeros(n)
    kernel[: k + 1] = taps[k:]
    kernel[n - k :] = taps[:k]
    out = np.fft.ifft(np.fft.fft(x) * np.fft.fft(kernel))
    return out.real if np.isrealobj(x) else out


def upsample(symbols: NDArray, n_up: int) -> NDArray:
    up = np.zeros(len(symbols) * n_up)
    up[::n_up] = symbols
    return up


def shape_and_bias(frame: SymbolFrame, params: LinkParams) -> NDArray[np.float64]:
    h = rrc_taps(params.rrc_rolloff, params.n_up, params.rrc_span)
    return circular_filter(upsample(frame.symbols, params.n_up), h) + params.bias


def cspr_db(waveform: NDArray, bias: float) -> float:
    """Carrier-to-signal power ratio of a biased waveform."""
    signal = waveform - bias
    return 10 * np.log10(bias**2 / np.mean(signal**2))


def dispersion_phase(freqs: NDArray, params: LinkParams) -> NDArray:
    return np.pi * params.dispersion * params.fiber_length * params.wavelength**2 * freqs**2 / SPEED_OF_LIGHT


def dispersion_response(freqs: NDArray, params: LinkParams) -> NDArray[np.complex128]:
    return np.exp(1j * dispersion_phase(freqs, params))


def group_delay(freqs: NDArray, params: LinkParams) -> NDArray:
    """d(phase)/d(omega) of the dispersion allpass, in seconds."""
    return params.dispersion * params.fiber_length * params.wavelength**2 * freqs / SPEED_OF_LIGHT


def delay_spread_symbols(params: LinkParams) -> float:
    nyq = params.baudrate / 2
    spread = group_delay(np.array([nyq]), params) - group_delay(np.array([-nyq]), params)
    return float(abs(spread[0]) * params.baudrate)


def chromatic_dispersion(waveform: NDArray, params: LinkParams) -> NDArray[np.complex128]:
    field_ = np.asarray(waveform, dtype=np.complex128)
    freqs = np.fft.fftfreq(len(field_), d=1 / params.sample_rate)
    return np.fft.ifft(np.fft.fft(field_) * dispersion_response(freqs, params))


def photodiode(field_: NDArray) -> NDArray[np.float64]:
    return np.abs(field_) ** 2


def add_awgn(signal: NDArray, noise_level_db: float | None, rng: np.random.Generator) -> NDArray:
    """Add white Gaussian noise of variance 10**(noise_level_db/10).

    ``None`` or ``-inf`` disables the noise; the signal is returned unchanged.
    """
    if noise_level_db is None or noise_level_db == -math.inf:
        return np.array(signal, dtype=float, copy=True)
    sigma = math.sqrt(10 ** (noise_level_db / 10))
    return signal + sigma * rng.standard_normal(len(signal))


def matched_filter_downsample(
    signal: NDArray, params: LinkParams, noise_level_db: float | None = None
) -> RxSamples:
    if len(signal) != params.seq_len * params.n_up:
        raise ValueError(f"expected {params.seq_len * params.n_up} samples, got {len(signal)}")
    h = rrc_taps(params.rrc_rolloff, params.n_up, params.rrc_span)
    filtered = circular_filter(signal, h)
    # centred taps and the zero-mean-delay dispersion phase leave symbol n at sample n*n_down
    return RxSamples(samples=filtered[:: params.n_down].copy(), noise_level_db=noise_level_db, params=params)


def simulate_link(
    params: LinkParams, noise_level_db: float | None, rng: np.random.Generator
) -> tuple[SymbolFrame, RxSamples]:
    frame = random_frame(params, rng)
    tx = shape_and_bias(frame, params)
    rx_field = chromatic_dispersion(tx, params)
    detected = add_awgn(photodiode(rx_field), noise_level_db, rng)
    return frame, matched_filter_downsample(detected, params, noise_level_db)


# --- probes ----------------------------------------------------------------


def beat_term_attenuation_db(params: LinkParams, freq: float | None = None, amplitude: float = 1e-3) -> float:
    """Attenuation of the carrier-signal beat term at ``freq`` (default Nyquist) vs DC.

    A small probe tone rides on the bias, passes dispersion and the photodiode,
    and the detected tone amplitude is compared with the DC probe's.
    """
    freq = params.baudrate / 2 if freq is None else freq
    n = params.seq_len * params.n_up
    t = np.arange(n) / params.sample_rate

    def detected_tone(f):
        tone = amplitude * np.cos(2 * np.pi * f * t)
        # +/- probe difference keeps only the term linear in the tone
        out = (photodiode(chromatic_dispersion(params.bias + tone, params))
               - photodiode(chromatic_dispersion(params.bias - tone, params))) / 2
        return abs(2 * np.mean(out * np.cos(2 * np.pi * f * t))) if f else abs(np.mean(out))

    return float(20 * np.log10(detected_tone(0.0) / detected_tone(freq)))


# --- chunking and datasets -------------------------------------------------


def extract_chunks(rx: RxSamples | NDArray, n_tap: int) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Sliding windows of ``n_tap`` samples centred on each interior symbol.

    Returns the (M, n_tap) chunk matrix and the indices of the centre symbols;
    the first and last ``n_tap // 2`` symbols are dropped.
    """
    if n_tap % 2 == 0 or n_tap < 1:
        raise ValueError("n_tap must be a positive odd integer")
    y = rx.samples if isinstance(rx, RxSamples) else np.asarray(rx, dtype=float)
    if n_tap > len(y):
        raise ValueError("n_tap exceeds sequence length")
    half = n_tap // 2
    chunks = np.lib.stride_tricks.sliding_window_view(y, n_tap).copy()
    return chunks, np.arange(half, len(y) - half)


def split_rng(seed: int, split: str, noise_level_db: float | None, frame: int = 0) -> np.random.Generator:
    """Independent generator per (seed, split, noise level, frame)."""
    level_key = 0 if noise_level_db is None else int(round(noise_level_db * 1000)) + 10**6
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(SPLITS.index(split), level_key, frame)))


def make_dataset(
    params: LinkParams,
    noise_level_db: float | None,
    split: str,
    seed: int | None = None,
    n_frames: int = 1,
    n_tap: int = 7,
    first_frame: int = 0,
) -> LabeledDataset:
    seed = params.rng_seed if seed is None else seed
    frames = [
        simulate_link(params, noise_level_db, split_rng(seed, split, noise_level_db, first_frame + i))
        for i in range(n_frames)
    ]
    return LabeledDataset(frames=frames, split=split, noise_level_db=noise_level_db, edge=n_tap // 2)


def save_dataset(path: str | Path, frame: SymbolFrame, rx: RxSamples) -> None:
    """CSV with ``# key=value`` header lines, then rows bit1,bit2,y,y_rx."""
    path = Path(path)
    lines = [f"# {k}={v}" for k, v in rx.params.to_dict().items() if k != "alphabet"]
    lines.append("# alphabet=" + ",".join(repr(float(a)) for a in rx.params.alphabet))
    lines.append(f"# noise_level_db={rx.noise_level_db}")
    lines.append("bit1,bit2,y,y_rx")
    bits = frame.bits.reshape(-1, 2)
    with path.open("w") as fh:
        fh.write("\n".join(lines) + "\n")
        for (b1, b2), y, yr in zip(bits, frame.symbols, rx.samples):
            fh.write(f"{b1},{b2},{float(y)!r},{float(yr)!r}\n")


def load_dataset(path: str | Path) -> tuple[SymbolFrame, RxSamples]:
    meta: dict[str, str] = {}
    rows = []
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k] = v
            elif line.startswith("bit1"):
                continue
            elif line.strip():
                rows.append(line.strip().split(","))
    noise = meta.pop("noise_level_db")
    meta["alphabet"] = meta["alphabet"].split(",")
    params = LinkParams.from_dict(meta)
    arr = np.array(rows, dtype=float)
    frame = map_bits_to_pam4(arr[:, :2].astype(np.uint8).ravel(), params)
    if not np.allclose(frame.symbols, arr[:, 2]):
        raise ValueError("symbol column disagrees with bits")
    rx = RxSamples(arr[:, 3].copy(), None if noise == "None" else float(noise), params)
    return frame, rx
