"""Synthetic speech-like signals, radix-2 FFT, STFT log-power features and datasets."""
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from lossmix import kernels
from lossmix.samples import SamplePair

NOISE_KINDS = ("white", "pink", "tonal")


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 64
    hop: int = 32
    window: str = "hann"

    def __post_init__(self):
        if self.n_fft < 8 or self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two >= 8, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft or self.n_fft % self.hop:
            raise ValueError(f"hop must divide n_fft and lie in (0, n_fft], got {self.hop}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self):
        return self.n_fft // 2


@dataclass(frozen=True)
class Spectrogram:
    log_power: np.ndarray  # (frames, bins), dB
    config: StftConfig


def fft(x, inverse=False):
    """Radix-2 FFT along the last axis. Length must be a power of two."""
    x = np.asarray(x)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    rows = np.array(x, dtype=np.complex128, copy=True).reshape(-1, n)
    if n > 1:
        kernels.fft_rows(rows, inverse)
    return rows.reshape(x.shape)


def hann(n):
    """Periodic Hann window."""
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def _rng(seed):
    return np.random.default_rng(seed)


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def synth_clean(seed, duration=0.5, sample_rate=8000, n_harmonics=6):
    """Harmonic stack with a random 80-300 Hz fundamental and a slow envelope."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    rng = _rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(80.0, 300.0)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=max(n_harmonics, 1))
    env_rate = rng.uniform(1.0, 4.0)
    env_phase = rng.uniform(0.0, 2.0 * np.pi)
    x = np.zeros(n)
    for k in range(1, n_harmonics + 1):
        if k * f0 >= sample_rate / 2:
            break
        x += np.sin(2.0 * np.pi * k * f0 * t + phases[k - 1]) / k
    x *= 0.6 + 0.4 * np.sin(2.0 * np.pi * env_rate * t + env_phase)
    peak = np.max(np.abs(x)) if n else 0.0
    if peak > 0:
        x *= 0.9 / peak
    return Waveform(x, sample_rate)


def synth_noise(seed, duration=0.5, sample_rate=8000, kind="white"):
    """Unit-RMS noise: white Gaussian, 1/f (pink) or a single random tone."""
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    rng = _rng(seed)
    n = int(round(duration * sample_rate))
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        m = 1 << max(n - 1, 1).bit_length()
        spec = fft(rng.standard_normal(m))
        k = np.arange(m)
        fold = np.minimum(k, m - k).astype(np.float64)
        scale = np.zeros(m)
        scale[1:] = 1.0 / np.sqrt(fold[1:])
        x = fft(spec * scale, inverse=True).real[:n]
    else:
        f = rng.uniform(200.0, 0.4 * sample_rate)
        t = np.arange(n) / sample_rate
        x = np.sin(2.0 * np.pi * f * t + rng.uniform(0.0, 2.0 * np.pi))
    return Waveform(x / _rms(x), sample_rate)


def mix_at_snr(s, n, snr_db):
    """x = s + g * n with g set so that the speech-to-noise ratio is ``snr_db``."""
    if len(s) != len(n) or s.sample_rate != n.sample_rate:
        raise ValueError(f"speech ({len(s)} @ {s.sample_rate} Hz) and noise "
                         f"({len(n)} @ {n.sample_rate} Hz) must match")
    if not math.isfinite(snr_db):
        raise ValueError(f"snr_db must be finite, got {snr_db}")
    ps = np.mean(np.square(s.samples))
    pn = np.mean(np.square(n.samples))
    if ps == 0:
        raise ValueError("speech signal is silent; SNR undefined")
    if pn == 0:
        raise ValueError("noise signal is silent; SNR undefined")
    g = math.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))
    return Waveform(s.samples + g * n.samples, s.sample_rate)


def n_frames(n_samples, cfg):
    return (n_samples - cfg.n_fft) // cfg.hop + 1


def stft_log_power(x, cfg=StftConfig(), floor_db=-80.0):
    """Framed periodic-Hann power spectrum in dB, Nyquist bin dropped.

    Cells are clamped at ``floor_db`` below the clip's peak cell power (or
    at ``floor_db`` itself for an all-zero clip).
    """
    samples = x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)
    if len(samples) < cfg.n_fft:
        raise ValueError(f"signal of {len(samples)} samples is shorter than one "
                         f"{cfg.n_fft}-point frame")
    t = n_frames(len(samples), cfg)
    idx = cfg.hop * np.arange(t)[:, None] + np.arange(cfg.n_fft)
    frames = samples[idx] * hann(cfg.n_fft)
    spec = fft(frames)[:, : cfg.n_bins]
    power = spec.real ** 2 + spec.imag ** 2
    peak = power.max()
    if peak <= 0:
        return Spectrogram(np.full((t, cfg.n_bins), float(floor_db)), cfg)
    floor = 10.0 * math.log10(peak) + floor_db
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(power)
    return Spectrogram(np.maximum(db, floor), cfg)


@dataclass
class DataConfig:
    n_pairs: int = 64
    n_test: int = 16
    snr_list: tuple = (0.0, 5.0, 10.0, 15.0)
    seed: int = 0
    duration: float = 0.5
    sample_rate: int = 8000
    n_harmonics: int = 6
    n_fft: int = 64
    hop: int = 32
    floor_db: float = -80.0
    val_fraction: float = 0.1
    train_noise: tuple = ("white", "pink")
    test_noise: tuple = ("tonal",)

    def __post_init__(self):
        self.snr_list = tuple(float(v) for v in self.snr_list)
        self.train_noise = tuple(self.train_noise)
        self.test_noise = tuple(self.test_noise)
        if self.n_pairs < 2:
            raise ValueError("n_pairs must be at least 2")
        if not self.snr_list:
            raise ValueError("snr_list must not be empty")
        if set(self.train_noise) & set(self.test_noise):
            raise ValueError("train and test noise kinds must be disjoint")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    @property
    def stft(self):
        return StftConfig(self.n_fft, self.hop)

    def to_dict(self):
        d = asdict(self)
        for k in ("snr_list", "train_noise", "test_noise"):
            d[k] = list(d[k])
        return d


@dataclass
class Dataset:
    train: list
    val: list
    test: list
    config: DataConfig = field(default_factory=DataConfig)

    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def _derived_seed(seed, *key):
    return int(np.random.SeedSequence([seed, *key]).generate_state(1)[0])


def make_pair(cfg, index, split_key, noise_kinds):
    clean_seed = _derived_seed(cfg.seed, split_key, index, 0)
    noise_seed = _derived_seed(cfg.seed, split_key, index, 1)
    snr = cfg.snr_list[index % len(cfg.snr_list)]
    kind = noise_kinds[index % len(noise_kinds)]
    s = synth_clean(clean_seed, cfg.duration, cfg.sample_rate, cfg.n_harmonics)
    n = synth_noise(noise_seed, cfg.duration, cfg.sample_rate, kind)
    x = mix_at_snr(s, n, snr)
    return SamplePair(stft_log_power(x, cfg.stft, cfg.floor_db).log_power,
                      stft_log_power(s, cfg.stft, cfg.floor_db).log_power,
                      snr, kind, clean_seed)


def make_dataset(cfg=None):
    """Deterministic train/val/test splits; test noise kinds and seeds differ from training."""
    cfg = cfg or DataConfig()
    pool = [make_pair(cfg, i, 0, cfg.train_noise) for i in range(cfg.n_pairs)]
    test = [make_pair(cfg, i, 1, cfg.test_noise) for i in range(cfg.n_test)]
    order = np.random.default_rng(_derived_seed(cfg.seed, 2)).permutation(cfg.n_pairs)
    n_val = int(math.ceil(cfg.val_fraction * cfg.n_pairs)) if cfg.val_fraction > 0 else 0
    n_val = min(n_val, cfg.n_pairs - 1)
    val_idx = set(order[:n_val].tolist())
    train = [p for i, p in enumerate(pool) if i not in val_idx]
    val = [p for i, p in enumerate(pool) if i in val_idx]
    return Dataset(train, val, test, cfg)
