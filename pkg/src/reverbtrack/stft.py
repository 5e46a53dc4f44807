"""Time-frequency analysis/synthesis and log-magnitude extraction.

Default geometry: 32 ms frames, 8 ms increment, 16 kHz, no zero padding.
A periodic square-root raised-cosine window is applied at both analysis
and synthesis so that 75% overlap satisfies constant overlap-add.
"""

from dataclasses import dataclass, field

import numpy as np

MAG_FLOOR_REL = 1e-10
MAG_FLOOR_ABS = 1e-12


class StftError(ValueError):
    pass


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio contains non-finite samples")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass
class AnalysisConfig:
    frame_length: float = 0.032
    frame_increment: float = 0.008
    window: str = "sqrt_hann"
    fft_size: int | None = None

    def frame_samples(self, sample_rate):
        return int(round(self.frame_length * sample_rate))

    def hop_samples(self, sample_rate):
        return int(round(self.frame_increment * sample_rate))

    def n_fft(self, sample_rate):
        return self.fft_size if self.fft_size is not None else self.frame_samples(sample_rate)

    def make_window(self, sample_rate):
        n = self.frame_samples(sample_rate)
        if self.window == "sqrt_hann":
            # periodic Hann; sqrt applied so analysis*synthesis = Hann
            hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
            return np.sqrt(hann)
        if self.window == "rect":
            return np.ones(n)
        raise ValueError(f"unknown window {self.window!r}")

    def check_cola(self, sample_rate, tol=1e-6):
        """Verify that the squared window overlap-adds to a constant."""
        n = self.frame_samples(sample_rate)
        hop = self.hop_samples(sample_rate)
        if hop <= 0 or hop > n:
            raise StftError("need 0 < frame_increment <= frame_length")
        w2 = self.make_window(sample_rate) ** 2
        acc = np.zeros(3 * n)
        for start in range(0, 2 * n + 1, hop):
            acc[start:start + n] += w2
        interior = acc[n:2 * n]
        ripple = (interior.max() - interior.min()) / interior.mean()
        if ripple > tol:
            raise StftError(f"window/overlap pair violates COLA (ripple {ripple:.2e})")
        return interior.mean()


@dataclass
class SpectralFrames:
    frames: np.ndarray  # complex, (T, K)
    config: AnalysisConfig
    sample_rate: int = 16000

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def n_bins(self):
        return self.frames.shape[1]

    def magnitude(self):
        return floored_magnitude(self.frames)

    def log_magnitude(self):
        return log_magnitude(self)


def floored_magnitude(frames):
    """|X| floored per frame: max(|X|, 1e-10 * frame max, 1e-12)."""
    mag = np.abs(frames)
    frame_max = mag.max(axis=-1, keepdims=True)
    return np.maximum(mag, np.maximum(MAG_FLOOR_REL * frame_max, MAG_FLOOR_ABS))


def stft(audio: AudioBuffer, config: AnalysisConfig | None = None) -> SpectralFrames:
    config = config or AnalysisConfig()
    fs = audio.sample_rate
    n = config.frame_samples(fs)
    hop = config.hop_samples(fs)
    config.check_cola(fs)
    x = audio.samples
    if len(x) < n:
        raise StftError(f"audio ({len(x)} samples) shorter than one frame ({n})")
    n_fft = config.n_fft(fs)
    win = config.make_window(fs)
    n_frames = (len(x) - n) // hop + 1
    idx = np.arange(n)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = np.fft.rfft(x[idx] * win, n_fft, axis=1)
    return SpectralFrames(frames, config, fs)


def istft(spec: SpectralFrames, config: AnalysisConfig | None = None) -> AudioBuffer:
    config = config or spec.config
    fs = spec.sample_rate
    n = config.frame_samples(fs)
    hop = config.hop_samples(fs)
    n_fft = config.n_fft(fs)
    if spec.n_bins != n_fft // 2 + 1:
        raise StftError(
            f"frame bins ({spec.n_bins}) do not match config fft size ({n_fft})"
        )
    win = config.make_window(fs)
    frames = np.fft.irfft(spec.frames, n_fft, axis=1)[:, :n] * win
    t = spec.n_frames
    out = np.zeros((t - 1) * hop + n)
    norm = np.zeros_like(out)
    w2 = win * win
    for i in range(t):
        out[i * hop:i * hop + n] += frames[i]
        norm[i * hop:i * hop + n] += w2
    out /= np.maximum(norm, 1e-8)
    return AudioBuffer(out, fs)


def log_magnitude(spec: SpectralFrames) -> np.ndarray:
    """Natural log of the floored magnitude; always finite."""
    return np.log(floored_magnitude(spec.frames))
