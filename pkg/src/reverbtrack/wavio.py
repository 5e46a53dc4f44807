"""16-bit PCM mono WAV input/output at 16 kHz."""

import wave

import numpy as np

from .stft import AudioBuffer


class WavFormatError(ValueError):
    pass


def read_wav(path, expected_rate=16000) -> AudioBuffer:
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise WavFormatError(f"{path}: need mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise WavFormatError(f"{path}: need 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        rate = wf.getframerate()
        if expected_rate is not None and rate != expected_rate:
            raise WavFormatError(
                f"{path}: sample rate {rate} unsupported, need {expected_rate} "
                "(resampling is out of scope)")
        data = wf.readframes(wf.getnframes())
    samples = np.frombuffer(data, dtype="<i2").astype(float) / 32768.0
    return AudioBuffer(samples, rate)


def write_wav(path, audio: AudioBuffer):
    pcm = np.clip(np.round(audio.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(pcm.tobytes())
