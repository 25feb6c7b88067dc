"""WAV and JSON plumbing."""

import json
import logging
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .activity import SAMPLE_RATE, Utterance
from .signal import Waveform

logger = logging.getLogger(__name__)

__all__ = ["read_wav", "write_wav", "load_json", "dump_json", "utterance_filename"]


def read_wav(path) -> Waveform:
    """Load a WAV file as float64 in [-1, 1], channels first."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    if data.ndim == 1:
        data = data[None, :]
    else:
        data = data.T
    return Waveform(data, rate)


def write_wav(path, waveform: Waveform) -> None:
    """Write 16-bit PCM, peak-normalising to 0.95 if the signal would clip."""
    samples = waveform.samples
    peak = np.abs(samples).max() if samples.size else 0.0
    if peak > 1.0:
        logger.warning(
            "peak amplitude %.3f would clip, normalising %s to 0.95", peak, path
        )
        samples = samples * (0.95 / peak)
    pcm = np.round(samples * 32767.0).astype(np.int16)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, waveform.sample_rate, pcm.T if pcm.shape[0] > 1 else pcm[0])


def load_json(path):
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)


def dump_json(obj, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(obj, handle, indent=2, sort_keys=True)
        handle.write("\n")


def utterance_filename(utterance: Utterance) -> str:
    """`<speaker>-<start_ms>_<end_ms>.wav` with millisecond boundaries."""
    start_ms = utterance.start_samples * 1000 // SAMPLE_RATE
    end_ms = utterance.end_samples * 1000 // SAMPLE_RATE
    return f"{utterance.speaker_id}-{start_ms}_{end_ms}.wav"
