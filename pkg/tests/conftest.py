import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fluencykit.audio import AudioBuffer

SR = 16000


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def sine_buffer(freq: float, duration: float = 1.0, sr: int = SR,
                amp: float = 1.0, uid: str = "sine") -> AudioBuffer:
    t = np.arange(int(duration * sr)) / sr
    return AudioBuffer(samples=amp * np.sin(2 * np.pi * freq * t), sample_rate=sr, id=uid)


def bursty_buffer(bursts, sr: int = SR, uid: str = "bursty", amp: float = 0.5,
                  lead: float = 0.3, tail: float = 0.3) -> AudioBuffer:
    """Noise bursts: list of (duration_s, gap_after_s)."""
    rng = np.random.default_rng(99)
    pieces = [np.zeros(int(lead * sr))]
    for dur, gap in bursts:
        pieces.append(amp * rng.uniform(-1, 1, int(dur * sr)))
        pieces.append(np.zeros(int(gap * sr)))
    pieces.append(np.zeros(int(tail * sr)))
    return AudioBuffer(samples=np.concatenate(pieces), sample_rate=sr, id=uid)
