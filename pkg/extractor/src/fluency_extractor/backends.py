"""Embedding and VAD backends.

The real backends pull frozen pretrained checkpoints (no fine-tuning); they
import torch/transformers lazily so the offline test path never needs them.
Anything implementing ``embed(samples) -> (matrix, hop_us, offset_us)`` or
``detect(samples) -> [(start_s, end_s), ...]`` can be injected instead.
"""

from __future__ import annotations

import numpy as np

SAMPLE_RATE = 16000

# checkpoint set is fixed; keys are the directory names the consumer expects
CHECKPOINTS = {
    "wav2vec2": "facebook/wav2vec2-large-960h-lv60-self",
    "hubert": "facebook/hubert-large-ls960-ft",
    "wavlm": "microsoft/wavlm-large",
}

# all three models stride 320 samples (20 ms) with a ~25 ms receptive field
FRAME_HOP_US = 20_000
FRAME_OFFSET_US = 12_500


class DownloadFailure(Exception):
    pass


class InferenceFailure(Exception):
    pass


class TransformersBackend:
    """Final-hidden-layer embeddings from a frozen checkpoint."""

    def __init__(self, checkpoint: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoFeatureExtractor, AutoModel
        except ImportError as exc:
            raise DownloadFailure(f"torch/transformers unavailable: {exc}") from exc
        self._torch = torch
        try:
            self.processor = AutoFeatureExtractor.from_pretrained(checkpoint)
            self.model = AutoModel.from_pretrained(checkpoint)
        except Exception as exc:
            raise DownloadFailure(f"cannot obtain {checkpoint}: {exc}") from exc
        self.model.eval().to(device)
        self.device = device

    def embed(self, samples: np.ndarray) -> tuple[np.ndarray, int, int]:
        torch = self._torch
        try:
            inputs = self.processor(
                samples, sampling_rate=SAMPLE_RATE, return_tensors="pt"
            )
            with torch.no_grad():
                out = self.model(inputs.input_values.to(self.device))
            matrix = out.last_hidden_state[0].cpu().numpy().astype(np.float32)
        except Exception as exc:
            raise InferenceFailure(str(exc)) from exc
        return matrix, FRAME_HOP_US, FRAME_OFFSET_US


class SileroVadBackend:
    """Speech timestamps from the pretrained silero-vad model."""

    def __init__(self, device: str = "cpu"):
        try:
            import torch
        except ImportError as exc:
            raise DownloadFailure(f"torch unavailable: {exc}") from exc
        self._torch = torch
        try:
            self.model, utils = torch.hub.load(
                "snakers4/silero-vad", "silero_vad", trust_repo=True
            )
        except Exception as exc:
            raise DownloadFailure(f"cannot obtain silero-vad: {exc}") from exc
        self._get_speech_timestamps = utils[0]
        self.model.to(device)
        self.device = device

    def detect(self, samples: np.ndarray) -> list[tuple[float, float]]:
        torch = self._torch
        try:
            wav = torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32))
            stamps = self._get_speech_timestamps(
                wav, self.model, sampling_rate=SAMPLE_RATE
            )
        except Exception as exc:
            raise InferenceFailure(str(exc)) from exc
        return [(s["start"] / SAMPLE_RATE, s["end"] / SAMPLE_RATE) for s in stamps]
