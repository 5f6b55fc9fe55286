"""Speech fluency scoring: breath-group chunking, multi-source embedding
fusion and a CNN-BiLSTM classifier, with a batch CLI on top."""

__version__ = "0.1.0"
