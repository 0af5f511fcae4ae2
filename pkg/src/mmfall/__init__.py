"""Multi-modal wearable fall detection: CNN + BiLSTM + self-attention, trained from scratch on numpy."""

__version__ = "0.1.0"
