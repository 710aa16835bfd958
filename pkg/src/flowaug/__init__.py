"""LSTM/KDE flow augmentation, FS-Embedding and a transformer flow classifier."""

__version__ = "0.1.0"
