"""Whispered-speech recognition with CTC encoders, SpecAugment variants,
layer-wise transfer and pseudo-whisper data generation, in plain numpy."""

__version__ = "0.1.0"
