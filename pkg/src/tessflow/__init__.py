"""Radar tesseract scene-flow toolkit: simulator, FFT pipeline, model, losses and metrics."""

__version__ = "0.1.0"
