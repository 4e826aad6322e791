"""Inference and evaluation engine for a lightweight shuffle-unit YOLO-style defect detector."""

__version__ = "0.1.0"
