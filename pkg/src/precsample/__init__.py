"""Precision-sampling linear sketches for norms, moments, sampling and cascaded norms."""
