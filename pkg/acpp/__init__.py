"""Attention-based post-processing for lossy image codec output."""
