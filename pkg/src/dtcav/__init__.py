"""Concept discovery and TCAV scoring for cardiac MRI segmentation models."""

from .pipeline import Pipeline, PipelineConfig, run_pipeline

__all__ = ["Pipeline", "PipelineConfig", "run_pipeline"]
__version__ = "0.1.0"
