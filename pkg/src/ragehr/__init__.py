"""Knowledge-graph enhanced multimodal EHR prediction pipeline."""

__version__ = "0.1.0"
