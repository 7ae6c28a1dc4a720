"""Quality-aware IoE service delivery with exact Shapley explanations."""

__version__ = "0.1.0"
