"""Hybrid lexicon/dense retrieval engine with learned term union."""

__version__ = "0.1.0"
