"""Compliance assistant engine: corpus, hybrid retrieval, query agent."""

__version__ = "0.1.0"
