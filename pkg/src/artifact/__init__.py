"""LLM-driven analog circuit generation, simulation-backed verification and device sizing."""

__version__ = "0.1.0"
