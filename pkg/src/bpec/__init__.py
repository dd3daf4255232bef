"""Feedback-based network coding for the broadcast packet erasure channel."""

__version__ = "0.1.0"
