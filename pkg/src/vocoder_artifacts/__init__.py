"""Detection of vocoder artifacts in synthetic speech, built on numpy."""

__version__ = "0.1.0"
