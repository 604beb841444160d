"""Audio-to-visual embedding alignment with a frozen visual expert, at desk scale."""

__version__ = "0.1.0"
