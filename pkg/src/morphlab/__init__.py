"""morphlab: desk-scale morph generation and FR vulnerability benchmark."""

__version__ = "0.1.0"
