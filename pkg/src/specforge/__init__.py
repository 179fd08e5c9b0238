"""Protocol specifications to executable I/O grammars, tested against live servers."""

__version__ = "0.1.0"
