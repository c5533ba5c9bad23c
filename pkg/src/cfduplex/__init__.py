"""Cell-free MIMO simulator for dynamic-TDD and full-duplex access points."""

__version__ = "0.1.0"
