"""Quasi-geostrophic slab solver with Ekman pumping, plus estimate-verification tools."""

__version__ = "0.1.0"
