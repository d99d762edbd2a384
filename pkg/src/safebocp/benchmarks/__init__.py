"""Benchmark problems: a 1-D synthetic task and MovieLens recommendation."""
