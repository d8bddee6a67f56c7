# core/__init__.py
"""Sound genomes, rendering, features, reference store, projection, fitness, archive and run engine."""
