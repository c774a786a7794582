"""Buck-converter feeders with constant power loads: models, stability analysis and simulation."""

__version__ = "0.1.0"
