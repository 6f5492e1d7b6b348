"""Small and moderate counts in regenerative occupancy schemes with regularly varying Levy tails."""

__version__ = "0.1.0"
