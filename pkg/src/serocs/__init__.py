"""Safe and efficient robot collaboration: prediction, registration, planning, safety and simulation."""

__version__ = "0.1.0"
