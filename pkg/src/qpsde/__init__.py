"""qpsde: quasi-periodically forced SDEs, their pullback limits, entrance
laws, and invariant measures on the cylinder."""

__version__ = "0.1.0"
