"""Capacities, transition times and variational principles for non-reversible
overdamped Langevin dynamics dX = -M grad U dt + sqrt(2 eps) K dW."""

__version__ = "0.1.0"
