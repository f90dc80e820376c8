"""Replicated-system learning and constraint-satisfaction toolkit."""
