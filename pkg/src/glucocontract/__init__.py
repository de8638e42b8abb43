"""Contraction-certified observer-based glucose control for type-1 diabetes."""
