"""Numerical laboratory for the boundary-singular Liouville equation on the unit disk."""
