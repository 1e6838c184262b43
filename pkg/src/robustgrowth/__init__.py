"""Robust growth-optimal portfolios on the simplex."""
