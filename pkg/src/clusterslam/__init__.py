"""Semantic-cluster maps and planar-constrained bundle adjustment."""
