"""Cluster kinetics toolkit."""
