"""Positive periodic solutions of a forced PER circadian model."""
