"""Experiment harness: configuration, cost model, session runner, plot data."""
