"""Desk-scale experiments: training, variance probes, regret sweeps, benchmarks."""
