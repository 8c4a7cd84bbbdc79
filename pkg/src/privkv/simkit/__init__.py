"""Synthetic workloads, serving simulation, probing attack and sweeps."""
