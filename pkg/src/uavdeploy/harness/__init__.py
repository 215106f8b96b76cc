"""Scenario runner, sweeps and command-line interface."""
