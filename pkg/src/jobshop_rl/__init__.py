"""Learned greedy heuristics for job-shop scheduling, with exact baselines."""

__version__ = "0.1.0"
CHECKPOINT_FORMAT_VERSION = 1
