"""Workbench for aligning robot trajectories with comparative language feedback.

A toy planar kitchen world produces trajectories with controllable features;
a shared latent space aligns them with comparative utterances; that space
drives iterative trajectory improvement and reward learning, benchmarked
against pairwise-comparison preference learning.
"""

__version__ = "0.1.0"
