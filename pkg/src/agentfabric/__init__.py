"""Deterministic simulator for a gossip-driven agent coordination fabric.

Subsystems: network topology, push gossip, trust diffusion, attribute
access policies, three-stage agent matching, task lifecycle, token
incentives and reputation, plus a scenario harness.
"""

__version__ = "0.1.0"
