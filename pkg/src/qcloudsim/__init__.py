"""Quantum-safe cloud key-exchange simulator.

A small state-vector simulator with Shor and Grover, polarization-photon
BB84, toy RSA and symmetric envelopes, and two key-distribution protocols
built on them: an RSA-identified QKD center and a Kerberos-style KDC with
quantum base comparison. ``qcloudsim.netsim`` runs seeded scenarios.
"""

__version__ = "0.1.0"
