"""swarmstep: a batched, data-oriented swarm robotics simulator.

Homogeneous agents of each type are stepped as one columnar batch through
vectorized dynamics kernels; a central fixed-step loop fans agent state out
to an algorithm side, a collision detector, and a viewer over a small binary
socket protocol.
"""

__version__ = "0.1.0"
