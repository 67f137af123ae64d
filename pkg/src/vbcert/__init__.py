"""Lyapunov certificates for value-based methods on finite MDPs.

Value computation is checked as a positive LTI system, value iteration as a
switched positive affine system and TD(0) with linear features as a Markov
jump linear system, each with closed-form LP/SDP certificates.
"""

__version__ = "0.1.0"
