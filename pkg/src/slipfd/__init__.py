"""2D rigid particles in viscous flow with a Navier slip interface.

Least-squares/fictitious-domain discretization on two nonmatching meshes:
the flow is solved on the whole box and again on the particle, and a virtual
control drives the two solutions to agree on the particle.
"""

__version__ = "0.1.0"
