"""Numerically exact open-quantum-system dynamics via a hierarchy of
stochastic pure states, with bath energy flows, interaction energies and a
qubit Otto-engine harness on top.
"""

__version__ = "0.1.0"
