"""hydrokam: numerical laboratory for singular diffusion on the torus,
its metric and entropy structure, optimal control, Carleman-type kinetic
particles, and effective-Hamiltonian cell problems."""

__version__ = "0.1.0"
