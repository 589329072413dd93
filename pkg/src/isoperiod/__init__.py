"""Numerical laboratory for periods of closed Hamiltonian flows.

Library layout:

- :mod:`isoperiod.systems` -- catalog of Hamiltonian systems and the
  Lotka-Volterra coordinate machinery;
- :mod:`isoperiod.integrate` -- fixed-step symplectic integrators;
- :mod:`isoperiod.period` -- minimal-period detection, quadrature oracles,
  iso-energy surveys;
- :mod:`isoperiod.semiclassical` -- 1D Schrodinger discretization,
  eigenvalue windows and the lattice-vs-dense difference-spectrum verdict;
- :mod:`isoperiod.recipes` -- pre-registered experiment recipes;
- :mod:`isoperiod.cli` -- the ``isoperiod`` command-line front end.
"""

__version__ = "0.1.0"
