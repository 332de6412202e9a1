"""Layered-domain Helmholtz solver with a polarized-trace sweeping preconditioner.

The package is organized along the pipeline:

- ``grid``: 2D finite-difference Helmholtz operators with PML (global and per layer).
- ``partition``: layered domain decomposition and depth-index bookkeeping.
- ``local_solver``: per-layer direct factorizations, interface Green's blocks,
  Newton potentials, and volume reconstruction.
- ``trace_system``: the interface integral systems, their polarized completions,
  and the permuted D + R splitting.
- ``plr``: adaptive partitioned-low-rank compression of interface blocks.
- ``solver``: Gauss-Seidel sweeps, the preconditioner, GMRES, and the online solve.
- ``oracle``: independent 1D oracles used only by tests and the check command.
- ``media``: synthetic velocity models and the VM2D file format.
- ``cli``: configuration, orchestration, and CSV emission.
"""

__version__ = "0.1.0"
