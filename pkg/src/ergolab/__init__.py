"""Numerical laboratory for quantitative ergodicity of Markov processes.

Subpackages cover the full experimental pipeline: rate calculus for
subexponential bounds (:mod:`ergolab.rates`), smooth Lyapunov functions and
numeric generator application (:mod:`ergolab.lyapunov`), simulatable process
families (:mod:`ergolab.processes`), empirical Wasserstein distances
(:mod:`ergolab.wasserstein`), synchronous-coupling contraction estimates
(:mod:`ergolab.coupling`), matching lower bounds (:mod:`ergolab.lowerbound`),
rate transfer under random time change (:mod:`ergolab.subordination`), and a
command-line experiment driver (:mod:`ergolab.cli`).
"""

from __future__ import annotations

__version__ = "0.1.0"
