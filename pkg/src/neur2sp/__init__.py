"""Learned second-stage value surrogates for two-stage stochastic programs.

Pipeline: generate labeled (first-stage, scenario) data by solving
second-stage subproblems, train a per-scenario or scenario-set value
network, compile the trained network into a mixed-integer surrogate of the
full problem, solve it, and price the resulting first-stage decision
exactly against the scenarios.
"""

__version__ = "0.1.0"
