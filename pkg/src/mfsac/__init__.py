"""Mean-field stochastic adaptive control for populations of LQG agents."""
__version__ = "0.1.0"
