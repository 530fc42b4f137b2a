"""Distributionally robust nonlinear MPC by risk-auto-tuned iLEQG."""

__version__ = "0.1.0"
