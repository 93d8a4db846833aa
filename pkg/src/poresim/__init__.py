"""Simulation of microbial decomposition on ball networks of soil pore space."""
