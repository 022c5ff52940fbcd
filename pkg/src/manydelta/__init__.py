"""Simulation and verification toolkit for many-delta particle motions in the plane."""
