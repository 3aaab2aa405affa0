"""Uniform spanning trees and loop-erased random walks on Z^2."""
from .lattice import Ball, Box, LatticePath, LatticePoint, PointSet, neighbors
from .rng import RandomSource
from .ust import FiniteGraph, TreeWindow, sample_ust_box, sample_ust_window, wilson_finite
from .walker import StopRule, loop_erase, sample_infinite_lerw, sample_lerw, srw_until

__version__ = "0.1.0"

__all__ = [
    "Ball", "Box", "FiniteGraph", "LatticePath", "LatticePoint", "PointSet", "RandomSource",
    "StopRule", "TreeWindow", "loop_erase", "neighbors", "sample_infinite_lerw", "sample_lerw",
    "sample_ust_box", "sample_ust_window", "srw_until", "wilson_finite",
]
