"""Tile lattices, stopping forests and tile-operator decompositions on a finite dyadic grid."""
from __future__ import annotations

from .grid import Box, GridCube, ScaleError, WorkingBox
from .harness import (ExperimentConfig, Instance, Pipeline, Report, build_pipeline, calibrate,
                      generate_instance, load_config, run_appendix_suite, run_decay_suite,
                      run_structure_suite, run_suites)
from .operator import OperatorKit, OperatorMatrix, get_kernel, op_norm, vdc_bound
from .polyspace import PolyClass, PolyMismatchError, build_net, cube_norm, dim_q, norms
from .selection import Decomposition, PartitionError, SelectionParams, decompose
from .stopping import StoppingForest, StoppingParams, SupportDecayError, build_stopping_forest
from .tiles import LinearizingData, RegionError, TileLattice, TileParams, build_tile_lattice

__version__ = "0.1.0"

__all__ = [
    "Box", "GridCube", "ScaleError", "WorkingBox", "ExperimentConfig", "Instance", "Pipeline", "Report",
    "build_pipeline", "calibrate", "generate_instance", "load_config", "run_appendix_suite",
    "run_decay_suite", "run_structure_suite", "run_suites", "OperatorKit", "OperatorMatrix", "get_kernel",
    "op_norm", "vdc_bound", "PolyClass", "PolyMismatchError", "build_net", "cube_norm", "dim_q", "norms",
    "Decomposition", "PartitionError", "SelectionParams", "decompose", "StoppingForest", "StoppingParams",
    "SupportDecayError", "build_stopping_forest", "LinearizingData", "RegionError", "TileLattice",
    "TileParams", "build_tile_lattice",
]
