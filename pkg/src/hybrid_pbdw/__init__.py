"""Hybrid PBDW state estimation with DeepONet-predicted updates on a dissipative Helmholtz problem."""
from .assimilation import (
    PbdwSolution,
    StabilityReport,
    UnobservableBackground,
    error_bound_check,
    gcv_select,
    inf_sup,
    metrics,
    pbdw,
    solve_saddle,
    solve_two_step,
)
from .field_core import (
    HelmholtzConfig,
    InnerProduct,
    Mesh,
    ResonanceError,
    assemble_inner_product,
    build_mesh,
    solve_helmholtz,
)
from .observation import Sensor, SensorSet, build_sensor_set, observe, random_placement
from .placement import compare_strategies, sgreedy
from .reduced_basis import BackgroundBasis, bind_sensors, generate_snapshots, pod

__version__ = "0.1.0"
