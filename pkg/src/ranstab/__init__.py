"""Load-balancing dynamics toolkit: an O-RAN-style RU load simulator,
sparse identification of the coupled load dynamics, and Gershgorin-based
cascade-stability certification."""

from .netmodel import (
    RadioParams,
    RuConfig,
    Topology,
    UeDemand,
    a3_trigger,
    channel_gain,
    prb_rate,
    required_prbs,
    rsrp_dbm,
    ru_load,
    sinr,
)
from .simulator import (
    PingPongEvent,
    PolicyParams,
    ScenarioConfig,
    default_scenario,
    detect_ping_pong,
    grid_topology,
    run_scenario,
)
from .stability import (
    StabilityReport,
    Tolerances,
    assemble_jacobian,
    beta_from_coupling,
    check_linearization,
    check_proposition1,
    coupling_matrix,
    gershgorin_check,
    max_eigenvalue,
    self_at,
    stabilize_policy,
)
from .store import TelemetryRow, TelemetrySeries, read_telemetry, window, write_telemetry
from .sysid import (
    IdentifiedModel,
    LibrarySpec,
    build_library,
    estimate_derivatives,
    fit_diagnostics,
    identify_network,
    simulate_model,
    sparse_regress,
)

__version__ = "0.1.0"
