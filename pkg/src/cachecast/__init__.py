"""Cache-aided coded multicast toolkit.

Plans cache placement and flow rates for multicasting a stream of
correlated frames over a directed acyclic network, builds the matching
linear network code and per-cache update codecs, and simulates the
resulting transmissions round by round with exact cost accounting.
"""

__version__ = "0.1.0"

from .gf import FieldSpec, FMatrix, smallest_valid_prime  # noqa: F401
from .network import (  # noqa: F401
    CostFamily,
    Instance,
    Network,
    TopologyError,
    load_topology,
    load_topology_file,
)
from .fixtures import PRESET_B, load_fixture  # noqa: F401
from .lnc import EdgeDims, NetworkCode, build_code, symbol_min_cut  # noqa: F401
from .fnupd import UpdateCodec, build_codec, decode, encode  # noqa: F401
from .optimizer import (  # noqa: F401
    Placement,
    RelaxedProblem,
    SolveResult,
    SolverConfig,
    avg_kappa,
    round_placement,
    solve,
)
from .simulator import (  # noqa: F401
    CostLedger,
    SimResult,
    compare_scenarios,
    gen_frames,
    plan_dims,
    run,
)
