"""ensembleflow: continuous-coupled simulation ensembles.

Executes multi-model simulation workflows into ensemble (provenance)
graphs of alternative futures and extracts maximal, consistent, diverse
timelines from them.
"""

__version__ = "0.1.0"

from .core import (  # noqa: F401
    ContinuousDomain,
    DiscreteDomain,
    FlowEdge,
    FlowGraph,
    ModelSpec,
    ParameterSpec,
    ScopeDescriptor,
    SeriesWindow,
    VariableSpec,
    Violation,
    step_windows,
    validate_flow,
)
from .engine import (  # noqa: F401
    ExecutionPlan,
    RunConfig,
    align_inputs,
    compile_plan,
    execute_instance,
    run_ensemble,
)
from .registry import ModelRegistry  # noqa: F401
from .sampling import ParameterVector, SamplingPolicy, sample_instances  # noqa: F401
from .store import (  # noqa: F401
    DataEdge,
    EnsembleGraph,
    RunStore,
    SimulationInstance,
    load_run,
    save_run,
)
from .timeline import (  # noqa: F401
    DiversityConfig,
    PreferenceCriterion,
    Timeline,
    enumerate_timelines,
    extract_top_k,
    is_causally_closed,
    is_consistent,
    is_maximal,
    score_timeline,
    timeline_series,
)
