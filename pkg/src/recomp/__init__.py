"""Provenance-driven selective re-computation.

Record every execution of a white-box pipeline together with its provenance,
diff new versions of the reference datasets it depends on, and work out which
past executions those changes invalidate and from which step each one can be
re-run.
"""

from .engine import (
    ChangeEvent,
    RecompPlan,
    ScopeEntry,
    dependency_change,
    execute_plan,
    find_starting_component,
    input_change,
    plan,
    react,
    scope,
    scope_for_dependency_change,
    scope_for_input_change,
)
from .history import CostRecord, HistoryDB, HistoryRecord
from .pipeline import Executor, PipelineSpec, StepResult, StepSpec
from .prov import ProvDocument
from .store import DatasetVersion, DiffResult, Registry, VersionTag

__version__ = "0.1.0"
