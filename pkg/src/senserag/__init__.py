"""SenseRAG engine: spatiotemporal environmental knowledge base with
proactive retrieval-augmented trajectory prediction."""

__version__ = "0.1.0"

from .records import (  # noqa: F401
    HarmonizedRecord,
    IntersectionRecord,
    PedestrianRecord,
    PhaseRecord,
    SignalState,
    SignType,
    StoreConfig,
    StructuredRef,
    Table,
    TrafficSignalRecord,
    TrafficSignRecord,
    VehicleClass,
    VehicleRecord,
    WeatherRecord,
)
from .store import InsertResult, KnowledgeStore, SpatioTemporalIndex  # noqa: F401
from .rag import (  # noqa: F401
    Arm,
    CycleConfig,
    PerceptionSnapshot,
    PredictionResult,
    PromptBundle,
    build_snapshot,
    combine,
    generate_query,
    predict,
    run_proactive_cycle,
)
from .evaluate import (  # noqa: F401
    ExperimentConfig,
    MetricReport,
    Scenario,
    ade,
    batch_ade_fde,
    emit_report,
    enumerate_scenarios,
    fde,
    run_experiment,
)
