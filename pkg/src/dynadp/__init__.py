"""Differentially private continual release of linear queries over update streams."""
from .core import (Dataset, Domain, ExactTracker, LinearQuery, Op, QueryClass, StreamStats, UpdateEvent,
                   combine, evaluate_query, parse_stream, read_stream, replay_exact, write_stream)
from .dynamic import FullyDynamicMechanism, NodeState, TwoStreamBaseline, level, query_node_set
from .errors import (AccountingError, ConfigError, DimensionError, DisjointnessViolation, DomainError,
                     DynaDPError, GenerationError, HorizonExceeded, InvalidStreamError, StateError,
                     UnderflowError)
from .harness import MechanismConfig, RunReport, WorkloadSpec, emit_report, gen_stream, parse_report, run_experiment
from .insertion import (BinaryTreeMechanism, HybridMechanism, InsertionOnlyMechanism, PrivatePartitioner,
                        dyadic_cover)
from .ledger import Budget, BudgetSeries, Declaration, LedgerNode, allocate_series, compose_parallel, compose_sequential
from .noise import Gaussian, Laplace, NoiseSource, sample_noise
from .static import GaussianMechanism, LaplaceMechanism, PMWMechanism, Release, make_static
from .svt import SvtInstance

__version__ = "0.1.0"
