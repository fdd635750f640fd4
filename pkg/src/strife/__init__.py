"""Batch transaction execution by conflict-free clustering, with 2PL baselines."""

from .executor import BatchRun, PhaseMetrics, StrifeEngine, run_batch, run_stream
from .partition import Clustering, Mode, PartitionConfig, partition
from .pool import WorkerPool
from .protocols import PROTOCOLS, run_protocol
from .storage import Key, Storage
from .txn import READ, WRITE, Batch, Transaction

__all__ = [
    "READ",
    "WRITE",
    "PROTOCOLS",
    "Batch",
    "BatchRun",
    "Clustering",
    "Key",
    "Mode",
    "PartitionConfig",
    "PhaseMetrics",
    "Storage",
    "StrifeEngine",
    "Transaction",
    "WorkerPool",
    "partition",
    "run_batch",
    "run_protocol",
    "run_stream",
]
