"""Deterministic simulator of container-based service duplication.

Services are duplicated into containers by copying their service-database
entries under a renamed identity, placing the new process by a container
token in its start-up data, letting selected IPC objects cross back to the
host through an access-controlled table, and rewriting hard-coded service
names at run time.
"""

from .binscan import MockBinary, Occurrence, classify_callsite, parse_mock_binary, scan_binary
from .corpus import generate_corpus
from .duplication import DuplicationEngine, DuplicationPlan, duplicated_name, placement_decision
from .eventlog import EventLog
from .hio import HioTable, load_hio_table, match_hio, renaming_decision
from .namespace import HOST, CowStore, ResourceKind, ResourceName, rename_resource
from .scenario import Scenario, Simulation, parse_scenario, run_scenario
from .scm import ServiceControlManager, ServiceRecord, ServiceStatus, ServiceType, State

__version__ = "0.1.0"
