from simulation.baseline import sliding_window_baseline, sliding_window_precision
from simulation.generator import ObservationModel, SimConfig, SimTruth, SpuriousKind, generate
from simulation.prewhiten import prewhiten, prewhiten_report, whiten_series
from simulation.topology import Topology, TopologyKind, draw_support
