"""Task-incremental continual learning for sensor-based activity recognition."""

from .benchmark import (ProtocolConfig, RunSummary, aggregate, f1_score, forgetting_score,
                        generate_task_sequences, run_benchmark, stratified_split, user_split)
from .data import LabeledDataset, gen_synthetic, load_feature_csv, save_feature_csv
from .network import Network, TrainConfig, init_network
from .strategies import STRATEGIES, StrategySpec, make_strategy

__version__ = "0.1.0"
