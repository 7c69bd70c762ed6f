from .commands import BenchResult, build_model, cmd_bench, cmd_fit, cmd_predict, cmd_sample
from .config import Config, ConfigError, parse_prior
from .data import DataError, DatasetTable, load_csv, load_idx, synthetic_classes, write_csv, write_idx
from .main import run

__all__ = [
    "BenchResult",
    "build_model",
    "cmd_bench",
    "cmd_fit",
    "cmd_predict",
    "cmd_sample",
    "Config",
    "ConfigError",
    "parse_prior",
    "DataError",
    "DatasetTable",
    "load_csv",
    "load_idx",
    "synthetic_classes",
    "write_csv",
    "write_idx",
    "run",
]
