DOUBLY_STOCHASTIC_TOLERANCE: float = 1e-9
EIGEN_TOLERANCE: float = 1e-8
DENSE_EIGEN_MAX_N: int = 64
CSV_FLOAT_FORMAT: str = ".17g"

METRICS_FORMAT_VERSION: int = 1
METRICS_COLUMNS: tuple = ("time", "worker", "event", "iter", "loss", "gap")
QUEUE_TRACE_COLUMNS: tuple = ("time", "op", "owner", "peer", "iter", "slot", "count_after")
COMPARISON_COLUMNS: tuple = ("kind", "name", "iters_per_sec", "time_to_target", "final_loss", "max_gap", "spectral_gap", "speedup")
METRICS_FILE_NAME: str = "metrics.csv"
SUMMARY_FILE_NAME: str = "summary.json"
QUEUE_TRACE_FILE_NAME: str = "queue_trace.csv"
COMPARISON_FILE_NAME: str = "comparison.csv"
VERIFY_REPORT_FILE_NAME: str = "verify_report.json"
AVERAGED_WORKER: int = -1

DEFAULT_N_SAMPLES: int = 2048
DEFAULT_DIM: int = 10
DEFAULT_BATCH_SIZE: int = 32
DEFAULT_LEARNING_RATE: float = 0.05
DEFAULT_MOMENTUM: float = 0.9
DEFAULT_WEIGHT_DECAY: float = 1e-4
DEFAULT_LABEL_NOISE: float = 0.05
DEFAULT_MARGIN: float = 0.5
ORACLE_GRAD_TOLERANCE: float = 1e-8
ORACLE_MAX_ITERATIONS: int = 100_000

DEFAULT_BASE_COMPUTE: float = 1.0
DEFAULT_NET_LATENCY: float = 0.01
DEFAULT_APPLY_TIME: float = 0.01
DEFAULT_LOSS_INTERVAL: float = 10.0
DEFAULT_SEED: int = 0
DEFAULT_TRIGGER_LAG: int = 1

DEFAULT_OUTPUT_DIR: str = "hop_output"
DEFAULT_RUNTIME_ASSERTS: bool = True
DEFAULT_STRICT_REORDER: bool = False
DEFAULT_SUITE_WORKERS: int = 4
TRACE_TAIL_LENGTH: int = 20

EXIT_CONFIG_ERROR: int = 2
EXIT_DEADLOCK: int = 3
EXIT_INVARIANT_VIOLATION: int = 4
EXIT_DIVERGENCE: int = 5
EXIT_BOUND_VIOLATION: int = 6
EXIT_TRACE_PARSE_ERROR: int = 7
EXIT_SUITE_FAILURE: int = 8
