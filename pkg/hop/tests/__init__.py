SMALL_LEARNER = {"n_samples": 256, "dim": 4}
HOMOGENEOUS_TIMING = {"base_compute": 1.0, "net_latency": 0.01}
RANDOM_SLOWDOWN_TIMING = {"slowdowns": [{"kind": "random", "prob": 0.0625, "factor": 6.0}]}
FLOAT_HULL_TOLERANCE = 1e-12

# Fuzzing sizes; the acceptance campaigns use more seeds when HOP_FUZZ_SEEDS is set in the environment.
DEFAULT_FUZZ_SEEDS = 4
# Seeds averaged by the backup and staleness speedup experiments; HOP_SPEEDUP_SEEDS overrides it.
DEFAULT_SPEEDUP_SEEDS = 20
