"""Bulk-synchronous parameter-server baseline, simulated in the same virtual time as the decentralized engine."""
import logging
from typing import Optional

import numpy as np

from hop.core.config import RunManifest
from hop.core.constants import AVERAGED_WORKER
from hop.core.learners import BatchSampler, build_datasets, evaluate_loss, loss_grad, sgd_update
from hop.core.metrics import ADVANCE, LOSS, MetricsLog
from hop.core.timing import sample_iteration_time

logger = logging.getLogger(__name__)


def run_ps_bsp(manifest: RunManifest, *, seed: Optional[int] = None) -> MetricsLog:
    """
    Every round, each worker pulls the global parameters, computes one gradient and pushes it; the server averages
    the ``n`` gradients and applies a single SGD step. A round lasts the slowest worker's compute time plus a round
    trip to the server, plus the server's apply time.

    Workers share the batch schedule and compute-time streams of the decentralized engine for the same seed.
    """
    seed = manifest.seed if seed is None else seed
    n = manifest.topology.worker_count
    learner, timing, stop = manifest.learner, manifest.timing, manifest.stop
    sgd = learner.sgd
    train_set, eval_set = build_datasets(learner, seed)
    sampler = BatchSampler(learner.n_samples, n, seed)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence([seed, 1]).spawn(n)]
    latency = timing.ps_latency if timing.ps_latency is not None else timing.net_latency

    params = np.zeros(learner.dim + 1)
    buf = np.zeros_like(params)
    log = MetricsLog(n_workers=n)
    log.gap_bound = 0
    now = 0.0
    rounds = 0
    for worker in range(n):
        log.record(now, worker, ADVANCE, 0, gap=0)
    log.record(now, AVERAGED_WORKER, LOSS, 0, loss=evaluate_loss(learner.model, params, eval_set, sgd.weight_decay))
    logger.info("Starting PS-BSP baseline %s with %d workers, seed %d.", manifest.name, n, seed)
    if timing.frozen:
        log.stall = {"time": now, "frozen": sorted(timing.frozen), "iterations": [0] * n}
    while not timing.frozen and (stop.max_iter is None or rounds < stop.max_iter):
        duration = max(sample_iteration_time(w, rounds, timing, rngs[w], n) + 2.0 * latency for w in range(n)) + timing.apply_time
        if stop.max_time is not None and now + duration > stop.max_time:
            now = stop.max_time
            break
        now += duration
        grads = []
        for worker in range(n):
            batch = sampler.next_batch(worker, sgd.batch_size)
            grads.append(loss_grad(learner.model, params, train_set.features[batch], train_set.labels[batch], sgd.weight_decay)[1])
        params, buf = sgd_update(params, buf, np.mean(np.stack(grads), axis=0), sgd)
        rounds += 1
        for worker in range(n):
            log.record(now, worker, ADVANCE, rounds, gap=0)
        log.record(now, AVERAGED_WORKER, LOSS, rounds, loss=evaluate_loss(learner.model, params, eval_set, sgd.weight_decay))
    log.end_time = now
    log.final_iters = [rounds] * n
    log.final_params = params
    log.final_loss = evaluate_loss(learner.model, params, eval_set, sgd.weight_decay)
    logger.info("Finished PS-BSP baseline %s at t=%g after %d rounds, loss %.6g.", manifest.name, now, rounds, log.final_loss)
    return log
