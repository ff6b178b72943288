import json
import os
import tempfile

from django.test import SimpleTestCase

from hop import __version__
from hop.core.errors import MetricsError, TraceParseError
from hop.core.metrics import ADVANCE, LOSS, MetricsLog, iteration_speed, iterations_to_target, jump_event, speedup_ratio, time_to_target
from hop.core.simnet import run_simulation
from hop.core.verify import verify_bounds, verify_trace
from hop.tests import HOMOGENEOUS_TIMING
from hop.tests.utils import make_manifest

RING16 = {"kind": "ring", "n": 16}


def two_worker_log():
    log = MetricsLog(n_workers=2)
    for worker in range(2):
        log.record(0.0, worker, ADVANCE, 0, gap=0)
    log.record(2.0, 0, ADVANCE, 1, gap=1)
    log.record(4.0, 1, jump_event(0, 3), 3, gap=2)
    log.record(5.0, 0, ADVANCE, 2, gap=1)
    log.end_time = 10.0
    return log


class TestMetricsLog(SimpleTestCase):
    def test_csv_layout(self):
        lines = two_worker_log().to_csv().splitlines()
        self.assertEqual(lines[0], f"# hop-sim {__version__} metrics format 1")
        self.assertEqual(lines[1], "time,worker,event,iter,loss,gap")
        self.assertEqual(lines[4], "2,0,ADVANCE,1,,1")
        self.assertEqual(lines[5], "4,1,\"JUMP(0,3)\",3,,2")

    def test_max_gap(self):
        self.assertEqual(two_worker_log().max_gap, 2)

    def test_iteration_speed(self):
        speed = iteration_speed(two_worker_log())
        self.assertEqual(speed.per_worker, [0.2, 0.3])
        self.assertAlmostEqual(speed.global_speed, 0.25)
        self.assertAlmostEqual(iteration_speed(two_worker_log(), window=(1.0, 5.0), workers=[0]).global_speed, 0.5)

    def test_speedup_of_itself(self):
        log = two_worker_log()
        self.assertEqual(speedup_ratio(log, log), 1.0)

    def test_empty_window(self):
        with self.assertRaises(MetricsError):
            iteration_speed(two_worker_log(), window=(3.0, 3.0))

    def test_worker_without_records(self):
        log = MetricsLog(n_workers=1)
        log.end_time = 1.0
        with self.assertRaises(MetricsError):
            iteration_speed(log)

    def test_loss_targets(self):
        log = two_worker_log()
        log.record(0.0, -1, LOSS, 0, loss=0.7)
        log.record(3.0, -1, LOSS, 1, loss=0.4)
        log.record(6.0, -1, LOSS, 2, loss=0.3)
        self.assertEqual(time_to_target(log, 0.4), 3.0)
        self.assertEqual(iterations_to_target(log, 0.35), 2)
        self.assertIsNone(time_to_target(log, 0.1))

    def test_summary(self):
        summary = json.loads(run_simulation(make_manifest({"kind": "ring", "n": 4}, timing=HOMOGENEOUS_TIMING)).summary_json())
        self.assertEqual(summary["final_iters"], [20] * 4)
        self.assertEqual(summary["bound"], 2)
        self.assertAlmostEqual(summary["iters_per_sec"]["global"], 1.0)
        self.assertEqual(summary["version"], __version__)
        self.assertAlmostEqual(summary["spectral_gap"], 2 / 3, places=9)


class TestVerify(SimpleTestCase):
    def test_standard_trace_is_within_bounds(self):
        manifest = make_manifest(RING16, timing={"compute_jitter": {"kind": "uniform", "spread": 0.8}, "slowdowns": [{"kind": "random", "factor": 6.0}]})
        report = verify_trace(run_simulation(manifest).to_csv(), manifest)
        self.assertTrue(report.ok)
        self.assertGreater(report.rows_replayed, 16 * 20)
        self.assertTrue(all(pair.max_gap <= pair.bound for pair in report.pairs))
        self.assertEqual(report.pair(0, 8).bound, 8)

    def test_corrupted_trace_names_the_pair(self):
        manifest = make_manifest(RING16, timing=HOMOGENEOUS_TIMING)
        text = run_simulation(manifest).to_csv() + "999,0,ADVANCE,29,,\n"
        report = verify_trace(text, manifest)
        self.assertFalse(report.ok)
        self.assertTrue(any(v.i == 0 and v.j == 8 and v.gap == 9 and v.bound == 8 for v in report.violations))
        self.assertIn("pair (0, ", report.describe())

    def test_notify_ack_adjacent_gaps(self):
        manifest = make_manifest({"kind": "ring", "n": 8}, policy={"mode": "notify_ack"}, timing={"compute_jitter": {"kind": "uniform", "spread": 0.9}, "latency_jitter": 0.9})
        report = verify_trace(run_simulation(manifest).to_csv(), manifest)
        self.assertTrue(report.ok)
        for i in range(8):
            j = (i + 1) % 8
            self.assertLessEqual(report.pair(i, j).max_gap, 1)
            self.assertLessEqual(report.pair(j, i).max_gap, 1)

    def test_unbounded_pairs(self):
        manifest = make_manifest({"kind": "complete", "n": 3}, policy={"mode": "backup", "n_buw": 1, "allow_unbounded": True}, timing={"frozen": [0]})
        report = verify_trace(run_simulation(manifest).to_csv(), manifest)
        self.assertTrue(report.ok)
        self.assertIsNone(report.pair(1, 0).bound)
        self.assertEqual(report.pair(1, 0).max_gap, 20)

    def test_parse_errors(self):
        manifest = make_manifest({"kind": "ring", "n": 4})
        header = f"# hop-sim {__version__} metrics format 1\ntime,worker,event,iter,loss,gap\n"
        for text in (
            "",
            "time,worker,event,iter,loss,gap\n",
            f"# hop-sim {__version__} metrics format 2\ntime,worker,event,iter,loss,gap\n",
            f"# hop-sim {__version__} metrics format 1\ntime,worker,iter\n",
            header + "0,0,ADVANCE,x,,0\n",
            header + "0,zero,ADVANCE,1,,0\n",
            header + "0,0,ADVANCE,1\n",
            header + "0,7,ADVANCE,1,,0\n",
            header + "0,0,\"JUMP(0,x)\",3,,0\n",
            header + "0,0,\"JUMP(0,4)\",3,,0\n",
        ):
            with self.subTest(text=text):
                with self.assertRaises(TraceParseError):
                    verify_trace(text, manifest)

    def test_other_events_are_skipped(self):
        manifest = make_manifest({"kind": "ring", "n": 4})
        text = f"# hop-sim {__version__} metrics format 1\ntime,worker,event,iter,loss,gap\n0,-1,LOSS,0,0.69,\n1,2,SEND,0,,\n"
        self.assertEqual(verify_trace(text, manifest).rows_replayed, 0)

    def test_verify_bounds_reads_the_file(self):
        manifest = make_manifest({"kind": "ring", "n": 4})
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "metrics.csv")
            with open(path, "w", encoding="utf-8") as f:
                f.write(run_simulation(manifest).to_csv())
            self.assertTrue(verify_bounds(path, manifest).ok)
            with self.assertRaises(TraceParseError):
                verify_bounds(os.path.join(directory, "missing.csv"), manifest)
