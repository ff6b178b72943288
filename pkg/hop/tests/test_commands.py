import csv
import json
import os
import tempfile
from io import StringIO

from django.core.management import CommandError, call_command
from django.test import SimpleTestCase

from hop.core.constants import (
    EXIT_BOUND_VIOLATION,
    EXIT_CONFIG_ERROR,
    EXIT_DIVERGENCE,
    EXIT_SUITE_FAILURE,
    EXIT_TRACE_PARSE_ERROR,
)
from hop.tests.utils import example_manifest_paths, get_examples_path

RING4 = {"kind": "ring", "n": 4}
SMALL = {"n_samples": 128, "dim": 3}


def write_json(directory, name, document):
    path = os.path.join(directory, name)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f)
    return path


def run_command(*args):
    out = StringIO()
    call_command("hop", *args, stdout=out)
    return out.getvalue()


class TestHopCommand(SimpleTestCase):
    def setUp(self):
        self._directory = tempfile.TemporaryDirectory()
        self.directory = self._directory.name

    def tearDown(self):
        self._directory.cleanup()

    def manifest(self, name="run", **fields):
        document = {"name": name, "topology": RING4, "learner": SMALL, "stop": {"max_iter": 10}}
        document.update(fields)
        return write_json(self.directory, f"{name}.json", document)

    def assertExitCode(self, code, *args):
        with self.assertRaises(CommandError) as cm:
            run_command(*args)
        self.assertEqual(cm.exception.returncode, code)
        return cm.exception

    def test_run_writes_artifacts(self):
        out_dir = os.path.join(self.directory, "out")
        output = run_command("run", self.manifest(), "--out-dir", out_dir)
        for name in ("metrics.csv", "summary.json"):
            self.assertTrue(os.path.exists(os.path.join(out_dir, name)))
        self.assertIn("iterations [10, 10, 10, 10]", output)
        with open(os.path.join(out_dir, "summary.json"), encoding="utf-8") as f:
            self.assertEqual(json.load(f)["final_iters"], [10] * 4)

    def test_run_writes_queue_trace(self):
        out_dir = os.path.join(self.directory, "out")
        run_command("run", self.manifest(policy={"token_gap": 2}, trace_queues=True), "--out-dir", out_dir)
        with open(os.path.join(out_dir, "queue_trace.csv"), encoding="utf-8") as f:
            self.assertEqual(f.readline().strip(), "time,op,owner,peer,iter,slot,count_after")

    def test_seed_override(self):
        path = self.manifest(timing={"compute_jitter": {"kind": "uniform", "spread": 0.5}})
        texts = []
        for seed in ("1", "1", "2"):
            out_dir = os.path.join(self.directory, f"out-{len(texts)}")
            run_command("run", path, "--seed", seed, "--out-dir", out_dir)
            with open(os.path.join(out_dir, "metrics.csv"), encoding="utf-8") as f:
                texts.append(f.read())
        self.assertEqual(texts[0], texts[1])
        self.assertNotEqual(texts[0], texts[2])

    def test_backup_without_tokens_is_a_configuration_error(self):
        error = self.assertExitCode(EXIT_CONFIG_ERROR, "run", self.manifest(policy={"mode": "backup", "n_buw": 1}))
        self.assertIn("token_gap", str(error))

    def test_zero_token_gap_is_a_configuration_error(self):
        self.assertExitCode(EXIT_CONFIG_ERROR, "run", self.manifest(policy={"token_gap": 0}))

    def test_invalid_topology_is_a_configuration_error(self):
        self.assertExitCode(EXIT_CONFIG_ERROR, "run", self.manifest(topology={"kind": "ring_based", "n": 5}), "--out-dir", self.directory)

    def test_divergence_exit_code(self):
        learner = {**SMALL, "model": "linear_mse", "sgd": {"lr": 1000.0}}
        self.assertExitCode(EXIT_DIVERGENCE, "run", self.manifest(learner=learner, stop={"max_iter": 500}), "--out-dir", self.directory)

    def test_verify(self):
        path = self.manifest()
        out_dir = os.path.join(self.directory, "out")
        run_command("run", path, "--out-dir", out_dir)
        metrics = os.path.join(out_dir, "metrics.csv")
        self.assertIn("within their bounds", run_command("verify", metrics, path))
        with open(os.path.join(out_dir, "verify_report.json"), encoding="utf-8") as f:
            self.assertTrue(json.load(f)["ok"])

    def test_verify_detects_violation(self):
        path = self.manifest()
        out_dir = os.path.join(self.directory, "out")
        run_command("run", path, "--out-dir", out_dir)
        metrics = os.path.join(out_dir, "metrics.csv")
        with open(metrics, "a", encoding="utf-8") as f:
            f.write("99,0,ADVANCE,14,,\n")
        report = os.path.join(self.directory, "report.json")
        error = self.assertExitCode(EXIT_BOUND_VIOLATION, "verify", metrics, path, "--report", report)
        self.assertIn("pair (0, ", str(error))
        with open(report, encoding="utf-8") as f:
            self.assertFalse(json.load(f)["ok"])

    def test_verify_malformed_trace(self):
        metrics = os.path.join(self.directory, "metrics.csv")
        with open(metrics, "w", encoding="utf-8") as f:
            f.write("time,worker,event\n")
        self.assertExitCode(EXIT_TRACE_PARSE_ERROR, "verify", metrics, self.manifest())

    def test_schema(self):
        document = json.loads(run_command("schema"))
        self.assertIn("manifest", document)
        out = os.path.join(self.directory, "schema.json")
        run_command("schema", "--out", out)
        self.assertTrue(os.path.exists(out))

    def test_suite(self):
        suite = write_json(
            self.directory,
            "suite.json",
            {
                "name": "small",
                "loss_target": 0.6,
                "output_dir": os.path.join(self.directory, "suite-out"),
                "runs": [
                    {"name": "standard", "topology": RING4, "learner": SMALL, "stop": {"max_time": 20.0}},
                    {"name": "backup", "topology": RING4, "learner": SMALL, "policy": {"mode": "backup", "n_buw": 1, "token_gap": 3}, "stop": {"max_time": 20.0}},
                    {"name": "ps", "baseline": "ps_bsp", "topology": RING4, "learner": SMALL, "stop": {"max_time": 20.0}},
                ],
                "comparisons": [{"name": "backup_over_standard", "numerator": "backup", "denominator": "standard"}],
            },
        )
        run_command("suite", suite, "--workers", "2")
        with open(os.path.join(self.directory, "suite-out", "comparison.csv"), encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([row["name"] for row in rows], ["standard", "backup", "ps", "backup_over_standard"])
        self.assertGreater(float(rows[-1]["speedup"]), 0.0)
        for name in ("standard", "backup", "ps"):
            self.assertTrue(os.path.exists(os.path.join(self.directory, "suite-out", name, "metrics.csv")))

    def test_suite_with_a_failing_run(self):
        learner = {**SMALL, "model": "linear_mse", "sgd": {"lr": 1000.0}}
        suite = write_json(
            self.directory,
            "suite.json",
            {
                "name": "failing",
                "runs": [
                    {"name": "good", "topology": RING4, "learner": SMALL, "stop": {"max_iter": 5}},
                    {"name": "diverging", "topology": RING4, "learner": learner, "stop": {"max_iter": 500}},
                ],
            },
        )
        out_dir = os.path.join(self.directory, "suite-out")
        error = self.assertExitCode(EXIT_SUITE_FAILURE, "suite", suite, "--out-dir", out_dir)
        self.assertIn("diverging", str(error))
        self.assertTrue(os.path.exists(os.path.join(out_dir, "comparison.csv")))

    def test_heterogeneous_graphs_suite(self):
        suite = os.path.join(get_examples_path(), "suites", "heterogeneous_graphs.json")
        out_dir = os.path.join(self.directory, "suite-out")
        run_command("suite", suite, "--out-dir", out_dir, "--workers", "3")
        with open(os.path.join(out_dir, "comparison.csv"), encoding="utf-8") as f:
            rows = {row["name"]: row for row in csv.DictReader(f)}
        self.assertEqual(
            list(rows), ["ring_based", "clustered", "machine_ring", "clustered_over_ring_based", "machine_ring_over_ring_based"]
        )
        self.assertAlmostEqual(float(rows["ring_based"]["spectral_gap"]), 0.5, places=9)
        self.assertEqual(rows["clustered"]["spectral_gap"], "")
        self.assertTrue(0.0 < float(rows["machine_ring"]["spectral_gap"]) < 1.0)
        self.assertEqual(rows["machine_ring_over_ring_based"]["spectral_gap"], "")
        summaries = {}
        for name in ("ring_based", "clustered", "machine_ring"):
            with open(os.path.join(out_dir, name, "summary.json"), encoding="utf-8") as f:
                summaries[name] = json.load(f)
        self.assertAlmostEqual(summaries["ring_based"]["spectral_gap"], 0.5, places=9)
        self.assertIsNone(summaries["clustered"]["spectral_gap"])
        self.assertEqual(summaries["machine_ring"]["spectral_gap"], float(rows["machine_ring"]["spectral_gap"]))

    def test_baseline_has_no_spectral_gap(self):
        out_dir = os.path.join(self.directory, "out")
        run_command("run", self.manifest(baseline="ps_bsp"), "--out-dir", out_dir)
        with open(os.path.join(out_dir, "summary.json"), encoding="utf-8") as f:
            self.assertIsNone(json.load(f)["spectral_gap"])

    def test_empty_suite(self):
        suite = write_json(self.directory, "suite.json", {"name": "empty", "runs": []})
        self.assertExitCode(EXIT_CONFIG_ERROR, "suite", suite, "--out-dir", self.directory)


class TestShippedExamples(SimpleTestCase):
    def test_examples_run_deterministically_and_verify(self):
        with tempfile.TemporaryDirectory() as directory:
            for path in example_manifest_paths():
                name = os.path.splitext(os.path.basename(path))[0]
                with self.subTest(example=name):
                    outputs = []
                    for attempt in range(2):
                        out_dir = os.path.join(directory, name, str(attempt))
                        run_command("run", path, "--out-dir", out_dir)
                        with open(os.path.join(out_dir, "metrics.csv"), encoding="utf-8") as f:
                            outputs.append(f.read())
                        with open(os.path.join(out_dir, "summary.json"), encoding="utf-8") as f:
                            outputs.append(f.read())
                    self.assertEqual(outputs[0], outputs[2])
                    self.assertEqual(outputs[1], outputs[3])
                    run_command("verify", os.path.join(directory, name, "0", "metrics.csv"), path)
