"""``manage.py hop``: run simulations and suites, audit traces and export the manifest schema."""
import json
import os

from django.core.management.base import BaseCommand, CommandError
from pydantic import ValidationError

from hop.core.config import load_manifest, load_suite, manifest_schema
from hop.core.constants import EXIT_CONFIG_ERROR, VERIFY_REPORT_FILE_NAME
from hop.core.errors import BoundViolationError, HopError
from hop.core.runner import run_manifest, run_suite
from hop.core.utils import atomic_write_text
from hop.core.verify import verify_bounds


def _exit_code(error: Exception) -> int:
    if isinstance(error, HopError):
        return error.exit_code
    return EXIT_CONFIG_ERROR


class Command(BaseCommand):
    help = "Run Hop protocol simulations, experiment suites and gap-bound audits."

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="action", required=True)

        run = subparsers.add_parser("run", help="Simulate one run manifest.")
        run.add_argument("manifest")
        self._add_run_options(run)

        suite = subparsers.add_parser("suite", help="Run every manifest of a suite and write comparison.csv.")
        suite.add_argument("suite")
        self._add_run_options(suite)
        suite.add_argument("--workers", type=int, default=None, help="Threads running suite members.")

        verify = subparsers.add_parser("verify", help="Check a metrics.csv trace against the gap bounds of its manifest.")
        verify.add_argument("metrics")
        verify.add_argument("manifest")
        verify.add_argument("--report", default=None, help=f"Where to write the JSON report (default: {VERIFY_REPORT_FILE_NAME} next to the trace).")

        schema = subparsers.add_parser("schema", help="Print the JSON schema of manifests and suites.")
        schema.add_argument("--out", default=None)

    @staticmethod
    def _add_run_options(parser):
        parser.add_argument("--seed", type=int, default=None, help="Overrides the manifest seed.")
        parser.add_argument("--out-dir", dest="out_dir", default=None)
        parser.add_argument("--no-runtime-asserts", dest="runtime_asserts", action="store_false", default=None)
        parser.add_argument("--strict-reorder", dest="strict_reorder", action="store_true", default=None)

    def handle(self, *args, **options):
        action = options["action"]
        try:
            getattr(self, f"_handle_{action}")(options)
        except (HopError, ValidationError) as e:
            raise CommandError(str(e), returncode=_exit_code(e)) from e

    def _handle_run(self, options):
        manifest = load_manifest(options["manifest"])
        result = run_manifest(
            manifest,
            seed=options["seed"],
            out_dir=options["out_dir"],
            runtime_asserts=options["runtime_asserts"],
            strict_reorder=options["strict_reorder"],
        )
        log = result.log
        self.stdout.write(f"{manifest.name}: t={log.end_time:g}, iterations {log.final_iters}, loss {log.final_loss:.6g}, max gap {log.max_gap}")
        for path in result.artifacts:
            self.stdout.write(f"  {path}")

    def _handle_suite(self, options):
        suite = load_suite(options["suite"])
        result = run_suite(
            suite,
            seed=options["seed"],
            out_dir=options["out_dir"],
            runtime_asserts=options["runtime_asserts"],
            strict_reorder=options["strict_reorder"],
            max_workers=options["workers"],
        )
        for row in result.rows:
            self.stdout.write(",".join(row))
        self.stdout.write(result.comparison_path)

    def _handle_verify(self, options):
        manifest = load_manifest(options["manifest"])
        report = verify_bounds(options["metrics"], manifest)
        report_path = options["report"] or os.path.join(os.path.dirname(os.path.abspath(options["metrics"])), VERIFY_REPORT_FILE_NAME)
        atomic_write_text(report_path, report.to_json())
        if not report.ok:
            raise BoundViolationError(report)
        self.stdout.write(report.describe())

    def _handle_schema(self, options):
        text = json.dumps(manifest_schema(), indent=2, sort_keys=True) + "\n"
        if options["out"]:
            atomic_write_text(options["out"], text)
        else:
            self.stdout.write(text, ending="")
