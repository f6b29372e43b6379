import argparse
import json
import logging
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch
import numpy as np
import pandas as pd
from src.library import selftest
from src.library.experiment import CSV_COLUMNS, ResultCollector, load_experiment_spec, report, run
from src.library.lattice import CellGrid
from src.library.utils.config import Settings
from src.library.utils.errors import GridTooCoarseError, NumericError, PropertyViolationError, SpecError
from src.library.utils.serialization import element_from_spec, grid_from_spec, load_json, mask_from_hex
from src.library.utils.sweep import SweepGrid

SPECS = Path(__file__).resolve().parent.parent / "specs"


def write_spec(directory: Path, document: dict, name: str = "spec.json") -> Path:
    path = directory / name
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


class ExperimentSpecTests(unittest.TestCase):
    # Test experiment file loading and validation

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_bundled_specs(self):
        # Test every bundled spec loads, the operator path is resolved relative to the file
        for path in SPECS.glob("*.json"):
            spec = load_experiment_spec(path)
            self.assertIsInstance(spec.operator, dict, path.name)
        self.assertEqual(load_experiment_spec(SPECS / "urysohn-convergence.json").operator["kind"], "urysohn")

    def test_empty_refinements(self):
        # Test an empty sweep is rejected with the field name
        path = write_spec(self.dir, {"name": "e", "pipelines": ["narrow"], "operator": {"kind": "norm_functional"},
                                     "grid_refinements": []})
        with self.assertRaises(SpecError) as ctx:
            load_experiment_spec(path)
        self.assertEqual(ctx.exception.field, "grid_refinements")

    def test_unknown_pipeline(self):
        # Test an unknown pipeline name
        path = write_spec(self.dir, {"name": "e", "pipelines": ["fly"], "operator": {"kind": "norm_functional"},
                                     "grid_refinements": [4]})
        with self.assertRaises(SpecError) as ctx:
            load_experiment_spec(path)
        self.assertEqual(ctx.exception.field, "pipelines")

    def test_unknown_field(self):
        # Test extra keys are rejected
        path = write_spec(self.dir, {"name": "e", "pipelines": ["narrow"], "operator": {"kind": "norm_functional"},
                                     "grid_refinements": [4], "colour": "red"})
        self.assertRaises(SpecError, load_experiment_spec, path)

    def test_bad_json(self):
        # Test a syntax error reports its line
        path = self.dir / "broken.json"
        path.write_text('{\n  "name": "e",\n  "pipelines": [narrow]\n}', encoding="utf-8")
        with self.assertRaises(SpecError) as ctx:
            load_experiment_spec(path)
        self.assertEqual(ctx.exception.line, 3)
        self.assertIn("line 3", str(ctx.exception))

    def test_missing_operator_file(self):
        # Test an operator path that does not exist
        path = write_spec(self.dir, {"name": "e", "pipelines": ["narrow"], "operator": "nowhere.json",
                                     "grid_refinements": [4]})
        with self.assertRaises(SpecError) as ctx:
            load_experiment_spec(path)
        self.assertEqual(ctx.exception.field, "operator")

    def test_descending_refinements(self):
        # Test refinements must ascend
        path = write_spec(self.dir, {"name": "e", "pipelines": ["narrow"], "operator": {"kind": "norm_functional"},
                                     "grid_refinements": [8, 4]})
        self.assertRaises(SpecError, load_experiment_spec, path)


class RunTests(unittest.TestCase):
    # Test run() outputs and failures

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_norm_functional_narrow(self):
        # Test x = 1 on 8 cells at 0.3 gives defect 0 and the CSV columns
        spec = load_experiment_spec(SPECS / "norm-functional-narrow.json")
        result = run(spec, timing=False, result_dir=self.dir)
        defects = result.frame[result.frame["metric"] == "defect"]
        self.assertEqual(defects["value"].tolist(), [0.0])
        self.assertEqual(result.frame["runtime_ms"].unique().tolist(), [0])
        with open(result.csv_path, encoding="utf-8") as f:
            self.assertTrue(f.readline().startswith("# generated"))
        frame = pd.read_csv(result.csv_path, comment="#")
        self.assertEqual(list(frame.columns), CSV_COLUMNS)
        self.assertEqual(load_json(result.json_path)["status"], "ok")

    def test_reproducible(self):
        # Test two runs without timing give identical rows
        spec = load_experiment_spec(SPECS / "norm-functional-narrow.json")
        first = run(spec, timing=False, result_dir=self.dir / "a")
        second = run(spec, timing=False, result_dir=self.dir / "b")
        self.assertTrue(first.frame.equals(second.frame))

    def test_coarse_grid(self):
        # Test GridTooCoarseError is raised after the outputs are written
        spec = load_experiment_spec(SPECS / "coarse-grid.json")
        self.assertRaises(GridTooCoarseError, run, spec, False, self.dir)
        self.assertTrue((self.dir / "coarse-grid.csv").is_file())
        self.assertEqual(load_json(self.dir / "coarse-grid.json")["status"], "GridTooCoarseError")

    def test_allow_coarse(self):
        # Test allow_coarse records the coarse grid instead of failing
        spec = load_experiment_spec(SPECS / "coarse-grid.json").copy(update={"allow_coarse": True})
        result = run(spec, timing=False, result_dir=self.dir)
        self.assertIn("grid_too_coarse", result.frame["metric"].tolist())

    def test_kernel_not_vanishing(self):
        # Test a kernel with K(t, 0) != 0 is rejected as malformed input
        path = write_spec(self.dir, {"name": "shifted", "pipelines": ["oa-check"], "trials": 50,
                                     "operator": {"kind": "nemytskii", "kernel": "r + 1"}, "grid_refinements": [4]})
        self.assertRaises(SpecError, run, load_experiment_spec(path), False, self.dir)

    def test_kernel_overflow(self):
        # Test a kernel overflow is raised after the outputs are written
        path = write_spec(self.dir, {"name": "overflow", "pipelines": ["narrow"], "epsilons": [0.5],
                                     "operator": {"kind": "nemytskii", "kernel": "r*exp(exp(r))"},
                                     "element": {"constant": 10.0}, "grid_refinements": [4]})
        self.assertRaises(NumericError, run, load_experiment_spec(path), False, self.dir)
        self.assertTrue((self.dir / "overflow.csv").is_file())
        self.assertEqual(load_json(self.dir / "overflow.json")["status"], "NumericError")

    def test_untimed_by_default(self):
        # Test runtimes are 0 unless timing is requested, so default reruns write identical rows
        spec = load_experiment_spec(SPECS / "norm-functional-narrow.json")
        first = run(spec, result_dir=self.dir / "a")
        second = run(spec, result_dir=self.dir / "b")
        self.assertEqual(first.frame["runtime_ms"].unique().tolist(), [0])
        self.assertTrue(first.frame.equals(second.frame))

    def test_worker_order(self):
        # Test the row order does not depend on the number of workers
        document = json.loads((SPECS / "norm-functional-narrow.json").read_text(encoding="utf-8"))
        document.update({"grid_refinements": [2, 4, 8], "epsilons": [0.8], "pipelines": ["narrow", "c-compact"]})
        serial = run(load_experiment_spec(write_spec(self.dir, document, "serial.json")), False, self.dir)
        document.update({"workers": 4})
        parallel = run(load_experiment_spec(write_spec(self.dir, document, "parallel.json")), False, self.dir)
        self.assertTrue(serial.frame.equals(parallel.frame))


class ReportTests(unittest.TestCase):
    # Test report()

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_report_text(self):
        # Test the summary names the experiment and the defect trend
        result = run(load_experiment_spec(SPECS / "norm-functional-narrow.json"), False, self.dir)
        text = report(result.csv_path)
        self.assertIn("experiment norm-functional-narrow", text)
        self.assertIn("defect → 0 trend: yes", text)

    def test_plot(self):
        # Test the defect plot is written
        result = run(load_experiment_spec(SPECS / "norm-functional-narrow.json"), False, self.dir)
        report(result.csv_path, plot=self.dir / "defect.png")
        self.assertTrue((self.dir / "defect.png").is_file())

    def test_missing_file(self):
        # Test SpecError for a file that does not exist
        self.assertRaises(SpecError, report, self.dir / "missing.csv")

    def test_missing_columns(self):
        # Test SpecError for a CSV without the result columns
        path = self.dir / "other.csv"
        path.write_text("a,b\n1,2\n", encoding="utf-8")
        self.assertRaises(SpecError, report, path)


class ResultCollectorTests(unittest.TestCase):
    # Test ResultCollector ordering and rollback

    def test_ordering(self):
        # Test rows come out by task key
        collector = ResultCollector(logging.getLogger("test"))
        row = dict.fromkeys(CSV_COLUMNS, 0)
        collector.add_rows(2, [{**row, "value": 2.0}])
        collector.add_rows(0, [{**row, "value": 0.0}])
        collector.add_rows(1, [{**row, "value": 1.0}])
        self.assertEqual(collector.to_frame()["value"].tolist(), [0.0, 1.0, 2.0])

    def test_rollback(self):
        # Test a failed write leaves no rows for its key
        collector = ResultCollector(logging.getLogger("test"))
        self.assertRaises(TypeError, collector.add_rows, 0, None)
        self.assertTrue(collector.to_frame().empty)


class SweepGridTests(unittest.TestCase):
    # Test SweepGrid

    def test_order(self):
        # Test the first key varies fastest
        sweep = SweepGrid({"pipeline": ["a", "b"], "n_cells": [8, 16]})
        self.assertEqual(len(sweep), 4)
        self.assertEqual([(p["pipeline"], p["n_cells"]) for p in sweep],
                         [("a", 8), ("b", 8), ("a", 16), ("b", 16)])

    def test_empty(self):
        # Test an empty grid and an empty value list
        self.assertEqual(list(SweepGrid({})), [])
        self.assertEqual(len(SweepGrid({"n_cells": []})), 0)


class SettingsTests(unittest.TestCase):
    # Test Settings

    def test_defaults(self):
        # Test defaults without a file or environment
        settings = Settings(env_file="/nonexistent/.env", environ={})
        self.assertEqual(settings.enumeration_cap, 24)
        self.assertEqual(settings.oracle_cap, 8)
        self.assertEqual(settings.result_dir, Path("results"))

    def test_environment_override(self):
        # Test the environment overrides the dotenv file
        with tempfile.TemporaryDirectory() as tmp:
            env_file = Path(tmp) / ".env"
            env_file.write_text("ORACLE_CAP=6\nRESULT_DIR=out\n", encoding="utf-8")
            settings = Settings(env_file=env_file, environ={"ORACLE_CAP": "5"})
            self.assertEqual(settings.oracle_cap, 5)
            self.assertEqual(settings.result_dir, Path("out"))

    def test_invalid(self):
        # Test a non-numeric cap names its key
        with self.assertRaises(SpecError) as ctx:
            Settings(env_file="/nonexistent/.env", environ={"EXACT_SPLIT_CAP": "many"})
        self.assertEqual(ctx.exception.field, "EXACT_SPLIT_CAP")


class SerializationTests(unittest.TestCase):
    # Test grid, element and mask literals

    def test_element_forms(self):
        # Test the constant, values and expression forms
        grid = CellGrid.uniform(4)
        self.assertEqual(element_from_spec({"constant": 2.0}, grid).values.tolist(), [2.0] * 4)
        self.assertEqual(element_from_spec({"values": [1, 0, 0, 1]}, grid).support_size, 2)
        x = element_from_spec({"expression": "1 - 2*t"}, grid)
        self.assertTrue(np.allclose(x.values, 1 - 2 * grid.centers))

    def test_full_literal(self):
        # Test a literal with its own grid
        x = element_from_spec({"weights": [0.25, 0.75], "values": [1.0, -1.0]})
        self.assertEqual(x.grid.n_cells, 2)

    def test_invalid_literals(self):
        # Test SpecError for malformed literals
        grid = CellGrid.uniform(2)
        self.assertRaises(SpecError, element_from_spec, {"values": [1.0]}, grid)
        self.assertRaises(SpecError, element_from_spec, {"colour": 1}, grid)
        self.assertRaises(SpecError, element_from_spec, {"constant": 1.0})
        self.assertRaises(SpecError, grid_from_spec, {"weights": [0.5, -0.5]})
        self.assertRaises(SpecError, mask_from_hex, element_from_spec({"constant": 1.0}, grid), "zz")


class CommandLineTests(unittest.TestCase):
    # Test exit codes of main()

    def __init__(self, *args, **kwargs):
        # main is a top level module under src/, its errors come from library.utils rather than src.library.utils
        sys.path.append("src/")
        import main as app
        super().__init__(*args, **kwargs)
        self.app = app

    def exit_code(self, error: BaseException) -> int:
        def command(_):
            raise error
        return self.app.main(argparse.Namespace(command=command, name="test"))

    def test_exit_codes(self):
        # Test 0 ok, 1 malformed input, 2 failed property or kernel overflow, 3 grid too coarse
        self.assertEqual(self.app.main(argparse.Namespace(command=lambda _: 0, name="test")), 0)
        self.assertEqual(self.exit_code(self.app.SpecError("bad", field="name")), 1)
        self.assertEqual(self.exit_code(ValueError("bad")), 1)
        self.assertEqual(self.exit_code(PropertyViolationError("broken")), 2)
        self.assertEqual(self.exit_code(self.app.NumericError("overflow")), 2)
        self.assertEqual(self.exit_code(self.app.GridTooCoarseError("coarse", 1.0, 0)), 3)

    def test_report_command(self):
        # Test the report command on a missing file maps to 1
        args = argparse.Namespace(command=self.app.report_command, name="report", csv="missing.csv", plot=None)
        self.assertEqual(self.app.main(args), 1)


class SelftestTests(unittest.TestCase):
    # Test run_selftest on a cheap subset of the checks

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.checks = [c for c in selftest.CHECKS if c[0] in ("lattice", "freudenthal", "narrow_exact")]

    def tearDown(self):
        self.tmp.cleanup()

    def test_digest_reproducible(self):
        # Test two runs with one seed give one digest and no failures
        with patch.object(selftest, "CHECKS", self.checks):
            first = selftest.run_selftest(seed=1, result_dir=self.dir / "a")
            second = selftest.run_selftest(seed=1, result_dir=self.dir / "b")
        self.assertEqual(first.failures, [])
        self.assertEqual(first.digest, second.digest)
        self.assertEqual(first.digest, selftest.csv_digest(first.csv_path))

    def test_failure_recorded(self):
        # Test a failing check is recorded and the others still run
        def broken(rows, rng):
            raise PropertyViolationError("broken on purpose")

        with patch.object(selftest, "CHECKS", [("broken", broken)] + self.checks):
            result = selftest.run_selftest(seed=0, result_dir=self.dir)
        self.assertEqual(len(result.failures), 1)
        self.assertIn("failed_broken", result.frame["metric"].tolist())
        self.assertIn("fragments_checked", result.frame["metric"].tolist())


if __name__ == "__main__":
    unittest.main()
