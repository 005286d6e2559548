"""
Test suite for experiment configuration and report writing
"""
import json
import math
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from caprelu.config import (ADV_TRAIN_TABLE, CAP_SWEEP, EXPERIMENT_KINDS, GROWTH_DIMS, SENSITIVITY,
                            UNCAPPED, build_config, cap_layers_label, format_beta, load_config,
                            parse_cap_layers, parse_train_beta)
from caprelu.errors import ConfigError, ReportError
from caprelu.reports import SCHEMAS, ExperimentReport, ReportTable, read_table, report_tables

EXAMPLES_DIR = Path(__file__).parent.parent / "data" / "examples"


class TestConfigHelpers(unittest.TestCase):
    """Placement labels and train beta values"""

    def test_cap_layer_labels(self):
        self.assertEqual(parse_cap_layers("HL1"), (0,))
        self.assertEqual(parse_cap_layers("HL12"), (0, 1))
        self.assertEqual(parse_cap_layers("hl123"), (0, 1, 2))
        self.assertEqual(parse_cap_layers("none"), ())
        self.assertEqual(cap_layers_label((1, 0)), "HL12")
        self.assertEqual(cap_layers_label(()), "none")
        for bad in ("HL", "HL0", "L1", "HLx"):
            with self.subTest(bad=bad):
                with self.assertRaises(ConfigError):
                    parse_cap_layers(bad)

    def test_train_beta(self):
        self.assertIsNone(parse_train_beta(UNCAPPED))
        self.assertIsNone(parse_train_beta(None))
        self.assertEqual(parse_train_beta("0.1"), 0.1)
        self.assertEqual(parse_train_beta(1), 1.0)
        for bad in (0, -1, "big", math.inf):
            with self.subTest(bad=bad):
                with self.assertRaises(ConfigError):
                    parse_train_beta(bad)
        self.assertEqual(format_beta(None), "uncapped")
        self.assertEqual(format_beta(0.01), "0.01")
        self.assertEqual(format_beta(1.0), "1")


class TestExperimentConfig(unittest.TestCase):
    """Defaults, TOML loading and overrides"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text):
        path = self.root / "cfg.toml"
        path.write_text(text, encoding="utf-8")
        return path

    def test_every_kind_has_valid_defaults(self):
        for kind in EXPERIMENT_KINDS:
            with self.subTest(kind=kind):
                cfg = load_config(kind=kind)
                self.assertEqual(cfg.kind, kind)
                self.assertTrue(cfg.architectures)

    def test_defaults_follow_the_experiments(self):
        growth = load_config(kind="perturbation-growth")
        self.assertEqual(growth.architectures, {"growth": GROWTH_DIMS})
        self.assertEqual((growth.pgd.epsilon, growth.pgd.step_size, growth.pgd.max_iter), (20 / 256, 2 / 256, 20))

        sweep = load_config(kind=CAP_SWEEP)
        self.assertEqual(len(sweep.sweep.values()), 15)
        self.assertEqual(sweep.sweep.values()[0], 0.01)
        self.assertEqual(sweep.sweep.values()[-1], 0.15)
        self.assertEqual(sweep.betas, [0.01, 0.1, 1.0])

        table = load_config(kind=ADV_TRAIN_TABLE)
        self.assertEqual(table.betas, [None, 1.0, 0.1, 0.01])
        self.assertEqual(table.adv_training.regimes, ("none", "fgsm", "pgd"))
        self.assertEqual(table.cw.max_iter, 10000)

        self.assertEqual(load_config(kind=SENSITIVITY).data.subset, 100)

    def test_toml_sections_are_applied(self):
        path = self.write("""
architectures = { tiny = [784, 20, 10, 10] }
cap_layers = ["HL1"]
train_betas = [0.5]

[experiment]
kind = "cap-sweep"
workers = 3
output_dir = "out"

[data]
subset = 50

[training]
epochs = 2
lr = 0.01

[sweep]
start = 0.05
end = 0.1
step = 0.05

[attack.pgd]
epsilon = 0.2
step_size = 0.02
max_iter = 5

[attack.cw]
max_iter = 30
""")
        cfg = load_config(path)
        self.assertEqual(cfg.kind, "cap-sweep")
        self.assertEqual(cfg.workers, 3)
        self.assertEqual(cfg.output_dir, "out")
        self.assertEqual(cfg.architectures, {"tiny": [784, 20, 10, 10]})
        self.assertEqual(cfg.placements, [("HL1", (0,))])
        self.assertEqual(cfg.data.subset, 50)
        self.assertEqual((cfg.training.epochs, cfg.training.lr, cfg.training.batch_size), (2, 0.01, 128))
        self.assertEqual(cfg.sweep.values(), [0.05, 0.1])
        self.assertEqual(cfg.pgd.max_iter, 5)
        self.assertEqual(cfg.cw.max_iter, 30)
        self.assertEqual(cfg.cw.binary_search_steps, 9)

    def test_overrides_win(self):
        path = self.write('[experiment]\nkind = "zero-grad"\n[data]\nsubset = 50\n')
        cfg = load_config(path, overrides={"subset": 10, "cw_iters": 5, "cw_searches": 2, "epochs": 1,
                                           "workers": 2, "output": "x", "seed": 7,
                                           "data_dir": "/tmp/mnist", "train_subset": None})
        self.assertEqual(cfg.data.subset, 10)
        self.assertEqual(cfg.data.dir, "/tmp/mnist")
        self.assertEqual(cfg.data.train_subset, 0)
        self.assertEqual((cfg.cw.max_iter, cfg.cw.binary_search_steps), (5, 2))
        self.assertEqual((cfg.training.epochs, cfg.training.seed), (1, 7))
        self.assertEqual((cfg.workers, cfg.output_dir), (2, "x"))

    def test_kind_argument_beats_file(self):
        path = self.write('[experiment]\nkind = "zero-grad"\n')
        self.assertEqual(load_config(path, kind="cap-order").kind, "cap-order")

    def test_numeric_strings_and_growth_source(self):
        cfg = load_config(self.write('smap_digit = "3"\n[experiment]\nkind = "sensitivity"\nworkers = "2"\n'))
        self.assertEqual((cfg.workers, cfg.smap_digit), (2, 3))

        growth = load_config(self.write('[experiment]\nkind = "perturbation-growth"\n'))
        self.assertEqual(growth.pgd_source, "uncapped")
        own = load_config(self.write('[experiment]\nkind = "perturbation-growth"\n'
                                     '[attack.pgd]\nsource = "self"\nmax_iter = 5\n'))
        self.assertEqual((own.pgd_source, own.pgd.max_iter), ("self", 5))
        self.assertAlmostEqual(own.pgd.epsilon, 20 / 256)

    def test_bad_configs(self):
        cases = {
            "unknown kind": '[experiment]\nkind = "fig-99"\n',
            "no kind": '[data]\nsubset = 3\n',
            "unknown section": '[experiment]\nkind = "cap-sweep"\n[plots]\nx = 1\n',
            "unknown key": '[experiment]\nkind = "cap-sweep"\n[training]\nmomentum = 0.9\n',
            "bad type": '[experiment]\nkind = "cap-sweep"\n[training]\nepochs = "many"\n',
            "zero step": '[experiment]\nkind = "cap-sweep"\n[sweep]\nstep = 0.0\n',
            "pgd step": '[experiment]\nkind = "cap-sweep"\n[attack.pgd]\nstep_size = 0.5\n',
            "workers": '[experiment]\nkind = "cap-sweep"\nworkers = 0\n',
            "regime": '[experiment]\nkind = "adv-train-table"\n[adv_training]\nregimes = ["cw"]\n',
            "two archs": ('architectures = { a = [784, 8, 8, 10], b = [784, 8, 8, 10] }\n'
                          '[experiment]\nkind = "sensitivity"\n'),
            "missing layer": ('architectures = { a = [784, 8, 10] }\ncap_layers = ["HL2"]\n'
                              '[experiment]\nkind = "cap-sweep"\n'),
            "beta": 'train_betas = [-1]\n[experiment]\nkind = "cap-sweep"\n',
            "beta not a list": 'train_betas = 0.1\n[experiment]\nkind = "cap-sweep"\n',
            "placement not a list": 'cap_layers = "HL1"\n[experiment]\nkind = "cap-sweep"\n',
            "digit": 'smap_digit = "five"\n[experiment]\nkind = "sensitivity"\n',
            "image id": 'image_ids = ["first"]\n[experiment]\nkind = "sensitivity"\n',
            "layer size": 'architectures = { a = [784, "wide", 10] }\n[experiment]\nkind = "cap-sweep"\n',
            "architectures": 'architectures = [784, 8, 10]\n[experiment]\nkind = "cap-sweep"\n',
            "workers type": '[experiment]\nkind = "cap-sweep"\nworkers = "two"\n',
            "fgsm epsilon": '[experiment]\nkind = "cap-sweep"\n[attack.fgsm]\nepsilon = "big"\n',
            "pgd source": '[experiment]\nkind = "perturbation-growth"\n[attack.pgd]\nsource = "other"\n',
            "same beta twice": 'train_betas = [1, 1.0]\n[experiment]\nkind = "cap-sweep"\n',
            "same uncapped twice": 'train_betas = ["uncapped", "UNCAPPED"]\n[experiment]\nkind = "cap-sweep"\n',
            "same placement twice": 'cap_layers = ["HL12", "HL21"]\n[experiment]\nkind = "cap-sweep"\n',
            "same regime twice": ('[experiment]\nkind = "adv-train-table"\n'
                                  '[adv_training]\nregimes = ["none", "fgsm", "fgsm"]\n'),
            "invalid toml": '[experiment\nkind = \n',
        }
        for name, text in cases.items():
            with self.subTest(case=name):
                with self.assertRaises(ConfigError):
                    load_config(self.write(text))
        with self.assertRaises(ConfigError):
            load_config(self.root / "missing.toml")

    def test_bundled_example_configs_load(self):
        configs = sorted(EXAMPLES_DIR.glob("*.toml"))
        self.assertTrue(configs)
        for path in configs:
            with self.subTest(config=path.name):
                cfg = load_config(path)
                self.assertIn(cfg.kind, EXPERIMENT_KINDS)

    def test_to_dict_is_json_ready(self):
        cfg = build_config({}, kind="zero-grad")
        data = json.loads(json.dumps(cfg.to_dict(), default=str))
        self.assertEqual(data["kind"], "zero-grad")
        self.assertEqual(data["cap_layers"], ["HL1", "HL2", "HL12"])


class TestReportTables(unittest.TestCase):
    """Keyed tables, CSV text and JSON/Excel export"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def make_report(self):
        report = ExperimentReport("cap-sweep", config={"kind": "cap-sweep"}, metadata={"note": "unit"})
        report.add_row("capsweep", arch="general", cap_layers="HL1", train_beta="0.01", eval_beta="0.05",
                       std_acc=0.98, rob_acc=0.5, success_rate=0.49)
        report.add_row("capsweep", arch="general", cap_layers="HL1", train_beta="uncapped",
                       eval_beta="0.05", std_acc=0.97, rob_acc=float("nan"), success_rate=0.1)
        return report

    def test_csv_text(self):
        text = self.make_report().table("capsweep").to_csv()
        lines = text.splitlines()
        self.assertEqual(lines[0], ",".join(SCHEMAS["capsweep"][0]))
        self.assertEqual(lines[1], "general,HL1,0.01,0.05,0.980000,0.500000,0.490000")
        self.assertEqual(lines[2], "general,HL1,uncapped,0.05,0.970000,,0.100000")
        self.assertTrue(text.endswith("\n"))

    def test_row_validation(self):
        table = ReportTable.from_schema("accuracy")
        table.add(cap_layers="HL1", train_beta="0.1", std_acc=0.9, rob_acc=0.5)
        with self.assertRaises(ReportError):
            table.add(cap_layers="HL1", train_beta="0.1", std_acc=0.8, rob_acc=0.4)
        with self.assertRaises(ReportError):
            table.add(cap_layers="HL2", train_beta="0.1", std_acc=0.8)
        with self.assertRaises(ReportError):
            table.add(cap_layers="HL2", train_beta="0.1", std_acc=0.8, rob_acc=0.4, extra=1)
        with self.assertRaises(ReportError):
            ReportTable.from_schema("figure9")

    def test_save_writes_tables_grids_and_metadata(self):
        report = self.make_report()
        report.add_grid("maps/uncapped/smap_3.csv", np.array([[0.0, 0.25], [1.5, 0.0]]))
        report.record_timing("general/HL1", 1.23456)
        written = report.save(self.root)
        self.assertEqual(len(written), 3)

        frame = read_table(self.root / "capsweep.csv")
        self.assertEqual(frame["train_beta"].tolist(), ["0.01", "uncapped"])
        self.assertTrue(np.isnan(frame["rob_acc"].iloc[1]))

        grid = np.loadtxt(self.root / "maps" / "uncapped" / "smap_3.csv", delimiter=",")
        np.testing.assert_array_equal(grid, [[0.0, 0.25], [1.5, 0.0]])

        meta = json.loads((self.root / "report.json").read_text(encoding="utf-8"))
        self.assertEqual(meta["kind"], "cap-sweep")
        self.assertEqual(meta["metadata"]["note"], "unit")
        self.assertIn("version", meta["metadata"])
        self.assertEqual(meta["timings"], {"general/HL1": 1.235})
        self.assertEqual(meta["tables"], {"capsweep": 2})
        self.assertEqual(report_tables(self.root), [("capsweep", self.root / "capsweep.csv")])

    def test_duplicate_grid(self):
        report = ExperimentReport("sensitivity")
        report.add_grid("a.csv", np.zeros((2, 2)))
        with self.assertRaises(ReportError):
            report.add_grid("a.csv", np.ones((2, 2)))

    def test_frame_of_missing_table(self):
        with self.assertRaises(ReportError):
            ExperimentReport("cap-sweep").frame("zerograd")

    def test_read_table_errors(self):
        with self.assertRaises(ReportError):
            read_table(self.root / "nope.csv")

    def test_export_to_excel(self):
        from openpyxl import load_workbook

        report = self.make_report()
        report.add_row("accuracy", cap_layers="HL1", train_beta="0.01", std_acc=0.98, rob_acc=0.5)
        path = self.root / "report.xlsx"
        success, error = report.export_to_excel(str(path))
        self.assertTrue(success, error)
        self.assertIsNone(error)

        wb = load_workbook(path)
        self.assertEqual(wb.sheetnames, ["capsweep", "accuracy"])
        ws = wb["capsweep"]
        self.assertEqual([c.value for c in ws[1]], SCHEMAS["capsweep"][0])
        self.assertTrue(ws["A1"].font.bold)
        self.assertEqual(ws.freeze_panes, "A2")
        self.assertEqual(ws.max_row, 3)
        self.assertIsNone(ws["F3"].value)
        self.assertEqual(ws["E2"].value, 0.98)

    def test_export_empty_report_fails(self):
        success, error = ExperimentReport("cap-sweep").export_to_excel(str(self.root / "x.xlsx"))
        self.assertFalse(success)
        self.assertIn("no tables", error)

    def test_save_to_json_reports_failure(self):
        blocker = self.root / "file"
        blocker.write_text("x", encoding="utf-8")
        success, error = ExperimentReport("cap-sweep").save_to_json(blocker / "report.json")
        self.assertFalse(success)
        self.assertIn("Failed to save JSON", error)


def run_tests():
    """Run all tests and print results"""
    loader = unittest.TestLoader()
    suite = unittest.TestSuite()
    for case in (TestConfigHelpers, TestExperimentConfig, TestReportTables):
        suite.addTests(loader.loadTestsFromTestCase(case))

    result = unittest.TextTestRunner(verbosity=2).run(suite)
    print("\n" + "=" * 70)
    print("CONFIG AND REPORT TEST SUMMARY")
    print("=" * 70)
    print(f"Tests run: {result.testsRun}")
    print(f"Failures: {len(result.failures)}")
    print(f"Errors: {len(result.errors)}")
    print("=" * 70)
    return result.wasSuccessful()


if __name__ == "__main__":
    sys.exit(0 if run_tests() else 1)
