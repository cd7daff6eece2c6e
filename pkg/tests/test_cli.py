from pathlib import Path
import unittest

from click.testing import CliRunner
from yaml import dump as write_yaml
from yaml import safe_load as read_yaml

from itsfuzz.read import read_certificate
from itsfuzz.read import read_region
from itsfuzz.read import read_trace
from lyra.lyra import bundled_config
from lyra.lyra import cli
from lyra.lyra import NEGATIVE


def config_file(name: str, edit=None, filename: str = "config.yml") -> str:
    document = read_yaml(bundled_config(name))
    if edit is not None:
        edit(document)
    Path(filename).write_text(write_yaml(document, sort_keys=False))
    return filename


def single_cell(document: dict):
    for parameter in document["sweep"].values():
        parameter["stop"] = parameter["start"] = -1.0


class TestCommands(unittest.TestCase):
    def setUp(self):
        self.runner = CliRunner()

    def test_drop(self):
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(cli, ["drop", "."])
            self.assertEqual(result.exit_code, 0)
            self.assertEqual(Path("lyra-config.yml").read_text(), bundled_config("example2"))
            result = self.runner.invoke(cli, ["--quiet", "drop", ".", "-e", "example1"])
            self.assertEqual(result.exit_code, 0)
            text = Path("lyra-config-1.yml").read_text()
            self.assertNotIn("#", text)
            self.assertEqual(read_yaml(text), read_yaml(bundled_config("example1")))

    def test_malformed_row(self):
        def edit(document):
            document["model"]["rules"][1]["A"] = [[1.0, 2.0, 3.0], [0.0, 1.0]]

        with self.runner.isolated_filesystem():
            result = self.runner.invoke(
                cli, ["-q", "analyze", "-c", config_file("example1", edit)]
            )
            self.assertEqual(result.exit_code, 1)
            self.assertIn("rules[2].A row 1", result.output)

    def test_yaml_syntax(self):
        with self.runner.isolated_filesystem():
            Path("config.yml").write_text("model:\n  box: [1, 2\n")
            result = self.runner.invoke(cli, ["-q", "analyze", "-c", "config.yml"])
            self.assertEqual(result.exit_code, 1)
            self.assertIn("line", result.output)

    def test_schema(self):
        def edit(document):
            document["solver"]["eps"] = -1.0

        with self.runner.isolated_filesystem():
            result = self.runner.invoke(
                cli, ["-q", "analyze", "-c", config_file("example1", edit)]
            )
            self.assertEqual(result.exit_code, 1)
            self.assertIn("`eps` must be greater than zero.", result.output)

    def test_analyze_and_verify(self):
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(cli, ["-q", "analyze", "-o", "out"])
            self.assertEqual(result.exit_code, 0, result.output)
            self.assertTrue(Path("out/samples.csv").exists())
            self.assertEqual(read_certificate("out/certificate.yml").kind, "theorem1")
            result = self.runner.invoke(
                cli,
                ["-q", "verify", "--certificate", "out/certificate.yml", "--samples", "1000"],
            )
            self.assertEqual(result.exit_code, 0, result.output)
            self.assertIn("All suites passed.", result.output)

    def test_quadratic_analysis(self):
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(cli, ["-q", "analyze", "-m", "corollary1"])
            self.assertEqual(result.exit_code, 0, result.output)
            self.assertEqual(read_yaml(Path("certificate.yml").read_text())["kind"], "corollary1")

    def test_unstable_model(self):
        def edit(document):
            document["model"]["rules"][0]["A"][1][1] = 2.0

        with self.runner.isolated_filesystem():
            result = self.runner.invoke(
                cli, ["-q", "analyze", "-c", config_file("example1", edit)]
            )
            self.assertEqual(result.exit_code, NEGATIVE)
            self.assertFalse(Path("certificate.yml").exists())
            report = read_yaml(Path("infeasibility.yml").read_text())
            self.assertEqual(report["method"], "theorem1")
            self.assertTrue(report["status"] not in ("Optimal", "Feasible") or report["failures"])

    def test_simulate_is_reproducible(self):
        with self.runner.isolated_filesystem():
            outputs = []
            for out in ("first", "second"):
                result = self.runner.invoke(
                    cli, ["-q", "simulate", "--paths", "2", "-o", out]
                )
                self.assertEqual(result.exit_code, 0, result.output)
                outputs.append(Path(out, "ensemble-M2.csv").read_bytes())
            self.assertEqual(outputs[0], outputs[1])

    def test_simulate_needs_section(self):
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(
                cli, ["-q", "simulate", "-c", config_file("example1")]
            )
            self.assertEqual(result.exit_code, 1)
            self.assertIn("No `simulation` section.", result.output)

    def test_sweep(self):
        with self.runner.isolated_filesystem():
            result = self.runner.invoke(
                cli, ["-q", "sweep", "-c", config_file("example1", single_cell)]
            )
            self.assertEqual(result.exit_code, 0, result.output)
            table = read_region("region.csv")
            self.assertEqual(len(table), 1)
            self.assertEqual(table["theorem1"].tolist(), ["F"])

    def test_sweep_is_reproducible(self):
        def edit(document):
            for parameter in document["sweep"].values():
                parameter["step"] = 1.0

        with self.runner.isolated_filesystem():
            config = config_file("example1", edit)
            outputs = []
            for out in ("first", "second"):
                result = self.runner.invoke(cli, ["-q", "sweep", "-c", config, "-o", out])
                self.assertEqual(result.exit_code, 0, result.output)
                outputs.append(Path(out, "region.csv").read_bytes())
            self.assertEqual(outputs[0], outputs[1])
            self.assertEqual(len(read_region("first/region.csv")), 5 * 3)

    def test_synthesize_is_reproducible(self):
        def edit(document):
            document["analysis"]["samples"] = 100

        files = ("synthesis.yml", "trace.csv", "gains.yml", "closed-loop-certificate.yml")
        with self.runner.isolated_filesystem():
            config = config_file("example2", edit)
            for out in ("first", "second"):
                result = self.runner.invoke(cli, ["-q", "synthesize", "-c", config, "-o", out])
                self.assertEqual(result.exit_code, 0, result.output)
            for name in files:
                self.assertEqual(
                    Path("first", name).read_bytes(), Path("second", name).read_bytes(), name
                )

    def test_sweep_outside_matrix(self):
        def edit(document):
            single_cell(document)
            document["sweep"]["b"]["rule"] = 5

        with self.runner.isolated_filesystem():
            result = self.runner.invoke(
                cli, ["-q", "sweep", "-c", config_file("example1", edit)]
            )
            self.assertEqual(result.exit_code, 1)

    def test_synthesize_without_iterations(self):
        def edit(document):
            document["synthesis"]["n_max"] = 0

        with self.runner.isolated_filesystem():
            result = self.runner.invoke(
                cli, ["-q", "synthesize", "-c", config_file("example2", edit)]
            )
            self.assertEqual(result.exit_code, NEGATIVE)
            trace = read_trace("trace.csv")
            self.assertEqual(trace["iter"].tolist(), [0])
            self.assertEqual(read_yaml(Path("synthesis.yml").read_text())["iterations"], 0)


if __name__ == "__main__":
    unittest.main()
