from pathlib import Path
import tempfile
import unittest

import numpy as np
from yaml import safe_load as read_yaml

from itsfuzz.errors import ConfigError
from itsfuzz.read import certificate_from_dict
from itsfuzz.read import model_from_config
from itsfuzz.read import read_certificate
from itsfuzz.read import read_ensemble
from itsfuzz.read import read_gains
from itsfuzz.read import read_model
from itsfuzz.read import read_region
from itsfuzz.sdesim import monte_carlo
from itsfuzz.types import CellStatus
from itsfuzz.types import Complement
from itsfuzz.types import Gaussian
from itsfuzz.types import LineIntegralCertificate
from itsfuzz.types import QuadraticCertificate
from itsfuzz.types import RegionSweep
from itsfuzz.types import SimConfig
from itsfuzz.types import SweepParameter
from lyra.lyra import bundled_config
from lyra.write import certificate_document
from lyra.write import write_certificate
from lyra.write import write_ensemble
from lyra.write import write_gains
from lyra.write import write_region


def model_section(name: str = "example2") -> dict:
    return read_yaml(bundled_config(name))["model"]


def _broken(edit) -> dict:
    section = model_section()
    edit(section)
    return section


# (section edit, error location)
malformed = [
    (lambda s: s["rules"][1].update(A=[[1.0, 2.0, 3.0], [0.0, 1.0]]), "rules[2].A row 1"),
    (lambda s: s["rules"][2].update(A=[[1.0, 2.0]]), "rules[3].A"),
    (lambda s: s["rules"][0].update(C=[[1.0, "x"], [0.0, 1.0]]), "rules[1].C row 1"),
    (lambda s: s["rules"][3].pop("B"), "rules[4].B"),
    (lambda s: s["rules"][1].update(ordinals=[1]), "rules[2].ordinals"),
    (lambda s: s["memberships"][0].__setitem__(1, "triangle"), "memberships[1][2]"),
    (lambda s: s["memberships"].__setitem__(1, []), "memberships[2]"),
]


def certificate() -> LineIntegralCertificate:
    q01 = np.array([[0.1, 0.0], [0.0, 0.2]])
    q = {(0, 0): np.eye(2), (1, 1): 2 * np.eye(2), (0, 1): q01, (1, 0): q01}
    return LineIntegralCertificate(
        kind="theorem1",
        ordinals=np.array([[1], [2]]),
        pbar=np.zeros((1, 1)),
        pool=(np.array([1.5, 2.5]),),
        D=np.array([[3.0]]),
        q=q,
        beta=0.1,
    )


class TestModelSection(unittest.TestCase):
    def test_bundled_model(self):
        model = model_from_config(model_section())
        self.assertEqual((model.s, model.n, model.p), (4, 2, 1))
        self.assertEqual(model.box, 50.0)
        np.testing.assert_array_equal(model.ordinals[2], [2, 1])
        np.testing.assert_array_equal(model.B[3], [[-1.5], [2.6]])
        self.assertEqual(model.families[1].grades[0], Gaussian(0.0024, 0.05, 3.0))
        self.assertEqual(model.families[0].grades[1], Complement())

    def test_unforced_model(self):
        model = model_from_config(model_section("example1"))
        self.assertEqual(model.p, 0)

    def test_default_diffusion(self):
        section = model_section()
        for rule in section["rules"]:
            rule.pop("C")
        np.testing.assert_array_equal(model_from_config(section).C, 0.0)

    def test_malformed(self):
        for edit, where in malformed:
            with self.assertRaises(ConfigError) as context:
                model_from_config(_broken(edit))
            self.assertEqual(context.exception.where, where)

    def test_model_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "model.yml"
            path.write_text(bundled_config("example2"))
            self.assertEqual(read_model(path).s, 4)


class TestCertificates(unittest.TestCase):
    def test_line_integral_document(self):
        document = certificate_document(certificate())
        self.assertEqual(list(document["Q"]), ["1,1", "1,2", "2,2"])
        self.assertEqual(document["d"], [[1.5, 2.5]])

    def test_line_integral_roundtrip(self):
        original = certificate()
        with tempfile.TemporaryDirectory() as tmp:
            write_certificate(original, path := Path(tmp) / "certificate.yml")
            restored = read_certificate(path)
        self.assertEqual(restored.kind, "theorem1")
        self.assertEqual(restored.beta, 0.1)
        np.testing.assert_array_equal(restored.pool[0], original.pool[0])
        np.testing.assert_array_equal(restored.q[(1, 0)], original.q[(0, 1)])
        self.assertIs(restored.q[(0, 1)], restored.q[(1, 0)])
        self.assertIsNone(restored.gains)

    def test_closed_loop_labels(self):
        document = certificate_document(certificate())
        document["Q"] = {"1,2,1": [[1.0, 0.0], [0.0, 1.0]]}
        document["gains"] = [[[1.0]], [[2.0]]]
        restored = certificate_from_dict(document)
        self.assertIn((1, 0, 0), restored.q)
        self.assertEqual(restored.gains.shape, (2, 1, 1))

    def test_quadratic_roundtrip(self):
        original = QuadraticCertificate(
            P=np.array([[2.0, 0.5], [0.5, 1.0]]), q=tuple(k * np.eye(2) for k in range(1, 12))
        )
        with tempfile.TemporaryDirectory() as tmp:
            write_certificate(original, path := Path(tmp) / "certificate.yml")
            restored = read_certificate(path)
        np.testing.assert_array_equal(restored.P, original.P)
        # keys "10" and "11" sort after "9"
        np.testing.assert_array_equal(restored.q[10], 11 * np.eye(2))

    def test_gains(self):
        with tempfile.TemporaryDirectory() as tmp:
            gains = np.arange(4.0).reshape(2, 1, 2)
            write_gains(gains, path := Path(tmp) / "gains.yml", "Converged", 0.1)
            np.testing.assert_array_equal(read_gains(path), gains)
            write_certificate(certificate(), path := Path(tmp) / "certificate.yml")
            with self.assertRaises(ConfigError):
                read_gains(path)


class TestTables(unittest.TestCase):
    def test_region(self):
        a = SweepParameter("a", "A", 0, 1, 1, 0.0, 0.1, 0.1)
        b = SweepParameter("b", "A", 3, 0, 0, 0.0, 0.0, 0.1)
        region = RegionSweep(
            (a, b),
            np.array([0.0, 0.1]),
            np.array([0.0]),
            [
                [(CellStatus.FEASIBLE, CellStatus.INFEASIBLE)],
                [(CellStatus.FAILURE, CellStatus.FEASIBLE)],
            ],
        )
        with tempfile.TemporaryDirectory() as tmp:
            write_region(region, path := Path(tmp) / "region.csv")
            table = read_region(path)
        self.assertEqual(table["theorem1"].tolist(), ["F", "X"])
        self.assertEqual(table["corollary1"].tolist(), ["I", "F"])
        np.testing.assert_allclose(table["a"], [0.0, 0.1])

    def test_ensemble(self):
        model = model_from_config(model_section())
        config = SimConfig(np.array([[1.0, 1.0]]), steps=16, coarsening=2, paths=2)
        ensemble = monte_carlo(model, config)
        with tempfile.TemporaryDirectory() as tmp:
            write_ensemble(ensemble, path := Path(tmp) / "ensemble-M2.csv")
            header = path.read_text().splitlines()[0]
            table = read_ensemble(path)
        self.assertTrue(header.startswith("# creator: itsfuzz v."))
        self.assertEqual(len(table), 3 * 9)
        self.assertEqual(sorted(set(table["path"])), ["1", "2", "mean"])
        np.testing.assert_allclose(
            table[table["path"] == "2"][["x_1", "x_2"]].to_numpy(), ensemble.paths[0, 1]
        )


if __name__ == "__main__":
    unittest.main()
