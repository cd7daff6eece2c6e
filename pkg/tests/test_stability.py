import os
import unittest

import numpy as np

from itsfuzz.errors import InvalidModel
from itsfuzz.lmi.solver import check_solution
from itsfuzz.stability import analyze
from itsfuzz.stability import as_line_integral
from itsfuzz.stability import build_corollary1
from itsfuzz.stability import build_theorem1
from itsfuzz.stability import cell_status
from itsfuzz.stability import check_certificate
from itsfuzz.stability import embed_quadratic
from itsfuzz.stability import grid_values
from itsfuzz.stability import region_counts
from itsfuzz.stability import region_table
from itsfuzz.stability import rule_matrices
from itsfuzz.stability import sweep
from itsfuzz.tsmodel import with_parameters
from itsfuzz.types import AnalysisResult
from itsfuzz.types import CellStatus
from itsfuzz.types import LineIntegralCertificate
from itsfuzz.types import Solution
from itsfuzz.types import SolverStatus
from itsfuzz.types import SweepParameter
from lyra.lyra import bundled_config
from lyra.lyra import parse_config

example1 = parse_config(bundled_config("example1"), "example1").model
BETA = 0.1

# single cell grids around the template values
cell_a = SweepParameter("a", "A", 0, 1, 1, -1.0, -1.0, 0.1)
cell_b = SweepParameter("b", "A", 3, 0, 0, -1.0, -1.0, 0.1)


def _unstable(a: float = 2.0):
    return with_parameters(example1, [cell_a], (a,))


def quadratic_only(table) -> int:
    """Cells certified by the quadratic method but not by the line-integral one."""
    return int(((table["corollary1"] == "F") & (table["theorem1"] != "F")).sum())


class TestProblemStructure(unittest.TestCase):
    def test_variable_count(self):
        # Pbar 1, pool 4, D 2, ten symmetric 2x2 blocks Q_ij
        problem = build_theorem1(example1, BETA)
        self.assertEqual(len(problem.space), 37)

    def test_constraint_count(self):
        problem = build_theorem1(example1, BETA)
        # P_k > 0, D - D_k >= 0, 16 LV blocks, Theta
        self.assertEqual(len(problem.constraints), 4 + 4 + 16 + 1)
        self.assertEqual(problem.constraints[-1].expr.shape, (8, 8))
        self.assertEqual(len(build_corollary1(example1).constraints), 1 + 4 + 4)

    def test_shared_slack_blocks(self):
        problem = build_theorem1(example1, BETA)
        names = [n for n in problem.variables if n.startswith("Q[")]
        self.assertEqual(len(names), 10)
        self.assertNotIn("Q[2,1]", names)


class TestAnalyze(unittest.TestCase):
    def test_template_is_certified(self):
        for method in ("theorem1", "corollary1"):
            result = analyze(example1, method, BETA)
            self.assertTrue(result.feasible, method)
            self.assertEqual(result.failures, [])
            self.assertEqual(check_certificate(example1, result.certificate), [])

    def test_line_integral_certificate(self):
        certificate = analyze(example1, "theorem1", BETA).certificate
        self.assertIsInstance(certificate, LineIntegralCertificate)
        np.testing.assert_array_equal(np.diag(certificate.pbar), 0.0)
        for pk in rule_matrices(certificate):
            self.assertGreater(np.linalg.eigvalsh(pk)[0], 0)
        self.assertIs(certificate.q[(0, 1)], certificate.q[(1, 0)])
        self.assertEqual(certificate.beta, BETA)

    def test_unstable_rule(self):
        model = _unstable()
        for method in ("theorem1", "corollary1"):
            result = analyze(model, method, BETA)
            self.assertFalse(result.feasible, method)
            self.assertNotEqual(cell_status(result), CellStatus.FEASIBLE)

    def test_bad_arguments(self):
        with self.assertRaises(ValueError):
            analyze(example1, "theorem1")
        with self.assertRaises(ValueError):
            analyze(example1, "theorem3", BETA)

    def test_partial_rule_base(self):
        model = example1._replace(
            ordinals=example1.ordinals[:3],
            A=example1.A[:3],
            B=example1.B[:3],
            C=example1.C[:3],
        )
        with self.assertRaises(InvalidModel):
            analyze(model, "theorem1", BETA)
        self.assertTrue(analyze(model, "corollary1").feasible)


class TestQuadraticEmbedding(unittest.TestCase):
    def setUp(self):
        self.quadratic = analyze(example1, "corollary1").certificate

    def test_embedding_is_feasible(self):
        problem = build_theorem1(example1, 0.0)
        values = embed_quadratic(problem, example1, self.quadratic)
        checks = check_solution(problem, values)
        self.assertEqual([c.name for c in checks if not c.passed], [])

    def test_line_integral_form(self):
        certificate = as_line_integral(example1, self.quadratic)
        self.assertEqual(certificate.kind, "corollary1")
        self.assertEqual(check_certificate(example1, certificate), [])
        for pk in rule_matrices(certificate):
            np.testing.assert_allclose(pk, self.quadratic.P)


class TestSweep(unittest.TestCase):
    def test_grid_values(self):
        a = cell_a._replace(start=-2.0, stop=2.0)
        b = cell_b._replace(start=-2.0, stop=0.5)
        self.assertEqual(len(grid_values(a)), 41)
        self.assertEqual(len(grid_values(b)), 26)
        self.assertEqual(grid_values(a)[20], 0.0)
        self.assertEqual(grid_values(b)[-1], 0.5)

    def test_single_cell(self):
        region = sweep(example1, (cell_a, cell_b), beta=BETA)
        table = region_table(region)
        self.assertEqual(len(table), 1)
        self.assertEqual(list(table.columns), ["a", "b", "theorem1", "corollary1"])
        self.assertEqual(table.iloc[0]["theorem1"], "F")
        counts = region_counts(region)
        self.assertEqual(counts["corollary1"], {"F": 1, "I": 0, "X": 0})

    def test_coarse_region(self):
        a = cell_a._replace(start=-2.0, stop=2.0, step=0.5)
        b = cell_b._replace(start=-2.0, stop=0.5, step=0.5)
        region = sweep(example1, (a, b), beta=BETA)
        table = region_table(region)
        self.assertEqual(len(table), 9 * 6)
        self.assertEqual(quadratic_only(table), 0)
        counts = region_counts(region)
        self.assertGreater(counts["theorem1"]["F"], 0)
        self.assertGreater(counts["corollary1"]["F"], 0)

    @unittest.skipUnless(os.environ.get("ITSFUZZ_SLOW"), "set ITSFUZZ_SLOW to run")
    def test_full_region(self):
        a = cell_a._replace(start=-2.0, stop=2.0)
        b = cell_b._replace(start=-2.0, stop=0.5)
        region = sweep(example1, (a, b), beta=BETA, workers=os.cpu_count() or 1)
        table = region_table(region)
        self.assertEqual(len(table), 41 * 26)
        self.assertEqual(quadratic_only(table), 0)
        line_integral_only = (table["theorem1"] == "F") & (table["corollary1"] != "F")
        self.assertGreater(line_integral_only.sum(), 0)
        # rule 1 is unstable for a > 0
        self.assertTrue(all(table[table["a"] > 0.05]["corollary1"] != "F"))

    def test_cell_status(self):
        failed = Solution(SolverStatus.NUMERICAL_FAILURE, None, np.nan, np.nan)
        self.assertEqual(
            cell_status(AnalysisResult("theorem1", failed.status, None, failed, [])),
            CellStatus.FAILURE,
        )
        infeasible = failed._replace(status=SolverStatus.INFEASIBLE)
        self.assertEqual(
            cell_status(AnalysisResult("theorem1", infeasible.status, None, infeasible, [])),
            CellStatus.INFEASIBLE,
        )


if __name__ == "__main__":
    unittest.main()
