from math import exp
import unittest

import numpy as np

from itsfuzz.errors import DegenerateDenominator
from itsfuzz.errors import DimensionMismatch
from itsfuzz.errors import UnboundedDerivative
from itsfuzz.tsmodel import basis
from itsfuzz.tsmodel import basis_jacobian
from itsfuzz.tsmodel import beta_bounds
from itsfuzz.tsmodel import build_model
from itsfuzz.tsmodel import closed_loop
from itsfuzz.tsmodel import normalize
from itsfuzz.tsmodel import normalize_derivative
from itsfuzz.tsmodel import round_up
from itsfuzz.tsmodel import validate
from itsfuzz.tsmodel import with_parameters
from itsfuzz.types import Complement
from itsfuzz.types import Custom
from itsfuzz.types import Gaussian
from itsfuzz.types import MembershipFamily
from itsfuzz.types import SweepParameter
from lyra.lyra import bundled_config
from lyra.lyra import parse_config

example1 = parse_config(bundled_config("example1"), "example1").model
example2 = parse_config(bundled_config("example2"), "example2").model

# (dimension, x_j, normalized grades)
normalized = [
    (0, 0.0, [0.0169, 0.9831]),
    (1, 3.0, [0.0024, 0.9976]),
    (0, 1.0, [0.0169 * exp(-1), 1 - 0.0169 * exp(-1)]),
]

# (ordinals, rule kinds reported by `validate`)
rule_bases = [
    ([[1, 1], [1, 2], [2, 1]], {"incomplete rule base"}),
    ([[1, 1], [1, 2], [2, 1], [2, 1]], {"incomplete rule base", "duplicate rule"}),
    ([[1, 1], [1, 2], [2, 1], [2, 3]], {"ordinal range", "incomplete rule base"}),
]


def _with_ordinals(model, ordinals):
    s = len(ordinals)
    return model._replace(
        ordinals=np.array(ordinals),
        A=model.A[np.arange(s) % model.s],
        B=model.B[np.arange(s) % model.s],
        C=model.C[np.arange(s) % model.s],
    )


class TestMemberships(unittest.TestCase):
    def test_normalized_values(self):
        for j, x, expected in normalized:
            np.testing.assert_allclose(
                normalize(example2.families[j], x), expected, rtol=0, atol=1e-12
            )

    def test_derivative_closed_form(self):
        derivative = normalize_derivative(example2.families[0], 1.0)
        self.assertAlmostEqual(derivative[0], -2 * 0.0169 * exp(-1), places=12)
        self.assertAlmostEqual(derivative.sum(), 0.0, places=14)

    def test_derivative_of_custom_grades(self):
        family = MembershipFamily(
            0, (Custom(lambda t: exp(-(t**2))), Custom(lambda t: 1.0))
        )
        exact = MembershipFamily(0, (Gaussian(1.0, 1.0), Custom(lambda t: 1.0)))
        xs = np.linspace(-2, 2, 9)
        np.testing.assert_allclose(
            normalize_derivative(family, xs),
            normalize_derivative(exact, xs),
            atol=1e-8,
        )

    def test_degenerate_denominator(self):
        family = MembershipFamily(0, (Gaussian(1.0, 1.0, -40.0), Gaussian(1.0, 1.0, 40.0)))
        with self.assertRaises(DegenerateDenominator):
            normalize(family, 0.0)


class TestBasis(unittest.TestCase):
    def test_product_of_grades(self):
        h = basis(example2, np.array([0.0, 3.0]))
        self.assertAlmostEqual(h[0], 0.0169 * 0.0024, places=15)

    def test_partition_of_unity(self):
        xs = np.random.default_rng(1).uniform(-50, 50, size=(500, 2))
        h = basis(example2, xs)
        self.assertEqual(h.shape, (500, 4))
        np.testing.assert_allclose(h.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        self.assertTrue(np.all(h >= 0))

    def test_jacobian_columns_sum_to_zero(self):
        xs = np.random.default_rng(2).uniform(-10, 10, size=(100, 2))
        jac = basis_jacobian(example2, xs)
        np.testing.assert_allclose(jac.sum(axis=1), 0.0, atol=1e-15)

    def test_jacobian_against_differences(self):
        xs = np.random.default_rng(4).uniform(-10, 10, size=(100, 2))
        step = 1e-6
        fd = np.stack(
            [
                (basis(example2, xs + step * e) - basis(example2, xs - step * e)) / (2 * step)
                for e in np.eye(2)
            ],
            axis=2,
        )
        np.testing.assert_allclose(basis_jacobian(example2, xs), fd, atol=1e-9)

    def test_wrong_state_size(self):
        with self.assertRaises(DimensionMismatch):
            basis(example2, np.zeros(3))


class TestBetaBounds(unittest.TestCase):
    def test_uniform_envelope(self):
        bounds = beta_bounds(example2)
        np.testing.assert_array_equal(bounds.entries, np.full((4, 2), 0.0125))
        self.assertAlmostEqual(bounds.beta, 0.1, places=12)
        self.assertLess(abs(bounds.raw[0, 0] - 2 * 0.0169 / exp(1)), 1e-4)
        self.assertEqual(bounds.methods[0], ("closed-form", "grid-refined"))

    def test_entrywise_envelope(self):
        bounds = beta_bounds(example2, envelope="entrywise")
        np.testing.assert_array_equal(bounds.entries[:, 0], 0.0125)
        self.assertTrue(np.all(bounds.entries[:, 1] < 0.0125))
        self.assertTrue(np.all(bounds.entries >= bounds.raw))
        self.assertAlmostEqual(bounds.beta, bounds.entries.sum(), places=14)

    def test_bounds_hold_on_samples(self):
        for model in (example1, example2):
            bounds = beta_bounds(model, envelope="entrywise")
            xs = np.random.default_rng(5).uniform(-model.box, model.box, size=(10_000, model.n))
            scaled = np.abs(xs[:, None, :] * basis_jacobian(model, xs))
            self.assertTrue(np.all(scaled <= bounds.entries + 1e-9))

    def test_bounds_grow_with_the_box(self):
        previous = None
        for box in (0.5, 1.0, 2.0, 5.0, 10.0, 50.0):
            raw = beta_bounds(example2, box=box).raw
            if previous is not None:
                self.assertTrue(np.all(raw >= previous - 1e-12), box)
            previous = raw
        small = beta_bounds(example2, box=0.5).raw
        self.assertTrue(np.all(beta_bounds(example2, box=5.0).raw > small))

    def test_unknown_envelope(self):
        with self.assertRaises(ValueError):
            beta_bounds(example2, envelope="sharp")

    def test_rounding(self):
        self.assertEqual(round_up(0.012434), 0.0125)
        self.assertEqual(round_up(0.0125), 0.0125)
        self.assertEqual(round_up(0.0), 1e-4)

    def test_growing_derivative(self):
        family = MembershipFamily(0, (Custom(lambda t: exp(t)), Custom(lambda t: 1.0)))
        model = build_model([[1], [2]], [[[-1.0]], [[-1.0]]], [family], box=1.0)
        with self.assertRaises(UnboundedDerivative):
            beta_bounds(model)


class TestValidate(unittest.TestCase):
    def test_examples_are_valid(self):
        for model in (example1, example2):
            report = validate(model)
            self.assertEqual(report.violations, [])
            self.assertTrue(report.full_combination)

    def test_rule_bases(self):
        for ordinals, kinds in rule_bases:
            report = validate(_with_ordinals(example2, ordinals))
            self.assertEqual({v.kind for v in report.violations}, kinds)
            self.assertFalse(report.full_combination)

    def test_quadratic_mode_accepts_partial_rule_bases(self):
        report = validate(_with_ordinals(example2, rule_bases[0][0]))
        self.assertEqual(report.errors(line_integral=False), [])
        self.assertTrue(report.errors(line_integral=True))

    def test_degenerate_family(self):
        family = MembershipFamily(0, (Gaussian(1.0, 1.0, -40.0), Gaussian(1.0, 1.0, 40.0)))
        model = build_model([[1], [2]], [[[-1.0]], [[-1.0]]], [family])
        kinds = {v.kind for v in validate(model).violations}
        self.assertIn("degenerate denominator", kinds)

    def test_bad_grade_parameters(self):
        family = MembershipFamily(0, (Gaussian(-1.0, 1.0), Complement()))
        model = build_model([[1], [2]], [[[-1.0]], [[-1.0]]], [family])
        kinds = {v.kind for v in validate(model).violations}
        self.assertIn("grade parameters", kinds)

    def test_wrong_dimensions(self):
        model = example2._replace(C=example2.C[:, :1])
        kinds = {v.kind for v in validate(model).violations}
        self.assertEqual(kinds, {"dimension"})


class TestModelTransforms(unittest.TestCase):
    def test_single_input_is_expanded(self):
        model = build_model(
            example2.ordinals, example2.A, example2.families, B=example2.B[:, :, 0]
        )
        self.assertEqual(model.B.shape, (4, 2, 1))
        self.assertEqual(model.p, 1)
        self.assertEqual(example1.p, 0)

    def test_with_parameters(self):
        slots = [
            SweepParameter("a", "A", 0, 1, 1, -2.0, 2.0, 0.1),
            SweepParameter("b", "A", 3, 0, 0, -2.0, 0.5, 0.1),
        ]
        model = with_parameters(example1, slots, (0.3, -1.7))
        self.assertEqual(model.A[0, 1, 1], 0.3)
        self.assertEqual(model.A[3, 0, 0], -1.7)
        self.assertEqual(example1.A[0, 1, 1], -1.0)

    def test_closed_loop_vertices(self):
        gains = np.arange(8, dtype=float).reshape(4, 1, 2)
        vertices = closed_loop(example2, gains).vertices
        for i in range(4):
            for j in range(4):
                np.testing.assert_allclose(
                    vertices[i, j], example2.A[i] + example2.B[i] @ gains[j]
                )

    def test_closed_loop_shape(self):
        with self.assertRaises(DimensionMismatch):
            closed_loop(example2, np.zeros((4, 2)))


if __name__ == "__main__":
    unittest.main()
