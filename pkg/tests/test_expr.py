import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from symqr import expr as ex
from symqr.expr import (
    DEFAULT_COMPLEXITY,
    ArityError,
    ExpressionError,
    ExpressionSyntaxError,
    UnknownFeatureError,
    UnknownOperatorError,
    evaluate,
    format_expr,
    parse,
    parsimony,
    random_expr,
    simplify,
)

from oracles import lexical_parsimony

MEDIAN_FUEL = "7.216*GCD + 0.003*GCD*(TP + 0.045*GCD - 7.22*AWC) + 1676.6"
MEDIAN_FUEL_NAMES = ["GCD", "TP", "AWC"]
EXTREME_FUEL = "2360.4*ASF^2 + (GCD*(TP + 2126.03))/(238.2*ASF + 0.45*AWC)"
EXTREME_FUEL_NAMES = ["ASF", "GCD", "TP", "AWC"]


@st.composite
def expressions(draw, d=3, max_size=20):
    seed = draw(st.integers(0, 2**32 - 1))
    size = draw(st.integers(1, max_size))
    return ex.random_tree(size, d, np.random.default_rng(seed))


def test_complexity_table_defaults():
    expected = {"add": 1, "sub": 1, "mul": 1, "feature": 1, "constant": 1,
                "div": 2, "square": 2, "sin": 3, "cos": 3, "exp": 4, "log": 4, "sqrt": 4}
    assert dict(DEFAULT_COMPLEXITY) == expected


def test_arity_is_enforced():
    with pytest.raises(ExpressionError):
        ex.Node("binary", "add", children=(ex.feature(0),))
    with pytest.raises(ExpressionError):
        ex.Node("unary", "tan", children=(ex.feature(0),))
    with pytest.raises(ExpressionError):
        ex.Node("feature", index=-1)


class TestEvaluate:
    def test_identity_feature(self):
        assert evaluate(parse("x0"), [[3.0]]).tolist() == [3.0]

    def test_distance_slice_of_median_fuel_model(self):
        out = evaluate(parse("7.216*x0 + 1676.6"), [[100.0]])
        assert out[0] == pytest.approx(2398.2, abs=1e-9)

    def test_log_of_negative_is_non_finite(self):
        out = evaluate(parse("log(x0)"), [[-1.0]])
        assert not np.isfinite(out[0])

    def test_division_by_zero_is_non_finite(self):
        assert not np.isfinite(evaluate(parse("x0 / x1"), [[1.0, 0.0]])[0])

    def test_constant_broadcasts(self):
        assert evaluate(parse("2.5"), np.zeros((4, 1))).tolist() == [2.5] * 4

    def test_feature_out_of_bounds(self):
        with pytest.raises(ArityError):
            evaluate(parse("x3"), np.zeros((2, 2)))

    def test_empty_matrix(self):
        with pytest.raises(ExpressionError):
            evaluate(parse("x0"), np.zeros((0, 1)))

    @settings(max_examples=50, deadline=None)
    @given(expressions())
    def test_pure(self, e):
        X = np.random.default_rng(0).normal(size=(30, 3))
        a, b = evaluate(e, X), evaluate(e, X)
        assert a.tobytes() == b.tobytes()


class TestParsimony:
    @pytest.mark.parametrize(
        "text, expected",
        [("sin(x0) + 1.5", 6), ("exp(x0) / x1", 8), ("x0", 1), ("square(x0)", 3), ("x0^2", 3)],
    )
    def test_table_sums(self, text, expected):
        assert parsimony(parse(text)) == expected

    def test_median_fuel_expression(self):
        tree = parse(MEDIAN_FUEL, MEDIAN_FUEL_NAMES)
        assert lexical_parsimony(MEDIAN_FUEL) == 19
        assert parsimony(tree) == 19

    def test_extreme_fuel_expression(self):
        # 4 constants + 5 features + 4 mul + 3 add + div 2 + square 2
        tree = parse(EXTREME_FUEL, EXTREME_FUEL_NAMES)
        assert lexical_parsimony(EXTREME_FUEL) == 20
        assert parsimony(tree) == 20

    def test_independent_of_constants_and_indices(self):
        assert parsimony(parse("3.0 * x0")) == parsimony(parse("-7.5 * x9"))

    @settings(max_examples=200, deadline=None)
    @given(expressions())
    def test_subtree_additivity(self, e):
        assert parsimony(e) == DEFAULT_COMPLEXITY[e.token] + sum(parsimony(c) for c in e.children)
        assert parsimony(e) > 0


class TestSimplify:
    def test_additive_identity(self):
        assert simplify(parse("x0 + 0.0")) == parse("x0")

    def test_constant_folding(self):
        assert simplify(parse("2.0 * 3.0")) == parse("6.0")

    def test_sequential_rules(self):
        e = parse("(x0 * 1.0) + (4.0 - 1.0)")
        s = simplify(e)
        assert s == parse("x0 + 3.0")
        X = np.random.default_rng(1).normal(size=(100, 1))
        np.testing.assert_allclose(evaluate(s, X), evaluate(e, X), rtol=1e-12)

    def test_double_negation(self):
        assert simplify(parse("0.0 - (0.0 - x0)")) == parse("x0")
        assert simplify(parse("-(-x1)")) == parse("x1")

    def test_times_zero(self):
        assert simplify(parse("sin(x0) * 0.0")) == parse("0.0")

    def test_associative_constant_merge(self):
        assert simplify(parse("2.0 * (x0 * 3.0)")) == parse("x0 * 6.0")
        assert simplify(parse("(1.0 + x0) + 2.5")) == parse("x0 + 3.5")

    def test_unchanged_when_nothing_applies(self):
        e = parse("sin(x0) / x1")
        assert simplify(e) is e

    def test_no_fold_to_non_finite(self):
        e = parse("exp(1000.0)")
        assert simplify(e) == e

    @settings(max_examples=300, deadline=None)
    @given(expressions())
    def test_never_worse_and_value_preserving(self, e):
        s = simplify(e)
        assert parsimony(s) <= parsimony(e)
        X = np.random.default_rng(2).uniform(-3, 3, size=(100, 3))
        a, b = evaluate(e, X), evaluate(s, X)
        ok = np.isfinite(a) & np.isfinite(b) & (np.abs(a) < 1e12)
        np.testing.assert_allclose(b[ok], a[ok], rtol=1e-9, atol=1e-9)


class TestText:
    def test_parse_leaf(self):
        assert parse("x0") == ex.feature(0)

    @pytest.mark.parametrize(
        "text",
        ["x0", "x0 + 1.5", "sin(x0) * (x1 - 2.0)", "-2.5 * x0", "x0 - -2.5", "(-2.5)^2",
         "x0^2^2", "x0 / (x1 / x2)", "x0 - (x1 + x2)", "exp(x0)^2", "1e-05 * x0"],
    )
    def test_canonical_text_round_trips(self, text):
        assert format_expr(parse(text)) == text

    def test_names(self):
        tree = parse(EXTREME_FUEL, EXTREME_FUEL_NAMES)
        assert parse(format_expr(tree, EXTREME_FUEL_NAMES), EXTREME_FUEL_NAMES) == tree
        X = np.array([[1.0, 100.0, 10.0, 2.0]])
        want = 2360.4 * 1.0 + (100.0 * (10.0 + 2126.03)) / (238.2 * 1.0 + 0.45 * 2.0)
        assert evaluate(tree, X)[0] == pytest.approx(want, rel=1e-12)

    def test_square_call_and_postfix_agree(self):
        assert parse("square(x0)") == parse("x0^2")

    def test_precedence(self):
        assert parse("1.0 + 2.0 * x0") == ex.binary("add", ex.constant(1.0), ex.binary("mul", ex.constant(2.0), ex.feature(0)))
        assert parse("x0 - x1 - x2") == ex.binary("sub", ex.binary("sub", ex.feature(0), ex.feature(1)), ex.feature(2))

    def test_syntax_error_has_position(self):
        with pytest.raises(ExpressionSyntaxError) as info:
            parse("x0 + * x1")
        assert info.value.position == 5

    def test_unknown_operator(self):
        with pytest.raises(UnknownOperatorError):
            parse("tan(x0)")
        with pytest.raises(UnknownOperatorError):
            parse("x0^3")

    def test_unknown_feature(self):
        with pytest.raises(UnknownFeatureError):
            parse("GCD + 1", ["TP"])

    def test_unbalanced(self):
        with pytest.raises(ExpressionSyntaxError):
            parse("(x0 + 1")

    @settings(max_examples=1000, deadline=None)
    @given(expressions())
    def test_round_trip_structural(self, e):
        text = format_expr(e)
        assert parse(text) == e
        assert format_expr(parse(text)) == text


class TestRandom:
    def test_size_one_is_leaf(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            assert random_expr(3, 1, rng).is_leaf

    def test_seeded_determinism(self):
        a = random_expr(4, 20, np.random.default_rng(42))
        b = random_expr(4, 20, np.random.default_rng(42))
        assert a == b

    def test_size_support_and_token_coverage(self):
        rng = np.random.default_rng(3)
        sizes = set()
        tokens = set()
        for _ in range(10_000):
            e = random_expr(2, 20, rng)
            assert e.size <= 20
            sizes.add(e.size)
            tokens.update(n.token for n in ex.walk(e))
        assert sizes == set(range(1, 21))
        assert tokens == set(DEFAULT_COMPLEXITY)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            random_expr(0, 5, np.random.default_rng(0))


def test_depth_and_size():
    e = parse("sin(x0) + x1 * 2.0")
    assert e.size == 6
    assert e.depth == 3
    assert math.isclose(evaluate(e, [[0.0, 1.0]])[0], 2.0)
