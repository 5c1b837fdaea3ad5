import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import minmarg as mm
from minmarg.model import (
    Constraint,
    IlpInstance,
    from_json,
    make_constraint,
    ordered_dot,
)

TINY_TEXT = """\
\\ the standard toy problem
Minimize
 obj: - x1 - x2 - x3
Subject To
 c1: x1 + x2 <= 1
 c2: x2 + x3 <= 1
Binary
 x1 x2 x3
End
"""


class TestParse:
    def test_tiny(self):
        inst = mm.parse_lp(TINY_TEXT)
        assert inst.num_vars == 3
        assert inst.num_constraints == 2
        assert np.array_equal(inst.objective, [-1.0, -1.0, -1.0])
        assert inst.constraints[0].vars == (0, 1)
        assert inst.constraints[1].vars == (1, 2)
        assert inst.equal(mm.tiny_instance())

    def test_maximize_negates(self):
        inst = mm.parse_lp("Maximize\n x1\nSubject To\n c: x1 <= 1\nBinary\n x1\nEnd\n")
        assert np.array_equal(inst.objective, [-1.0])

    def test_strict_relation_rejected(self):
        with pytest.raises(mm.ParseError, match="unsupported relation"):
            mm.parse_lp("Minimize\n x1\nSubject To\n x1 + x2 < 1\nBinary\n x1 x2\nEnd\n")

    def test_ge_normalized_by_negation(self):
        inst = mm.parse_lp(
            "Minimize\n x1\nSubject To\n c: 2 x1 - x2 >= 1\nBinary\n x1 x2\nEnd\n")
        row = inst.constraints[0]
        assert row.rel == "le"
        assert row.coeffs == (-2.0, 1.0)
        assert row.rhs == -1.0

    def test_undeclared_variable(self):
        with pytest.raises(mm.ParseError, match="not declared binary"):
            mm.parse_lp("Minimize\n y\nSubject To\n y <= 1\nBinary\n x1\nEnd\n")

    def test_duplicate_in_row(self):
        with pytest.raises(mm.ParseError, match="duplicate"):
            mm.parse_lp("Minimize\n x1\nSubject To\n x1 + x1 <= 1\nBinary\n x1\nEnd\n")

    def test_unsupported_section(self):
        with pytest.raises(mm.ParseError, match="unsupported section"):
            mm.parse_lp("Minimize\n x1\nBounds\n x1 <= 1\nBinary\n x1\nEnd\n")

    def test_implicit_and_decimal_coefficients(self):
        inst = mm.parse_lp(
            "Minimize\n 2.5 x1 - .5 x2\nSubject To\n c: x1+x2 = 1\nBinary\n x1 x2\nEnd\n")
        assert np.array_equal(inst.objective, [2.5, -0.5])
        assert inst.constraints[0].rel == "eq"

    def test_lp_roundtrip_tiny(self, tiny):
        assert mm.parse_lp(mm.to_lp(tiny)).equal(tiny)

    def test_json_roundtrip_tiny(self, tiny):
        assert from_json(mm.to_json(tiny)).equal(tiny)


@st.composite
def instances(draw):
    n = draw(st.integers(1, 6))
    m = draw(st.integers(0, 5))
    c = [draw(st.floats(-4, 4, allow_nan=False).map(lambda x: round(x, 3)))
         for _ in range(n)]
    rows = []
    for _ in range(m):
        width = draw(st.integers(1, n))
        vs = draw(st.permutations(range(n)))[:width]
        coeffs = [float(draw(st.integers(-3, 3)) or 1) for _ in vs]
        rel = draw(st.sampled_from(["le", "eq"]))
        rhs = float(draw(st.integers(-3, 5)))
        rows.append(make_constraint(vs, coeffs, rel, rhs))
    return IlpInstance(num_vars=n, objective=np.array(c), constraints=tuple(rows))


class TestRoundTrip:
    @given(instances())
    @settings(max_examples=60, deadline=None)
    def test_lp_roundtrip(self, inst):
        assert mm.parse_lp(mm.to_lp(inst)).equal(
            IlpInstance(inst.num_vars, inst.objective, inst.constraints,
                        tuple(f"x{i+1}" for i in range(inst.num_vars))))

    @given(instances())
    @settings(max_examples=60, deadline=None)
    def test_json_roundtrip(self, inst):
        assert from_json(mm.to_json(inst)).equal(inst)


class TestGenerate:
    def test_empty_graph(self):
        inst = mm.generate_independent_set(5, 0.0, 7)
        assert inst.num_constraints == 0
        assert mm.enumerate_optimum(inst).value == -5.0

    def test_complete_graph(self):
        inst = mm.generate_independent_set(4, 1.0, 7)
        assert inst.num_constraints == 6
        assert mm.enumerate_optimum(inst).value == -1.0

    def test_seeded_reference_replay(self):
        # independent replay of the generator's contract: one uniform draw per
        # pair (u < v) in lexicographic order, edge iff draw < p
        n, p, seed = 10, 0.25, 42
        draws = np.random.default_rng(seed).random(n * (n - 1) // 2)
        expected = int((draws < p).sum())
        inst = mm.generate_independent_set(n, p, seed)
        assert inst.num_constraints == expected
        pairs = [row.vars for row in inst.constraints]
        k = 0
        ref_pairs = []
        for u in range(n):
            for v in range(u + 1, n):
                if draws[k] < p:
                    ref_pairs.append((u, v))
                k += 1
        assert pairs == ref_pairs

    def test_bit_determinism(self):
        a = mm.generate_independent_set(12, 0.3, 99)
        b = mm.generate_independent_set(12, 0.3, 99)
        assert a.equal(b)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            mm.generate_independent_set(0, 0.5, 1)
        with pytest.raises(ValueError):
            mm.generate_independent_set(3, 1.5, 1)


class TestDecompose:
    def test_tiny(self, tiny):
        dec = mm.decompose(tiny)
        assert dec.subproblem_vars == ((0, 1), (1, 2))
        assert dec.var_subproblems == ((0,), (0, 1), (1,))
        assert dec.num_dual_vars == 4
        assert dec.isolated == ()

    def test_single_constraint_all_vars(self):
        inst = IlpInstance(
            num_vars=3, objective=np.zeros(3),
            constraints=(make_constraint([0, 1, 2], [1, 1, 1], "le", 2),))
        dec = mm.decompose(inst)
        assert all(len(js) == 1 for js in dec.var_subproblems)

    def test_isolated_variable_reported(self, caplog):
        inst = IlpInstance(
            num_vars=4, objective=np.array([-1.0, -1.0, -1.0, -2.0]),
            constraints=(make_constraint([0, 1], [1, 1], "le", 1),))
        with caplog.at_level("WARNING"):
            dec = mm.decompose(inst)
        assert dec.isolated == (2, 3)
        assert dec.isolated_offset == -3.0
        assert "excluded" in caplog.text


class TestEnumerate:
    def test_tiny(self, tiny):
        sol = mm.enumerate_optimum(tiny)
        assert sol.assignment == (1, 0, 1)
        assert sol.value == -2.0

    def test_unconstrained(self):
        inst = IlpInstance(
            num_vars=3, objective=np.array([-1.0, -1.0, -1.0]),
            constraints=(make_constraint([0, 1, 2], [0, 0, 0], "le", 1),))
        sol = mm.enumerate_optimum(inst)
        assert sol.assignment == (1, 1, 1)
        assert sol.value == -3.0

    def test_infeasible(self):
        inst = IlpInstance(
            num_vars=1, objective=np.zeros(1),
            constraints=(make_constraint([0], [1.0], "le", 0.0),
                         make_constraint([0], [1.0], "eq", 1.0)))
        with pytest.raises(mm.InfeasibleError):
            mm.enumerate_optimum(inst)

    def test_lexicographic_tiebreak(self):
        # plateau objective: every assignment costs 0; smallest is all-zero
        inst = IlpInstance(num_vars=3, objective=np.zeros(3),
                           constraints=(make_constraint([0, 1, 2], [1, 1, 1], "le", 3),))
        assert mm.enumerate_optimum(inst).assignment == (0, 0, 0)

    def test_size_guard(self):
        inst = IlpInstance(num_vars=26, objective=np.zeros(26),
                           constraints=(make_constraint([0], [1.0], "le", 1.0),))
        with pytest.raises(ValueError):
            mm.enumerate_optimum(inst)

    def test_ordered_dot_matches_float_accumulation(self):
        coeffs = [0.1, -0.2, 0.3]
        bits = (1, 0, 1)
        assert ordered_dot(coeffs, bits) == (0.0 + 0.1) + 0.3
