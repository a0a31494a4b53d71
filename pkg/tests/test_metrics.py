import ast
import json
import math

import pytest

from libforge.errors import ParseError
from libforge.metrics import (
    cyclomatic_complexity,
    halstead_volume,
    maintainability_index,
    parse,
    usage_stats,
)
from oracles.cfg_oracle import cfg_complexities
from oracles.halstead_oracle import recount, volume


class TestParse:
    def test_single_function(self):
        summary = parse("def f(x):\n    return x")
        assert len(summary.functions) == 1
        assert summary.functions[0].name == "f"
        assert summary.functions[0].decision_points == 0
        assert summary.sloc == 2

    def test_empty_source(self):
        summary = parse("")
        assert summary.functions == ()
        assert summary.sloc == 0
        assert not summary.has_module_statements

    def test_fixture_hand_tally(self, fixtures_dir):
        src = (fixtures_dir / "metrics_sample.py").read_text()
        summary = parse(src)
        # hand tally: list-comprehension for + for loop; while + guard if + for + relax if
        assert {f.name: f.decision_points for f in summary.functions} == {
            "build_adjacency": 2,
            "shortest_from": 4,
        }
        expected = json.loads((fixtures_dir / "metrics_sample.expected.json").read_text())
        assert summary.sloc == expected["sloc"]

    def test_invalid_source_reports_location(self):
        with pytest.raises(ParseError) as err:
            parse("def f(:\n    pass")
        assert err.value.line == 1

    def test_sloc_excludes_blank_and_comment_lines(self):
        src = "# header\n\nx = 1\n\n# trailing comment\ny = 2\n"
        assert parse(src).sloc == 2

    def test_call_sites_counts_name_calls(self):
        summary = parse("f(1)\nf(2)\ng.h(3)\n")
        assert summary.call_sites == {"f": 2}


class TestCyclomaticComplexity:
    def test_straight_line_function(self):
        assert cyclomatic_complexity("def f():\n    return 1") == 1

    def test_if_else(self):
        src = "def f(a):\n    if a:\n        return 1\n    else:\n        return 2"
        assert cyclomatic_complexity(src) == 2

    def test_loops_bool_op_fixture_against_cfg(self):
        src = (
            "def f(items, limit):\n"
            "    total = 0\n"
            "    for item in items:\n"
            "        if item > limit and item % 2 == 0:\n"
            "            total += item\n"
            "    while total > 100:\n"
            "        total //= 2\n"
            "    return total\n"
        )
        oracle = cfg_complexities(src)["f"]
        assert cyclomatic_complexity(src) == oracle == 5

    def test_decision_count_equals_cfg_oracle_on_all_fixture_functions(self, fixtures_dir):
        src = (fixtures_dir / "cc_functions.py").read_text()
        oracle = cfg_complexities(src)
        summary = parse(src)
        assert len(oracle) >= 20
        for info in summary.functions:
            assert 1 + info.decision_points == oracle[info.name], info.name

    def test_module_level_statements_add_one_component(self):
        assert cyclomatic_complexity("x = 1\n") == 1
        assert cyclomatic_complexity("def f():\n    return 1\n\nx = f()\n") == 2

    def test_additive_over_concatenation(self, fixtures_dir):
        # fixtures avoid module-level statements, where additivity breaks
        part_a = "def f(a):\n    if a:\n        return 1\n    return 0\n"
        part_b = "def g(xs):\n    for x in xs:\n        pass\n"
        assert cyclomatic_complexity(part_a + "\n" + part_b) == cyclomatic_complexity(
            part_a
        ) + cyclomatic_complexity(part_b)
        cc_fixture = (fixtures_dir / "cc_functions.py").read_text()
        assert cyclomatic_complexity(cc_fixture + "\n" + part_a) == cyclomatic_complexity(
            cc_fixture
        ) + cyclomatic_complexity(part_a)

    def test_rename_invariance(self, fixtures_dir):
        src = (fixtures_dir / "cc_functions.py").read_text()

        class Renamer(ast.NodeTransformer):
            def visit_Name(self, node):
                node.id = "v_" + node.id
                return node

            def visit_arg(self, node):
                node.arg = "v_" + node.arg
                return node

            def visit_FunctionDef(self, node):
                node.name = "v_" + node.name
                self.generic_visit(node)
                return node

        renamed = ast.unparse(Renamer().visit(ast.parse(src)))
        original = parse(src)
        mutated = parse(renamed)
        assert cyclomatic_complexity(renamed) == cyclomatic_complexity(src)
        assert [f.decision_points for f in mutated.functions] == [
            f.decision_points for f in original.functions
        ]

    def test_rename_preserving_layout_keeps_sloc(self, fixtures_dir):
        import re

        src = (fixtures_dir / "metrics_sample.py").read_text()
        # textual whole-word rename keeps the physical layout intact
        renamed = src
        for name in ("adj", "dist", "heap", "edges", "build_adjacency", "shortest_from"):
            renamed = re.sub(rf"\b{name}\b", f"{name}_renamed", renamed)
        assert renamed != src
        assert parse(renamed).sloc == parse(src).sloc
        assert cyclomatic_complexity(renamed) == cyclomatic_complexity(src)


class TestHalstead:
    def test_empty_source_is_zero(self):
        assert halstead_volume("") == 0.0

    def test_assignment_hand_count(self):
        # operators {=}, operands {x, 1}: N=3, eta=3
        assert halstead_volume("x = 1") == pytest.approx(3 * math.log2(3), abs=1e-10)
        assert halstead_volume("x = 1") == pytest.approx(4.75488, abs=1e-4)

    def test_fixture_matches_independent_recount(self, fixtures_dir):
        for name in ("metrics_sample.py", "cc_functions.py", "readable_lib.py"):
            src = (fixtures_dir / name).read_text()
            summary = parse(src)
            ours = (
                summary.operator_total,
                summary.operand_total,
                summary.operator_distinct,
                summary.operand_distinct,
            )
            assert ours == recount(src), name
            assert halstead_volume(src) == pytest.approx(volume(src), rel=1e-12)

    def test_frozen_fixture_volume(self, fixtures_dir):
        expected = json.loads((fixtures_dir / "metrics_sample.expected.json").read_text())
        src = (fixtures_dir / "metrics_sample.py").read_text()
        assert halstead_volume(src) == pytest.approx(expected["halstead_volume"], rel=1e-12)


class TestMaintainabilityIndex:
    def test_minimal_file_formula(self):
        # V <= 1, CC = 1, SLOC = 1 -> 100 * (171 - 0.23) / 171
        got = maintainability_index("def f(): pass")
        sloc = parse("def f(): pass").sloc
        assert sloc == 1
        v = halstead_volume("def f(): pass")
        expected = 100.0 * (171 - 5.2 * math.log(max(v, 1)) - 0.23 * 1) / 171
        assert got == pytest.approx(expected, rel=1e-12)

    def test_clamps_to_zero(self):
        # huge generated file forces the raw score negative
        lines = [f"x{i} = {i} + {i * 2} * {i * 3} - {i * 5}" for i in range(4000)]
        assert maintainability_index("\n".join(lines)) == 0.0

    def test_fixture_formula_recomputation(self, fixtures_dir):
        src = (fixtures_dir / "metrics_sample.py").read_text()
        v = volume(src)
        cc = cyclomatic_complexity(src)
        sloc = parse(src).sloc
        expected = max(
            0.0,
            100.0 * (171 - 5.2 * math.log(max(v, 1.0)) - 0.23 * cc - 16.2 * math.log(max(sloc, 1)))
            / 171.0,
        )
        assert maintainability_index(src) == pytest.approx(expected, rel=1e-12)
        frozen = json.loads((fixtures_dir / "metrics_sample.expected.json").read_text())
        assert maintainability_index(src) == pytest.approx(
            frozen["maintainability_index"], rel=1e-12
        )


class TestUsageStats:
    def test_two_programs_hand_count(self):
        library = "def f():\n    return 1\n"
        progs = ["f()\nf()\n", "f()\nf()\nf()\n"]
        stats = usage_stats(library, progs)
        assert stats.num_definitions == 1
        assert stats.avg_calls == 5.0
        assert stats.single_use_fraction == 0.0
        assert stats.unused_count == 0

    def test_unused_and_single_use(self):
        library = "def f():\n    return 1\n\n\ndef g():\n    return 2\n"
        stats = usage_stats(library, ["f()\n"])
        assert stats.num_definitions == 2
        assert stats.avg_calls == 0.5
        assert stats.single_use_fraction == 0.5
        assert stats.unused_count == 1

    def test_library_internal_calls_excluded(self):
        library = "def f():\n    return 1\n\n\ndef g():\n    return f()\n"
        stats = usage_stats(library, ["g()\n"])
        assert stats.calls_per_definition == {"f": 0, "g": 1}

    def test_class_instantiations_count(self):
        library = "class Solver:\n    pass\n"
        stats = usage_stats(library, ["s = Solver()\nt = Solver()\n"])
        assert stats.calls_per_definition == {"Solver": 2}

    def test_bounds_and_consistency(self):
        library = "def a():\n    pass\n\n\ndef b():\n    pass\n\n\ndef c():\n    pass\n"
        stats = usage_stats(library, ["a()\n", "a()\nb()\n"])
        assert 0.0 <= stats.single_use_fraction <= 1.0
        # unused definitions are never counted as single-use
        assert stats.unused_count == 1 and stats.single_use_fraction == pytest.approx(1 / 3)
        assert stats.avg_calls == pytest.approx(
            sum(stats.calls_per_definition.values()) / stats.num_definitions
        )

    def test_empty_rewrites_parse_error_propagates(self):
        with pytest.raises(ParseError):
            usage_stats("def f(:\n", ["f()\n"])
