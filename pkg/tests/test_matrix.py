from pathlib import Path

import pytest

from forklab.errors import IncompleteCorpus
from forklab.host.script import AttackKind, Cell
from forklab.protocols import PROTOCOLS
from forklab.scenarios.config import load_corpus, parse_scenario
from forklab.scenarios.export import render_report
from forklab.scenarios.matrix import golden_matrix, group_configs_by_row, missing_cells, run_matrix

S, F, NA = Cell.SUCCEEDS, Cell.FAILS, Cell.NOT_APPLICABLE
CORPUS_DIR = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.fixture(scope="module")
def corpus():
    return load_corpus(CORPUS_DIR)


@pytest.fixture(scope="module")
def report(corpus):
    return run_matrix(corpus)


class TestGolden:
    def test_rows(self):
        golden = golden_matrix()
        assert len(golden) == 15
        assert golden[("SecretQuery", "vulnerable")] == {AttackKind.ROLLBACK: S, AttackKind.CLONING: S}
        assert golden[("SecretQuery", "patched")] == {AttackKind.ROLLBACK: F, AttackKind.CLONING: F}
        assert golden[("BiteForkScenario", "patched")][AttackKind.ROLLBACK] == NA
        assert ("CcfKvs", "patched") not in golden

    def test_patched_rows_never_succeed(self):
        for (_, variant), cells in golden_matrix().items():
            if variant == "patched":
                assert S not in cells.values()


class TestCorpusMatrix:
    def test_shipped_corpus_reproduces_the_golden_matrix(self, report):
        assert report.mismatches() == []

    def test_row_order_follows_the_protocol_list(self, report):
        names = [r.protocol for r in report.rows]
        assert names == sorted(names, key=list(PROTOCOLS).index)
        assert [r.variant for r in report.rows[:2]] == ["vulnerable", "patched"]

    def test_every_cell_names_its_scenario(self, report):
        for row in report.rows:
            for cell in row.cells.values():
                assert cell.scenario
                if cell.cell == S:
                    assert cell.evidence

    def test_markdown_rendering(self, report):
        text = render_report(report, "md", "matrix").decode()
        assert text.splitlines()[2].startswith("| protocol | variant | rollback |")
        assert "| PoUW | vulnerable | Fails |" in text

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", range(20))
    def test_cells_do_not_depend_on_the_seed(self, corpus, seed):
        assert run_matrix(corpus, seed=seed * 7919 + 1).mismatches() == []


class TestCompleteness:
    def test_missing_cells_are_reported(self, corpus):
        partial = [c for c in corpus if c.protocol != "TenPobi"]
        with pytest.raises(IncompleteCorpus) as err:
            run_matrix(partial)
        assert ("TenPobi:vulnerable", "rollback") in err.value.missing
        assert ("TenPobi:patched", "cloning") in err.value.missing
        assert len(err.value.missing) == 4

    def test_extras_stay_out_of_the_matrix(self, corpus):
        groups = group_configs_by_row(corpus)
        assert groups[("BiteForkScenario", "vulnerable")][AttackKind.CLONING].name == "bite-cloning-vulnerable"
        assert missing_cells(groups) == []

    def test_later_file_wins_a_cell(self):
        a = parse_scenario({"name": "a", "protocol": "CcfKvs", "attack": "rollback"})
        b = parse_scenario({"name": "b", "protocol": "CcfKvs", "attack": "rollback"})
        assert group_configs_by_row([a, b])[("CcfKvs", "vulnerable")][AttackKind.ROLLBACK].name == "b"

    def test_mismatches_against_a_custom_golden(self, report):
        golden = golden_matrix()
        golden[("PoUW", "vulnerable")] = {AttackKind.ROLLBACK: S, AttackKind.CLONING: S}
        assert report.mismatches(golden) == [{
            "protocol": "PoUW", "variant": "vulnerable", "attack": "rollback", "expected": "Succeeds", "got": "Fails",
        }]
