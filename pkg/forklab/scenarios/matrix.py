"""
Matrix reporter: one row per (protocol, variant), one column per attack.

Cells come only from the AttackOutcomes of the corpus run. The golden
matrix below is what the shipped corpus is expected to reproduce.
"""
from __future__ import annotations
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from forklab.errors import IncompleteCorpus
from forklab.host.script import AttackKind, AttackOutcome, Cell
from forklab.protocols import PATCHED, PROTOCOLS, VULNERABLE
from forklab.scenarios.config import ScenarioConfig
from forklab.scenarios.runner import run_scenario

logger = logging.getLogger(__name__)

MATRIX_ATTACKS: Tuple[AttackKind, ...] = (AttackKind.ROLLBACK, AttackKind.CLONING)

RowKey = Tuple[str, str]

S, F, NA = Cell.SUCCEEDS, Cell.FAILS, Cell.NOT_APPLICABLE

# (rollback, cloning) for the vulnerable variants.
GOLDEN_VULNERABLE: Dict[str, Tuple[Cell, Cell]] = {
    "PoUW": (F, S),
    "ProofOfLuck": (F, F),
    "Twilight": (NA, F),
    "FastKittenLottery": (F, S),
    "CcfKvs": (F, F),
    "PhalaWorker": (F, S),
    "SecretQuery": (S, S),
    "TenPobi": (F, S),
    "BiteForkScenario": (NA, S),
}


def _patched(cell: Cell) -> Cell:
    return F if cell == S else cell


def golden_matrix() -> Dict[RowKey, Dict[AttackKind, Cell]]:
    """Expected cells; a patched row exists only where the protocol ships a patched variant."""
    out: Dict[RowKey, Dict[AttackKind, Cell]] = {}
    for name, cells in GOLDEN_VULNERABLE.items():
        out[(name, VULNERABLE)] = dict(zip(MATRIX_ATTACKS, cells))
        if PATCHED in PROTOCOLS[name].variants:
            out[(name, PATCHED)] = {k: _patched(c) for k, c in zip(MATRIX_ATTACKS, cells)}
    return out


@dataclass(frozen=True, slots=True)
class MatrixCell:
    cell: Cell
    evidence: str
    scenario: str

    @classmethod
    def from_outcome(cls, outcome: AttackOutcome, scenario: str) -> "MatrixCell":
        return cls(outcome.cell, outcome.evidence_summary(), scenario)


@dataclass(slots=True)
class MatrixRow:
    protocol: str
    variant: str
    cells: Dict[AttackKind, MatrixCell] = field(default_factory=dict)

    @property
    def key(self) -> RowKey:
        return self.protocol, self.variant

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"protocol": self.protocol, "variant": self.variant}
        for kind in MATRIX_ATTACKS:
            c = self.cells[kind]
            d[kind.value] = c.cell.value
            d[f"{kind.value}_evidence"] = c.evidence
        return d


@dataclass(slots=True)
class MatrixReport:
    rows: List[MatrixRow]
    seed_override: Optional[int] = None

    def cells(self) -> Dict[RowKey, Dict[AttackKind, Cell]]:
        return {r.key: {k: c.cell for k, c in r.cells.items()} for r in self.rows}

    def mismatches(self, golden: Optional[Mapping[RowKey, Mapping[AttackKind, Cell]]] = None) -> List[Dict[str, str]]:
        """Every cell that differs from `golden` (default: the golden matrix), in row order."""
        golden = golden if golden is not None else golden_matrix()
        got = self.cells()
        out: List[Dict[str, str]] = []
        for key in sorted(set(golden) | set(got), key=_row_order):
            for kind in MATRIX_ATTACKS:
                want = golden.get(key, {}).get(kind)
                have = got.get(key, {}).get(kind)
                if want != have:
                    out.append({
                        "protocol": key[0],
                        "variant": key[1],
                        "attack": kind.value,
                        "expected": want.value if want else "-",
                        "got": have.value if have else "-",
                    })
        return out

    def to_rows(self) -> List[Dict[str, Any]]:
        return [r.to_dict() for r in self.rows]

    def to_record(self) -> Dict[str, Any]:
        return {"seed_override": self.seed_override, "rows": self.to_rows()}


def _row_order(key: RowKey) -> Tuple[int, int]:
    names = list(PROTOCOLS)
    return (names.index(key[0]) if key[0] in names else len(names), 0 if key[1] == VULNERABLE else 1)


def group_configs_by_row(configs: Iterable[ScenarioConfig]) -> Dict[RowKey, Dict[AttackKind, ScenarioConfig]]:
    """
    Matrix scenarios grouped by (protocol, variant), keyed by attack.

    Configs with `in_matrix: false` or attack `none` are left out; a later
    file for the same cell replaces an earlier one.
    """
    groups: Dict[RowKey, Dict[AttackKind, ScenarioConfig]] = {}
    for c in configs:
        if not c.in_matrix or c.attack_kind not in MATRIX_ATTACKS:
            continue
        groups.setdefault(c.row_key(), {})[c.attack_kind] = c
    return groups


def missing_cells(groups: Mapping[RowKey, Mapping[AttackKind, ScenarioConfig]]) -> List[Tuple[str, str]]:
    missing: List[Tuple[str, str]] = []
    for name, world in PROTOCOLS.items():
        for variant in world.variants:
            have = groups.get((name, variant), {})
            for kind in MATRIX_ATTACKS:
                if kind not in have:
                    missing.append((f"{name}:{variant}", kind.value))
    return missing


def _run_cell(config: ScenarioConfig) -> Tuple[RowKey, AttackKind, MatrixCell]:
    result = run_scenario(config)
    return config.row_key(), config.attack_kind, MatrixCell.from_outcome(result.outcome, config.name)


def run_matrix(configs: Sequence[ScenarioConfig], *, seed: Optional[int] = None, jobs: int = 1) -> MatrixReport:
    """
    Run every matrix scenario and assemble the report.

    Raises IncompleteCorpus unless every (protocol, variant, attack) cell
    has a scenario. `seed` replaces every scenario's own seed.
    """
    groups = group_configs_by_row(configs)
    missing = missing_cells(groups)
    if missing:
        raise IncompleteCorpus(missing)

    todo = [
        c.with_seed(seed)
        for key in sorted(groups, key=_row_order)
        for kind, c in sorted(groups[key].items(), key=lambda kv: MATRIX_ATTACKS.index(kv[0]))
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, todo))
    else:
        results = [_run_cell(c) for c in todo]

    rows: Dict[RowKey, MatrixRow] = {}
    for key, kind, cell in results:
        rows.setdefault(key, MatrixRow(*key)).cells[kind] = cell
    report = MatrixReport([rows[k] for k in sorted(rows, key=_row_order)], seed_override=seed)
    logger.info("matrix: %d rows, %d scenarios", len(report.rows), len(todo))
    return report
