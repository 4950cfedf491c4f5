from forklab.scenarios.config import ScenarioConfig, load_corpus, load_scenario
from forklab.scenarios.export import export_report
from forklab.scenarios.matrix import MatrixReport, golden_matrix, run_matrix
from forklab.scenarios.runner import ScenarioResult, run_scenario
from forklab.scenarios.trials import TrialResult, run_trials, wilson_interval

__all__ = [
    "MatrixReport",
    "ScenarioConfig",
    "ScenarioResult",
    "TrialResult",
    "export_report",
    "golden_matrix",
    "load_corpus",
    "load_scenario",
    "run_matrix",
    "run_scenario",
    "run_trials",
    "wilson_interval",
]
