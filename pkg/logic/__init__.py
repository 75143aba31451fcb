"""
Decision Lab Logic Layer
Pure computation without CLI dependencies
"""
__version__ = "1.0.0"

from logic.mdp_core import (
    ActionGrid,
    Mdp,
    RewardTable,
    Solution,
    StateGrid,
    TransitionKernel,
    evaluate_policy,
    solve_mdp,
)
from logic.models import DeterministicModel, StochasticModel, TransitionDataset
from logic.optimality import ConditionReport, audit_model
from logic.synthesis import ParametricModel, synthesize_model
from logic.scenarios import ScenarioBundle, build_scenario
from logic.data_manager import DataManager

__all__ = [
    'ActionGrid', 'Mdp', 'RewardTable', 'Solution', 'StateGrid', 'TransitionKernel',
    'evaluate_policy', 'solve_mdp',
    'DeterministicModel', 'StochasticModel', 'TransitionDataset',
    'ConditionReport', 'audit_model',
    'ParametricModel', 'synthesize_model',
    'ScenarioBundle', 'build_scenario',
    'DataManager',
]
