"""
Command handlers
Each handler writes its CSV artifacts into the run directory and returns the JSON summary
that the runner stores as report.json.
"""
import logging
from pathlib import Path
from typing import Any, Callable, Dict

import numpy as np

from cli.config import RunConfig
from logic.data_manager import DataManager
from logic.errors import ConfigError
from logic.mdp_core import Solution, closed_loop_return, solve_mdp
from logic.models import (
    StochasticModel,
    fit_expected_value,
    fit_mle,
    induced_mdp,
    sample_transitions,
)
from logic.optimality import argmax_agreement, audit_model, delta_residual
from logic.scenarios import ScenarioBundle
from logic.synthesis import (
    constrained_fit,
    fine_tune,
    fit_parametric,
    sweep_delta,
    synthesize_model,
    synthesized_agreement,
)


logger = logging.getLogger(__name__)


def _solve_true(config: RunConfig, bundle: ScenarioBundle) -> Solution:
    solution = solve_mdp(bundle.mdp, tol=config.tol)
    logger.info("%s solved in %d iterations", bundle.name, solution.iterations)
    return solution


def _j(bundle: ScenarioBundle, solution: Solution) -> float:
    return closed_loop_return(bundle.mdp, solution.policy, bundle.region)


def _closed_form(bundle: ScenarioBundle) -> Dict[str, Any]:
    if bundle.closed_form is None:
        return {}
    cf = bundle.closed_form
    return {"riccati": {"p": cf.p, "k": cf.k, "residual": cf.residual, "iterations": cf.iterations}}


def cmd_solve(config: RunConfig, bundle: ScenarioBundle, out: Path) -> Dict[str, Any]:
    """V*, Q* and the greedy policy of the true MDP"""
    mdp = bundle.mdp
    solution = _solve_true(config, bundle)
    DataManager.export_solution_csv(
        mdp.states, mdp.actions, solution, out / "solution.csv", out / "solution_q.csv"
    )
    return {
        "iterations": solution.iterations,
        "residual": solution.residual,
        "v_star_min": float(solution.v_star.min()),
        "v_star_max": float(solution.v_star.max()),
        "j_optimal": _j(bundle, solution),
        **_closed_form(bundle),
    }


def cmd_fit(config: RunConfig, bundle: ScenarioBundle, out: Path) -> Dict[str, Any]:
    """Expected-value and mode fits, each audited against the true solution"""
    mdp = bundle.mdp
    if config.per_pair > 0:
        source = sample_transitions(mdp, config.per_pair, config.seed)
        DataManager.export_dataset_csv(source, out / "dataset.csv")
    elif config.penalty_weight > 0:
        raise ConfigError("the constrained fit needs a sampled dataset (per_pair > 0)")
    else:
        source = mdp
    mean_model = fit_expected_value(source)
    _, mode_model = fit_mle(source)
    DataManager.export_model_csv(mdp.states, mdp.actions, mean_model, out / "model.csv")
    DataManager.export_fit_csv(mdp.states, mdp.actions, mean_model, mode_model, out / "fit.csv")

    solution = _solve_true(config, bundle)
    summary = {"records": len(source) if config.per_pair > 0 else 0, "j_optimal": _j(bundle, solution)}
    for label, model in (("mean", mean_model), ("mode", mode_model)):
        report, model_solution = audit_model(mdp, solution, model, bundle.region, tol=config.tol)
        summary[label] = {**report.to_dict(), "j": _j(bundle, model_solution)}

    if config.penalty_weight > 0:
        param, fit_report = constrained_fit(
            source, mdp, solution, config.family, config.penalty_weight,
            region=bundle.region, budget=config.budget,
        )
        model_solution = solve_mdp(
            induced_mdp(param.to_model(mdp.states, mdp.actions), mdp.reward, mdp.gamma, mdp.states, mdp.actions),
            tol=config.tol,
        )
        summary["constrained"] = {
            "family": config.family,
            "theta": param.theta.tolist(),
            "data_loss": fit_report.data_loss,
            "penalty": fit_report.penalty,
            "delta_bar": fit_report.delta_bar,
            "iterations": fit_report.iterations,
            "j": _j(bundle, model_solution),
        }
    return summary


def cmd_audit(config: RunConfig, bundle: ScenarioBundle, out: Path) -> Dict[str, Any]:
    """Optimality checks for the nominal model or a model CSV"""
    mdp = bundle.mdp
    if config.model:
        model = DataManager.import_model_csv(config.model, mdp.states, mdp.actions)
        label = Path(config.model).name
    else:
        model, label = bundle.nominal_model, "nominal"
    solution = _solve_true(config, bundle)
    report, model_solution = audit_model(mdp, solution, model, bundle.region, tol=config.tol)

    DataManager.export_delta_csv(mdp.states, mdp.actions, report.delta_field, out / "delta_field.csv")
    DataManager.export_alpha0_csv(report.alpha0, report.beta0, out / "alpha0.csv")
    DataManager.export_policies_csv(mdp.states, mdp.actions, solution, model_solution, out / "policies.csv")
    return {
        "model": label,
        **report.to_dict(),
        "j_optimal": _j(bundle, solution),
        "j_model": _j(bundle, model_solution),
    }


def cmd_synthesize(config: RunConfig, bundle: ScenarioBundle, out: Path) -> Dict[str, Any]:
    """Deterministic model satisfying the sufficient condition for one Delta"""
    mdp = bundle.mdp
    solution = _solve_true(config, bundle)
    model, diagnostics = synthesize_model(mdp, solution, config.delta, bundle.region)
    DataManager.export_model_csv(mdp.states, mdp.actions, model, out / "model.csv")

    residual = delta_residual(mdp, solution, model, allow_partial=True)
    DataManager.export_delta_csv(mdp.states, mdp.actions, residual, out / "delta_field.csv")
    fraction, model_solution = synthesized_agreement(mdp, solution, model, bundle.region, tol=config.tol)
    error = np.abs(residual[model.defined] - config.delta)
    return {
        "delta": config.delta,
        "undefined_pairs": [list(p) for p in diagnostics.undefined_pairs],
        "undefined_count": len(diagnostics.undefined_pairs),
        "undefined_outside": diagnostics.undefined_outside,
        "max_jump": diagnostics.max_jump.tolist(),
        "jump_tol": diagnostics.jump_tol,
        "continuous": diagnostics.continuous,
        "jump_count": diagnostics.jump_count,
        "support_violations": diagnostics.support_violations,
        "delta_error_max": float(error.max()) if error.size else 0.0,
        "agreement_fraction": fraction,
        "j_model": _j(bundle, model_solution),
        "j_optimal": _j(bundle, solution),
    }


def cmd_sweep(config: RunConfig, bundle: ScenarioBundle, out: Path) -> Dict[str, Any]:
    """Synthesis diagnostics over a list of Delta values"""
    solution = _solve_true(config, bundle)
    rows = sweep_delta(bundle.mdp, solution, config.deltas, bundle.region, workers=config.workers)
    DataManager.export_sweep_csv(rows, out / "sweep.csv")
    return {
        "rows": len(rows),
        "defined_deltas": [r.delta for r in rows if r.undefined_count == 0],
        "continuous_deltas": [r.delta for r in rows if r.continuous],
    }


def cmd_finetune(config: RunConfig, bundle: ScenarioBundle, out: Path) -> Dict[str, Any]:
    """Closed-loop tuning of a parametric model started from its expected-value fit"""
    mdp = bundle.mdp
    start = fit_parametric(bundle.nominal_model.f, mdp.states, mdp.actions, config.family)
    solution = _solve_true(config, bundle) if config.objective == "q_match" else None
    model, trace = fine_tune(
        config.family, start.theta, mdp, config.budget,
        objective=config.objective, true_solution=solution, region=bundle.region,
    )
    DataManager.export_trace_csv(trace, out / "trace.csv")
    DataManager.export_model_csv(mdp.states, mdp.actions, model.to_model(mdp.states, mdp.actions), out / "model.csv")
    return {
        "family": config.family,
        "objective": config.objective,
        "theta_initial": start.theta.tolist(),
        "theta_final": model.theta.tolist(),
        "j_initial": trace[0].j,
        "j_final": trace[-1].j,
        "accepted_moves": len(trace) - 1,
    }


def cmd_reproduce(config: RunConfig, bundle: ScenarioBundle, out: Path) -> Dict[str, Any]:
    """True versus expected-value-model policies and values, with the perfect-model floor"""
    mdp = bundle.mdp
    solution = _solve_true(config, bundle)
    model_mdp = induced_mdp(bundle.nominal_model, mdp.reward, mdp.gamma, mdp.states, mdp.actions)
    model_solution = solve_mdp(model_mdp, tol=config.tol)
    perfect = solve_mdp(
        induced_mdp(StochasticModel(mdp.kernel), mdp.reward, mdp.gamma, mdp.states, mdp.actions),
        tol=config.tol,
    )
    DataManager.export_policies_csv(mdp.states, mdp.actions, solution, model_solution, out / "policies.csv")
    DataManager.export_solution_csv(
        mdp.states, mdp.actions, solution, out / "solution.csv", out / "solution_q.csv"
    )

    region = bundle.region
    j_opt = _j(bundle, solution)
    j_model = _j(bundle, model_solution)
    agreement = argmax_agreement(solution, model_solution)[region]
    return {
        "j_optimal": j_opt,
        "j_model": j_model,
        "gap": j_opt - j_model,
        "floor": j_opt - _j(bundle, perfect),
        "disagreement_fraction": float(1.0 - agreement.mean()),
        **_closed_form(bundle),
    }


HANDLERS: Dict[str, Callable[[RunConfig, ScenarioBundle, Path], Dict[str, Any]]] = {
    "solve": cmd_solve,
    "fit": cmd_fit,
    "audit": cmd_audit,
    "synthesize": cmd_synthesize,
    "sweep": cmd_sweep,
    "finetune": cmd_finetune,
    "reproduce": cmd_reproduce,
}
