"""
Artifact Import/Export Manager
Handles CSV and JSON files for datasets, solutions, models, sweeps and audit reports
"""
import csv
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from logic.mdp_core import ActionGrid, Solution, StateGrid
from logic.models import DeterministicModel, TransitionDataset
from logic.optimality import Alpha0
from logic.synthesis import FineTuneStep, SweepRow


def fmt(value) -> str:
    """Shortest round-trip text of a float; integers and flags stay integral."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


class DataManager:
    """Static methods for CSV/JSON import/export"""

    @staticmethod
    def write_rows(filepath, header: Sequence[str], rows: Iterable[Sequence[Any]]):
        """Write a header plus rows; every cell goes through ``fmt`` unless already text."""
        with open(filepath, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([c if isinstance(c, str) else fmt(c) for c in row])

    @staticmethod
    def read_rows(filepath, required: Sequence[str]) -> List[Dict[str, str]]:
        with open(filepath, "r", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            missing = [c for c in required if c not in (reader.fieldnames or [])]
            if missing:
                raise ValueError(f"{Path(filepath).name} is missing columns: {', '.join(missing)}")
            return list(reader)

    # ------------------------------------------------------------------ datasets

    @staticmethod
    def export_dataset_csv(dataset: TransitionDataset, filepath):
        """Dataset as index triples"""
        rows = zip(dataset.s_idx.tolist(), dataset.a_idx.tolist(), dataset.snext_idx.tolist())
        DataManager.write_rows(filepath, ["s_idx", "a_idx", "snext_idx"], rows)

    @staticmethod
    def import_dataset_csv(filepath, states: StateGrid, n_actions: int) -> TransitionDataset:
        rows = DataManager.read_rows(filepath, ["s_idx", "a_idx", "snext_idx"])
        if not rows:
            raise ValueError(f"{Path(filepath).name} has no records")
        cols = {k: [int(r[k]) for r in rows] for k in ("s_idx", "a_idx", "snext_idx")}
        return TransitionDataset(cols["s_idx"], cols["a_idx"], cols["snext_idx"], states, n_actions)

    # ----------------------------------------------------------------- solutions

    @staticmethod
    def export_solution_csv(states: StateGrid, actions: ActionGrid, solution: Solution, values_path, q_path):
        """V* per state and Q*/advantage/greedy flag per pair"""
        DataManager.export_values_csv(states, solution.v_star, values_path)
        rows = []
        for i, s in enumerate(states.points):
            for j, a in enumerate(actions.points):
                rows.append([s, a, solution.q_star[i, j], solution.advantage[i, j], j == solution.policy[i]])
        DataManager.write_rows(q_path, ["s", "a", "q_star", "advantage", "policy_flag"], rows)

    @staticmethod
    def export_values_csv(states: StateGrid, values: np.ndarray, filepath):
        DataManager.write_rows(
            filepath, ["s", "v_star"], zip(states.points.tolist(), np.asarray(values, dtype=float).tolist())
        )

    @staticmethod
    def import_values_csv(filepath) -> Tuple[np.ndarray, np.ndarray]:
        """State points and values of an ``s,v_star`` file"""
        rows = DataManager.read_rows(filepath, ["s", "v_star"])
        if not rows:
            raise ValueError(f"{Path(filepath).name} has no values")
        points = np.array([float(r["s"]) for r in rows])
        values = np.array([float(r["v_star"]) for r in rows])
        return points, values

    @staticmethod
    def export_scalars_csv(scalars: Dict[str, float], filepath):
        """Named scalars, one per row, sorted by name"""
        DataManager.write_rows(filepath, ["name", "value"], ([k, scalars[k]] for k in sorted(scalars)))

    @staticmethod
    def import_scalars_csv(filepath) -> Dict[str, float]:
        rows = DataManager.read_rows(filepath, ["name", "value"])
        return {r["name"]: float(r["value"]) for r in rows}

    @staticmethod
    def export_policies_csv(states: StateGrid, actions: ActionGrid, true_solution: Solution,
                            model_solution: Solution, filepath):
        rows = zip(
            states.points.tolist(),
            true_solution.v_star.tolist(),
            actions.points[true_solution.policy].tolist(),
            model_solution.v_star.tolist(),
            actions.points[model_solution.policy].tolist(),
        )
        DataManager.write_rows(filepath, ["s", "v_star", "policy", "v_model", "policy_model"], rows)

    # -------------------------------------------------------------------- models

    @staticmethod
    def export_model_csv(states: StateGrid, actions: ActionGrid, model: DeterministicModel, filepath):
        """Deterministic model; undefined pairs carry f = nan and defined = 0"""
        rows = []
        for i, s in enumerate(states.points):
            for j, a in enumerate(actions.points):
                rows.append([s, a, model.f[i, j], model.defined[i, j]])
        DataManager.write_rows(filepath, ["s", "a", "f", "defined"], rows)

    @staticmethod
    def import_model_csv(filepath, states: StateGrid, actions: ActionGrid) -> DeterministicModel:
        rows = DataManager.read_rows(filepath, ["s", "a", "f", "defined"])
        n, m = states.size, actions.size
        if len(rows) != n * m:
            raise ValueError(f"model CSV has {len(rows)} rows, expected {n * m}")
        f = np.array([float(r["f"]) for r in rows]).reshape(n, m)
        defined = np.array([r["defined"] == "1" for r in rows]).reshape(n, m)
        return DeterministicModel(np.where(defined, f, states.lo), defined, states)

    @staticmethod
    def export_fit_csv(states: StateGrid, actions: ActionGrid, mean_model: DeterministicModel,
                       mode_model: DeterministicModel, filepath):
        rows = []
        for i, s in enumerate(states.points):
            for j, a in enumerate(actions.points):
                rows.append([s, a, mean_model.f[i, j], mode_model.f[i, j]])
        DataManager.write_rows(filepath, ["s", "a", "f_mean", "f_mode"], rows)

    # ------------------------------------------------------------------- audits

    @staticmethod
    def export_delta_csv(states: StateGrid, actions: ActionGrid, delta_field: np.ndarray, filepath):
        rows = []
        for i, s in enumerate(states.points):
            for j, a in enumerate(actions.points):
                rows.append([s, a, delta_field[i, j]])
        DataManager.write_rows(filepath, ["s", "a", "delta"], rows)

    @staticmethod
    def export_alpha0_csv(alpha0: Alpha0, beta0: Alpha0, filepath):
        """Both tabulated class-K bounds, tagged by side"""
        rows = [["alpha0", x, v] for x, v in zip(alpha0.breakpoints.tolist(), alpha0.values.tolist())]
        rows += [["beta0", x, v] for x, v in zip(beta0.breakpoints.tolist(), beta0.values.tolist())]
        DataManager.write_rows(filepath, ["side", "x", "value"], rows)

    @staticmethod
    def export_sweep_csv(rows: Sequence[SweepRow], filepath):
        DataManager.write_rows(
            filepath,
            ["delta", "undefined_count", "max_jump", "continuous", "agreement_fraction"],
            ([r.delta, r.undefined_count, r.max_jump, r.continuous, r.agreement_fraction] for r in rows),
        )

    @staticmethod
    def export_trace_csv(trace: Sequence[FineTuneStep], filepath):
        n_theta = trace[0].theta.size if trace else 0
        header = ["step", "j", "objective"] + [f"theta_{i}" for i in range(n_theta)]
        rows = ([k, t.j, t.objective] + t.theta.tolist() for k, t in enumerate(trace))
        DataManager.write_rows(filepath, header, rows)

    @staticmethod
    def export_report_json(payload: Dict[str, Any], filepath):
        """Sorted keys and a trailing newline so reruns are byte-identical"""
        with open(filepath, "w", newline="", encoding="utf-8") as f:
            f.write(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True))
            f.write("\n")
