"""Comparison of an achieved state against a target state."""
from __future__ import annotations

import numpy as np

from .grid import GridMismatchError, SpeciesState, relative_error


def spatial_cv(values: np.ndarray) -> float:
    """Coefficient of variation over cells (std / mean)."""
    mean = float(values.mean())
    return float(values.std() / mean) if mean != 0 else float("inf")


def metrics_report(achieved: SpeciesState, target: SpeciesState) -> dict:
    if achieved.values.shape != target.values.shape:
        raise GridMismatchError(f"shape mismatch {achieved.values.shape} vs {target.values.shape}")
    if (achieved.grid.dx, achieved.grid.dy) != (target.grid.dx, target.grid.dy):
        raise GridMismatchError("cell sizes differ")
    errs = relative_error(achieved.values, target.values, target.grid)
    species = {}
    for i, name in enumerate(target.names):
        a, t = achieved.values[i], target.values[i]
        species[name] = {
            "relative_error": float(errs[i]),
            "cv_achieved": spatial_cv(a),
            "cv_target": spatial_cv(t),
            "min_achieved": float(a.min()), "max_achieved": float(a.max()),
            "min_target": float(t.min()), "max_target": float(t.max()),
        }
    return {"species": species, "max_relative_error": float(errs.max())}


def format_table(report: dict) -> str:
    head = f"{'species':<10}{'rel.err':>12}{'CV ach.':>10}{'CV tgt':>10}{'min':>12}{'max':>12}"
    lines = [head, "-" * len(head)]
    for name, r in report["species"].items():
        lines.append(f"{name:<10}{r['relative_error']:>12.4e}{r['cv_achieved']:>10.3f}{r['cv_target']:>10.3f}"
                     f"{r['min_achieved']:>12.4g}{r['max_achieved']:>12.4g}")
    return "\n".join(lines)
