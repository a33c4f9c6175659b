"""
CSV and manifest writing for experiment reports.
"""
import csv
import io
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import aiofiles
import aiofiles.os

logger = logging.getLogger(__name__)

# Every flag a row or a sub-run may carry
FLAG_VALUES = {
    "boundary_dominated": "r_max too short for the energy and angular momentum; radiation condition imposed early",
    "undefined_ratio": "estimate right-hand factor vanished or diverged; ratio is NaN",
    "not_applicable": "quantity not defined for this row; value is NaN",
    "nan_value": "a numerical quantity evaluated to NaN",
    "indeterminate": "dichotomy neither grew exponentially nor stayed below the bound cap",
    "tail_dominated": "Pohozaev fit needed a tail constant above the cap",
    "infeasible": "Pohozaev constant fit has no feasible solution; K1 and K2 are infinite",
    "zero_mass": "spherical mass vanished at some radii; dimensionless quantities are NaN there",
    "recovery_mismatch": "resolvent solve missed the perturbed resonance by more than 1%",
    "reflection_risk": "Schrodinger packet may reach r_max without an absorber",
    "vanishing": "sup-norm dropped below the vanishing threshold; decay exponent is -inf",
    "no_conformal_energy": "trajectory without velocities; E_K is NaN",
    "near_resonance": "Helmholtz solve at mu^2 hit a singular system",
    "zero_reference": "radiating solution vanishes on the window; discrepancy is absolute",
}

PARAMETER_COLUMNS = {
    "n": "spatial dimension",
    "l": "angular order",
    "lambda": "energy lambda",
    "epsilon": "regularisation epsilon (0 means the limiting outgoing solve)",
    "sigma": "weight exponent sigma",
    "flag": "semicolon-separated flags, see the manifest's flags table",
}

COLUMN_DOCS: Dict[str, Dict[str, str]] = {
    "lap_scan": {
        "estimate_id": "catalogued estimate identifier",
        "lhs": "measured left-hand norm",
        "rhs_factor": "data norm times the claimed lambda factor",
        "ratio": "lhs / rhs_factor",
    },
    "dichotomy": {
        "kind": "Bounded, ExponentialGrowth or Indeterminate",
        "measured_rate": "quantile of -r M'/M on the dichotomy window",
        "threshold": "C2 (1 + sqrt(lambda))",
        "r0": "radius of the fitted bound (NaN unless Bounded or Indeterminate)",
        "bound": "fitted boundedness constant",
        "K1": "Pohozaev data constant",
        "K2": "Pohozaev tail constant",
    },
    "identities": {
        "identity_id": "charge, lagrangean, charge_gradient, morawetz or carleman",
        "N": "grid points",
        "lhs": "left side of the identity",
        "rhs": "right side of the identity",
        "residual": "|lhs - rhs|",
        "relative_residual": "|lhs - rhs| / (|lhs| + |rhs| + floor)",
    },
    "counterexample_bessel": {
        "m": "scale of the cut-off resonance",
        "lambda_m": "energy m^{-l/10}",
        "eps_m": "regularisation of the cross-validation solve",
        "f_norm": "H^{0,1/2+sigma} norm of the real forcing",
        "u_norm": "H^{0,-1/2-sigma} norm of the cut-off resonance",
        "ratio": "u_norm / f_norm",
        "recovery_error": "relative miss of the resolvent solve",
        "potential_sup": "sup of <r>^{2+sigma0} |V_m|",
    },
    "counterexample_quasimode": {
        "lambda_l": "sphere eigenvalue (l+1)(l+n)",
        "near_mass": "mass within pi/4 of the equator",
        "tail_mass": "mass beyond pi/4 of the equator",
        "residual_norm": "L2 norm of the commutator residual",
        "quasimode_ratio": "residual_norm / cutoff quasimode norm",
    },
    "smoothing": {
        "t": "time",
        "integral": "running integral of the H^{1,-1/2-sigma} norm squared",
        "ratio": "integral / <(1+A)^{1/2} v0, v0>",
        "local_mass": "L2 mass in r <= r_K",
    },
    "rage": {
        "t": "time",
        "local_mass": "L2 mass in r <= r_K",
        "local_energy": "gradient energy in r <= r_K",
        "sup_u": "sup over r >= 5h of |u|",
    },
    "wave_decay": {
        "t": "time",
        "l2_norm": "L2 norm of u",
        "local_mass": "L2 mass in r <= r_K",
        "local_energy": "energy in r <= r_K",
        "sup_u": "sup over r >= 5h of |u|",
        "E_K": "conformal energy of the K vector field",
    },
    "limiting_amplitude": {
        "mu": "forcing frequency",
        "t": "time",
        "discrepancy": "relative L2(K) distance of u e^{-i mu t} from the radiating solution",
        "opposite_discrepancy": "same distance to the other branch at the final time",
    },
}


def format_value(value: Any) -> str:
    """Full double precision for floats, plain text otherwise."""
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.17g}"
    if value is None:
        return "nan"
    return str(value)


def normalize_rows(rows: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Ensure every row carries a flag column and every NaN is flagged."""
    normalized = []
    for row in rows:
        row = dict(row)
        flag = row.get("flag") or ""
        has_nan = any(
            value is None or (isinstance(value, float) and math.isnan(value))
            for key, value in row.items() if key != "flag"
        )
        if has_nan and not flag:
            flag = "nan_value"
        row["flag"] = flag
        normalized.append(row)
    return normalized


def rows_to_csv(rows: Sequence[Dict[str, Any]], columns: Optional[Sequence[str]] = None) -> str:
    """
    Render rows as comma-separated text with a header row.

    Args:
        rows: Report rows
        columns: Column order (defaults to the keys of the first row)

    Returns:
        str: CSV text with '\\n' line endings
    """
    if columns is None:
        columns = list(rows[0]) if rows else []
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(column)) for column in columns])
    return buffer.getvalue()


def document_columns(experiment: str, columns: Sequence[str]) -> Dict[str, str]:
    docs = {**PARAMETER_COLUMNS, **COLUMN_DOCS.get(experiment, {})}
    return {column: docs.get(column, "") for column in columns}


class ReportWriter:
    """Writes one CSV per experiment and a JSON manifest next to it."""

    def __init__(self, output_dir: str):
        self.output_dir = Path(output_dir)

    def csv_path(self, experiment: str) -> Path:
        return self.output_dir / f"{experiment}.csv"

    def manifest_path(self, experiment: str) -> Path:
        return self.output_dir / f"{experiment}_manifest.json"

    async def write_csv(self, experiment: str, rows: Sequence[Dict[str, Any]]) -> List[str]:
        """
        Write the rows of one experiment.

        Returns:
            List[str]: The column order used
        """
        rows = normalize_rows(rows)
        columns = list(rows[0]) if rows else list(PARAMETER_COLUMNS)
        await aiofiles.os.makedirs(self.output_dir, exist_ok=True)
        async with aiofiles.open(self.csv_path(experiment), "w", encoding="utf-8", newline="") as f:
            await f.write(rows_to_csv(rows, columns))
        logger.info(f"Wrote {len(rows)} rows to {self.csv_path(experiment)}")
        return columns

    async def write_manifest(self, experiment: str, manifest: Dict[str, Any]) -> Path:
        await aiofiles.os.makedirs(self.output_dir, exist_ok=True)
        path = self.manifest_path(experiment)
        async with aiofiles.open(path, "w", encoding="utf-8") as f:
            await f.write(json.dumps(manifest, indent=2, sort_keys=True, default=format_value))
        return path

    async def write_report(
        self,
        experiment: str,
        rows: Sequence[Dict[str, Any]],
        manifest: Dict[str, Any],
    ) -> Dict[str, Any]:
        """
        Write CSV and manifest; the manifest gains the documented columns and the flag table.

        Returns:
            Dict with 'success', 'csv_path', 'manifest_path', 'error' keys
        """
        try:
            columns = await self.write_csv(experiment, rows)
            manifest = {
                **manifest,
                "columns": document_columns(experiment, columns),
                "flag_values": FLAG_VALUES,
            }
            manifest_path = await self.write_manifest(experiment, manifest)
            return {
                "success": True,
                "csv_path": str(self.csv_path(experiment)),
                "manifest_path": str(manifest_path),
                "error": None,
            }
        except Exception as e:
            logger.error(f"Error writing report for {experiment}: {str(e)}")
            return {"success": False, "csv_path": None, "manifest_path": None, "error": str(e)}
