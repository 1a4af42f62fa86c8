"""Least-squares dose models from pooled statistics, the
differentially-private objective-perturbation mechanism, prediction,
and clinical error metrics.

The model solves O * eta = V where O = X'X and V = X'y are the pooled
sufficient statistics.  The private variant perturbs every entry of O
and V with Laplace noise scaled by the quadratic-loss sensitivity over
[-1, 1]-normalized rows, then projects O back to positive definite
before solving.  Smaller privacy budgets mean more noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from curie.data import (
    Dataset,
    DesignEncoding,
    NormalizationMap,
    SchemaMismatch,
    denormalize_value,
    normalize_value,
)
from curie.errors import CurieError


class SingularMatrix(CurieError):
    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class BudgetError(CurieError):
    pass


class NormalizationError(CurieError):
    pass


class EmptyValidation(CurieError):
    pass


DEFAULT_CONDITION_LIMIT = 1e8
PD_FLOOR = 1e-4
SAFETY_WINDOW = 0.20
WEEKLY = 7.0


# --------------------------------------------------------------------------
# ordinary least squares

def solve_ols(O: np.ndarray, V: np.ndarray,
              condition_limit: float = DEFAULT_CONDITION_LIMIT) -> np.ndarray:
    """Solve O * eta = V for a symmetric positive-definite O.

    Raises :class:`SingularMatrix` (with a condition estimate) when O is
    rank deficient, too ill-conditioned, or the solve residual fails
    the 1e-8 relative bound.
    """
    O = np.asarray(O, dtype=float)
    V = np.asarray(V, dtype=float).reshape(-1)
    if O.ndim != 2 or O.shape[0] != O.shape[1]:
        raise SingularMatrix(f"O must be square, got {O.shape}")
    if O.shape[0] != V.shape[0]:
        raise SingularMatrix(f"shape mismatch: O {O.shape}, V {V.shape}")
    if not np.allclose(O, O.T, rtol=1e-8, atol=1e-8):
        raise SingularMatrix("O is not symmetric")
    eigvals = np.linalg.eigvalsh(O)
    smallest, largest = eigvals[0], eigvals[-1]
    if smallest <= 0 or largest <= 0:
        raise SingularMatrix(
            f"O is not positive definite (min eigenvalue {smallest:.3e})",
            condition=float("inf"))
    condition = largest / smallest
    if condition > condition_limit:
        raise SingularMatrix(
            f"condition number {condition:.3e} exceeds limit {condition_limit:.0e}",
            condition=condition)
    eta = np.linalg.solve(O, V)
    vnorm = np.linalg.norm(V)
    if vnorm > 0:
        residual = np.linalg.norm(O @ eta - V) / vnorm
        if residual > 1e-8:
            raise SingularMatrix(
                f"solve residual {residual:.3e} exceeds 1e-8", condition=condition)
    return eta


def solve_ols_pruned(O: np.ndarray, V: np.ndarray,
                     condition_limit: float = DEFAULT_CONDITION_LIMIT,
                     ) -> np.ndarray:
    """Like :func:`solve_ols`, but tolerant of structurally-empty design
    columns (a one-hot level or boolean no released row carries): those
    columns have a zero O diagonal, are dropped from the solve, and get
    zero coefficients; they never activate for rows the model can
    legitimately score."""
    O = np.asarray(O, dtype=float)
    V = np.asarray(V, dtype=float).reshape(-1)
    diag = np.diag(O)
    scale = max(float(diag.max(initial=0.0)), 1.0)
    keep = np.where(diag > 1e-12 * scale)[0]
    if len(keep) == len(diag):
        return solve_ols(O, V, condition_limit)
    eta = np.zeros(len(diag))
    eta[keep] = solve_ols(O[np.ix_(keep, keep)], V[keep], condition_limit)
    return eta


# --------------------------------------------------------------------------
# functional mechanism

def sensitivity_bound(d: int) -> float:
    """Closed-form upper bound on the L1 sensitivity of the stacked
    (O, V) coefficients under a single-row change with rows in
    [-1, 1]^d and targets in [-1, 1]: 2 * (d + 1)^2.

    A brute-force extreme-point search (see the test suite) maxes out
    at d * (d + 1), so this bound dominates with slack.
    """
    return 2.0 * (d + 1) ** 2


def _check_normalized(O: np.ndarray, V: np.ndarray) -> None:
    n_est = O[0, 0]
    if n_est <= 0:
        raise NormalizationError("O[0,0] (the pooled row count) must be positive")
    tol = n_est * (1 + 1e-9) + 1e-9
    if np.abs(O).max() > tol or np.abs(V).max() > tol:
        raise NormalizationError(
            "statistics exceed the bounds implied by [-1, 1]-normalized rows; "
            "normalize inputs before applying the privacy mechanism")


def functional_mechanism(O: np.ndarray, V: np.ndarray, d: int,
                         epsilon: float, rng: np.random.Generator,
                         pd_floor: float = PD_FLOOR,
                         sensitivity: float | None = None,
                         ) -> np.ndarray:
    """Epsilon-differentially-private coefficients via objective
    perturbation.

    Every entry of O (upper triangle, mirrored to keep O symmetric) and
    V receives independent Laplace(sensitivity / epsilon) noise; the
    perturbed O is eigenvalue-floored at *pd_floor* to restore positive
    definiteness before solving.  The solve is direct rather than going
    through :func:`solve_ols`: the floor guarantees invertibility, and
    heavy noise draws legitimately produce ill-conditioned systems that
    the non-private contract would reject.
    """
    if epsilon <= 0:
        raise BudgetError(f"privacy budget must be positive, got {epsilon}")
    O = np.asarray(O, dtype=float)
    V = np.asarray(V, dtype=float).reshape(-1)
    _check_normalized(O, V)
    delta = sensitivity if sensitivity is not None else sensitivity_bound(d)
    b = delta / epsilon

    noise = rng.laplace(0.0, b, size=O.shape)
    O_noisy = O + np.triu(noise) + np.triu(noise, 1).T
    V_noisy = V + rng.laplace(0.0, b, size=V.shape)

    eigvals, eigvecs = np.linalg.eigh(O_noisy)
    eigvals = np.maximum(eigvals, pd_floor)
    O_pd = (eigvecs * eigvals) @ eigvecs.T
    O_pd = (O_pd + O_pd.T) / 2.0
    return np.linalg.solve(O_pd, V_noisy)


# --------------------------------------------------------------------------
# dose models

@dataclass(frozen=True)
class DoseModel:
    """Trained coefficients plus everything needed to score a raw row:
    the design encoding and the normalization bounds (numeric inputs
    and the target are model-internal [-1, 1] quantities)."""

    eta: np.ndarray
    encoding: DesignEncoding
    bounds: NormalizationMap
    privacy: str = "none"          # "none" | "dp"
    epsilon: float | None = None

    def __post_init__(self):
        if self.privacy == "dp" and (self.epsilon is None or self.epsilon <= 0):
            raise BudgetError("dp-labelled model requires a positive epsilon")
        if len(self.eta) != self.encoding.width:
            raise SchemaMismatch(
                f"coefficient length {len(self.eta)} != design width "
                f"{self.encoding.width}")
        if self.encoding.schema.target not in self.bounds:
            raise SchemaMismatch(
                f"bounds must cover the target column "
                f"{self.encoding.schema.target!r} for denormalization")

    def to_json(self) -> dict:
        return {
            "coefficients": [float(v) for v in self.eta],
            "encoding": self.encoding.to_json(),
            "schema": self.encoding.schema.to_json(),
            "bounds": {k: list(v) for k, v in self.bounds.items()},
            "privacy": self.privacy,
            "epsilon": self.epsilon,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def predict(model: DoseModel, row: Mapping) -> float:
    """Dose prediction in original units for one raw patient row."""
    schema = model.encoding.schema
    normalized = {}
    for col in schema.feature_columns:
        if col.name not in row:
            raise SchemaMismatch(f"row is missing column {col.name!r}")
        v = row[col.name]
        if col.name in model.bounds:
            lo, hi = model.bounds[col.name]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise SchemaMismatch(f"column {col.name!r}: expected numeric, got {v!r}")
            normalized[col.name] = normalize_value(float(v), lo, hi)
        else:
            normalized[col.name] = v
    x = model.encoding.encode_row(normalized)
    y_norm = float(model.eta @ x)
    lo, hi = model.bounds[schema.target]
    return denormalize_value(y_norm, lo, hi)


def predict_dataset(model: DoseModel, ds: Dataset) -> np.ndarray:
    return np.array([predict(model, row) for row in ds.rows()])


# --------------------------------------------------------------------------
# clinical metrics

@dataclass(frozen=True)
class ClinicalReport:
    mae: float
    mape: float
    under: float
    in_window: float
    over: float

    def to_json(self) -> dict:
        return {
            "mae": self.mae,
            "mape": self.mape,
            "under": self.under,
            "in_window": self.in_window,
            "over": self.over,
        }


def clinical_metrics(model: DoseModel, validation: Dataset) -> ClinicalReport:
    """MAE, MAPE, and the weekly-dose safety-window partition.

    A prediction is in the safety window when the weekly dose (7x the
    daily dose) falls within 20% of the weekly true dose; below the
    window is under-prescription, above is over-prescription.
    """
    if validation.n == 0:
        raise EmptyValidation("validation cohort is empty")
    y = np.asarray(validation.column(validation.schema.target), dtype=float)
    if np.any(y <= 0):
        raise EmptyValidation("validation doses must be positive")
    yhat = predict_dataset(model, validation)
    err = np.abs(yhat - y)
    mae = float(err.mean())
    mape = float((err / y).mean() * 100.0)
    weekly_hat, weekly = WEEKLY * yhat, WEEKLY * y
    lo = (1.0 - SAFETY_WINDOW) * weekly
    hi = (1.0 + SAFETY_WINDOW) * weekly
    under = float(np.mean(weekly_hat < lo))
    over = float(np.mean(weekly_hat > hi))
    return ClinicalReport(mae, mape, under, 1.0 - under - over, over)
