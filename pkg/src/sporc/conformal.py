"""Split conformal calibration of norm-ball uncertainty sets for constraint rows."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sporc.errors import DimMismatch
from sporc.predictor import MLPPredictor
from sporc.solver import NORMS, BallUncertainty

MEMBERSHIP_TOL = 1e-9


def _row_norms(R, norm):
    if norm == "l1":
        return np.abs(R).sum(axis=-1)
    if norm == "l2":
        return np.sqrt((R * R).sum(axis=-1))
    raise ValueError(f"norm must be one of {NORMS}, got {norm!r}")


def nonconformity_scores(predictor, calib, norm="l2", row=0):
    """``||a_i[row] - g(x_i)[row]||`` for every calibration sample."""
    n, p, d, m_c = calib.dims
    if not 0 <= row < m_c:
        raise DimMismatch(f"row {row} out of range for m_c = {m_c}")
    if n and (predictor.m_c != m_c or predictor.d != d):
        raise DimMismatch("predictor output shape does not match the dataset")
    pred = predictor.predict_batch(calib.x) if n else np.zeros((0, m_c, d))
    return _row_norms(calib.a[:, row, :] - pred[:, row, :], norm)


def conformal_rank(n, alpha):
    """1-based order statistic ``ceil((n + 1)(1 - alpha))`` used as the threshold."""
    # the 1e-9 guard keeps e.g. 100 * 0.9 = 90.00000000000001 at rank 90
    return int(math.ceil((n + 1) * (1.0 - alpha) - 1e-9))


def conformal_quantile(scores, alpha):
    """Split-conformal radius; ``inf`` when the required rank exceeds the sample size."""
    scores = np.asarray(scores, float).ravel()
    if scores.size == 0:
        raise ValueError("need at least one calibration score")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    k = conformal_rank(scores.size, alpha)
    if k > scores.size:
        return math.inf
    return float(np.sort(scores, kind="stable")[max(k, 1) - 1])


@dataclass(frozen=True)
class ConformalCalibrator:
    predictor: MLPPredictor
    quantiles: tuple
    norm: str = "l2"
    alpha: float = 0.2

    def __post_init__(self):
        q = tuple(float(v) for v in self.quantiles)
        if any(math.isnan(v) or v < 0 for v in q):
            raise ValueError(f"quantiles must be >= 0 or inf, got {q}")
        if len(q) != self.predictor.m_c:
            raise DimMismatch(f"{len(q)} quantiles for {self.predictor.m_c} constraint rows")
        object.__setattr__(self, "quantiles", q)

    @property
    def m_c(self):
        return self.predictor.m_c

    def centers(self, X):
        return self.predictor.predict_batch(X)

    def sets(self, x):
        return uncertainty_set(self, x)

    def covered_rows(self, dataset):
        """Boolean ``(n, m_c)`` array: is ``a_i[j]`` inside ``U_j(x_i)``."""
        if dataset.n == 0:
            return np.zeros((0, self.m_c), dtype=bool)
        R = dataset.a - self.centers(dataset.x)
        dist = _row_norms(R, self.norm)
        radii = np.asarray(self.quantiles)
        return dist <= radii[None, :] + MEMBERSHIP_TOL

    def covered(self, dataset):
        return self.covered_rows(dataset).all(axis=1)

    def with_quantiles(self, quantiles):
        return ConformalCalibrator(self.predictor, tuple(quantiles), self.norm, self.alpha)

    def to_dict(self, predictor_ref=None):
        obj = {
            "norm": self.norm,
            "alpha": self.alpha,
            "quantiles": [q if math.isfinite(q) else "inf" for q in self.quantiles],
        }
        if predictor_ref is not None:
            obj["predictor"] = str(predictor_ref)
        else:
            obj["predictor"] = self.predictor.to_dict()
        return obj

    @classmethod
    def from_dict(cls, obj, base_dir="."):
        pred = obj["predictor"]
        if isinstance(pred, str):
            pred = json.loads((Path(base_dir) / pred).read_text(encoding="utf-8"))
        q = tuple(math.inf if v == "inf" else float(v) for v in obj["quantiles"])
        return cls(MLPPredictor.from_dict(pred), q, obj["norm"], float(obj["alpha"]))


def calibrate(predictor, calib, alpha=0.2, norm="l2"):
    """One radius per constraint row from the calibration split."""
    quantiles = tuple(
        conformal_quantile(nonconformity_scores(predictor, calib, norm, j), alpha)
        for j in range(predictor.m_c)
    )
    return ConformalCalibrator(predictor, quantiles, norm, alpha)


def uncertainty_set(cal, x):
    """Per-row balls ``{a : ||a - g(x)[j]|| <= Q_j}``; check ``ball.is_infinite`` for Q = inf."""
    x = np.asarray(x, float)
    if x.shape != (cal.predictor.p,):
        raise DimMismatch(f"x has shape {x.shape}, expected ({cal.predictor.p},)")
    center = cal.predictor.predict(x)
    return [BallUncertainty(center[j], cal.quantiles[j], cal.norm) for j in range(cal.m_c)]


def uncertainty_sets_batch(cal, X):
    centers = cal.centers(X)
    return [
        [BallUncertainty(c[j], cal.quantiles[j], cal.norm) for j in range(cal.m_c)]
        for c in centers
    ]


def empirical_coverage(cal, test, per_row=False):
    """Fraction of test samples whose every row lies in its set (and per-row fractions)."""
    if test.n < 1:
        raise ValueError("need at least one test sample")
    rows = cal.covered_rows(test)
    joint = float(rows.all(axis=1).mean())
    if per_row:
        return joint, tuple(float(v) for v in rows.mean(axis=0))
    return joint
