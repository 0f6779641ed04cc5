"""Placebo tests that reshuffle unit weather histories.

Each draw assigns the complete weather series of one unit to another
(the year structure within a unit is kept), re-estimates the model and
recomputes the statistic.  Draw ``b`` uses its own random stream, so the
result does not depend on how draws are spread over threads.
"""
from __future__ import annotations

import logging
from collections import ChainMap
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .core import PanelTable
from .exceptions import RankError, ValidationError
from .regress import (
    Absorber, FitResult, ModelSpec, _check_columns, _codes_for, design, design_columns, fit_within,
    impact_gradient,
)
from .rng import stream

log = logging.getLogger(__name__)

MAX_SKIPPED = 0.10


@dataclass(frozen=True)
class Statistic:
    """A scalar function of the coefficients.

    ``kind='warming'`` is the average impact of warming by ``delta``;
    ``kind='coef'`` is a single coefficient; ``kind='linear'`` is
    ``sum(weights[name] * gamma[name])``.
    """

    kind: str
    delta: float = 2.0
    weights: tuple = ()

    @classmethod
    def parse(cls, text: str) -> "Statistic":
        head, _, arg = text.partition(":")
        if head == "warming":
            return cls("warming", float(arg or 2.0))
        if head == "coef" and arg:
            return cls("coef", weights=((arg, 1.0),))
        if head == "linear" and arg:
            pairs = []
            for part in arg.split(","):
                name, _, w = part.partition("=")
                pairs.append((name, float(w or 1.0)))
            return cls("linear", weights=tuple(pairs))
        raise ValidationError(f"cannot parse statistic {text!r}; use warming:DELTA, coef:NAME or linear:a=w,b=w")

    def value(self, gamma, names, spec: ModelSpec, source) -> float:
        if self.kind == "warming":
            g = impact_gradient(spec, source, self.delta, names)
            return float(g @ gamma)
        pos = {n: i for i, n in enumerate(names)}
        missing = [n for n, _ in self.weights if n not in pos]
        if missing:
            raise ValidationError(f"statistic refers to unknown coefficients: {', '.join(missing)}")
        return float(sum(w * gamma[pos[n]] for n, w in self.weights))

    def of_fit(self, fit: FitResult, spec: ModelSpec) -> float:
        return self.value(fit.gamma, fit.names, spec, fit.frame)


@dataclass(frozen=True, eq=False)
class PermutationResult:
    stat: float
    p: float
    null_draws: np.ndarray
    n_skipped: int
    B: int
    seed: int

    def to_dict(self):
        return {
            "stat": self.stat, "p": self.p, "B": self.B, "seed": self.seed, "n_skipped": self.n_skipped,
            "null_draws": [None if np.isnan(v) else float(v) for v in self.null_draws],
        }


class PlaceboTest:
    """Re-estimation of one model under unit permutations of its weather columns.

    The outcome, fixed effects and non-weather regressors stay in place.
    """

    def __init__(self, panel: PanelTable, spec: ModelSpec, statistic="warming:2"):
        self.spec = spec
        self.statistic = Statistic.parse(statistic) if isinstance(statistic, str) else statistic
        self.panel = panel
        y, X, frame = design(panel, spec)
        self.frame = frame
        self.names = list(X.columns)
        weather = spec.weather_columns
        if not weather:
            raise ValidationError("the model has no weather columns to permute")
        missing = [c for c in weather if c not in frame.columns]
        if missing:
            raise ValidationError(f"panel lacks weather column(s): {', '.join(missing)}")
        self.weather = weather
        self.units, self.unit_code = np.unique(frame["unit_id"].to_numpy(), return_inverse=True)
        self.years, self.year_code = np.unique(frame["year"].to_numpy(), return_inverse=True)
        full = panel.frame
        uc = pd.Index(self.units).get_indexer(full["unit_id"])
        tc = pd.Index(self.years).get_indexer(full["year"])
        ok = (uc >= 0) & (tc >= 0)
        self.cube = np.full((len(self.units), len(self.years), len(weather)), np.nan)
        self.cube[uc[ok], tc[ok]] = full.loc[ok, weather].to_numpy(dtype=np.float64)
        self.w = frame[spec.weights].to_numpy(dtype=np.float64) if spec.weights else np.ones(len(frame))
        self.sw = np.sqrt(self.w)
        self.absorber = Absorber(_codes_for(frame, spec), self.w)
        self.yd = self.absorber.transform(y)
        self.sample = fit_within(panel, spec)
        self.stat = self.statistic.of_fit(self.sample, spec)

    def statistic_for(self, perm) -> float:
        """Statistic after giving unit ``u`` the weather of unit ``perm[u]``.

        Raises :class:`RankError` when the permuted design is degenerate.
        """
        perm = np.asarray(perm)
        vals = self.cube[perm[self.unit_code], self.year_code]
        if np.isnan(vals).any():
            return self._slow(perm)
        source = ChainMap({c: vals[:, k] for k, c in enumerate(self.weather)}, self.frame)
        X = np.column_stack(list(design_columns(self.spec, source, self.frame).values()))
        Xd = self.absorber.transform(X)
        _check_columns(X, Xd, self.names)
        gamma, *_ = np.linalg.lstsq(Xd * self.sw[:, None], self.yd * self.sw, rcond=None)
        return self.statistic.value(gamma, self.names, self.spec, source)

    def _slow(self, perm):
        # unbalanced panels: the donor unit may lack some years, so rows change
        frame = self.panel.frame.copy()
        uc = pd.Index(self.units).get_indexer(frame["unit_id"])
        tc = pd.Index(self.years).get_indexer(frame["year"])
        ok = (uc >= 0) & (tc >= 0)
        vals = np.full((len(frame), len(self.weather)), np.nan)
        vals[ok] = self.cube[perm[uc[ok]], tc[ok]]
        for k, c in enumerate(self.weather):
            frame[c] = vals[:, k]
        fit = fit_within(PanelTable(frame), self.spec)
        return self.statistic.of_fit(fit, self.spec)

    def draw(self, seed: int, b: int) -> float:
        perm = stream(seed, b).permutation(len(self.units))
        try:
            return self.statistic_for(perm)
        except RankError:
            return np.nan

    def run(self, B: int, seed: int, threads: int = 1, max_skipped: float = MAX_SKIPPED) -> PermutationResult:
        if int(B) != B or B < 1:
            raise ValidationError(f"B must be a positive integer, got {B}")
        draws_idx = range(1, int(B) + 1)
        if threads and threads > 1:
            with ThreadPoolExecutor(max_workers=int(threads)) as pool:
                null = np.array(list(pool.map(lambda b: self.draw(seed, b), draws_idx)))
        else:
            null = np.array([self.draw(seed, b) for b in draws_idx])
        skipped = int(np.isnan(null).sum())
        if skipped > max_skipped * B:
            raise ValidationError(f"{skipped} of {B} permutations gave a degenerate design (limit {max_skipped:.0%})")
        if skipped:
            log.warning("%d of %d permutations skipped (rank loss)", skipped, B)
        valid = null[~np.isnan(null)]
        hits = np.count_nonzero(np.abs(valid) >= abs(self.stat) * (1 - 1e-12))
        p = (1 + hits) / (valid.size + 1)
        return PermutationResult(self.stat, float(p), null, skipped, int(B), int(seed))


def permutation_test(panel: PanelTable, spec: ModelSpec, statistic="warming:2", B: int = 999, seed: int = 0,
                     threads: int = 1) -> PermutationResult:
    """Permutation p-value ``(1 + #{|stat_b| >= |stat|}) / (B + 1)``.

    Parameters
    ----------
    statistic : str or Statistic
        ``warming:DELTA``, ``coef:NAME`` or ``linear:a=w,b=w``.
    B : int
        Number of permutations.
    seed : int
        Root seed; draw ``b`` uses stream ``(seed, b)``.
    threads : int
        Worker threads; results do not depend on it.
    """
    return PlaceboTest(panel, spec, statistic).run(B, seed, threads)
