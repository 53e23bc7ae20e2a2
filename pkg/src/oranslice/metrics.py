"""Result tables: empirical CDFs, violation spread, CSV writers and the mode comparison.

All floats go to CSV through ``repr`` so a value round-trips exactly and two
identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .radio import SLICE_NAMES

SCHEMA_VERSION = 1

CSV_SCHEMAS = {
    "returns.csv": ["iteration", "mode", "return_agent<i>...", "mean_return", "updates"],
    "cdf_<slice>.csv": ["phase", "throughput_bps", "cumulative_fraction"],
    "violations.csv": ["slice", "phase", "mean_violation", "std_violation", "n_points"],
    "compare.csv": ["seed", "attention_final", "baseline_final", "relative_improvement"],
}


class EmptyTableError(ValueError):
    pass


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@dataclass
class CDFTable:
    values: np.ndarray
    fractions: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def at(self, threshold: float) -> float:
        """Fraction of samples <= threshold."""
        idx = np.searchsorted(self.values, threshold, side="right")
        return 0.0 if idx == 0 else float(self.fractions[idx - 1])


def build_cdf(samples: Iterable[float]) -> CDFTable:
    """Empirical CDF, one row per sample: sorted values against i/n for i = 1..n."""
    x = np.sort(np.asarray(list(samples), dtype=float))
    if x.size == 0:
        raise EmptyTableError("cannot build a CDF from zero samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("CDF samples must be finite")
    n = x.size
    return CDFTable(x, np.arange(1, n + 1) / n)


def violation_std(series) -> np.ndarray:
    """Population standard deviation per slice of a (T, L) violation series."""
    v = np.asarray(series, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] < 2:
        raise ValueError(f"violation series needs at least 2 points, got {v.shape[0]}")
    return v.std(axis=0, ddof=0)


def throughput_by_slice(samples: Sequence[tuple[int, float]], n_slices: int = 3) -> list[np.ndarray]:
    out: list[list[float]] = [[] for _ in range(n_slices)]
    for sid, bps in samples:
        out[int(sid)].append(float(bps))
    return [np.asarray(v) for v in out]


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    path.write_text(buf.getvalue())


def returns_header(n_agents: int) -> list[str]:
    return ["iteration", "mode", *[f"return_agent{i}" for i in range(n_agents)], "mean_return", "updates"]


def returns_row(rec) -> list:
    return [rec.iteration, rec.mode, *[float(r) for r in rec.per_agent_return], float(rec.mean_return),
            rec.updates]


def write_returns(path: Path, records: Sequence) -> None:
    n = len(records[0].per_agent_return) if records else 0
    _write_rows(Path(path), returns_header(n), (returns_row(r) for r in records))


def write_cdfs(out_dir: Path, phases: dict[str, Sequence[tuple[int, float]]],
               slice_names: Sequence[str] = SLICE_NAMES) -> list[Path]:
    """One file per slice; rows of every phase stacked and labeled."""
    paths = []
    split = {phase: throughput_by_slice(s, len(slice_names)) for phase, s in phases.items()}
    for sid, name in enumerate(slice_names):
        rows = []
        for phase, per_slice in split.items():
            if per_slice[sid].size == 0:
                continue
            t = build_cdf(per_slice[sid])
            rows.extend((phase, v, f) for v, f in zip(t.values, t.fractions))
        p = Path(out_dir) / f"cdf_{name}.csv"
        _write_rows(p, CSV_SCHEMAS["cdf_<slice>.csv"], rows)
        paths.append(p)
    return paths


def write_violations(path: Path, phases: dict[str, np.ndarray],
                     slice_names: Sequence[str] = SLICE_NAMES) -> None:
    """Mean and population std of each slice's violation series, per phase."""
    rows = []
    for sid, name in enumerate(slice_names):
        for phase, series in phases.items():
            s = np.asarray(series, dtype=float)
            if s.shape[0] < 2:
                continue
            rows.append((name, phase, float(s[:, sid].mean()), float(violation_std(s)[sid]), s.shape[0]))
    _write_rows(Path(path), CSV_SCHEMAS["violations.csv"], rows)


def read_returns(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """(iterations, mean returns) from a returns.csv."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptyTableError(f"{path} has no rows")
    it = np.array([int(r["iteration"]) for r in rows])
    ret = np.array([float(r["mean_return"]) for r in rows])
    return it, ret


def final_return(mean_returns: Sequence[float], window: int = 10) -> float:
    """Smoothed final return: mean of the last ``window`` iterations."""
    r = np.asarray(mean_returns, dtype=float)
    if r.size == 0:
        raise EmptyTableError("no returns")
    return float(r[-window:].mean())


def learning_gain(mean_returns: Sequence[float], window: int = 10) -> float:
    r = np.asarray(mean_returns, dtype=float)
    return float(r[-window:].mean() - r[:window].mean())


@dataclass
class Comparison:
    seeds: list[int]
    attention: np.ndarray
    baseline: np.ndarray

    @property
    def relative_improvement(self) -> float:
        a, b = float(self.attention.mean()), float(self.baseline.mean())
        return (a - b) / abs(b)

    @property
    def wins(self) -> int:
        return int(np.sum(self.attention >= self.baseline))


def compare_runs(attention_csvs: Sequence[Path], baseline_csvs: Sequence[Path], seeds: Sequence[int],
                 window: int = 10) -> Comparison:
    """Seed-paired final-return comparison, computed only from the returns files."""
    if not (len(attention_csvs) == len(baseline_csvs) == len(seeds)):
        raise ValueError("need one attention and one baseline file per seed")
    att = np.array([final_return(read_returns(p)[1], window) for p in attention_csvs])
    base = np.array([final_return(read_returns(p)[1], window) for p in baseline_csvs])
    return Comparison(list(seeds), att, base)


def write_comparison(path: Path, cmp: Comparison) -> None:
    rows = [(s, a, b, (a - b) / abs(b)) for s, a, b in zip(cmp.seeds, cmp.attention, cmp.baseline)]
    rows.append(("mean", float(cmp.attention.mean()), float(cmp.baseline.mean()), cmp.relative_improvement))
    _write_rows(Path(path), CSV_SCHEMAS["compare.csv"], rows)
