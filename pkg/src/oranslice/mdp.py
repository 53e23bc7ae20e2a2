"""State encoding, action-to-allocation mapping and reward for the slicing MDP."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .radio import Allocation, QoSReport, SliceSpec, UEState, round_robin


@dataclass(frozen=True)
class Observation:
    qos_values: np.ndarray
    ue_density: np.ndarray
    prev_action: np.ndarray

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.qos_values, self.ue_density, self.prev_action])

    @classmethod
    def from_vector(cls, v: np.ndarray, n_slices: int) -> "Observation":
        v = np.asarray(v, dtype=float)
        return cls(v[:n_slices], v[n_slices:2 * n_slices], v[2 * n_slices:3 * n_slices])


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    agent_id: int


def encode_state(qos: QoSReport | None, populations: Sequence[int], prev_action: np.ndarray,
                 slices: Sequence[SliceSpec]) -> Observation:
    """Observation ``(Q_l / lambda_l, N_l / N, a_{t-1})`` for every slice.

    ``qos=None`` encodes the start of an episode (no QoS measured yet).
    """
    n = len(slices)
    pops = np.asarray(populations, dtype=float)
    prev = np.asarray(prev_action, dtype=float)
    if pops.shape != (n,) or prev.shape != (n,):
        raise ValueError(f"expected {n} slice entries, got populations {pops.shape}, prev {prev.shape}")
    if qos is None:
        q = np.zeros(n)
    else:
        raw = np.asarray(qos.per_slice_value, dtype=float)
        if raw.shape != (n,):
            raise ValueError(f"expected {n} QoS entries, got {raw.shape}")
        q = raw / np.array([s.lambda_target for s in slices])
    return Observation(q, pops / pops.sum(), prev.copy())


def largest_remainder(fractions: np.ndarray, k: int) -> np.ndarray:
    """Integer RB counts from per-slice fractions (sum <= 1); ties favour lower index."""
    quota = np.asarray(fractions, dtype=float) * k
    base = np.floor(quota + 1e-9)
    rem = np.maximum(quota - base, 0.0)
    total = min(int(np.floor(quota.sum() + 0.5 + 1e-9)), k)
    extra = max(total - int(base.sum()), 0)
    order = sorted(range(len(rem)), key=lambda i: (-rem[i], i))
    counts = base.astype(int)
    for i in order[:extra]:
        counts[i] += 1
    return counts


def project_action(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or np.any(a < 0) or np.any(a > 1) or not np.all(np.isfinite(a)):
        raise ValueError(f"action entries must lie in [0, 1], got {a}")
    s = a.sum()
    return a / s if s > 1.0 else a.copy()


def action_to_allocation(a: np.ndarray, k: int, ues: Sequence[UEState] | None = None,
                         n_slices: int | None = None, *, ue_slice: np.ndarray | None = None,
                         active: np.ndarray | None = None) -> Allocation:
    """Slice fractions -> contiguous RB blocks -> round-robin UE grants.

    UEs come either as ``UEState`` objects or as ``ue_slice``/``active`` arrays.
    """
    frac = project_action(a)
    n_slices = len(frac) if n_slices is None else n_slices
    if ues is not None:
        ue_slice = np.array([u.slice_id for u in ues], dtype=int)
        active = np.array([u.active for u in ues], dtype=bool)
    if ue_slice is None:
        ue_slice = np.zeros(0, dtype=int)
    if active is None:
        active = np.ones(len(ue_slice), dtype=bool)
    if k == 0:
        return Allocation.empty(n_slices, len(ue_slice), 0)
    counts = largest_remainder(frac, k)
    b = np.zeros((n_slices, k), dtype=np.int8)
    start = 0
    for l, c in enumerate(counts):
        b[l, start:start + c] = 1
        start += c
    e = round_robin(b, ue_slice, active) if len(ue_slice) else np.zeros((0, k), dtype=np.int8)
    return Allocation(b, e)


def compute_reward(qos: QoSReport) -> float:
    """Sum over slices of the per-step SLA satisfaction probability."""
    return float(np.sum(qos.per_slice_satisfied_fraction))
