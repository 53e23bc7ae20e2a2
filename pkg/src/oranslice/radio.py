"""Downlink OFDMA environment for one DU: channels, interference, traffic, mobility.

Powers are configured in dBm and converted to linear milliwatts once, on the
config object. One RL step spans ``slots_per_step`` slots; per-slot rates are
averaged over that window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Sequence

import numpy as np


class ConstraintViolation(ValueError):
    """An allocation breaks an RB constraint; ``constraint`` names which one."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        super().__init__(f"{constraint}: {detail}" if detail else constraint)


class QoSKind(str, Enum):
    THROUGHPUT = "throughput"
    CONNECTION_DENSITY = "connection_density"
    MAX_DELAY = "max_delay"


SLICE_NAMES = ("embb", "mtc", "urllc")


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


@dataclass(frozen=True)
class RadioConfig:
    rb_bandwidth_hz: float = 200e3
    subcarrier_spacing_hz: float = 15e3
    total_rbs: int = 50
    tx_power_per_rb_dbm: float = 56.0
    noise_variance_dbm: float = -173.0
    path_loss_exponent: float = 3.0
    cell_radius_m: float = 250.0
    neighbor_count: int = 2
    neighbor_activity_prob: float = 0.5
    slots_per_step: int = 20
    slot_duration_s: float = 1e-3
    min_distance_m: float = 10.0
    ue_speed_mps: float = 1.0
    n_ues: int = 50

    def __post_init__(self):
        if self.total_rbs <= 0:
            raise ValueError("total_rbs must be positive")
        if self.rb_bandwidth_hz <= 0:
            raise ValueError("rb_bandwidth_hz must be positive")
        if not 0.0 <= self.neighbor_activity_prob <= 1.0:
            raise ValueError("neighbor_activity_prob must lie in [0, 1]")
        if self.path_loss_exponent < 2:
            raise ValueError("path_loss_exponent must be >= 2")
        if self.slots_per_step < 1:
            raise ValueError("slots_per_step must be >= 1")
        if self.neighbor_count < 0:
            raise ValueError("neighbor_count must be >= 0")
        if not 0 < self.min_distance_m < self.cell_radius_m:
            raise ValueError("need 0 < min_distance_m < cell_radius_m")
        if self.ue_speed_mps < 0:
            raise ValueError("ue_speed_mps must be >= 0")
        if self.slot_duration_s <= 0:
            raise ValueError("slot_duration_s must be positive")

    @cached_property
    def tx_power_mw(self) -> float:
        return dbm_to_mw(self.tx_power_per_rb_dbm)

    @cached_property
    def noise_mw(self) -> float:
        return dbm_to_mw(self.noise_variance_dbm)

    @cached_property
    def neighbor_positions(self) -> np.ndarray:
        """Interfering RUs sit on a ring at twice the cell radius."""
        m = self.neighbor_count
        ang = 2.0 * np.pi * np.arange(m) / max(m, 1)
        r = 2.0 * self.cell_radius_m
        return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=-1).reshape(m, 2)

    @property
    def window_s(self) -> float:
        return self.slots_per_step * self.slot_duration_s


@dataclass(frozen=True)
class SliceSpec:
    slice_id: int
    qos_kind: QoSKind
    lambda_target: float
    epsilon_margin: float
    packet_mean_bits: float = 0.0
    min_rate_bps: float = 0.0      # connection threshold for connection_density
    activity_rate: float = 1.0     # Poisson session rate per slot (activity), or packet rate for max_delay

    def __post_init__(self):
        object.__setattr__(self, "qos_kind", QoSKind(self.qos_kind))
        if self.lambda_target <= 0:
            raise ValueError(f"slice {self.slice_id}: lambda_target must be positive")
        if self.epsilon_margin <= 0:
            raise ValueError(f"slice {self.slice_id}: epsilon_margin must be positive")
        if self.qos_kind is QoSKind.MAX_DELAY and self.packet_mean_bits <= 0:
            raise ValueError(f"slice {self.slice_id}: packet_mean_bits must be positive")
        if self.activity_rate < 0:
            raise ValueError(f"slice {self.slice_id}: activity_rate must be >= 0")


@dataclass(frozen=True)
class SliceTargets:
    """Per-slice SLA settings before they are bound to a DU's population.

    The connection-density target and margin are fractions of the slice population.
    """
    embb_lambda_bps: float = 2e6
    embb_epsilon_bps: float = 0.5e6
    mtc_lambda_frac: float = 0.8
    mtc_epsilon_frac: float = 0.1
    mtc_min_rate_bps: float = 100e3
    urllc_lambda_s: float = 10e-3
    urllc_epsilon_s: float = 5e-3
    urllc_packet_bits: float = 10e3
    embb_activity_rate: float = 1.5
    mtc_activity_rate: float = 2.0
    urllc_packet_rate: float = 0.2

    def bind(self, populations: Sequence[int]) -> list[SliceSpec]:
        n_mtc = populations[1]
        return [
            SliceSpec(0, QoSKind.THROUGHPUT, self.embb_lambda_bps, self.embb_epsilon_bps,
                      activity_rate=self.embb_activity_rate),
            SliceSpec(1, QoSKind.CONNECTION_DENSITY, self.mtc_lambda_frac * n_mtc,
                      self.mtc_epsilon_frac * n_mtc, min_rate_bps=self.mtc_min_rate_bps,
                      activity_rate=self.mtc_activity_rate),
            SliceSpec(2, QoSKind.MAX_DELAY, self.urllc_lambda_s, self.urllc_epsilon_s,
                      packet_mean_bits=self.urllc_packet_bits,
                      activity_rate=self.urllc_packet_rate),
        ]


@dataclass
class UEState:
    ue_id: int
    slice_id: int
    position_m: np.ndarray
    distance_m: float
    active: bool = True
    queue_bits: float = 0.0


@dataclass
class ChannelState:
    gains: np.ndarray           # (N, K) |h|^2
    interference_mw: np.ndarray  # (N, K)


@dataclass
class Allocation:
    slice_rb: np.ndarray  # (L, K) binary
    ue_rb: np.ndarray     # (N, K) binary

    @classmethod
    def empty(cls, n_slices: int, n_ues: int, k: int) -> "Allocation":
        return cls(np.zeros((n_slices, k), dtype=np.int8), np.zeros((n_ues, k), dtype=np.int8))


@dataclass
class QoSReport:
    per_slice_value: np.ndarray
    per_slice_satisfied_fraction: np.ndarray
    per_user_throughput_bps: np.ndarray
    ue_slice: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


# ---------------------------------------------------------------- validation

def validate_allocation(alloc: Allocation, ue_slice: np.ndarray, total_rbs: int | None = None) -> None:
    """Raise ConstraintViolation unless the RB constraints hold.

    Accepts a single allocation or stacked per-slot UE matrices of shape (S, N, K).
    """
    b = np.asarray(alloc.slice_rb)
    e = np.asarray(alloc.ue_rb)
    k = b.shape[-1] if total_rbs is None else total_rbs
    if b.shape[-1] != k or e.shape[-1] != k:
        raise ConstraintViolation("shape", f"expected {k} RBs, got {b.shape} / {e.shape}")
    if e.shape[-2] != len(ue_slice):
        raise ConstraintViolation("shape", f"ue_rb has {e.shape[-2]} rows for {len(ue_slice)} UEs")
    if ((b != 0) & (b != 1)).any() or ((e != 0) & (e != 1)).any():
        raise ConstraintViolation("binary", "indicators must be 0/1")
    if (b.sum(axis=-2) > 1).any():
        raise ConstraintViolation("rb-exclusivity", "an RB is granted to more than one slice")
    own = b[..., ue_slice, :]
    if (e.astype(bool) & ~own.astype(bool)).any():
        raise ConstraintViolation("slice-membership", "a UE holds an RB outside its slice")
    used = (own * e).reshape(*e.shape[:-2], -1).sum(axis=-1)
    if (used > k).any():
        raise ConstraintViolation("rb-budget", f"{int(np.max(used))} UE-RB grants exceed K={k}")


# ---------------------------------------------------------------- channel and rates

def _check_positions(positions: np.ndarray) -> None:
    if not np.all(np.isfinite(positions)):
        raise ValueError("UE positions/distances must be finite")


def sample_channel(cfg: RadioConfig, ues: Sequence[UEState], rng: np.random.Generator) -> ChannelState:
    """Rayleigh gains per (UE, RB) and interference from randomly active neighbour RUs."""
    k = cfg.total_rbs
    if len(ues) == 0:
        return ChannelState(np.zeros((0, k)), np.zeros((0, k)))
    pos = np.array([u.position_m for u in ues], dtype=float).reshape(len(ues), 2)
    dist = np.array([u.distance_m for u in ues], dtype=float)
    _check_positions(pos)
    _check_positions(dist)
    gains, interference = _draw_channel(cfg, pos[None], rng)
    return ChannelState(gains[0], interference[0])


def _draw_channel(cfg: RadioConfig, pos: np.ndarray, rng: np.random.Generator):
    """Vectorized draw over a leading slot axis: pos (S, N, 2) -> (S, N, K) arrays."""
    s, n = pos.shape[:2]
    k = cfg.total_rbs
    gains = rng.exponential(1.0, size=(s, n, k))
    m = cfg.neighbor_count
    if m == 0:
        return gains, np.zeros((s, n, k))
    d_nb = np.linalg.norm(pos[:, :, None, :] - cfg.neighbor_positions[None, None], axis=-1)  # (S, N, M)
    active = rng.random((s, m, k)) < cfg.neighbor_activity_prob                              # (S, M, K)
    fading = rng.exponential(1.0, size=(s, n, m, k))
    loss = cfg.tx_power_mw * d_nb ** (-cfg.path_loss_exponent)                             # (S, N, M)
    interference = np.einsum("snm,snmk,smk->snk", loss, fading, active.astype(float), optimize=False)
    return gains, interference


def ue_rates(cfg: RadioConfig, gains: np.ndarray, interference: np.ndarray, distance: np.ndarray,
             ue_rb: np.ndarray, slice_mask: np.ndarray | None = None) -> np.ndarray:
    """Per-UE rate in bps: B * sum_k e_nk b_lk log2(1 + SINR_nk).

    Broadcasts over any leading axes; ``distance`` carries the UE axis last.
    """
    signal = cfg.tx_power_mw * distance[..., None] ** (-cfg.path_loss_exponent) * gains
    se = np.log2(1.0 + signal / (interference + cfg.noise_mw))
    grant = ue_rb if slice_mask is None else ue_rb * slice_mask
    return cfg.rb_bandwidth_hz * np.sum(grant * se, axis=-1)


def slice_rate(cfg: RadioConfig, ch: ChannelState, alloc: Allocation, ues: Sequence[UEState],
               slice_id: int) -> tuple[float, np.ndarray]:
    """Slot rate of one slice and the per-UE rates of its members.

    ``ch`` may carry a leading slot axis (S, N, K); the result is then the
    average over those slots, which is how a step's rate is reported.
    """
    ue_slice = np.array([u.slice_id for u in ues], dtype=int)
    validate_allocation(alloc, ue_slice, cfg.total_rbs)
    dist = np.array([u.distance_m for u in ues], dtype=float)
    _check_positions(dist)
    member = ue_slice == slice_id
    b = np.asarray(alloc.slice_rb)[slice_id]
    e = np.asarray(alloc.ue_rb)[member]
    g = ch.gains[..., member, :]
    i = ch.interference_mw[..., member, :]
    r = ue_rates(cfg, g, i, dist[member], e, b[None, :])
    if r.ndim > 1:
        r = r.mean(axis=tuple(range(r.ndim - 1)))
    return float(r.sum()), r


# ---------------------------------------------------------------- QoS

def _slot_qos(slices: Sequence[SliceSpec], rates: np.ndarray, active: np.ndarray,
              ue_slice: np.ndarray, delays: np.ndarray | None):
    """Per-slot QoS value and satisfaction flag for every slice.

    rates/active: (S, N). delays: (S, N) with NaN where no packet arrived.
    Slots with no demand in a slice (no active UE, no arriving packet) count as
    satisfied and carry NaN as their value.
    """
    s = rates.shape[0]
    values = np.full((s, len(slices)), np.nan)
    ok = np.zeros((s, len(slices)), dtype=bool)
    for spec in slices:
        m = ue_slice == spec.slice_id
        l = spec.slice_id
        if spec.qos_kind is QoSKind.THROUGHPUT:
            act = active[:, m]
            n_act = act.sum(axis=1)
            tot = np.sum(rates[:, m] * act, axis=1)
            q = np.where(n_act > 0, tot / np.maximum(n_act, 1), np.nan)
        elif spec.qos_kind is QoSKind.CONNECTION_DENSITY:
            q = np.sum(rates[:, m] >= spec.min_rate_bps, axis=1).astype(float)
        else:
            d = delays[:, m] if delays is not None else np.full((s, int(m.sum())), np.nan)
            has = (~np.isnan(d)).any(axis=1)
            q = np.where(has, np.where(np.isnan(d), -np.inf, d).max(axis=1, initial=-np.inf), np.nan)
        values[:, l] = q
        ok[:, l] = np.isnan(q) | (np.abs(q - spec.lambda_target) <= spec.epsilon_margin)
    return values, ok


def qos_metrics(cfg: RadioConfig, slices: Sequence[SliceSpec], rates: np.ndarray,
                ue_slice: np.ndarray, active: np.ndarray | None = None,
                delays: np.ndarray | None = None) -> QoSReport:
    """Aggregate a window of per-slot per-UE rates into a QoSReport.

    rates: (slots_per_step, N) bps. ``delays`` holds the largest delay of packets
    arriving per (slot, UE), NaN where none arrived; see ``packet_delays``.

    Step values: throughput slices report the window mean of the per-slot mean
    rate of active UEs,
    connection-density slices count UEs whose window-mean rate clears the
    minimum, delay slices report the window maximum delay (0 with no packets).
    """
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 2 or rates.shape[0] != cfg.slots_per_step:
        raise ValueError(f"expected a ({cfg.slots_per_step}, N) rate window, got {rates.shape}")
    ue_slice = np.asarray(ue_slice, dtype=int)
    if active is None:
        active = np.ones_like(rates, dtype=bool)
    slot_values, ok = _slot_qos(slices, rates, active, ue_slice, delays)
    mean_rate = rates.mean(axis=0)
    value = np.zeros(len(slices))
    for spec in slices:
        m = ue_slice == spec.slice_id
        v = slot_values[:, spec.slice_id]
        seen = ~np.isnan(v)
        if spec.qos_kind is QoSKind.THROUGHPUT:
            value[spec.slice_id] = float(v[seen].mean()) if seen.any() else 0.0
        elif spec.qos_kind is QoSKind.CONNECTION_DENSITY:
            value[spec.slice_id] = float(np.sum(mean_rate[m] >= spec.min_rate_bps))
        else:
            # per-slot maxima already drop slots without arrivals
            value[spec.slice_id] = float(v[seen].max()) if seen.any() else 0.0
    return QoSReport(value, ok.mean(axis=0), mean_rate, ue_slice)


def packet_delays(rates: np.ndarray, arrivals_bits: np.ndarray, queue0: np.ndarray,
                  slot_s: float, cap_s: float):
    """Queue recursion for delay-sensitive UEs.

    rates, arrivals_bits: (S, N). A packet's delay is (backlog at arrival + its
    bits) / current rate; with several arrivals in a slot the last one is the
    largest. Zero rate with pending bits yields ``cap_s``. Returns (delays with NaN
    where nothing arrived, final queue).
    """
    s, n = rates.shape
    delays = np.full((s, n), np.nan)
    q = [float(x) for x in queue0]
    rate_rows = rates.tolist()
    arr_rows = arrivals_bits.tolist()
    for t in range(s):
        rr, aa, drow = rate_rows[t], arr_rows[t], delays[t]
        for j in range(n):
            a = aa[j]
            if a > 0.0:
                r = rr[j]
                drow[j] = min((q[j] + a) / r, cap_s) if r > 0.0 else cap_s
            q[j] = max(q[j] + a - rr[j] * slot_s, 0.0)
    return delays, np.array(q)


# ---------------------------------------------------------------- population & scheduling

def partition_population(n_ues: int, n_slices: int, rng: np.random.Generator,
                         concentration: float = 1.0) -> np.ndarray:
    """Non-uniform slice populations: Dirichlet weights, at least one UE per slice."""
    if n_ues < n_slices:
        raise ValueError("need at least one UE per slice")
    w = rng.dirichlet(np.full(n_slices, concentration))
    return 1 + rng.multinomial(n_ues - n_slices, w)


def round_robin(slice_rb: np.ndarray, ue_slice: np.ndarray, active: np.ndarray,
                offset: np.ndarray | int = 0) -> np.ndarray:
    """Give each slice's RBs, in order, to its active UEs cyclically.

    ``active`` may be (N,) or (S, N); ``offset`` rotates the cycle (per slot).
    Returns int8 indicators of shape (N, K) or (S, N, K).
    """
    single = active.ndim == 1
    act = np.atleast_2d(active).astype(bool)
    s, n = act.shape
    l, k = slice_rb.shape
    off = np.broadcast_to(np.asarray(offset), (s,))
    b = slice_rb.astype(bool)
    rb_slice = np.where(b.any(axis=0), b.argmax(axis=0), -1)              # (K,)
    rb_pos = (np.cumsum(b, axis=1) - 1)[np.maximum(rb_slice, 0), np.arange(k)]  # position within the slice block
    onehot = ue_slice[None, :] == np.arange(l)[:, None]                    # (L, N)
    ranks = np.cumsum(act[:, None, :] & onehot[None], axis=2) - 1          # (S, L, N)
    n_act = (act[:, None, :] & onehot[None]).sum(axis=2)                   # (S, L)
    ue_rank = ranks[:, ue_slice, np.arange(n)]                             # (S, N)
    rb_n_act = n_act[:, np.maximum(rb_slice, 0)]                           # (S, K)
    target = (rb_pos[None, :] + off[:, None]) % np.maximum(rb_n_act, 1)    # (S, K)
    e = (act[:, :, None]
         & (ue_slice[None, :, None] == rb_slice[None, None, :])
         & (ue_rank[:, :, None] == target[:, None, :])
         & (rb_n_act[:, None, :] > 0))
    e = e.astype(np.int8)
    return e[0] if single else e


# ---------------------------------------------------------------- environment

class DUEnvironment:
    """One DU's cell. Owns its randomness stream; not shareable across threads."""

    def __init__(self, cfg: RadioConfig, targets: SliceTargets, rng: np.random.Generator,
                 populations: Sequence[int] | None = None):
        self.cfg = cfg
        self.targets = targets
        self.rng = rng
        self.n_slices = len(SLICE_NAMES)
        if populations is None:
            populations = partition_population(cfg.n_ues, self.n_slices, rng)
        self.populations = np.asarray(populations, dtype=int)
        if self.populations.sum() != cfg.n_ues or (self.populations < 1).any():
            raise ValueError(f"populations {self.populations} must be >= 1 and sum to {cfg.n_ues}")
        self.slices = targets.bind(self.populations)
        self.ue_slice = np.repeat(np.arange(self.n_slices), self.populations)
        self._activity_p = np.array([1.0 - math.exp(-s.activity_rate) for s in self.slices])
        self._delay_slices = [s.slice_id for s in self.slices if s.qos_kind is QoSKind.MAX_DELAY]
        self.violations_checked = 0
        self.reset()

    # positions ---------------------------------------------------------
    def _uniform_disc(self, n: int) -> np.ndarray:
        r_min, r_max = self.cfg.min_distance_m, self.cfg.cell_radius_m
        r = np.sqrt(self.rng.uniform(r_min ** 2, r_max ** 2, size=n))
        th = self.rng.uniform(0.0, 2.0 * np.pi, size=n)
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)

    def reset(self) -> None:
        n = self.cfg.n_ues
        self.position = self._uniform_disc(n)
        self.waypoint = self._uniform_disc(n)
        self.active = np.ones(n, dtype=bool)
        self.queue = np.zeros(n)
        self.slot = 0

    def distances(self, position: np.ndarray | None = None) -> np.ndarray:
        p = self.position if position is None else position
        return np.clip(np.linalg.norm(p, axis=-1), self.cfg.min_distance_m, self.cfg.cell_radius_m)

    @property
    def ues(self) -> list[UEState]:
        d = self.distances()
        return [UEState(i, int(self.ue_slice[i]), self.position[i].copy(), float(d[i]),
                        bool(self.active[i]), float(self.queue[i])) for i in range(self.cfg.n_ues)]

    def _move(self, s: int) -> np.ndarray:
        """Random-waypoint positions for the next ``s`` slots, shape (S, N, 2).

        UEs stop at a reached waypoint until the step ends; a fresh waypoint is
        drawn at the step boundary.
        """
        cfg = self.cfg
        travel = cfg.ue_speed_mps * cfg.slot_duration_s * np.arange(1, s + 1)  # (S,)
        delta = self.waypoint - self.position
        gap = np.linalg.norm(delta, axis=-1)                                    # (N,)
        frac = np.minimum(travel[:, None] / np.maximum(gap, 1e-12)[None], 1.0)
        frac = np.where(gap[None] > 0, frac, 0.0)
        pos = self.position[None] + frac[..., None] * delta[None]
        self.position = pos[-1].copy()
        reached = frac[-1] >= 1.0
        if reached.any():
            self.waypoint[reached] = self._uniform_disc(int(reached.sum()))
        return pos

    # dynamics ------------------------------------------------------------
    def step(self, alloc: Allocation):
        """Advance one RL step. Returns (QoSReport, per-slot UE allocations)."""
        cfg = self.cfg
        s, n = cfg.slots_per_step, cfg.n_ues
        validate_allocation(alloc, self.ue_slice, cfg.total_rbs)

        pos = self._move(s)
        dist = self.distances(pos)                                   # (S, N)
        p = self._activity_p[self.ue_slice]
        active = self.rng.random((s, n)) < p[None]
        arrivals = np.zeros((s, n))
        for l in self._delay_slices:
            m = self.ue_slice == l
            counts = self.rng.poisson(self.slices[l].activity_rate, size=(s, int(m.sum())))
            # a sum of c exponential packet sizes is gamma(c, mean)
            sizes = np.where(counts > 0,
                             self.rng.gamma(np.maximum(counts, 1), self.slices[l].packet_mean_bits),
                             0.0)
            arrivals[:, m] = sizes
            # delay-critical UEs hold a grant from their first bit of backlog to the step end
            active[:, m] = np.logical_or.accumulate(counts > 0, axis=0) | (self.queue[m] > 0)[None]

        gains, interference = _draw_channel(cfg, pos, self.rng)
        offsets = self.slot + np.arange(s)
        ue_rb = round_robin(np.asarray(alloc.slice_rb), self.ue_slice, active, offsets)
        validate_allocation(Allocation(np.asarray(alloc.slice_rb)[None].repeat(s, 0), ue_rb),
                            self.ue_slice, cfg.total_rbs)
        self.violations_checked += s
        rates = ue_rates(cfg, gains, interference, dist, ue_rb)       # (S, N)

        delays = np.full((s, n), np.nan)
        for l in self._delay_slices:
            m = self.ue_slice == l
            d, q = packet_delays(rates[:, m], arrivals[:, m], self.queue[m],
                                 cfg.slot_duration_s, cfg.window_s)
            delays[:, m] = d
            self.queue[m] = q

        self.active = active[-1]
        self.slot += s
        report = qos_metrics(cfg, self.slices, rates, self.ue_slice, active, delays)
        return report, ue_rb


def step_environment(env: DUEnvironment, alloc: Allocation) -> QoSReport:
    return env.step(alloc)[0]
