"""Event-driven billiard flow on the torus.

Between collisions the point moves in a straight line; a collision is the
earliest admissible root over all cylinders and all lattice images whose
axis is reachable in the current search window.  Candidate images are
enumerated in a ball of provable reach: a contact at time ``t <= T`` has an
image representative within ``t + r + cover`` of the start, where ``cover``
bounds the covering radius of the cylinder's own axis sublattice.  The
window grows geometrically up to the caller's horizon.

Grazing (discriminant inside the guard) and simultaneous (two distinct
contacts within ``t_min_gap``) encounters abort the computation loudly:
records carry flags, estimators discard windows, nothing is fabricated.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .classify import SplittingWitness, count_transitive_blocks, is_transitive
from .config import DEFAULT_TOLS, Tolerances
from .geometry import Subspace, complement, _lll
from .paths import EuclideanPathSpec

__all__ = [
    "PhasePoint",
    "CollisionEvent",
    "TrajectoryRecord",
    "FlowError",
    "StartInside",
    "TangentialCollision",
    "SimultaneousCollision",
    "next_collision",
    "flow",
    "detect_splitting",
    "richness_certificate",
    "lyapunov_max",
    "LyapunovResult",
    "splitting_scan",
    "SplittingScanResult",
    "random_phase",
    "min_axis_distances",
    "unfold_to_path",
]

CASCADE_CAP = 1_000_000


class FlowError(RuntimeError):
    pass


class StartInside(FlowError):
    """The phase point starts inside a scatterer."""


class TangentialCollision(FlowError):
    """A grazing contact occurred before the first clean collision."""


class SimultaneousCollision(FlowError):
    """Two distinct contacts within ``t_min_gap`` of each other."""


@dataclass(eq=False)
class PhasePoint:
    """Configuration point (wrapped into the fundamental cell by the flow)
    plus a unit velocity."""

    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.v = np.asarray(self.v, dtype=float).reshape(-1)
        if self.q.shape != self.v.shape:
            raise ValueError("position and velocity dimensions differ")
        if abs(np.linalg.norm(self.v) - 1.0) > 1e-12:
            raise ValueError("velocity must be a unit vector")


@dataclass(eq=False)
class CollisionEvent:
    """One reflection: when, at which cylinder, at which lattice image
    (integer coordinates in the record's unfolded frame), with which unit
    normal."""

    time: float
    cylinder: int
    lattice_image: np.ndarray
    normal: np.ndarray


@dataclass(eq=False)
class TrajectoryRecord:
    initial: PhasePoint
    events: list[CollisionEvent]
    symbolic: list[int]
    flags: dict
    final_q: np.ndarray | None = None
    final_v: np.ndarray | None = None
    final_wrap: np.ndarray | None = None
    total_time: float = 0.0

    def prefix(self, n: int) -> "TrajectoryRecord":
        """Truncated view for combinatorial diagnostics (no final state)."""
        return TrajectoryRecord(
            initial=self.initial,
            events=self.events[:n],
            symbolic=self.symbolic[:n],
            flags=dict(self.flags),
        )

    def collided_labels(self) -> set[int]:
        return set(self.symbolic)


class _FlowView:
    """Per-system arrays for the collision scan, with cached image balls."""

    __slots__ = ("system", "d", "lattice", "bases", "radii", "trans",
                 "axis_mats", "axis_cover", "half_spread", "diam",
                 "red_inv", "red_transform", "_ball_cache")

    def __init__(self, system):
        self.system = system
        self.d = system.dim
        self.lattice = system.lattice
        self.bases = [system.base_space(i).basis for i in range(system.k)]
        self.radii = [system.cylinders[i].radius for i in range(system.k)]
        self.trans = [system.cylinders[i].translation for i in range(system.k)]
        self.axis_mats = [self.lattice.basis.T @ b for b in self.bases]
        red = self.lattice.reduced_basis
        self.half_spread = 0.5 * float(np.sum(np.linalg.norm(red, axis=0)))
        self.diam = self.lattice.fundamental_diameter
        self.red_inv = np.linalg.inv(red)
        self.red_transform = self.lattice.reduced_transform
        # covering-radius bound for each cylinder's axis sublattice: half the
        # norm sum of a reduced generating set
        covers = []
        for i in range(system.k):
            cyl = system.cylinders[i]
            if cyl.generator_coeffs is not None and cyl.generator_coeffs.size:
                gens = self.lattice.basis @ cyl.generator_coeffs.astype(float)
                gens_red, _ = _lll(gens)
                covers.append(0.5 * float(np.sum(np.linalg.norm(gens_red,
                                                                axis=0))))
            elif cyl.generator_basis is not None and cyl.generator_basis.size:
                raise FlowError(
                    f"cylinder {i} has no lattice-aligned axis; the toroidal "
                    "flow needs integer generator coefficients"
                )
            else:
                covers.append(0.0)
        self.axis_cover = covers
        self._ball_cache: dict[tuple[int, int], np.ndarray] = {}

    def candidates(self, i: int, c: np.ndarray, reach: float) -> np.ndarray:
        """Integer image coordinates covering all images within ``reach``
        of ``c``, recentred via the reduced basis."""
        k_red = np.round(self.red_inv @ c).astype(np.int64)
        shift = self.red_transform @ k_red
        bucket = max(1, math.ceil((reach + self.half_spread)
                                  / max(self.diam, 1e-9)))
        key = (i, bucket)
        ball = self._ball_cache.get(key)
        if ball is None:
            ball, _ = self.lattice.enumerate_ball(
                np.zeros(self.d), bucket * max(self.diam, 1e-9) + 1e-9
            )
            self._ball_cache[key] = ball
        return ball + shift[None, :]


_VIEWS: dict[int, _FlowView] = {}


def _flow_view(system) -> _FlowView:
    view = _VIEWS.get(id(system))
    if view is None or view.system is not system:
        view = _FlowView(system)
        _VIEWS[id(system)] = view
    return view


def min_axis_distances(system, q) -> np.ndarray:
    """Distance from ``q`` to the nearest axis image, per cylinder."""
    view = _flow_view(system)
    q = np.asarray(q, dtype=float).reshape(-1)
    out = np.empty(system.k)
    for i in range(system.k):
        c = q - view.trans[i]
        ints = view.candidates(i, c, view.radii[i] + view.axis_cover[i]
                               + view.diam)
        w = (view.bases[i].T @ c)[None, :] - ints @ view.axis_mats[i]
        dists = np.linalg.norm(w, axis=1)
        out[i] = float(dists.min()) if dists.size else np.inf
    return out


def _assert_outside(view: _FlowView, q: np.ndarray, tol: float = 1e-9) -> None:
    for i in range(view.system.k):
        c = q - view.trans[i]
        ints = view.candidates(i, c, view.radii[i] + view.axis_cover[i])
        if not ints.size:
            continue
        w = (view.bases[i].T @ c)[None, :] - ints @ view.axis_mats[i]
        if float(np.min(np.linalg.norm(w, axis=1))) < view.radii[i] - tol:
            raise StartInside(f"start point lies inside cylinder {i}")


def _scan(view: _FlowView, q: np.ndarray, v: np.ndarray, horizon: float,
          tols: Tolerances):
    """Earliest admissible collision within ``horizon``; None if there is
    none.  Returns (s, cylinder, image ints, unit normal)."""
    t_window = min(max(view.diam, 1e-3), horizon)
    while True:
        # per-cylinder: earliest contact and earliest distinct-second contact
        best = None          # (s, i, ints_row, w_row, u)
        best_second = np.inf
        others_min = np.inf
        graze_s = np.inf
        for i in range(view.system.k):
            basis = view.bases[i]
            r = view.radii[i]
            u = basis.T @ v
            uu = float(u @ u)
            if uu < 1e-24:
                continue
            c = q - view.trans[i]
            reach = t_window + r + view.axis_cover[i]
            ints = view.candidates(i, c, reach)
            if not ints.size:
                continue
            w = (basis.T @ c)[None, :] - ints @ view.axis_mats[i]
            wu = w @ u
            ww = np.einsum("ij,ij->i", w, w)
            disc = wu * wu - uu * (ww - r * r)
            guard = tols.disc * uu * r * r
            near = np.abs(disc) < guard
            if np.any(near):
                s_t = -wu[near] / uu
                s_t = s_t[s_t > tols.t_min_gap]
                if s_t.size:
                    graze_s = min(graze_s, float(s_t.min()))
            real = disc >= guard
            if not np.any(real):
                continue
            s_all = np.full(disc.shape, np.inf)
            s_all[real] = (-wu[real] - np.sqrt(disc[real])) / uu
            s_all[s_all <= tols.t_min_gap] = np.inf
            jmin = int(np.argmin(s_all))
            s_min = float(s_all[jmin])
            if not np.isfinite(s_min):
                continue
            # duplicates of the same physical contact share the offset row w
            distinct = np.linalg.norm(w - w[jmin], axis=1) > 1e-3
            s_sec = float(np.min(s_all[distinct])) if np.any(distinct) else np.inf
            if best is None or s_min < best[0]:
                if best is not None:
                    others_min = min(others_min, best[0])
                best = (s_min, i, ints[jmin], w[jmin] + s_min * u, s_sec)
            else:
                others_min = min(others_min, s_min)
        if best is not None and best[0] <= t_window:
            s_best = best[0]
            if graze_s <= s_best + tols.t_min_gap:
                raise TangentialCollision(
                    f"grazing contact at t={graze_s:.6g}"
                )
            second = min(best[4], others_min)
            if second - s_best < tols.t_min_gap:
                raise SimultaneousCollision(
                    f"two contacts within t_min_gap at t={s_best:.6g}"
                )
            s, i, image, w_hit, _ = best
            n_local = w_hit / np.linalg.norm(w_hit)
            normal = view.bases[i] @ n_local
            return float(s), int(i), np.asarray(image, dtype=np.int64), normal
        if graze_s <= t_window:
            raise TangentialCollision(f"grazing contact at t={graze_s:.6g}")
        if t_window >= horizon:
            return None
        t_window = min(2.0 * t_window, horizon)


def next_collision(system, phase: PhasePoint, horizon_t: float,
                   tols: Tolerances = DEFAULT_TOLS) -> CollisionEvent | None:
    """First collision after the given phase point, within ``horizon_t``.

    The event time is measured from the phase point; the lattice image is
    in the frame of the given (unwrapped) position.
    """
    view = _flow_view(system)
    _assert_outside(view, phase.q)
    hit = _scan(view, phase.q, phase.v, horizon_t, tols)
    if hit is None:
        return None
    s, i, image, normal = hit
    return CollisionEvent(time=s, cylinder=i, lattice_image=image, normal=normal)


def _reflect(v: np.ndarray, normal: np.ndarray) -> np.ndarray:
    return v - 2.0 * float(v @ normal) * normal


def flow(system, phase: PhasePoint, max_collisions: int | None = None,
         max_time: float | None = None, default_horizon: float | None = None,
         tols: Tolerances = DEFAULT_TOLS) -> TrajectoryRecord:
    """Run the flow until a stop condition, recording every collision.

    The record keeps positions wrapped; the integer ``lattice_image`` of
    each event is expressed in the unfolded frame anchored at the wrapped
    start point, so the record can be unfolded into a straight-line path.
    Degenerate encounters stop the run and set a flag; they are never
    silently skipped.
    """
    if max_collisions is None and max_time is None:
        raise ValueError("need a stop condition (max_collisions or max_time)")
    view = _flow_view(system)
    q0, _ = system.lattice.wrap(phase.q)
    initial = PhasePoint(q0.copy(), phase.v.copy())
    _assert_outside(view, q0)
    q = q0.copy()
    v = phase.v.copy()
    wrap_total = np.zeros(system.dim, dtype=np.int64)
    t = 0.0
    events: list[CollisionEvent] = []
    symbolic: list[int] = []
    flags = {
        "tangential_encountered": False,
        "simultaneous_encountered": False,
        "cascade_capped": False,
        "no_collision_within_horizon": False,
    }
    horizon = (10.0 * view.diam) if default_horizon is None else default_horizon
    recent: deque[float] = deque(maxlen=CASCADE_CAP)
    while True:
        if max_collisions is not None and len(events) >= max_collisions:
            break
        window = horizon
        remaining = None
        if max_time is not None:
            remaining = max_time - t
            if remaining <= 0:
                break
            window = min(window, remaining)
        try:
            hit = _scan(view, q, v, window, tols)
        except TangentialCollision:
            flags["tangential_encountered"] = True
            break
        except SimultaneousCollision:
            flags["simultaneous_encountered"] = True
            break
        if hit is None:
            if remaining is not None and remaining <= horizon:
                q = q + remaining * v
                q, sh = system.lattice.wrap(q)
                wrap_total += sh
                t = max_time
            else:
                flags["no_collision_within_horizon"] = True
            break
        s, i, image, normal = hit
        t += s
        q = q + s * v
        v = _reflect(v, normal)
        events.append(
            CollisionEvent(time=t, cylinder=i,
                           lattice_image=image + wrap_total, normal=normal)
        )
        symbolic.append(i)
        q, sh = system.lattice.wrap(q)
        wrap_total += sh
        if len(recent) == CASCADE_CAP and t - recent[0] < 1.0:
            flags["cascade_capped"] = True
            break
        recent.append(t)
    return TrajectoryRecord(
        initial=initial,
        events=events,
        symbolic=symbolic,
        flags=flags,
        final_q=q,
        final_v=v,
        final_wrap=wrap_total,
        total_time=t,
    )


# ---------------------------------------------------------------------------
# Combinatorial diagnostics over records
# ---------------------------------------------------------------------------


def detect_splitting(record: TrajectoryRecord, system) -> SplittingWitness | None:
    """Coarsest orthogonal splitting respected by every collision in the
    record; None exactly when the collided base spaces are transitive."""
    labels = sorted(record.collided_labels())
    d = system.dim
    if not labels:
        e1 = Subspace.span([np.eye(d)[:, 0]])
        w = SplittingWitness(e1, complement(e1), {}, degenerate=True)
        w.check()
        return w
    ok, witness = is_transitive(
        [system.base_space(i) for i in labels], ambient_dim=d
    )
    if ok:
        return None
    rekeyed = {labels[j]: side for j, side in witness.assignment.items()}
    out = SplittingWitness(witness.b1, witness.b2, rekeyed,
                           degenerate=witness.degenerate)
    out.check({i: system.base_space(i) for i in rekeyed})
    return out


def richness_certificate(record: TrajectoryRecord, system,
                         c_required: int) -> tuple[bool, int]:
    """Does the record contain at least ``c_required`` consecutive
    transitive blocks?  Returns (verdict, greedy block count)."""
    if c_required < 1:
        raise ValueError("the block requirement must be >= 1")
    count = count_transitive_blocks(record.symbolic, system)
    return count >= c_required, count


# ---------------------------------------------------------------------------
# Largest Lyapunov exponent, two-trajectory method
# ---------------------------------------------------------------------------


@dataclass
class LyapunovResult:
    estimate: float
    window_logs: list[float]
    n_windows: int
    discarded: int
    unreliable: bool

    @property
    def stderr(self) -> float:
        if len(self.window_logs) < 2:
            return float("inf")
        arr = np.asarray(self.window_logs)
        return float(np.std(arr, ddof=1) / np.sqrt(arr.size))


def _advance(view: _FlowView, q, v, duration: float, tols: Tolerances):
    """Propagate a state for an exact duration.  Raises on degeneracies."""
    t = 0.0
    q = q.copy()
    v = v.copy()
    while duration - t > 1e-15:
        remaining = duration - t
        hit = _scan(view, q, v, remaining, tols)
        if hit is None:
            q = q + remaining * v
            break
        s, _, _, normal = hit
        q = q + s * v
        v = _reflect(v, normal)
        q, _ = view.lattice.wrap(q)
        t += s
    q, _ = view.lattice.wrap(q)
    return q, v


def lyapunov_max(system, phase: PhasePoint, total_t: float, renorm_dt: float,
                 d0: float, seed: int,
                 tols: Tolerances = DEFAULT_TOLS) -> LyapunovResult:
    """Largest Lyapunov exponent by shadow-trajectory renormalization.

    A shadow point displaced by ``d0`` orthogonally to the velocity is
    flowed alongside the reference; the phase-space separation is
    renormalized to ``d0`` every ``renorm_dt`` and the growth logs are
    averaged.  Windows hitting grazing or simultaneous encounters are
    discarded and the shadow is re-seeded; more than 20% discarded windows
    marks the estimate unreliable.
    """
    if total_t <= 0 or renorm_dt <= 0:
        raise ValueError("total_t and renorm_dt must be positive")
    if not 0 < d0 <= 1e-8:
        raise ValueError("d0 must lie in (0, 1e-8]")
    view = _flow_view(system)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    d = system.dim

    def fresh_shadow(q, v):
        for _ in range(128):
            w = rng.standard_normal(d)
            w -= (w @ v) * v
            nw = np.linalg.norm(w)
            if nw < 1e-12:
                continue
            cand = q + (d0 / nw) * w
            try:
                _assert_outside(view, cand)
            except StartInside:
                continue
            return cand, v.copy()
        raise FlowError("could not place a shadow point outside the scatterers")

    q_m, _ = system.lattice.wrap(phase.q)
    v_m = phase.v.copy()
    _assert_outside(view, q_m)
    q_s, v_s = fresh_shadow(q_m, v_m)

    n_windows = int(round(total_t / renorm_dt))
    logs: list[float] = []
    discarded = 0
    for _ in range(n_windows):
        try:
            q_m2, v_m2 = _advance(view, q_m, v_m, renorm_dt, tols)
            q_s2, v_s2 = _advance(view, q_s, v_s, renorm_dt, tols)
        except (TangentialCollision, SimultaneousCollision, StartInside):
            discarded += 1
            jig = rng.standard_normal(d)
            jig -= (jig @ v_m) * v_m
            nj = np.linalg.norm(jig)
            if nj > 0:
                q_try = q_m + (1e-10 / nj) * jig
                try:
                    _assert_outside(view, q_try)
                    q_m = q_try
                except StartInside:
                    pass
            q_s, v_s = fresh_shadow(q_m, v_m)
            continue
        q_m, v_m = q_m2, v_m2
        dq = system.lattice.nearest_image_delta(q_s2 - q_m)
        dv = v_s2 - v_m
        sep = float(np.sqrt(dq @ dq + dv @ dv))
        if sep < 1e-300:
            discarded += 1
            q_s, v_s = fresh_shadow(q_m, v_m)
            continue
        logs.append(float(np.log(sep / d0)))
        scale = d0 / sep
        q_s = q_m + scale * dq
        v_s = v_m + scale * dv
        v_s /= np.linalg.norm(v_s)
        try:
            _assert_outside(view, q_s)
        except StartInside:
            q_s, v_s = fresh_shadow(q_m, v_m)
    estimate = (sum(logs) / (len(logs) * renorm_dt)) if logs else 0.0
    return LyapunovResult(
        estimate=estimate,
        window_logs=logs,
        n_windows=n_windows,
        discarded=discarded,
        unreliable=(discarded > 0.2 * n_windows) or not logs,
    )


# ---------------------------------------------------------------------------
# Orbit ensembles
# ---------------------------------------------------------------------------


def random_phase(system, rng: np.random.Generator,
                 max_tries: int = 1000) -> PhasePoint:
    """Uniform random phase point with the position outside all scatterers."""
    view = _flow_view(system)
    d = system.dim
    for _ in range(max_tries):
        coords = rng.uniform(0.0, 1.0, size=d)
        q = system.lattice.basis @ coords
        try:
            _assert_outside(view, q)
        except StartInside:
            continue
        v = rng.standard_normal(d)
        nv = np.linalg.norm(v)
        if nv < 1e-12:
            continue
        return PhasePoint(q, v / nv)
    raise FlowError("could not sample a start point outside the scatterers")


@dataclass
class SplittingScanResult:
    fraction: float
    n_orbits: int
    n_with_witness: int
    n_degenerate: int


def splitting_scan(system, n_orbits: int, n_collisions: int, seed: int,
                   tols: Tolerances = DEFAULT_TOLS) -> SplittingScanResult:
    """Fraction of random orbits (fixed collision count) whose collision
    set respects some orthogonal splitting."""
    children = np.random.SeedSequence(seed).spawn(n_orbits)
    hits = 0
    degenerate = 0
    for child in children:
        rng = np.random.default_rng(child)
        phase = random_phase(system, rng)
        record = flow(system, phase, max_collisions=n_collisions, tols=tols)
        if record.flags["tangential_encountered"] or \
                record.flags["simultaneous_encountered"]:
            degenerate += 1
        if detect_splitting(record, system) is not None:
            hits += 1
    return SplittingScanResult(
        fraction=hits / n_orbits if n_orbits else 0.0,
        n_orbits=n_orbits,
        n_with_witness=hits,
        n_degenerate=degenerate,
    )


def unfold_to_path(record: TrajectoryRecord, system):
    """Rebuild the record as straight-line path data: the collision
    sequence plus offsets of each hit axis image in the unfolded frame
    anchored at the record's start point."""
    q0 = record.initial.q
    labels = list(record.symbolic)
    offsets = []
    for ev in record.events:
        i = ev.cylinder
        axis_point = system.cylinders[i].translation \
            + system.lattice.basis @ ev.lattice_image.astype(float) - q0
        offsets.append(system.base_space(i).basis.T @ axis_point)
    spec = EuclideanPathSpec(v0=record.initial.v, offsets=tuple(offsets))
    return labels, spec


# ---------------------------------------------------------------------------
# Trajectory export
# ---------------------------------------------------------------------------

RECORD_FORMAT = "cylbill-trajectory"


def record_to_dict(record: TrajectoryRecord) -> dict:
    return {
        "format": RECORD_FORMAT,
        "initial_q": [float(x) for x in record.initial.q],
        "initial_v": [float(x) for x in record.initial.v],
        "events": [
            {
                "time": float(ev.time),
                "cylinder": int(ev.cylinder),
                "lattice_image": [int(x) for x in ev.lattice_image],
                "normal": [float(x) for x in ev.normal],
            }
            for ev in record.events
        ],
        "symbolic": [int(x) for x in record.symbolic],
        "flags": {k: bool(v) for k, v in record.flags.items()},
        "final_q": None if record.final_q is None
        else [float(x) for x in record.final_q],
        "final_v": None if record.final_v is None
        else [float(x) for x in record.final_v],
        "final_wrap": None if record.final_wrap is None
        else [int(x) for x in record.final_wrap],
        "total_time": float(record.total_time),
    }


def save_record(record: TrajectoryRecord, path) -> None:
    from . import fileio

    fileio.dump(record_to_dict(record), path)


def record_table(record: TrajectoryRecord) -> str:
    """Flat tabular form, one event per row (tab-separated)."""
    lines = ["event\ttime\tcylinder\timage\tnormal"]
    for idx, ev in enumerate(record.events):
        image = ",".join(str(int(x)) for x in ev.lattice_image)
        normal = ",".join(format(float(x), ".17g") for x in ev.normal)
        lines.append(
            f"{idx}\t{format(float(ev.time), '.17g')}\t{ev.cylinder}"
            f"\t{image}\t{normal}"
        )
    return "\n".join(lines) + "\n"
