"""Fixed-step closed-loop integration with discrete events.

Between events (disturbances, link failures, message sampling instants,
sequential link rotation) the closed loop is an affine system
dx/dt = A x + b over the state layout [omega (N), flow (E), u (N), q (N)].
The integrator therefore assembles (A, b) whenever an event changes the
structure and hands the segment to the RK4 kernel; the trajectory is
bit-reproducible for identical inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import controllers
from .controllers import ControlContext
from .dispatch import cost_of, optimal_dispatch
from .kernels import rk4_segment
from .model import CONTINUOUS, CommGraph, PowerGrid, Scenario, SystemState, validate


class ScenarioError(ValueError):
    """integrate() was handed a scenario that fails validation."""


class IntegrationError(RuntimeError):
    """The state left the finite range; carries the failing step index and
    the last finite recorded state."""

    def __init__(self, step: int, last_state: Optional[SystemState]):
        self.step = step
        self.last_state = last_state
        super().__init__(f"non-finite state at step {step}")


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray          # (S,)
    omega: np.ndarray          # (S, N)
    flow: np.ndarray           # (S, E)
    u: np.ndarray              # (S, N)
    q: np.ndarray              # (S, N)
    cost_series: np.ndarray    # (S,) cost_paper per snapshot
    events: Tuple[Tuple[float, str, str], ...]
    rx_links: Tuple[Tuple[int, int], ...] = ()
    rx_series: Optional[np.ndarray] = None   # (S, len(rx_links)) held values

    def __len__(self) -> int:
        return len(self.times)

    def state_at(self, k: int) -> SystemState:
        last_rx = {}
        if self.rx_series is not None:
            last_rx = {link: self.rx_series[k, c] for c, link in enumerate(self.rx_links)
                       if np.isfinite(self.rx_series[k, c])}
        return SystemState(t=float(self.times[k]), omega=self.omega[k].copy(),
                           flow=self.flow[k].copy(), u=self.u[k].copy(),
                           q=self.q[k].copy(), last_rx=last_rx)

    @property
    def states(self) -> Tuple[SystemState, ...]:
        return tuple(self.state_at(k) for k in range(len(self)))


@dataclass(frozen=True)
class RunSummary:
    steady_u: np.ndarray
    steady_cost_paper: float
    t_star: Optional[float]                 # None = not converged
    t_star_first_crossing: Optional[float]
    max_freq_excursion: float

    def to_dict(self) -> dict:
        return {
            "steady_u": [float(v) for v in self.steady_u],
            "steady_cost_paper": self.steady_cost_paper,
            "converged": self.t_star is not None,
            "t_star": self.t_star,
            "t_star_first_crossing": self.t_star_first_crossing,
            "max_freq_excursion": self.max_freq_excursion,
        }


# ---------------------------------------------------------------------------
# Continuous-time derivative (the reference dynamics; the integrator's
# affine matrices are assembled from it by basis evaluation)

def state_to_vector(state: SystemState) -> np.ndarray:
    return np.concatenate([state.omega, state.flow, state.u, state.q])


def vector_to_state(t: float, x: np.ndarray, grid: PowerGrid,
                    last_rx: Optional[dict] = None) -> SystemState:
    n, e = grid.n_nodes, grid.n_lines
    return SystemState(t=t, omega=x[:n], flow=x[n:n + e], u=x[n + e:2 * n + e],
                       q=x[2 * n + e:], last_rx=last_rx or {})


def state_labels(grid: PowerGrid, q_nodes: Optional[Sequence[int]] = None) -> Tuple[str, ...]:
    """Row labels for the state layout; q_nodes limits the q block."""
    qs = range(grid.n_nodes) if q_nodes is None else q_nodes
    return tuple(
        [f"omega_{k + 1}" for k in range(grid.n_nodes)]
        + [f"f_{ln.i + 1}_{ln.j + 1}" for ln in grid.lines]
        + [f"u_{k + 1}" for k in range(grid.n_nodes)]
        + [f"q_{k + 1}" for k in qs]
    )


def derivative(state: SystemState, grid: PowerGrid, comm: CommGraph,
               ctx: ControlContext, p: Optional[np.ndarray] = None) -> np.ndarray:
    """Time derivative of the full state vector [omega, flow, u, q].

    Swing dynamics: M dω = -D ω + p + u - (incidence) f; line dynamics:
    df = B (ω_i - ω_j). du and dq are delegated to the control law selected
    by ctx.scheme. p defaults to the grid's fixed powers; pass the
    disturbed vector when evaluating mid-run.
    """
    if p is None:
        p = grid.fixed_power()
    inc = grid.incidence()
    domega = (-grid.droop() * state.omega + p + state.u - inc @ state.flow) / grid.inertia()
    dflow = grid.susceptance() * (inc.T @ state.omega)

    n = grid.n_nodes
    dq = np.zeros(n)
    scheme = ctx.scheme
    if scheme == "CONSENSUS":
        du = controllers.consensus_rate(state, grid, comm)
    elif scheme == "CONSENSUS_SAMPLED":
        du = controllers.consensus_sampled_rate(state, grid, comm)
    elif scheme == "PAIR_FLOW":
        du_pair, dq_pair = controllers.pair_flow_rate(state, grid, ctx)
        du = np.zeros(n)
        for i, v in du_pair.items():
            du[i] = v
        for i, v in dq_pair.items():
            dq[i] = v
    elif scheme == "HYBRID_SINGLE":
        du, dq_pair = controllers.hybrid_single_failure_rate(state, grid, comm, ctx)
        for i, v in dq_pair.items():
            dq[i] = v
    elif scheme == "MULTI_FAILURE":
        du, dq_pair = controllers.multi_failure_rate(state, grid, comm, ctx)
        for i, v in dq_pair.items():
            dq[i] = v
    elif scheme == "SEQUENTIAL":
        du = controllers.consensus_sampled_rate(state, grid, comm)
        pair_ctx = ControlContext(scheme="PAIR_FLOW",
                                  F=frozenset(ctx.active_link),
                                  pair_edges=frozenset([ctx.active_link]))
        du_pair, dq_pair = controllers.pair_flow_rate(state, grid, pair_ctx)
        for i, v in du_pair.items():
            du[i] = v
        for i, v in dq_pair.items():
            dq[i] = v
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return np.concatenate([domega, dflow, du, dq])


def assemble_affine(grid: PowerGrid, comm: CommGraph, ctx: ControlContext,
                    p: np.ndarray, last_rx: dict, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Exact (A, b) with derivative(x) == A x + b, by basis evaluation.

    Exact because every control law is linear in the state once event data
    (p, held messages, the active structure) is frozen.
    """
    n, e = grid.n_nodes, grid.n_lines
    dim = 3 * n + e
    zero = vector_to_state(t, np.zeros(dim), grid, last_rx)
    b = derivative(zero, grid, comm, ctx, p)
    A = np.empty((dim, dim))
    basis = np.zeros(dim)
    for k in range(dim):
        basis[k] = 1.0
        A[:, k] = derivative(vector_to_state(t, basis, grid, last_rx),
                             grid, comm, ctx, p) - b
        basis[k] = 0.0
    return A, b


def initial_flows(grid: PowerGrid, p: np.ndarray) -> np.ndarray:
    """Minimum-norm DC flow solution balancing the injections at ω = 0
    (zero cycle-space component)."""
    f, *_ = np.linalg.lstsq(grid.incidence(), p, rcond=None)
    return f


# ---------------------------------------------------------------------------
# Event-driven integration

def _live_comm(comm: CommGraph, failed_so_far: set) -> CommGraph:
    """Comm graph restricted to links that have not failed yet."""
    links = tuple(l for l in comm.links if l not in failed_so_far)
    return CommGraph(links=links, failed=(), message_interval=comm.message_interval)


def integrate(scenario: Scenario, initial_state: Optional[SystemState] = None) -> Trajectory:
    """Run the scenario and record every record_stride-th step (plus the
    final one). Events at the same instant apply in a fixed order:
    disturbance, link failure (with artificial-variable initialization),
    message sampling, sequential link rotation; a snapshot that coincides
    with an event reflects the post-event state. The event log keeps
    discrete occurrences (disturbances, failures, initializations,
    warnings); routine sampling refreshes and rotations are not logged.
    """
    violations = validate(scenario)
    if violations:
        raise ScenarioError("; ".join(violations))

    grid, comm = scenario.grid, scenario.comm
    n, e = grid.n_nodes, grid.n_lines
    dim = 3 * n + e
    dt = scenario.dt
    stride = scenario.record_stride
    n_total = int(round(scenario.horizon / dt))
    T = comm.message_interval
    steps_per_T = None if T is CONTINUOUS else int(round(T / dt))
    sampled_scheme = scenario.scheme in ("CONSENSUS_SAMPLED", "SEQUENTIAL")
    track_rx = steps_per_T is not None
    cost_vec = grid.cost()

    p = grid.fixed_power().copy()
    if initial_state is None:
        x = np.zeros(dim)
        x[n:n + e] = initial_flows(grid, p)
    else:
        x = state_to_vector(initial_state).astype(float).copy()

    events_log: List[Tuple[float, str, str]] = []
    last_rx: Dict[Tuple[int, int], float] = {}

    disturbances = sorted(
        ((min(max(int(round(d.time / dt)), 0), n_total), d) for d in scenario.disturbances
         if round(d.time / dt) <= n_total),
        key=lambda sd: sd[0],
    )
    failures = sorted(
        ((min(max(int(round(t0 / dt)), 0), n_total), link) for link, t0 in comm.failed
         if round(t0 / dt) <= n_total),
        key=lambda sf: sf[0],
    )
    failed_set: set = set()

    # Controller mode, updated by events. For PAIR_FLOW the pair edge is the
    # first power line; it activates at t=0 unless the matching comm link has
    # a scheduled failure (then averaging runs until the failure instant).
    scheme = scenario.scheme
    mode = scheme
    ctx = ControlContext(scheme="CONSENSUS")
    sorted_lines = sorted((ln.i, ln.j) for ln in grid.lines)
    pair_edge = sorted_lines[0] if scheme == "PAIR_FLOW" else None
    pair_pending = (scheme == "PAIR_FLOW"
                    and pair_edge in {link for _, link in failures})
    if scheme == "PAIR_FLOW" and not pair_pending:
        ctx = ControlContext(scheme="PAIR_FLOW", F=frozenset(pair_edge),
                             pair_edges=frozenset([pair_edge]))
        mode = "PAIR_FLOW"
    elif scheme in ("PAIR_FLOW", "HYBRID_SINGLE", "MULTI_FAILURE"):
        mode = "CONSENSUS"   # flow-based laws engage at the failure instant
        ctx = ControlContext(scheme="CONSENSUS")
    elif scheme == "CONSENSUS_SAMPLED":
        ctx = ControlContext(scheme="CONSENSUS_SAMPLED")
    elif scheme == "SEQUENTIAL":
        ctx = ControlContext(scheme="SEQUENTIAL")  # active link set at step 0

    seq_K = -1
    structure_dirty = True
    b_dirty = True
    A = np.empty((dim, dim))
    b = np.empty(dim)
    a_cache: Dict[tuple, np.ndarray] = {}
    cache_epoch = 0

    def comm_eff() -> CommGraph:
        return _live_comm(comm, failed_set)

    def refresh_rx(t: float) -> None:
        y = cost_vec * x[n + e:2 * n + e]
        for a_, b_ in comm_eff().links:
            last_rx[(a_, b_)] = y[a_]
            last_rx[(b_, a_)] = y[b_]

    def hold_pickup() -> np.ndarray:
        """Held-message contribution to du, refreshed cheaply at sampling
        instants (identical to what derivative() sees; covered by tests)."""
        pick = np.zeros(n)
        skip = ctx.active_link if mode == "SEQUENTIAL" else None
        for (src, dst), val in last_rx.items():
            if (min(src, dst), max(src, dst)) in failed_set:
                continue
            if skip is not None and dst in skip:
                continue
            pick[dst] += val
        return pick

    def rebuild(t: float) -> None:
        nonlocal structure_dirty, b_dirty, A, b
        key = (cache_epoch, mode, ctx.F, ctx.pair_edges, ctx.active_link)
        if structure_dirty:
            cached = a_cache.get(key)
            if cached is None:
                A, b = assemble_affine(grid, comm_eff(), ctx, p, last_rx, t)
                a_cache[key] = A
            else:
                A = cached
                b = derivative(vector_to_state(t, np.zeros(dim), grid, last_rx),
                               grid, comm_eff(), ctx, p)
            structure_dirty = False
            b_dirty = False
        elif b_dirty:
            b = derivative(vector_to_state(t, np.zeros(dim), grid, last_rx),
                           grid, comm_eff(), ctx, p)
            b_dirty = False

    def fast_b_hold() -> None:
        """Update only the held-message part of b after a sampling refresh.

        At the zero state the control rate reduces to the received-value
        pickup, so this mirrors what a full derivative(0) rebuild would
        produce (asserted by the test suite)."""
        if structure_dirty or b_dirty:
            return  # full rebuild pending anyway
        b[n + e:2 * n + e] = hold_pickup()

    def apply_events(step: int) -> None:
        """All events scheduled at this step, in the fixed order:
        disturbance -> comm failure (+ artificial-variable init) ->
        sampling refresh -> sequential rotation."""
        nonlocal p, mode, ctx, seq_K, structure_dirty, b_dirty, cache_epoch
        t = step * dt

        while disturbances and disturbances[0][0] == step:
            _, d = disturbances.pop(0)
            p = p.copy()
            p[d.node] += d.delta_p
            b_dirty = True
            events_log.append((t, "disturbance",
                               f"node {d.node + 1} delta_p {d.delta_p:+g}"))

        newly_failed = []
        while failures and failures[0][0] == step:
            _, link = failures.pop(0)
            if link in failed_set:
                continue
            failed_set.add(link)
            newly_failed.append(link)
            events_log.append((t, "comm_failure", f"link ({link[0] + 1},{link[1] + 1})"))
        if newly_failed:
            structure_dirty = True
            cache_epoch += 1
            power_edges = grid.edge_set()
            if scheme in ("HYBRID_SINGLE", "PAIR_FLOW"):
                link = newly_failed[0]
                if link in power_edges and (scheme == "HYBRID_SINGLE" or link == pair_edge):
                    new_mode = "HYBRID_SINGLE" if scheme == "HYBRID_SINGLE" else "PAIR_FLOW"
                    ctx = ControlContext(scheme=new_mode, F=frozenset(link),
                                         pair_edges=frozenset([link]))
                    mode = new_mode
                    state_now = vector_to_state(t, x, grid, last_rx)
                    q0, warns = controllers.init_artificial(state_now, grid, ctx, comm)
                    x[2 * n + e:] = q0
                    events_log.append((t, "init_artificial",
                                       f"nodes {link[0] + 1},{link[1] + 1}"))
                    for w in warns:
                        events_log.append((t, "warning", w))
                else:
                    events_log.append((t, "fallback_consensus",
                                       f"failed link ({link[0] + 1},{link[1] + 1}) has no "
                                       "power line; averaging continues on surviving links"))
            elif scheme == "MULTI_FAILURE":
                pairs = frozenset(l for l in failed_set if l in power_edges)
                F = frozenset(i for l in pairs for i in l)
                ctx = ControlContext(scheme="MULTI_FAILURE", F=F, pair_edges=pairs)
                mode = "MULTI_FAILURE"
                state_now = vector_to_state(t, x, grid, last_rx)
                q0, warns = controllers.init_artificial(state_now, grid, ctx, comm)
                x[2 * n + e:] = q0
                if F:
                    events_log.append((t, "init_artificial",
                                       f"nodes {','.join(str(i + 1) for i in sorted(F))}"))
                for w in warns:
                    events_log.append((t, "warning", w))

        if track_rx and step % steps_per_T == 0:
            refresh_rx(t)
            if sampled_scheme:
                fast_b_hold()

        if scheme == "SEQUENTIAL" and step % steps_per_T == 0:
            seq_K = step // steps_per_T
            shared = sorted(set(sorted_lines) & set(comm_eff().links))
            link = controllers.sequential_active_link(seq_K, shared)
            ctx = ControlContext(scheme="SEQUENTIAL", F=frozenset(link),
                                 pair_edges=frozenset([link]), active_link=link)
            mode = "SEQUENTIAL"
            pair_ctx = ControlContext(scheme="PAIR_FLOW", F=frozenset(link),
                                      pair_edges=frozenset([link]))
            state_now = vector_to_state(t, x, grid, last_rx)
            q0, _ = controllers.init_artificial(state_now, grid, pair_ctx, comm)
            x[2 * n + e:] = q0
            structure_dirty = True

    # --- record buffers -----------------------------------------------------
    n_rec_max = n_total // stride + 2
    rec_states = np.empty((n_rec_max, dim))
    rec_steps = np.empty(n_rec_max, dtype=np.int64)
    rec_rx = np.full((n_rec_max, 2 * len(comm.links)), np.nan) if track_rx else None
    rx_links: Tuple[Tuple[int, int], ...] = ()
    if track_rx:
        rx_links = tuple(d for a_, b_ in comm.links for d in ((a_, b_), (b_, a_)))
    n_rec = 0

    def record(step: int) -> None:
        nonlocal n_rec
        rec_states[n_rec] = x
        rec_steps[n_rec] = step
        if track_rx:
            for c, dlink in enumerate(rx_links):
                rec_rx[n_rec, c] = last_rx.get(dlink, np.nan)
        n_rec += 1

    apply_events(0)
    record(0)

    step = 0
    while step < n_total:
        next_event = n_total
        if disturbances:
            next_event = min(next_event, disturbances[0][0])
        if failures:
            next_event = min(next_event, failures[0][0])
        if track_rx:
            next_sample = (step // steps_per_T + 1) * steps_per_T
            next_event = min(next_event, next_sample)
        rebuild(step * dt)

        seg = next_event - step
        # interior records only; the segment end is recorded after its events
        rem = step % stride
        first = stride - rem if rem else stride
        if first >= seg:
            first_arg, max_rec = 0, 0
        else:
            first_arg = first
            max_rec = (seg - 1 - first) // stride + 1
        out = rec_states[n_rec:n_rec + max_rec]
        got = rk4_segment(A, b, x, dt, seg, first_arg, stride, out)
        for r in range(got):
            rec_steps[n_rec + r] = step + first + r * stride
            if track_rx:
                for c, dlink in enumerate(rx_links):
                    rec_rx[n_rec + r, c] = last_rx.get(dlink, np.nan)
        n_rec += got

        step = next_event
        if not np.all(np.isfinite(x)):
            last = None
            if n_rec:
                k = n_rec - 1
                traj = _finalize(grid, cost_vec, rec_states[:n_rec], rec_steps[:n_rec],
                                 dt, events_log, rx_links,
                                 rec_rx[:n_rec] if track_rx else None)
                last = traj.state_at(k)
            raise IntegrationError(step, last)
        apply_events(step)
        if step % stride == 0 or step == n_total:
            record(step)

    return _finalize(grid, cost_vec, rec_states[:n_rec], rec_steps[:n_rec], dt,
                     events_log, rx_links, rec_rx[:n_rec] if track_rx else None)


def _finalize(grid: PowerGrid, cost_vec: np.ndarray, states: np.ndarray,
              steps: np.ndarray, dt: float, events, rx_links, rx) -> Trajectory:
    n, e = grid.n_nodes, grid.n_lines
    u = states[:, n + e:2 * n + e]
    return Trajectory(
        times=steps * dt,
        omega=states[:, :n].copy(),
        flow=states[:, n:n + e].copy(),
        u=u.copy(),
        q=states[:, 2 * n + e:].copy(),
        cost_series=(u * u) @ cost_vec,
        events=tuple(events),
        rx_links=rx_links,
        rx_series=None if rx is None else rx.copy(),
    )


# ---------------------------------------------------------------------------
# Metrics

def convergence_time(traj: Trajectory, cost_star: float, band: float = 0.01,
                     after: Optional[float] = None) -> Optional[float]:
    """First recorded time after the last disturbance from which the cost
    stays inside the band until the end of the horizon; None if never.

    The raw first band crossing (which may be exited again) is available
    from first_crossing_time.
    """
    if not math.isfinite(cost_star):
        raise ValueError("cost_star must be finite")
    if after is None:
        after = max((t for t, kind, _ in traj.events if kind == "disturbance"),
                    default=0.0)
    eligible = traj.times >= after
    inside = np.abs(traj.cost_series - cost_star) < band
    ok = eligible & inside
    # last index where the condition fails; t* is the next recorded sample
    bad = np.nonzero(eligible & ~inside)[0]
    if bad.size == 0:
        idx = np.nonzero(eligible)[0]
        return float(traj.times[idx[0]]) if idx.size else None
    k = bad[-1] + 1
    if k >= len(traj.times) or not ok[k:].all() or not ok[k]:
        return None
    return float(traj.times[k])


def first_crossing_time(traj: Trajectory, cost_star: float, band: float = 0.01,
                        after: Optional[float] = None) -> Optional[float]:
    if after is None:
        after = max((t for t, kind, _ in traj.events if kind == "disturbance"),
                    default=0.0)
    hit = np.nonzero((traj.times >= after)
                     & (np.abs(traj.cost_series - cost_star) < band))[0]
    return float(traj.times[hit[0]]) if hit.size else None


def run_scenario(scenario: Scenario) -> Tuple[Trajectory, RunSummary]:
    """Integrate and summarize; t* is measured against the optimal dispatch
    for the post-disturbance fixed powers (all scheduled disturbances, so a
    horizon too short to even apply them reports non-convergence)."""
    traj = integrate(scenario)
    p_star = scenario.grid.fixed_power().copy()
    for d in scenario.disturbances:
        p_star[d.node] += d.delta_p
    cost_star = optimal_dispatch(scenario.grid, p_star).cost_paper
    steady_u = traj.u[-1]
    cp, _ = cost_of(scenario.grid, steady_u)
    summary = RunSummary(
        steady_u=steady_u.copy(),
        steady_cost_paper=cp,
        t_star=convergence_time(traj, cost_star),
        t_star_first_crossing=first_crossing_time(traj, cost_star),
        max_freq_excursion=float(np.max(np.abs(traj.omega))),
    )
    return traj, summary


# ---------------------------------------------------------------------------
# Trajectory CSV (header: t,omega_1..N,u_1..N,q_1..N,f_1..E,cost_paper)

def write_trajectory_csv(traj: Trajectory, path) -> None:
    n = traj.omega.shape[1]
    e = traj.flow.shape[1]
    cols = (["t"]
            + [f"omega_{k + 1}" for k in range(n)]
            + [f"u_{k + 1}" for k in range(n)]
            + [f"q_{k + 1}" for k in range(n)]
            + [f"f_{k + 1}" for k in range(e)]
            + ["cost_paper"])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(len(traj)):
            row = np.concatenate([[traj.times[k]], traj.omega[k], traj.u[k],
                                  traj.q[k], traj.flow[k], [traj.cost_series[k]]])
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
