"""Sequential outer loop: one homotopy step per incoming (g_t, c_t) pair.

Each step runs the matrix leg (A -> A + g g') and then the vector leg
(c -> c + l) on the updated matrix.  The problem matrix is maintained lazily:
only columns whose index has ever touched a support (the set S*) are kept
current, and a column is caught up from the logged g history the first time
its index enters.  A twin eager mode keeps the full matrix current instead and
must produce identical trajectories.

Per step the driver emits a StepReport with the turning-point counts, the
excess over the support symmetric-difference lower bound, the optimality
residual, wall time split into solve and matrix-maintenance parts, and the
scalar-multiplication tally used by the complexity check.
"""

import struct
import time
from dataclasses import dataclass, replace

import numpy as np

from .counters import MultCounter
from .kkt import DEFAULT_COND_CAP, Problem, oracle_solve
from .path_matrix import run_lambda_leg
from .path_vector import run_utilde_leg
from .state import (
    DENSE,
    direct_update_par2,
    direct_update_par3,
    init_par1,
    par1_from_matrix,
    refresh_quadruple,
    state_from_bytes,
    state_to_bytes,
    validate_state,
)


@dataclass
class SolverConfig:
    """Knobs for one solver session.

    rebuild_every: refresh the cached state by direct factorization every R
        steps (0 disables).  validate_every: additionally measure state drift
        every V steps and rebuild when it exceeds validate_threshold.
    """

    rebuild_every: int = 1000
    validate_every: int = 0
    validate_threshold: float = 1e-6
    cycle_cap_factor: int = 10
    cycle_cap: int = 0  # absolute events-per-leg cap; 0 means cycle_cap_factor * n
    tol: float = 1e-8
    refresh_factor: float = 0.25  # re-derive (v, mu0) from M when residual > factor * tol
    counters: bool = True
    m_layout: str = DENSE
    lazy_a: bool = True
    cond_cap: float = DEFAULT_COND_CAP
    keep_events: bool = True

    def with_overrides(self, **kw):
        return replace(self, **kw)


@dataclass
class StepReport:
    t: int
    k_a: int
    k_c: int
    k_t: int
    e_t: int
    support_size: int
    s_max: int
    s_star: int
    kkt_residual: float
    wall_ns: int
    a_update_ns: int
    mult_count: int
    rebuilds: int


class SolverSession:
    """All mutable state of one sequential solve.

    The stored matrix starts as a copy of the initial A.  In lazy mode the
    invariant is: for every j in S*, column j equals the initial column plus
    the accumulated rank-one contributions of all g's appended to the log so
    far; columns outside S* are stale but never read.
    """

    def __init__(self, A0, c0, quadruple, par1, config):
        self.config = config
        self.n = int(A0.shape[0])
        self.A = np.array(A0, dtype=np.float64)
        self.c = np.array(c0, dtype=np.float64)
        self.quadruple = quadruple
        self.par1 = par1
        self.par2 = None
        self.par3 = None
        self.t = 0
        self.s_star_mask = quadruple.support.mask.copy()
        self.g_log = []
        self.counter = MultCounter()
        self.rebuild_count = 0
        self.events = []
        self.reports = []

    @property
    def x(self):
        return self.quadruple.x

    @property
    def support(self):
        return self.quadruple.support

    @property
    def s_star_idx(self):
        return np.flatnonzero(self.s_star_mask)

    def residual(self):
        """Optimality residual of the current quadruple against (A_t, c_t).

        Uses only the live support columns of A, which are current by the
        session invariant.
        """
        q = self.quadruple
        idx = q.support.idx
        x_s = q.v[idx]
        mu = q.mu
        stat = self.A[:, idx] @ x_s - q.mu0 - mu - self.c
        x = q.x
        return max(
            float(np.max(np.abs(stat))),
            abs(float(np.sum(x_s)) - 1.0),
            float(np.max(np.abs(mu * x))),
            max(0.0, -float(np.min(x))),
            max(0.0, -float(np.min(mu))),
        )

    def validate(self):
        """State drift against a fresh factorization of the live columns.

        Par2 is skipped: at a step boundary it still refers to the previous
        linear term by design and is recomputed at the next step start.
        """
        problem = _SupportView(self.A, self.c)
        return validate_state(problem, self.support, self.par1, par3=self.par3)

    # -- checkpointing -------------------------------------------------------

    SESSION_MAGIC = b"HSS1"

    def save(self, path):
        blob = state_to_bytes(self.support, self.quadruple, self.par1, self.par2, self.par3)
        k = len(self.g_log)
        head = self.SESSION_MAGIC + struct.pack(
            "<IIIB3x", self.n, self.t, k, 1 if self.config.lazy_a else 0
        )
        parts = [
            head,
            self.A.astype("<f8").tobytes(),
            self.c.astype("<f8").tobytes(),
            self.s_star_mask.astype("<u1").tobytes(),
        ]
        parts += [g.astype("<f8").tobytes() for g in self.g_log]
        parts.append(blob)
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))

    @classmethod
    def load(cls, path, config=None):
        with open(path, "rb") as fh:
            buf = fh.read()
        if buf[:4] != cls.SESSION_MAGIC:
            raise ValueError("not a session checkpoint")
        n, t, k, lazy = struct.unpack_from("<IIIB3x", buf, 4)
        off = 4 + struct.calcsize("<IIIB3x")

        def take(count, dtype="<f8"):
            nonlocal off
            arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
            off += count * np.dtype(dtype).itemsize
            return arr

        A = take(n * n).reshape(n, n).astype(np.float64)
        c = take(n).astype(np.float64)
        mask = take(n, "<u1").astype(bool)
        g_log = [take(n).astype(np.float64) for _ in range(k)]
        support, quadruple, par1, par2, par3, _ = state_from_bytes(buf, off)
        config = config or SolverConfig(lazy_a=bool(lazy), m_layout=par1.layout)
        ses = cls(A, c, quadruple, par1, config)
        ses.A = A
        ses.t = t
        ses.s_star_mask = mask
        ses.g_log = g_log
        ses.par2 = par2
        ses.par3 = par3
        return ses


class _SupportView:
    """Duck-typed problem carrying a possibly lazily-maintained matrix.

    validate_state and the par rebuilds only read support columns, which are
    current; this avoids re-checking definiteness of the full stale matrix.
    """

    def __init__(self, A, c):
        self.A = A
        self.c = c
        self.n = A.shape[0]


def init_session(A0, c0, config=None):
    """Start a session at the global optimum of the initial problem."""
    config = config or SolverConfig()
    problem = Problem(A0, c0)
    quadruple = oracle_solve(problem, cond_cap=config.cond_cap)
    par1 = init_par1(problem, quadruple.support, layout=config.m_layout, cond_cap=config.cond_cap)
    return SolverSession(A0, c0, quadruple, par1, config)


def _catch_up_column(session, j):
    """Bring column j current using the whole logged g history.

    Only the column is written: stale columns must keep their pristine initial
    values or a later catch-up would double-count.  Every read in the solver
    is column-wise, so row staleness is never observed.
    """
    if not session.g_log:
        return
    G = np.asarray(session.g_log)
    session.A[:, j] += G.T @ G[:, j]


def step(session, g_t, c_t):
    """Advance one problem update; returns the StepReport.

    Runs the matrix leg against the step's direction, folds the rank-one
    update into the live columns, then runs the vector leg for the linear
    drift.  Degeneracies inside a leg trigger one in-place rebuild and retry
    before propagating.
    """
    cfg = session.config
    counter = session.counter
    t_start = time.perf_counter_ns()
    a_ns = 0
    rebuilds_before = session.rebuild_count
    mult_before = counter.total

    session.t += 1
    n = session.n
    g = np.asarray(g_t, dtype=np.float64)
    c_new = np.asarray(c_t, dtype=np.float64)
    if g.shape != (n,) or c_new.shape != (n,):
        raise ValueError(f"step vectors must have length {n}")
    q = session.quadruple
    prev_support = set(q.support.as_tuple())
    s_max = q.support.size

    session.par2 = direct_update_par2(q.support, session.par1, session.c, g, counter)

    def ensure_column(j):
        nonlocal a_ns
        if session.s_star_mask[j]:
            return
        t0 = time.perf_counter_ns()
        if cfg.lazy_a:
            _catch_up_column(session, j)
        session.s_star_mask[j] = True
        a_ns += time.perf_counter_ns() - t0

    def rebuild_matrix_leg(lam):
        session.rebuild_count += 1
        A_lam = session.A + lam * np.outer(g, g)
        fresh1 = par1_from_matrix(A_lam, q.support, layout=cfg.m_layout, cond_cap=cfg.cond_cap)
        session.par1.refresh_from(fresh1)
        session.par2.refresh_from(direct_update_par2(q.support, session.par1, session.c, g))

    events_a = run_lambda_leg(
        session.A,
        session.c,
        g,
        q,
        session.par1,
        session.par2,
        counter=counter,
        cycle_cap=cfg.cycle_cap or cfg.cycle_cap_factor * n,
        ensure_column=ensure_column,
        rebuild=rebuild_matrix_leg,
    )
    for ev in events_a:
        s_max = max(s_max, len(ev.support_after))

    t0 = time.perf_counter_ns()
    if cfg.lazy_a:
        live = session.s_star_idx
        session.A[:, live] += np.outer(g, g[live])
        session.g_log.append(g)
    else:
        session.A += np.outer(g, g)
    a_ns += time.perf_counter_ns() - t0

    l = c_new - session.c

    def rebuild_vector_leg(_t):
        session.rebuild_count += 1
        fresh1 = par1_from_matrix(session.A, q.support, layout=cfg.m_layout, cond_cap=cfg.cond_cap)
        session.par1.refresh_from(fresh1)
        session.par3.refresh_from(direct_update_par3(q.support, session.par1, l))

    session.par3 = direct_update_par3(q.support, session.par1, l, counter)
    events_c = run_utilde_leg(
        session.A,
        l,
        q,
        session.par1,
        session.par3,
        counter=counter,
        cycle_cap=cfg.cycle_cap or cfg.cycle_cap_factor * n,
        ensure_column=ensure_column,
        rebuild=rebuild_vector_leg,
    )
    for ev in events_c:
        s_max = max(s_max, len(ev.support_after))
    session.c = c_new

    if cfg.rebuild_every and session.t % cfg.rebuild_every == 0:
        rebuild(session)
    elif cfg.validate_every and session.t % cfg.validate_every == 0:
        if session.validate() > cfg.validate_threshold:
            rebuild(session)

    residual = session.residual()
    if cfg.refresh_factor and residual > cfg.refresh_factor * cfg.tol:
        # Accumulated path roundoff: pin (v, mu0) back to the cached inverse,
        # rebuilding that first if it has drifted too.
        refresh_quadruple(q, session.par1, session.c, counter)
        residual = session.residual()
        if residual > cfg.refresh_factor * cfg.tol:
            rebuild(session)
            refresh_quadruple(q, session.par1, session.c, counter)
            residual = session.residual()

    if cfg.keep_events:
        session.events.extend(events_a)
        session.events.extend(events_c)

    cur_support = set(q.support.as_tuple())
    k_a, k_c = len(events_a), len(events_c)
    k_t = k_a + k_c
    sym_diff = len(prev_support ^ cur_support)
    assert k_t >= sym_diff, "turning points fell below the symmetric-difference bound"
    assert (k_t - sym_diff) % 2 == 0, "toggles beyond the support change must pair up"
    assert bool(session.s_star_mask[q.support.idx].all()), "support escaped the touched set"
    report = StepReport(
        t=session.t,
        k_a=k_a,
        k_c=k_c,
        k_t=k_t,
        e_t=(k_t - sym_diff) // 2,
        support_size=q.support.size,
        s_max=s_max,
        s_star=int(session.s_star_mask.sum()),
        kkt_residual=residual,
        wall_ns=time.perf_counter_ns() - t_start,
        a_update_ns=a_ns,
        mult_count=counter.total - mult_before,
        rebuilds=session.rebuild_count - rebuilds_before,
    )
    session.reports.append(report)
    return report


def rebuild(session):
    """Recompute all caches from the stored matrix by direct factorization.

    The quadruple is untouched.  Raises SingularSubmatrix if the live block
    cannot be factorized.
    """
    cfg = session.config
    support = session.support
    fresh1 = par1_from_matrix(session.A, support, layout=cfg.m_layout, cond_cap=cfg.cond_cap)
    session.rebuild_count += 1
    session.par1.refresh_from(fresh1)
    if session.par2 is not None:
        session.par2.refresh_from(direct_update_par2(support, session.par1, session.c, session.par2.g))
    if session.par3 is not None:
        session.par3.refresh_from(direct_update_par3(support, session.par1, session.par3.l))
    return session


def run_sequence(session, flow, steps):
    """Run `steps` updates pulled from the flow; returns [(x_t, report), ...]."""
    out = []
    it = iter(flow)
    for _ in range(steps):
        g_t, c_t = next(it)
        report = step(session, g_t, c_t)
        out.append((session.x.copy(), report))
    return out


def complexity_bound(n, report):
    """Per-step multiplication budget from the turning-point accounting.

    Sum of the matrix-leg cost n s* + n s (3 k_A + 1) + n (12 k_A + 2) and the
    vector-leg cost n s (2 k_c + 1) + n (6 k_c + 1), plus 100 (k_t + 1) to
    absorb the order-one terms.
    """
    s, ss = report.s_max, report.s_star
    c1 = n * ss + n * s * (3 * report.k_a + 1) + n * (12 * report.k_a + 2)
    c2 = n * s * (2 * report.k_c + 1) + n * (6 * report.k_c + 1)
    return c1 + c2 + 100 * (report.k_t + 1)


@dataclass
class OpCheck:
    t: int
    measured: int
    bound: int

    @property
    def ok(self):
        return self.measured <= self.bound


def count_ops(reports, n):
    """Check every step's multiplication tally against its budget."""
    return [OpCheck(r.t, r.mult_count, complexity_bound(n, r)) for r in reports]


def aggregate_reports(reports, epoch=250):
    """Summary statistics covering support size, excess turning points and time."""
    if not reports:
        return {
            "steps": 0,
            "support": {},
            "excess_turning_points": {},
            "epoch_wall_s": [],
            "epoch_wall_opt_s": [],
        }
    sizes = np.array([r.support_size for r in reports], dtype=float)
    e = np.array([r.e_t for r in reports], dtype=float)
    wall = np.array([r.wall_ns for r in reports], dtype=float)
    opt = wall - np.array([r.a_update_ns for r in reports], dtype=float)
    n_ep = int(np.ceil(len(reports) / epoch))
    epoch_wall = [float(wall[i * epoch : (i + 1) * epoch].sum() / 1e9) for i in range(n_ep)]
    epoch_opt = [float(opt[i * epoch : (i + 1) * epoch].sum() / 1e9) for i in range(n_ep)]
    return {
        "steps": len(reports),
        "support": {
            "mean": float(sizes.mean()),
            "std": float(sizes.std(ddof=1)) if len(sizes) > 1 else 0.0,
            "max": int(sizes.max()),
            "min": int(sizes.min()),
        },
        "excess_turning_points": {
            "proportion_zero": float(np.mean(e == 0)),
            "q99": float(np.quantile(e, 0.99)),
            "q999": float(np.quantile(e, 0.999)),
            "max": int(e.max()),
        },
        "kkt_residual_max": float(max(r.kkt_residual for r in reports)),
        "mult_total": int(sum(r.mult_count for r in reports)),
        "rebuilds": int(sum(r.rebuilds for r in reports)),
        "wall_s": float(wall.sum() / 1e9),
        "wall_opt_s": float(opt.sum() / 1e9),
        "epoch_wall_s": epoch_wall,
        "epoch_wall_opt_s": epoch_opt,
    }
