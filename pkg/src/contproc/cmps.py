"""Generic cMPS machinery on a uniform time grid: propagation, overlaps,
gauge transformations, virtual environments, and canonical forms.

Time-ordering convention (fixed package-wide): operator strings are written
with later times on the LEFT, i.e. amplitudes read

    tr[ B M(T, t_n) R(t_n) ... R(t_1) M(t_1, 0) ]

so for a boundary B = |ket><bra| the ket sits at t = 0 and the bra at t = T.
Consequences (documented here because they differ from part of the cMPS
literature written in the opposite ordering):

* gauge transformations act as Q -> g^-1 Q g - g^-1 dg/dt (note the minus
  sign), R -> g^-1 R g, B -> g(0)^-1 B g(T);
* the right environment r(t) is the Gram matrix of the [0, t) segment and is
  propagated forward from r(0) by the transfer channel, while the left
  environment l(t) is the Gram matrix of the (t, T] segment and is
  propagated backward from l(T) by the adjoint channel.  The left
  orthonormal condition Q + Q' + sum R'R = 0 trivializes l.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import EIG_FLOOR, expm, herm, sqrtm_psd
from .liouville import COND_CAP, devectorize, vectorize

DEFAULT_GAP_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_l = l * dt on [0, T]."""

    t_total: float
    n_steps: int

    def __post_init__(self):
        if self.t_total <= 0 or self.n_steps <= 0:
            raise ValueError("grid needs positive total time and step count")

    @property
    def dt(self):
        return self.t_total / self.n_steps

    def points(self):
        return np.linspace(0.0, self.t_total, self.n_steps + 1)

    def midpoints(self):
        return (np.arange(self.n_steps) + 0.5) * self.dt

    def index_of(self, t, snap="reject", tol=1e-9):
        """Grid index of time t.  snap='round' rounds to the nearest point."""
        x = t / self.dt
        idx = int(round(x))
        if snap == "reject" and abs(x - idx) > tol:
            raise ValueError(f"time {t} is not on the grid (dt={self.dt})")
        idx = min(max(idx, 0), self.n_steps)
        return idx

    def compatible(self, other):
        return self.n_steps == other.n_steps and abs(self.t_total - other.t_total) < 1e-12


def _as_track(a, n, name):
    """Normalize a constant matrix or per-step stack to a canonical form."""
    a = np.asarray(a, dtype=complex)
    if a.ndim == 2:
        return a, True
    if a.ndim == 3 and a.shape[0] == n:
        return a, False
    raise ValueError(f"{name} must be (D,D) or (n_steps,D,D), got {a.shape}")


@dataclass
class CmpsParams:
    """The triple (Q(t), {R_nu(t)}, B) on a grid, piecewise constant per step.

    ``q`` is (D,D) for time-independent drift or (n,D,D); ``r_ops`` is
    (S,D,D) or (S,n,D,D) for S species; ``b`` is the boundary matrix.  For
    rank-one boundaries B = |ket><bra| the factors can be kept in
    ``b_factors`` = (ket, bra), which enables fast vector contractions;
    tr[B M] = bra^* . M . ket.
    """

    grid: TimeGrid
    q: np.ndarray
    r_ops: np.ndarray
    b: np.ndarray
    b_factors: tuple | None = None
    _exp_cache: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        n = self.grid.n_steps
        self.q, self._q_const = _as_track(self.q, n, "q")
        r = np.asarray(self.r_ops, dtype=complex)
        if r.ndim == 2:
            r = r[None]
        if r.ndim == 3:
            self.r_ops, self._r_const = r, True
        elif r.ndim == 4 and r.shape[1] == n:
            self.r_ops, self._r_const = r, False
        else:
            raise ValueError(f"r_ops must be (S,D,D) or (S,n,D,D), got {r.shape}")
        self.b = np.asarray(self.b, dtype=complex)
        d = self.bond
        if self.b.shape != (d, d):
            raise ValueError("boundary matrix dimension mismatch")
        if self.b_factors is not None:
            ket, bra = self.b_factors
            self.b_factors = (np.asarray(ket, dtype=complex), np.asarray(bra, dtype=complex))

    @property
    def bond(self):
        return self.q.shape[-1]

    @property
    def n_species(self):
        return self.r_ops.shape[0]

    @property
    def time_independent(self):
        return self._q_const and self._r_const

    def q_at(self, step):
        return self.q if self._q_const else self.q[step]

    def r_at(self, step):
        return self.r_ops if self._r_const else self.r_ops[:, step]

    def q_track(self):
        n = self.grid.n_steps
        return np.broadcast_to(self.q, (n,) + self.q.shape) if self._q_const else self.q

    def r_track(self):
        n = self.grid.n_steps
        if self._r_const:
            s, d, _ = self.r_ops.shape
            return np.broadcast_to(self.r_ops[:, None], (s, n, d, d))
        return self.r_ops

    def step_exp(self, step):
        """exp(dt * q) for one step, cached."""
        dt = self.grid.dt
        if self._q_const:
            if self._exp_cache is None:
                self._exp_cache = expm(dt * self.q)
            return self._exp_cache
        if self._exp_cache is None:
            self._exp_cache = [None] * self.grid.n_steps
        if self._exp_cache[step] is None:
            self._exp_cache[step] = expm(dt * self.q[step])
        return self._exp_cache[step]


def propagator(params, step_a, step_b):
    """M(t_b, t_a): ordered product of per-step exponentials, later steps
    multiplying from the left."""
    n = params.grid.n_steps
    if not (0 <= step_a <= step_b <= n):
        raise ValueError(f"step range ({step_a}, {step_b}) out of [0, {n}]")
    m = np.eye(params.bond, dtype=complex)
    for step in range(step_a, step_b):
        m = params.step_exp(step) @ m
    return m


def transfer_generator(params_b, params_a, step):
    """Doubled-space generator of <Phi_a | Phi_b> at one step:
    Q_b kron 1 + 1 kron Q_a* + sum_nu R_b,nu kron R_a,nu*."""
    qa, qb = params_a.q_at(step), params_b.q_at(step)
    ra, rb = params_a.r_at(step), params_b.r_at(step)
    if ra.shape[0] != rb.shape[0]:
        raise ValueError("species count mismatch")
    da, db = qa.shape[0], qb.shape[0]
    w = np.kron(qb, np.eye(da)) + np.kron(np.eye(db), qa.conj())
    for nu in range(ra.shape[0]):
        w += np.kron(rb[nu], ra[nu].conj())
    return w


def self_transfer_generator(params, step):
    """W = Q kron 1 + 1 kron Q* + sum R kron R* for a single cMPS."""
    return transfer_generator(params, params, step)


def _doubled_steps(params_b, params_a):
    """Per-step exponentials of the doubled-space generator, with constant
    parameters collapsed to a single matrix."""
    dt = params_b.grid.dt
    if params_a.time_independent and params_b.time_independent:
        return [expm(dt * transfer_generator(params_b, params_a, 0))], True
    n = params_b.grid.n_steps
    return [expm(dt * transfer_generator(params_b, params_a, s)) for s in range(n)], False


def overlap(params_a, params_b):
    """<Phi_a | Phi_b> for two cMPSs on the same grid and species count."""
    if not params_a.grid.compatible(params_b.grid):
        raise ValueError("grids are not compatible")
    if params_a.n_species != params_b.n_species:
        raise ValueError("species count mismatch")
    steps, const = _doubled_steps(params_b, params_a)
    n = params_b.grid.n_steps
    if params_a.b_factors is not None and params_b.b_factors is not None:
        ket_a, bra_a = params_a.b_factors
        ket_b, bra_b = params_b.b_factors
        v = np.kron(ket_b, ket_a.conj())
        for step in range(n):
            v = steps[0 if const else step] @ v
        w = np.kron(bra_b.conj(), bra_a)
        return complex(w @ v)
    x = np.kron(params_b.b, params_a.b.conj())
    m = np.eye(x.shape[0], dtype=complex)
    for step in range(n):
        m = steps[0 if const else step] @ m
    return complex(np.trace(x @ m))


def norm_squared(params):
    return overlap(params, params).real


def apply_gauge(params, g_track, cond_cap=COND_CAP):
    """Gauge-transform a cMPS with an invertible matrix track g(t_l) given at
    the n+1 grid points.

    Per-step values are sampled at step midpoints ((g_l + g_{l+1})/2, with
    the centered difference (g_{l+1} - g_l)/dt as the derivative), which
    keeps the overall discretization error at O(dt^2).  The transformation is
    Q -> g^-1 Q g - g^-1 dg/dt, R -> g^-1 R g, B -> g(0)^-1 B g(T); see the
    module docstring for the sign convention.
    """
    g = np.asarray(g_track, dtype=complex)
    n = params.grid.n_steps
    d = params.bond
    if g.shape != (n + 1, d, d):
        raise ValueError(f"gauge track must have shape {(n + 1, d, d)}, got {g.shape}")
    conds = np.array([np.linalg.cond(g[i]) for i in range(n + 1)])
    if np.any(~np.isfinite(conds)) or np.max(conds) > cond_cap:
        raise ValueError("gauge matrix is singular or exceeds the condition cap")
    dt = params.grid.dt
    q_new = np.empty((n, d, d), dtype=complex)
    s = params.n_species
    r_new = np.empty((s, n, d, d), dtype=complex)
    for step in range(n):
        gm = 0.5 * (g[step] + g[step + 1])
        dgm = (g[step + 1] - g[step]) / dt
        gm_inv = np.linalg.inv(gm)
        q_new[step] = gm_inv @ params.q_at(step) @ gm - gm_inv @ dgm
        r_new[:, step] = np.einsum("ab,nbc,cd->nad", gm_inv, params.r_at(step), gm)
    b_new = np.linalg.inv(g[0]) @ params.b @ g[n]
    factors = None
    if params.b_factors is not None:
        ket, bra = params.b_factors
        factors = (np.linalg.inv(g[0]) @ ket, herm(g[n]) @ bra)
    return CmpsParams(params.grid, q_new, r_new, b_new, b_factors=factors)


def constant_gauge(params, g):
    """Similarity transformation by a single constant invertible matrix."""
    g = np.asarray(g, dtype=complex)
    track = np.broadcast_to(g, (params.grid.n_steps + 1,) + g.shape).copy()
    return apply_gauge(params, track)


# ---------------------------------------------------------------------------
# virtual environments and canonical forms
# ---------------------------------------------------------------------------


@dataclass
class EnvTrajectories:
    """Left/right virtual density matrices on the grid points.

    ``r[l]`` is the Gram matrix of the [0, t_l) segment states (seeded at
    t=0, direct transfer channel forward); ``l[l]`` is the Gram matrix of the
    (t_l, T] segment states (seeded at t=T, adjoint channel backward).  Both
    are Hermitian PSD and tr(l r) is constant along the grid.
    """

    l: np.ndarray
    r: np.ndarray
    boundary: str


def _channel_apply(e, x):
    return devectorize(e @ vectorize(x))


def _channel_apply_adjoint(e, x):
    return devectorize(herm(e) @ vectorize(x))


def evolve_env(params, l_boundary, r_boundary, psd_tol=1e-8):
    """Integrate the environment ODEs with the CP-structure-preserving
    per-step channels.

    ``r_boundary`` seeds r at t = 0 (propagated forward with exp(dt W));
    ``l_boundary`` seeds l at t = T (propagated backward with exp(dt W)').
    The assignment (which boundary belongs to which end) was fixed by a
    brute-force comparison of segment Gram matrices on small instances; see
    the module docstring.
    """
    for name, x in (("l", l_boundary), ("r", r_boundary)):
        w = np.linalg.eigvalsh(0.5 * (x + herm(x)))
        if w.min() < -psd_tol:
            raise ValueError(f"{name} boundary is not PSD (min eigenvalue {w.min():.2e})")
    n = params.grid.n_steps
    d = params.bond
    dt = params.grid.dt
    exps = [expm(dt * self_transfer_generator(params, s)) for s in range(n)] \
        if not params.time_independent else None
    e_const = expm(dt * self_transfer_generator(params, 0)) if params.time_independent else None

    def step_exp(s):
        return e_const if e_const is not None else exps[s]

    r = np.empty((n + 1, d, d), dtype=complex)
    r[0] = 0.5 * (r_boundary + herm(r_boundary))
    for s in range(n):
        x = _channel_apply(step_exp(s), r[s])
        r[s + 1] = 0.5 * (x + herm(x))
    l = np.empty((n + 1, d, d), dtype=complex)
    l[n] = 0.5 * (l_boundary + herm(l_boundary))
    for s in range(n - 1, -1, -1):
        x = _channel_apply_adjoint(step_exp(s), l[s + 1])
        l[s] = 0.5 * (x + herm(x))
    return EnvTrajectories(l=l, r=r, boundary="r(0)=past seed, l(T)=future seed")


@dataclass
class CanonicalFormBundle:
    """Gauge data and orthonormalized tracks produced by the canonical-form
    routines.  Point-indexed arrays have length n_steps + 1."""

    side: str
    gauge: np.ndarray
    gauge_inv: np.ndarray
    q_ortho: np.ndarray
    r_ortho: np.ndarray
    residuals: np.ndarray
    c: np.ndarray | None = None
    sigma: np.ndarray | None = None
    u: np.ndarray | None = None
    crossings: list = field(default_factory=list)
    support_ranks: np.ndarray | None = None


def _sylvester_sqrt_derivative(sq, sq_w, sq_v, ldot):
    """Solve d(sqrt(l))/dt from (d sqrt)sqrt + sqrt(d sqrt) = dl/dt, in the
    eigenbasis of sqrt(l)."""
    m = herm(sq_v) @ ldot @ sq_v
    denom = sq_w[:, None] + sq_w[None, :]
    return sq_v @ (m / denom) @ herm(sq_v)


def _env_rate_left(params, step, l_mat):
    q = params.q_at(step)
    r = params.r_at(step)
    rate = -(herm(q) @ l_mat + l_mat @ q)
    for nu in range(r.shape[0]):
        rate -= herm(r[nu]) @ l_mat @ r[nu]
    return rate


def _env_rate_right(params, step, r_mat):
    q = params.q_at(step)
    r = params.r_at(step)
    rate = q @ r_mat + r_mat @ herm(q)
    for nu in range(r.shape[0]):
        rate += r[nu] @ r_mat @ herm(r[nu])
    return rate


def left_orthonormalize(params, env, floor=EIG_FLOOR):
    """Left-orthonormal form: gauge g = l^{-1/2} built from the left
    environment, with Q_l = sqrt(l) Q sqrt(l)^-1 + (d sqrt(l)/dt) sqrt(l)^-1
    and R_l = sqrt(l) R sqrt(l)^-1; the residual Q_l + Q_l' + sum R_l' R_l
    vanishes identically when l solves its ODE.

    The sign of the derivative term reflects this package's time-ordering
    convention (later times left); see the module docstring.
    """
    return _orthonormalize(params, env, side="left", floor=floor)


def right_orthonormalize(params, env, floor=EIG_FLOOR):
    return _orthonormalize(params, env, side="right", floor=floor)


def _orthonormalize(params, env, side, floor):
    n = params.grid.n_steps
    d = params.bond
    mats = env.l if side == "left" else env.r
    gauge = np.empty((n + 1, d, d), dtype=complex)
    gauge_inv = np.empty_like(gauge)
    q_o = np.empty((n + 1, d, d), dtype=complex)
    s = params.n_species
    r_o = np.empty((s, n + 1, d, d), dtype=complex)
    residuals = np.empty(n + 1)
    support_ranks = np.empty(n + 1, dtype=int)
    for p in range(n + 1):
        m = 0.5 * (mats[p] + herm(mats[p]))
        w, v = np.linalg.eigh(m)
        w_raw = w.real
        if w_raw.max() <= floor:
            raise ValueError(f"{side} environment is numerically zero at grid point {p}")
        support = w_raw > w_raw.max() * 1e-10
        support_ranks[p] = int(support.sum())
        w = np.clip(w_raw, floor, None)
        sq = (v * np.sqrt(w)) @ herm(v)
        sq_inv = (v / np.sqrt(w)) @ herm(v)
        # pseudo-inverse restricted to the support, used for the reported
        # orthonormalized tracks; floored directions carry no state weight
        pinv_diag = np.where(support, 1.0 / np.sqrt(w), 0.0)
        sq_pinv = (v * pinv_diag) @ herm(v)
        step = min(p, n - 1)
        q = params.q_at(step)
        r = params.r_at(step)
        if side == "left":
            ldot = _env_rate_left(params, step, m)
            dsq = _sylvester_sqrt_derivative(sq, np.sqrt(w), v, ldot)
            q_pt = sq @ q @ sq_pinv + dsq @ sq_pinv
            r_pt = np.einsum("ab,nbc,cd->nad", sq, r, sq_pinv)
            res = q_pt + herm(q_pt)
            for nu in range(s):
                res += herm(r_pt[nu]) @ r_pt[nu]
            gauge[p], gauge_inv[p] = sq_inv, sq
        else:
            rdot = _env_rate_right(params, step, m)
            dsq = _sylvester_sqrt_derivative(sq, np.sqrt(w), v, rdot)
            q_pt = sq_pinv @ q @ sq - sq_pinv @ dsq
            r_pt = np.einsum("ab,nbc,cd->nad", sq_pinv, r, sq)
            res = q_pt + herm(q_pt)
            for nu in range(s):
                res += r_pt[nu] @ herm(r_pt[nu])
            gauge[p], gauge_inv[p] = sq, sq_inv
        q_o[p] = q_pt
        r_o[:, p] = r_pt
        pr = v[:, support]
        residuals[p] = np.linalg.norm(herm(pr) @ res @ pr)
    return CanonicalFormBundle(
        side=side, gauge=gauge, gauge_inv=gauge_inv, q_ortho=q_o, r_ortho=r_o,
        residuals=residuals, support_ranks=support_ranks,
    )


def _match_columns(u_prev, u_new, w_new):
    """Greedy column assignment of u_new to maximize overlap with u_prev;
    returns permuted (u, w)."""
    d = u_prev.shape[1]
    ov = np.abs(herm(u_prev) @ u_new)
    perm = [-1] * d
    used = set()
    for prev_col in np.argsort(-ov.max(axis=1)):
        order = np.argsort(-ov[prev_col])
        for cand in order:
            if cand not in used:
                perm[prev_col] = cand
                used.add(cand)
                break
    perm = np.array(perm)
    return u_new[:, perm], w_new[perm]


def _fix_phases(u):
    idx = np.argmax(np.abs(u), axis=0)
    phases = u[idx, np.arange(u.shape[1])]
    phases = phases / np.abs(phases)
    return u / phases[None, :]


def central_canonical(params, env, gap_tol=DEFAULT_GAP_TOL, floor=EIG_FLOOR):
    """Central canonical data: Schmidt map C = sqrt(l) sqrt(r), the singular
    spectrum sigma(t) = eig(sqrt(l) r sqrt(l)) in descending order, and the
    diagonalizing unitary u(t) made continuous along the grid by greedy
    column matching and phase fixing.  Near-degenerate crossings (gap below
    gap_tol) are flagged, not resolved."""
    n = params.grid.n_steps
    d = params.bond
    c = np.empty((n + 1, d, d), dtype=complex)
    sigma = np.empty((n + 1, d))
    u_track = np.empty((n + 1, d, d), dtype=complex)
    crossings = []
    for p in range(n + 1):
        sl, _ = sqrtm_psd(env.l[p], floor=floor)
        sr, _ = sqrtm_psd(env.r[p], floor=floor)
        c[p] = sl @ sr
        r_left = sl @ (0.5 * (env.r[p] + herm(env.r[p]))) @ sl
        w, v = np.linalg.eigh(0.5 * (r_left + herm(r_left)))
        order = np.argsort(-w.real)
        w, v = w.real[order], v[:, order]
        if p > 0:
            v, w = _match_columns(u_track[p - 1], v, w)
        v = _fix_phases(v)
        gaps = np.abs(np.diff(np.sort(w)))
        if gaps.size and gaps.min() < gap_tol:
            crossings.append(p)
        sigma[p] = np.clip(w, 0.0, None)
        u_track[p] = v
    bundle = left_orthonormalize(params, env, floor=floor)
    bundle.c = c
    bundle.sigma = sigma
    bundle.u = u_track
    bundle.crossings = crossings
    bundle.side = "central"
    return bundle


def particle_amplitude(params, times, species, snap="reject"):
    """Amplitude tr[B M(T,t_n) R_(nu_n) ... R_(nu_1) M(t_1,0)] for species
    insertions at grid-aligned, strictly increasing times."""
    times = list(times)
    species = list(species)
    if len(times) != len(species):
        raise ValueError("times and species must have equal length")
    steps = [params.grid.index_of(t, snap=snap) for t in times]
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("times must be strictly increasing on the grid")
    ops = []
    for idx, nu in zip(steps, species):
        r = params.r_at(min(idx, params.grid.n_steps - 1))
        ops.append(r[nu])
    return amplitude_with_insertions(params, steps, ops)


def amplitude_with_insertions(params, steps, operators):
    """tr[B M(T, t_k) O_k ... O_0 M(t_0, 0)] with arbitrary insertion
    matrices at grid points; the workhorse behind marginals and densities."""
    n = params.grid.n_steps
    if params.b_factors is not None:
        ket, bra = params.b_factors
        v = ket.copy()
        prev = 0
        for idx, op in zip(steps, operators):
            v = propagator(params, prev, idx) @ v
            v = op @ v
            prev = idx
        v = propagator(params, prev, n) @ v
        return complex(bra.conj() @ v)
    m = np.eye(params.bond, dtype=complex)
    prev = 0
    for idx, op in zip(steps, operators):
        m = propagator(params, prev, idx) @ m
        m = op @ m
        prev = idx
    m = propagator(params, prev, n) @ m
    return complex(np.trace(params.b @ m))
