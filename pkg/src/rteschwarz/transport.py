"""Discrete transport solves on a subdomain: forward, restricted, and adjoint maps.

The steady transport equation v du/dx = (sigma/eps) (avg_w u - u) is
discretized with first-order upwind differences in x and the midpoint
discrete ordinates of :mod:`rteschwarz.discretization` in v.  Inflow rows are
identity rows; boundary data enters the right-hand side, which keeps the
operator square and makes its transpose meaningful.

Unknown ordering is node-major: flat index = local_node * n_v + ordinate.

Two solver paths are available per local system:

* ``"gmres"`` (default): restarted GMRES preconditioned by one transport
  sweep (the source-iteration preconditioner: exact solve of the streaming
  plus removal part, direction by direction).
* ``"direct"``: a cached sparse LU factorization.  The factorization also
  backs every adjoint application and transpose solve, so forward/adjoint
  pairs computed through it satisfy the discrete duality identity to
  machine precision.

All solve entry points are pure: a ``LocalSystem`` is safe to share across
threads once assembled (the lazily built factorization is created under a
lock).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import (
    AngularQuadrature,
    BoundaryTrace,
    DecompositionGeometry,
    Grid1D,
    MediaField,
    trapezoid_weights,
)


class NonconvergenceError(RuntimeError):
    """Iterative solve failed to reach its residual tolerance."""

    def __init__(self, message: str, *, subdomain: int = 0, residual: float = float("nan"),
                 iterations: int = 0):
        super().__init__(message)
        self.subdomain = subdomain
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverSettings:
    """Linear-solver controls for the local transport systems.

    tol is a relative residual tolerance; max_applications caps the number
    of operator applications (default 10x the system dimension).
    """

    tol: float = 1e-10
    max_applications: int | None = None
    restart: int = 60
    method: str = "gmres"  # "gmres" | "direct"

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.method not in ("gmres", "direct"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one linear solve."""

    iterations: int
    residual: float
    wall_time: float


@dataclass
class LocalSystem:
    """Assembled discrete transport operator on one subdomain.

    Attributes:
        m: subdomain id (1-based).
        lo, hi: global node range covered by the subdomain.
        matrix: CSR operator of dimension (nodes * ordinates)^2.
        settings: solver controls.
    """

    m: int
    lo: int
    hi: int
    dx: float
    epsilon: float
    sigma: np.ndarray
    quad: AngularQuadrature
    matrix: sp.csr_matrix
    settings: SolverSettings
    _lu: spla.SuperLU | None = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.hi - self.lo + 1

    @property
    def dim(self) -> int:
        return self.n_nodes * self.quad.n

    # -- inflow bookkeeping -------------------------------------------------

    def inflow_slots(self) -> np.ndarray:
        """Flat unknown indices of the inflow rows, ordered by ordinate index.

        Entry i of an inflow trace maps to the right endpoint for negative
        ordinates and to the left endpoint for positive ones.
        """
        quad = self.quad
        slots = np.empty(quad.n, dtype=np.int64)
        idx = np.arange(quad.n)
        slots[quad.neg] = (self.n_nodes - 1) * quad.n + idx[quad.neg]
        slots[quad.pos] = idx[quad.pos]
        return slots

    def rhs_from_trace(self, phi: BoundaryTrace) -> np.ndarray:
        """Inject inflow data into the right-hand side."""
        if phi.kind != "inflow" or phi.values.size != self.quad.n:
            raise ValueError("expected an inflow trace matching the quadrature")
        if phi.owner != self.m:
            raise ValueError(f"trace owner {phi.owner} does not match subdomain {self.m}")
        b = np.zeros(self.dim)
        b[self.inflow_slots()] = phi.values
        return b

    def trace_from_vector(self, y: np.ndarray) -> np.ndarray:
        """Read the inflow-slot entries of a flat vector, ordinate-ordered."""
        return y[self.inflow_slots()]

    # -- solvers --------------------------------------------------------------

    def _factorization(self) -> spla.SuperLU:
        if self._lu is None:
            with self._lock:
                if self._lu is None:
                    self._lu = spla.splu(self.matrix.tocsc())
        return self._lu

    def solve_vector(self, b: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Factorization-backed solve of A x = b (or A^T x = b).

        One step of iterative refinement pushes the residual to machine
        level, which the duality identities and fixed-point checks rely on.
        """
        lu = self._factorization()
        trans = "T" if transpose else "N"
        op = self.matrix.T if transpose else self.matrix
        x = lu.solve(b, trans=trans)
        return x + lu.solve(b - op @ x, trans=trans)

    def sweep(self, b: np.ndarray) -> np.ndarray:
        """One transport sweep: exact solve of streaming + removal.

        This is the source-iteration preconditioner: per direction a
        bidiagonal forward/backward substitution, with the inflow identity
        rows passed through.
        """
        quad = self.quad
        n, h = self.n_nodes, quad.half
        s = self.sigma / self.epsilon
        z = b.reshape(n, quad.n).astype(float).copy()
        vp = quad.nodes[quad.pos] / self.dx
        vn = -quad.nodes[quad.neg] / self.dx
        for j in range(1, n):
            z[j, h:] = (z[j, h:] + vp * z[j - 1, h:]) / (vp + s[j])
        for j in range(n - 2, -1, -1):
            z[j, :h] = (z[j, :h] + vn * z[j + 1, :h]) / (vn + s[j])
        return z.reshape(-1)

    def _solve_gmres(self, b: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        t0 = time.perf_counter()
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros_like(b), SolveReport(0, 0.0, time.perf_counter() - t0)
        max_apps = self.settings.max_applications or 10 * self.dim
        restart = min(self.settings.restart, self.dim)
        maxiter = max(1, -(-max_apps // restart))
        count = [0]

        def cb(_):
            count[0] += 1

        M = spla.LinearOperator((self.dim, self.dim), matvec=self.sweep)
        # aim below tol so the verified true residual clears it
        x, info = spla.gmres(
            self.matrix, b, rtol=0.2 * self.settings.tol, atol=0.0,
            restart=restart, maxiter=maxiter, M=M, callback=cb, callback_type="pr_norm",
        )
        rel = float(np.linalg.norm(b - self.matrix @ x)) / bnorm
        report = SolveReport(count[0], rel, time.perf_counter() - t0)
        if info != 0 or rel > self.settings.tol:
            raise NonconvergenceError(
                f"GMRES on subdomain {self.m} stalled at relative residual {rel:.3e} "
                f"after {count[0]} iterations",
                subdomain=self.m, residual=rel, iterations=count[0],
            )
        return x, report

    def _solve_direct(self, b: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        t0 = time.perf_counter()
        x = self.solve_vector(b)
        bnorm = float(np.linalg.norm(b))
        rel = float(np.linalg.norm(b - self.matrix @ x)) / bnorm if bnorm > 0 else 0.0
        return x, SolveReport(0, rel, time.perf_counter() - t0)

    def solve(self, b: np.ndarray) -> tuple[np.ndarray, SolveReport]:
        if self.settings.method == "direct":
            return self._solve_direct(b)
        return self._solve_gmres(b)


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------

def assemble_local(
    geometry: DecompositionGeometry,
    m: int,
    media: MediaField,
    grid: Grid1D,
    quad: AngularQuadrature,
    settings: SolverSettings | None = None,
) -> LocalSystem:
    """Assemble the upwind discrete-ordinates operator on subdomain m.

    Interior rows for positive ordinates read
    v_i (u_{j,i} - u_{j-1,i}) / dx = (sigma_j / eps) (sum_k w_k u_{j,k} - u_{j,i})
    mirrored for negative ordinates; the inflow rows are identity rows.
    """
    if not (1 <= m <= geometry.m_count):
        raise ValueError(f"subdomain id {m} out of range 1..{geometry.m_count}")
    if media.sigma_nodes.size != grid.n_nodes:
        raise ValueError("media must be sampled at the grid nodes")
    settings = settings or SolverSettings()
    lo, hi = int(geometry.lo[m - 1]), int(geometry.hi[m - 1])
    sigma = media.sigma_nodes[lo : hi + 1]
    n = hi - lo + 1
    nv = quad.n
    h = quad.half
    dx = grid.dx
    s = sigma / media.epsilon
    v = quad.nodes
    w = quad.weights
    dim = n * nv

    rows, cols, vals = [], [], []

    def add(r, c, a):
        rows.append(np.asarray(r, dtype=np.int64).ravel())
        cols.append(np.asarray(c, dtype=np.int64).ravel())
        vals.append(np.asarray(a, dtype=float).ravel())

    # identity inflow rows: left endpoint for v>0, right endpoint for v<0
    left_rows = np.arange(h, nv)
    right_rows = (n - 1) * nv + np.arange(h)
    add(left_rows, left_rows, np.ones(h))
    add(right_rows, right_rows, np.ones(h))

    # advection, positive ordinates, nodes 1..n-1
    j = np.arange(1, n)
    jj, ii = np.meshgrid(j, np.arange(h, nv), indexing="ij")
    r = jj * nv + ii
    add(r, r, v[ii] / dx)
    add(r, (jj - 1) * nv + ii, -v[ii] / dx)

    # advection, negative ordinates, nodes 0..n-2
    j = np.arange(0, n - 1)
    jj, ii = np.meshgrid(j, np.arange(h), indexing="ij")
    r = jj * nv + ii
    add(r, r, -v[ii] / dx)
    add(r, (jj + 1) * nv + ii, v[ii] / dx)

    # scattering block at every non-inflow row:
    # +s_j on the diagonal and -s_j w_k across the ordinates of node j
    interior = np.ones((n, nv), dtype=bool)
    interior[0, h:] = False
    interior[n - 1, :h] = False
    jr, ir = np.nonzero(interior)
    r = jr * nv + ir
    add(r, r, s[jr])
    kk = np.broadcast_to(np.arange(nv), (r.size, nv))
    add(np.repeat(r, nv), (jr[:, None] * nv + kk).ravel(), (-s[jr][:, None] * w[None, :]).ravel())

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    return LocalSystem(
        m=m, lo=lo, hi=hi, dx=dx, epsilon=media.epsilon, sigma=sigma,
        quad=quad, matrix=matrix, settings=settings,
    )


# ---------------------------------------------------------------------------
# Forward maps
# ---------------------------------------------------------------------------

def solve_local(sys: LocalSystem, phi: BoundaryTrace) -> tuple[np.ndarray, SolveReport]:
    """Solve the local transport problem with inflow data phi.

    Returns the phase-space field on the subdomain's node range, shape
    (n_nodes, n_v), together with a solve report.  Linear in phi.
    """
    b = sys.rhs_from_trace(phi)
    x, report = sys.solve(b)
    return x.reshape(sys.n_nodes, sys.quad.n), report


def restrict_interior(u: np.ndarray, geometry: DecompositionGeometry, m: int) -> np.ndarray:
    """Restrict a subdomain field to the owned node range (boundary layers cut)."""
    lo = int(geometry.lo[m - 1])
    a = int(geometry.s_lo[m - 1]) - lo
    b = int(geometry.s_hi[m - 1]) - lo
    if u.shape[0] != geometry.n_local(m):
        raise ValueError(f"field has {u.shape[0]} nodes, subdomain {m} has {geometry.n_local(m)}")
    return u[a : b + 1]


def take_exchange_traces(
    u_s: np.ndarray, geometry: DecompositionGeometry, m: int, quad: AngularQuadrature
) -> tuple[BoundaryTrace | None, BoundaryTrace | None]:
    """Read the exchange cross-section values of a restricted field.

    Returns (toward m-1, toward m+1); an end subdomain gets None on its
    missing side.  The toward-(m+1) values become the left inflow of
    subdomain m+1, the toward-(m-1) values the right inflow of m-1.
    """
    if u_s.shape[0] != geometry.n_interior(m):
        raise ValueError("field does not cover the owned node range")
    s_lo = int(geometry.s_lo[m - 1])
    down = up = None
    if geometry.has_prev(m):
        j = int(geometry.xch_prev[m - 1]) - s_lo
        down = BoundaryTrace(owner=m, kind="to_prev", values=u_s[j, quad.neg])
    if geometry.has_next(m):
        j = int(geometry.xch_next[m - 1]) - s_lo
        up = BoundaryTrace(owner=m, kind="to_next", values=u_s[j, quad.pos])
    return down, up


def apply_P(
    sys: LocalSystem, geometry: DecompositionGeometry, m: int, phi: BoundaryTrace
) -> tuple[BoundaryTrace | None, BoundaryTrace | None]:
    """Boundary-to-boundary map: inflow data to exchange traces."""
    u, _ = solve_local(sys, phi)
    return take_exchange_traces(restrict_interior(u, geometry, m), geometry, m, sys.quad)


# ---------------------------------------------------------------------------
# Adjoint maps
# ---------------------------------------------------------------------------

def interior_weight_matrix(n_nodes: int, dx: float, quad: AngularQuadrature) -> np.ndarray:
    """Diagonal weights of the interior product, shaped (n_nodes, n_v)."""
    return np.outer(trapezoid_weights(n_nodes, dx), quad.weights)


def apply_S_s_adjoint(
    sys: LocalSystem, geometry: DecompositionGeometry, m: int, g: np.ndarray
) -> BoundaryTrace:
    """Adjoint of the inflow-to-restricted-solution map.

    Applies the transpose of the composed discrete map with respect to the
    weighted products: solves A^T y = R^T W_D g through the cached
    factorization and divides the inflow slots by the boundary weights.
    Paired with factorization-backed forward solves this satisfies the
    duality identity to machine precision.
    """
    quad = sys.quad
    ns = geometry.n_interior(m)
    g = np.asarray(g, dtype=float)
    if g.shape != (ns, quad.n):
        raise ValueError(f"expected a field of shape ({ns}, {quad.n}), got {g.shape}")
    wd = interior_weight_matrix(ns, sys.dx, quad)
    rhs = np.zeros(sys.dim)
    off = int(geometry.s_lo[m - 1]) - sys.lo
    rhs.reshape(sys.n_nodes, quad.n)[off : off + ns] = g * wd
    y = sys.solve_vector(rhs, transpose=True)
    wb = np.abs(quad.nodes) * quad.weights
    return BoundaryTrace(owner=m, kind="inflow", values=sys.trace_from_vector(y) / wb)


@dataclass
class AdjointLocalSystem:
    """Reversed-upwind discretization of the backward transport equation.

    The operator is (-v d/dx - (sigma/eps) L) with identity rows on the
    outflow set of the subdomain, where the backward characteristics enter.
    Used as an independent oracle for the factorization-based adjoints.
    """

    m: int
    lo: int
    hi: int
    dx: float
    quad: AngularQuadrature
    matrix: sp.csr_matrix
    _lu: spla.SuperLU | None = field(default=None, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.hi - self.lo + 1

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self._lu is None:
            with self._lock:
                if self._lu is None:
                    self._lu = spla.splu(self.matrix.tocsc())
        return self._lu.solve(b)


def assemble_local_adjoint(
    geometry: DecompositionGeometry,
    m: int,
    media: MediaField,
    grid: Grid1D,
    quad: AngularQuadrature,
) -> AdjointLocalSystem:
    """Assemble the backward-equation operator on subdomain m."""
    lo, hi = int(geometry.lo[m - 1]), int(geometry.hi[m - 1])
    sigma = media.sigma_nodes[lo : hi + 1]
    n = hi - lo + 1
    nv = quad.n
    h = quad.half
    dx = grid.dx
    s = sigma / media.epsilon
    v = quad.nodes
    w = quad.weights
    dim = n * nv

    rows, cols, vals = [], [], []

    def add(r, c, a):
        rows.append(np.asarray(r, dtype=np.int64).ravel())
        cols.append(np.asarray(c, dtype=np.int64).ravel())
        vals.append(np.asarray(a, dtype=float).ravel())

    # identity rows where backward characteristics enter: the forward
    # outflow set (left endpoint for v<0, right endpoint for v>0)
    left_rows = np.arange(h)
    right_rows = (n - 1) * nv + np.arange(h, nv)
    add(left_rows, left_rows, np.ones(h))
    add(right_rows, right_rows, np.ones(h))

    # -v d/dx, positive ordinates: upwind neighbor is j+1
    j = np.arange(0, n - 1)
    jj, ii = np.meshgrid(j, np.arange(h, nv), indexing="ij")
    r = jj * nv + ii
    add(r, r, v[ii] / dx)
    add(r, (jj + 1) * nv + ii, -v[ii] / dx)

    # -v d/dx, negative ordinates: upwind neighbor is j-1
    j = np.arange(1, n)
    jj, ii = np.meshgrid(j, np.arange(h), indexing="ij")
    r = jj * nv + ii
    add(r, r, -v[ii] / dx)
    add(r, (jj - 1) * nv + ii, v[ii] / dx)

    # -(sigma/eps) L at every non-identity row
    interior = np.ones((n, nv), dtype=bool)
    interior[0, :h] = False
    interior[n - 1, h:] = False
    jr, ir = np.nonzero(interior)
    r = jr * nv + ir
    add(r, r, s[jr])
    kk = np.broadcast_to(np.arange(nv), (r.size, nv))
    add(np.repeat(r, nv), (jr[:, None] * nv + kk).ravel(), (-s[jr][:, None] * w[None, :]).ravel())

    matrix = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    ).tocsr()
    return AdjointLocalSystem(m=m, lo=lo, hi=hi, dx=dx, quad=quad, matrix=matrix)


def apply_S_s_adjoint_continuous(
    adj: AdjointLocalSystem, geometry: DecompositionGeometry, m: int, g: np.ndarray
) -> BoundaryTrace:
    """Secondary adjoint oracle: solve the backward equation with source g.

    The source is the trivial extension of g from the owned region to the
    whole subdomain; the result is the backward solution read on the inflow
    set.  Agrees with :func:`apply_S_s_adjoint` to O(dx).
    """
    quad = adj.quad
    ns = geometry.n_interior(m)
    g = np.asarray(g, dtype=float)
    if g.shape != (ns, quad.n):
        raise ValueError(f"expected a field of shape ({ns}, {quad.n}), got {g.shape}")
    rhs = np.zeros((adj.n_nodes, quad.n))
    off = int(geometry.s_lo[m - 1]) - adj.lo
    rhs[off : off + ns] = g
    hsol = adj.solve(rhs.reshape(-1)).reshape(adj.n_nodes, quad.n)
    values = np.empty(quad.n)
    values[quad.neg] = hsol[-1, quad.neg]
    values[quad.pos] = hsol[0, quad.pos]
    return BoundaryTrace(owner=m, kind="inflow", values=values)


def apply_P_star_oracle(
    adj: AdjointLocalSystem,
    geometry: DecompositionGeometry,
    m: int,
    psi_down: BoundaryTrace | None = None,
    psi_up: BoundaryTrace | None = None,
) -> BoundaryTrace:
    """Verification oracle for the adjoint of the boundary-to-boundary map.

    Solves one monolithic backward system on the whole subdomain whose
    right-hand side carries the exchange data as point sources at the
    exchange nodes (the discrete form of the jump coupling between the
    region beyond the exchange cross-section and the region upstream of
    it), with zero data on the outflow set.  Returns the backward solution
    on the inflow set.  Agrees with the weighted transpose of the probed
    boundary-to-boundary matrix to O(dx).
    """
    quad = adj.quad
    rhs = np.zeros((adj.n_nodes, quad.n))
    if psi_down is not None:
        if psi_down.kind != "to_prev" or psi_down.owner != m:
            raise ValueError("psi_down must be a to_prev trace owned by the subdomain")
        j = int(geometry.xch_prev[m - 1]) - adj.lo
        rhs[j, quad.neg] += psi_down.values * np.abs(quad.nodes[quad.neg]) / adj.dx
    if psi_up is not None:
        if psi_up.kind != "to_next" or psi_up.owner != m:
            raise ValueError("psi_up must be a to_next trace owned by the subdomain")
        j = int(geometry.xch_next[m - 1]) - adj.lo
        rhs[j, quad.pos] += psi_up.values * quad.nodes[quad.pos] / adj.dx
    hsol = adj.solve(rhs.reshape(-1)).reshape(adj.n_nodes, quad.n)
    values = np.empty(quad.n)
    values[quad.neg] = hsol[-1, quad.neg]
    values[quad.pos] = hsol[0, quad.pos]
    return BoundaryTrace(owner=m, kind="inflow", values=values)


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------

def flux_profile(u: np.ndarray, quad: AngularQuadrature) -> np.ndarray:
    """Net flux J(x_j) = sum_i w_i v_i u(x_j, v_i), one value per node."""
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] != quad.n:
        raise ValueError("expected a (nodes, ordinates) field")
    return u @ (quad.weights * quad.nodes)


def probe_matrix(apply_vec, n_in: int, n_out: int) -> np.ndarray:
    """Densify a linear map by probing the canonical basis."""
    out = np.empty((n_out, n_in))
    e = np.zeros(n_in)
    for j in range(n_in):
        e[j] = 1.0
        out[:, j] = apply_vec(e)
        e[j] = 0.0
    return out
