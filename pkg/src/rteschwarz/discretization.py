"""Discrete ordinates, grids, scattering media, and decomposition geometry.

This module holds the building blocks shared by everything else: a midpoint
discrete-ordinates quadrature on (-1, 1), a uniform node grid on [0, 1],
scattering media sampled at the grid nodes, the overlapping subdomain
geometry driving the Schwarz iteration, and the weighted inner products and
norms in which boundary traces and phase-space fields are measured.

Conventions
-----------
* The angular measure is dv/2 on (-1, 1): quadrature weights sum to one and
  the scattering average of a field is ``field @ weights``.
* Ordinates are sorted ascending, negative half first; 0 is never a node.
* Phase-space fields are plain ndarrays of shape (nodes, ordinates).
* Subdomain ids are 1-based (m = 1..M); the index arrays inside
  :class:`DecompositionGeometry` are positional (entry ``m - 1``).
* A boundary trace stores one value per (boundary point, ordinate) pair of
  its trace set, ordered by ordinate index.  The weight of each pair is
  ``|v_i| * w_i`` (counting measure on the boundary points in 1D).

All container types are immutable after construction (their arrays are
marked read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridAlignmentError(ValueError):
    """A decomposition point does not coincide with a grid node."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float if a.dtype.kind == "f" else a.dtype, order="C")
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Angular quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AngularQuadrature:
    """Discrete ordinates v_i in (-1,1)\\{0} with weights of the measure dv/2.

    Attributes:
        nodes: ordinates, strictly ascending, symmetric about 0.
        weights: positive weights summing to one.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = _readonly(np.asarray(self.nodes, dtype=float))
        weights = _readonly(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ValueError("nodes and weights must be 1d arrays of equal length")
        if np.any(nodes == 0.0):
            raise ValueError("ordinate 0 is not allowed")
        if np.any(weights <= 0.0):
            raise ValueError("weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        if np.any(nodes + nodes[::-1] != 0.0):
            raise ValueError("ordinates must be symmetric about 0")

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def half(self) -> int:
        """Number of negative (equivalently positive) ordinates."""
        return self.n // 2

    @property
    def neg(self) -> slice:
        """Index slice of the negative ordinates."""
        return slice(0, self.half)

    @property
    def pos(self) -> slice:
        """Index slice of the positive ordinates."""
        return slice(self.half, self.n)


def build_quadrature(n_v: int) -> AngularQuadrature:
    """Midpoint discrete-ordinates rule with ``n_v`` ordinates.

    v_i = -1 + (i - 1/2) * (2 / n_v) with uniform weights 1/n_v, so the
    weights realize the normalized measure dv/2 and no ordinate hits 0.

    Raises:
        ValueError: if ``n_v`` is odd or < 2.
    """
    if n_v < 2 or n_v % 2 != 0:
        raise ValueError(f"n_v must be a positive even integer, got {n_v}")
    dv = 2.0 / n_v
    positive = (np.arange(n_v // 2) + 0.5) * dv  # mirrored so symmetry is exact
    nodes = np.concatenate([-positive[::-1], positive])
    weights = np.full(n_v, 1.0 / n_v)
    return AngularQuadrature(nodes=nodes, weights=weights)


# ---------------------------------------------------------------------------
# Spatial grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid1D:
    """Uniform node grid on [0, 1]: x_j = j * dx, j = 0..n_cells."""

    n_cells: int
    dx: float
    nodes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _readonly(np.asarray(self.nodes, dtype=float)))
        if self.n_cells < 1:
            raise ValueError("n_cells must be >= 1")
        if abs(self.n_cells * self.dx - 1.0) > np.finfo(float).eps:
            raise ValueError("n_cells * dx must equal 1")
        if self.nodes.size != self.n_cells + 1 or np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be the strictly increasing j*dx sequence")

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1


def build_grid(n_cells: int) -> Grid1D:
    """Uniform grid with ``n_cells`` cells on [0, 1]."""
    if n_cells < 1:
        raise ValueError(f"n_cells must be >= 1, got {n_cells}")
    dx = 1.0 / n_cells
    return Grid1D(n_cells=n_cells, dx=dx, nodes=np.arange(n_cells + 1) * dx)


# ---------------------------------------------------------------------------
# Scattering media
# ---------------------------------------------------------------------------

def eval_sigma(x, delta: float):
    """Oscillatory scattering coefficient (1.1 + cos 4*pi*x) / (1.1 + sin 2*pi*x/delta).

    Strictly positive for every x; the denominator never drops below 0.1.
    Accepts scalars or arrays.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    x = np.asarray(x, dtype=float)
    out = (1.1 + np.cos(4.0 * np.pi * x)) / (1.1 + np.sin(2.0 * np.pi * x / delta))
    return out if out.ndim else float(out)


def homogenized_sigma(x):
    """Period average of the oscillatory coefficient over its fast variable.

    Averaging 1/(1.1 + sin 2*pi*y) over one period gives 1/sqrt(1.1^2 - 1),
    so the homogenized coefficient is (1.1 + cos 4*pi*x) / sqrt(0.21).
    """
    x = np.asarray(x, dtype=float)
    out = (1.1 + np.cos(4.0 * np.pi * x)) / np.sqrt(1.1**2 - 1.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class MediaField:
    """Scattering medium sampled at the grid nodes.

    Attributes:
        epsilon: Knudsen number (> 0).
        delta: oscillation period used to sample the coefficient (> 0).
        sigma_nodes: positive coefficient values at the grid nodes.
    """

    epsilon: float
    delta: float
    sigma_nodes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma_nodes", _readonly(np.asarray(self.sigma_nodes, dtype=float)))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.sigma_nodes.ndim != 1 or np.any(self.sigma_nodes <= 0):
            raise ValueError("sigma_nodes must be a 1d array of positive values")


def oscillatory_media(grid: Grid1D, epsilon: float, delta: float) -> MediaField:
    """Sample the oscillatory coefficient on the grid."""
    return MediaField(epsilon=epsilon, delta=delta, sigma_nodes=eval_sigma(grid.nodes, delta))


def homogenized_media(grid: Grid1D, epsilon: float, delta: float = 1.0) -> MediaField:
    """Sample the homogenized (period-averaged) coefficient on the grid."""
    return MediaField(epsilon=epsilon, delta=delta, sigma_nodes=homogenized_sigma(grid.nodes))


def table_media(grid: Grid1D, epsilon: float, sigma_nodes, delta: float = 1.0) -> MediaField:
    """Wrap user-supplied nodal coefficient values."""
    sigma = np.asarray(sigma_nodes, dtype=float)
    if sigma.shape != (grid.n_nodes,):
        raise ValueError(f"sigma table must have {grid.n_nodes} entries, got {sigma.shape}")
    return MediaField(epsilon=epsilon, delta=delta, sigma_nodes=sigma)


# ---------------------------------------------------------------------------
# Overlapping decomposition geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecompositionGeometry:
    """Node-index geometry of the overlapping subdomains.

    For M subdomains with overlap fraction beta, subdomain m covers
    ((m-1-beta)/M, (m+beta)/M) intersected with (0, 1), its owned region is
    ((m-1)/M, m/M), and the exchange cross-sections sit at (m-beta)/M
    (positive ordinates, feeding m+1) and (m-1+beta)/M (negative ordinates,
    feeding m-1).  All entries are grid-node indices; -1 marks an absent
    exchange set (m = 1 has no previous neighbor, m = M no next).

    Node ownership: the interface node at m/M belongs to subdomain m, so
    the owned node ranges partition the full node set.
    """

    m_count: int
    beta: float
    n_nodes: int
    lo: np.ndarray
    hi: np.ndarray
    s_lo: np.ndarray
    s_hi: np.ndarray
    own_lo: np.ndarray
    own_hi: np.ndarray
    xch_prev: np.ndarray
    xch_next: np.ndarray

    def __post_init__(self):
        for name in ("lo", "hi", "s_lo", "s_hi", "own_lo", "own_hi", "xch_prev", "xch_next"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=np.int64)))

    def n_local(self, m: int) -> int:
        """Number of grid nodes in subdomain m."""
        return int(self.hi[m - 1] - self.lo[m - 1] + 1)

    def n_interior(self, m: int) -> int:
        """Number of grid nodes in the owned region of subdomain m."""
        return int(self.s_hi[m - 1] - self.s_lo[m - 1] + 1)

    def has_prev(self, m: int) -> bool:
        return m > 1

    def has_next(self, m: int) -> bool:
        return m < self.m_count


def _node_at(x: float, n_cells: int, what: str) -> int:
    t = x * n_cells
    j = int(round(t))
    if abs(t - j) > 1e-9 * max(1.0, abs(t)):
        raise GridAlignmentError(
            f"{what} at x = {x!r} does not coincide with a grid node "
            f"(x * n_cells = {t!r} is not an integer)"
        )
    return j


def build_decomposition(grid: Grid1D, m_count: int, beta: float = 0.5) -> DecompositionGeometry:
    """Build the overlapping decomposition with M subdomains and overlap beta.

    Requires every subdomain endpoint, owned-region endpoint, and exchange
    point to land exactly on a grid node.  beta is restricted to (0, 1/2]:
    beyond 1/2 a subdomain would overlap its next-nearest neighbors.

    Raises:
        GridAlignmentError: if any required point misses the grid.
        ValueError: for invalid M or beta.
    """
    if m_count < 1:
        raise ValueError("m_count must be >= 1")
    if not (0.0 < beta <= 0.5):
        raise ValueError(
            f"beta must lie in (0, 1/2], got {beta}; larger overlaps reach past the nearest neighbors"
        )
    n = grid.n_cells
    M = m_count
    lo = np.empty(M, dtype=np.int64)
    hi = np.empty(M, dtype=np.int64)
    s_lo = np.empty(M, dtype=np.int64)
    s_hi = np.empty(M, dtype=np.int64)
    xch_prev = np.full(M, -1, dtype=np.int64)
    xch_next = np.full(M, -1, dtype=np.int64)
    for m in range(1, M + 1):
        i = m - 1
        lo[i] = 0 if m == 1 else _node_at((m - 1 - beta) / M, n, f"left endpoint of subdomain {m}")
        hi[i] = n if m == M else _node_at((m + beta) / M, n, f"right endpoint of subdomain {m}")
        s_lo[i] = _node_at((m - 1) / M, n, f"owned-region left endpoint of subdomain {m}")
        s_hi[i] = _node_at(m / M, n, f"owned-region right endpoint of subdomain {m}")
        if m < M:
            xch_next[i] = _node_at((m - beta) / M, n, f"exchange point of subdomain {m} toward {m + 1}")
        if m > 1:
            xch_prev[i] = _node_at((m - 1 + beta) / M, n, f"exchange point of subdomain {m} toward {m - 1}")

    own_lo = s_lo.copy()
    own_lo[1:] += 1  # interface node at m/M belongs to subdomain m
    own_hi = s_hi.copy()

    # sanity of the construction: exchange nodes interior to the owned span,
    # owned ranges partition the node set, overlap only with direct neighbors
    for i in range(M):
        for xch in (xch_prev[i], xch_next[i]):
            if xch >= 0 and not (s_lo[i] < xch < s_hi[i]):
                raise GridAlignmentError(
                    f"exchange node {xch} of subdomain {i + 1} is not interior to its owned region"
                )
    if own_lo[0] != 0 or own_hi[-1] != n or np.any(own_lo[1:] != own_hi[:-1] + 1):
        raise AssertionError("owned node ranges do not partition the grid")
    if M >= 3 and np.any(hi[:-2] > lo[2:]):
        raise AssertionError("subdomains overlap beyond their direct neighbors")

    return DecompositionGeometry(
        m_count=M,
        beta=beta,
        n_nodes=grid.n_nodes,
        lo=lo,
        hi=hi,
        s_lo=s_lo,
        s_hi=s_hi,
        own_lo=own_lo,
        own_hi=own_hi,
        xch_prev=xch_prev,
        xch_next=xch_next,
    )


# ---------------------------------------------------------------------------
# Boundary traces
# ---------------------------------------------------------------------------

#: Trace kinds.
#: "inflow"  -- the inflow set of a subdomain: positive ordinates at its left
#:              endpoint and negative ordinates at its right endpoint,
#:              stored as one vector ordered by ordinate index.
#: "to_prev" -- values at the exchange node toward subdomain m-1 (negative
#:              ordinates only).
#: "to_next" -- values at the exchange node toward subdomain m+1 (positive
#:              ordinates only).
TRACE_KINDS = ("inflow", "to_prev", "to_next")


@dataclass(frozen=True)
class BoundaryTrace:
    """Values on an inflow/outflow trace set, weighted by |n.v| in products."""

    owner: int
    kind: str
    values: np.ndarray

    def __post_init__(self):
        if self.kind not in TRACE_KINDS:
            raise ValueError(f"unknown trace kind {self.kind!r}")
        object.__setattr__(self, "values", _readonly(np.asarray(self.values, dtype=float)))
        if self.values.ndim != 1:
            raise ValueError("trace values must be a 1d array")

    def expected_size(self, quad: AngularQuadrature) -> int:
        return quad.n if self.kind == "inflow" else quad.half

    def left(self, quad: AngularQuadrature) -> np.ndarray:
        """Left-endpoint (positive ordinate) half of an inflow trace."""
        if self.kind != "inflow":
            raise ValueError("left() is defined for inflow traces")
        return self.values[quad.pos]

    def right(self, quad: AngularQuadrature) -> np.ndarray:
        """Right-endpoint (negative ordinate) half of an inflow trace."""
        if self.kind != "inflow":
            raise ValueError("right() is defined for inflow traces")
        return self.values[quad.neg]


def inflow_trace(owner: int, quad: AngularQuadrature, left=None, right=None) -> BoundaryTrace:
    """Inflow trace from per-endpoint halves (missing halves are zero)."""
    values = np.zeros(quad.n)
    if right is not None:
        values[quad.neg] = right
    if left is not None:
        values[quad.pos] = left
    return BoundaryTrace(owner=owner, kind="inflow", values=values)


def trace_weights(kind: str, quad: AngularQuadrature) -> np.ndarray:
    """Quadrature weights |v_i| w_i of a trace set, ordered like its values."""
    if kind == "inflow":
        return np.abs(quad.nodes) * quad.weights
    if kind == "to_prev":
        return np.abs(quad.nodes[quad.neg]) * quad.weights[quad.neg]
    if kind == "to_next":
        return quad.nodes[quad.pos] * quad.weights[quad.pos]
    raise ValueError(f"unknown trace kind {kind!r}")


def boundary_inner(a: BoundaryTrace, b: BoundaryTrace, quad: AngularQuadrature) -> float:
    """Weighted-L2 product of two traces over the same trace set."""
    if a.kind != b.kind or a.values.shape != b.values.shape:
        raise ValueError("traces live on different trace sets")
    if a.values.size != a.expected_size(quad):
        raise ValueError("trace length does not match the quadrature")
    w = trace_weights(a.kind, quad)
    return float(np.dot(a.values * w, b.values))


def boundary_norm(a: BoundaryTrace, quad: AngularQuadrature) -> float:
    return float(np.sqrt(max(boundary_inner(a, a, quad), 0.0)))


# ---------------------------------------------------------------------------
# Interior products and norms
# ---------------------------------------------------------------------------

def trapezoid_weights(n_nodes: int, dx: float) -> np.ndarray:
    """Composite trapezoid node weights over a contiguous node range."""
    w = np.full(n_nodes, dx)
    w[0] = w[-1] = 0.5 * dx
    return w


def interior_inner(f: np.ndarray, g: np.ndarray, grid: Grid1D, quad: AngularQuadrature) -> float:
    """L2(dx dmu) product of two phase-space fields on a common node range."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != g.shape or f.ndim != 2 or f.shape[1] != quad.n:
        raise ValueError(f"field shapes do not match: {f.shape} vs {g.shape}")
    wx = trapezoid_weights(f.shape[0], grid.dx)
    return float(np.einsum("ji,j,i,ji->", f, wx, quad.weights, g))


def interior_norm(f: np.ndarray, grid: Grid1D, quad: AngularQuadrature) -> float:
    return float(np.sqrt(max(interior_inner(f, f, grid, quad), 0.0)))


def _upwind_streaming(f: np.ndarray, dx: float, quad: AngularQuadrature) -> np.ndarray:
    """v * df/dx with direction-upwinded differences (one-sided at the ends)."""
    d = np.empty_like(f)
    h = quad.half
    # positive ordinates: backward difference, forward at the first node
    d[1:, h:] = (f[1:, h:] - f[:-1, h:]) / dx
    d[0, h:] = (f[1, h:] - f[0, h:]) / dx
    # negative ordinates: forward difference, backward at the last node
    d[:-1, :h] = (f[1:, :h] - f[:-1, :h]) / dx
    d[-1, :h] = (f[-1, :h] - f[-2, :h]) / dx
    return d * quad.nodes[None, :]


def h12_norm(f: np.ndarray, grid: Grid1D, quad: AngularQuadrature) -> float:
    """Discrete graph norm: (|v df/dx|^2 + |f|^2 integrated over the domain)^(1/2)."""
    f = np.asarray(f, dtype=float)
    s = _upwind_streaming(f, grid.dx, quad)
    return float(np.sqrt(interior_inner(s, s, grid, quad) + interior_inner(f, f, grid, quad)))


def ha_norm(f: np.ndarray, grid: Grid1D, quad: AngularQuadrature) -> float:
    """Graph norm plus the |n.v|-weighted trace term on both endpoints."""
    f = np.asarray(f, dtype=float)
    wb = np.abs(quad.nodes) * quad.weights
    bterm = float(np.dot(wb, f[0] ** 2 + f[-1] ** 2))
    return float(np.sqrt(h12_norm(f, grid, quad) ** 2 + bterm))
