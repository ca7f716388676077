"""Matrix-free randomized low-rank factorization in weighted inner-product spaces.

Two entry points: :func:`rsvd_matrix` is the plain sketch-project-SVD
factorization of a dense matrix; :func:`rsvd_operator` is its operator form
for a linear map between spaces carrying diagonal quadrature weights, built
from forward and adjoint applications only.

Weighted linear algebra is realized by symmetric rescaling with the square
roots of the diagonal weights: orthonormalization and the small SVD run in
the rescaled coordinates and the factors are scaled back, so the returned
factors are orthonormal under the weighted products themselves.

Random draws use a counter-based generator keyed by (seed, stream), which
makes every build bitwise reproducible and independent of build order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretization import BoundaryTrace


class AdjointConsistencyError(ValueError):
    """Forward and adjoint maps are not adjoint under the given products."""


class StaleMapError(ValueError):
    """A compressed map was built for a different discretization."""


@dataclass(frozen=True)
class RsvdConfig:
    """Controls for a randomized factorization.

    Attributes:
        rank: target rank r >= 1.
        oversample: extra sketch directions p >= 4.
        seed: base seed of the counter-based generator.
        adaptive: grow the sketch until ``adaptive_tol`` instead of using a
            fixed rank (see :func:`adaptive_range`).
        adaptive_tol: stopping tolerance of the adaptive range finder.
    """

    rank: int
    oversample: int = 5
    seed: int = 0
    adaptive: bool = False
    adaptive_tol: float = 1e-8

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.oversample < 4:
            raise ValueError("oversample must be >= 4")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def k(self) -> int:
        return self.rank + self.oversample


def rng_for(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for the (seed, stream) pair."""
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class LowRankMap:
    """Rank-r factorization of a boundary-to-interior solution map.

    sum_i sigma_i * mu_i * <nu_i, phi> with nu_i orthonormal under the
    weighted boundary product and mu_i orthonormal under the weighted
    interior product.

    Attributes:
        owner: subdomain id.
        sigma: singular values, descending, shape (r,).
        nu: boundary factors, shape (n_boundary, r).
        mu: interior factors, shape (nodes, ordinates, r).
        domain_weights: boundary quadrature weights, shape (n_boundary,).
        fingerprint: hash of the discretization the map was built for.
    """

    owner: int
    sigma: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    domain_weights: np.ndarray
    fingerprint: str = ""

    def __post_init__(self):
        for name in ("sigma", "nu", "mu", "domain_weights"):
            a = np.array(getattr(self, name), dtype=float, order="C")
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if self.sigma.ndim != 1 or np.any(self.sigma < 0) or np.any(np.diff(self.sigma) > 0):
            raise ValueError("sigma must be nonnegative and descending")
        r = self.sigma.size
        if self.nu.shape != (self.domain_weights.size, r):
            raise ValueError("nu shape does not match the boundary dimension and rank")
        if self.mu.ndim != 3 or self.mu.shape[2] != r:
            raise ValueError("mu must have shape (nodes, ordinates, rank)")

    @property
    def rank(self) -> int:
        return self.sigma.size

    @property
    def field_shape(self) -> tuple[int, int]:
        return self.mu.shape[0], self.mu.shape[1]

    def orthonormality_defect(self, codomain_weights: np.ndarray) -> float:
        """Largest deviation of the factor Gram matrices from identity."""
        r = self.rank
        gram_nu = self.nu.T @ (self.domain_weights[:, None] * self.nu)
        mu_flat = self.mu.reshape(-1, r)
        gram_mu = mu_flat.T @ (np.asarray(codomain_weights).reshape(-1)[:, None] * mu_flat)
        eye = np.eye(r)
        return float(max(np.abs(gram_nu - eye).max(), np.abs(gram_mu - eye).max()))


# ---------------------------------------------------------------------------
# Dense matrix factorization
# ---------------------------------------------------------------------------

def rsvd_matrix(a: np.ndarray, cfg: RsvdConfig, rng: np.random.Generator | None = None):
    """Randomized rank-r factorization of a dense matrix.

    Stage I sketches the range with a Gaussian test matrix and
    orthonormalizes it; stage II projects, takes the small SVD, and lifts
    the left factors back.  Returns (U, s, V) with orthonormal columns and
    s of length r (padded with zeros if the sketch found fewer directions).
    """
    a = np.asarray(a, dtype=float)
    n, mdim = a.shape
    k = cfg.k
    if k > min(n, mdim):
        raise ValueError(f"rank + oversample = {k} exceeds min(matrix shape) = {min(n, mdim)}")
    rng = rng or rng_for(cfg.seed)
    omega = rng.standard_normal((mdim, k))
    y = a @ omega
    # QR absorbs a rank-deficient sketch; the surplus columns are harmless
    q, _ = np.linalg.qr(y)
    b = q.T @ a
    u_t, s, vt = np.linalg.svd(b, full_matrices=False)
    u = q @ u_t
    r = cfg.rank
    return u[:, :r], s[:r], vt[:r].T


# ---------------------------------------------------------------------------
# Weighted orthonormalization
# ---------------------------------------------------------------------------

def weighted_orthonormalize(
    vectors: np.ndarray, weights: np.ndarray, drop_tol: float = 1e-12
) -> np.ndarray:
    """Orthonormalize columns under a diagonal-weight product (CGS, two passes).

    Columns whose residual after projection falls below ``drop_tol`` times
    their original norm are dropped, so the result can have fewer columns
    than the input.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    cols = []
    for y in np.asarray(vectors, dtype=float).T:
        y = y.copy()
        norm0 = np.sqrt(np.dot(y * w, y))
        if norm0 == 0.0:
            continue
        for _ in range(2):  # classical Gram-Schmidt, repeated once
            for q in cols:
                y -= np.dot(q * w, y) * q
        norm = np.sqrt(max(np.dot(y * w, y), 0.0))
        if norm <= drop_tol * norm0:
            continue
        cols.append(y / norm)
    if not cols:
        return np.zeros((vectors.shape[0], 0))
    return np.column_stack(cols)


# ---------------------------------------------------------------------------
# Operator factorization
# ---------------------------------------------------------------------------

def _check_adjoint_pair(apply, apply_adjoint, w_dom, w_cod, rng, tol=1e-10, pairs=3):
    for _ in range(pairs):
        x = rng.standard_normal(w_dom.size)
        y = rng.standard_normal(w_cod.size)
        ax = apply(x)
        lhs = float(np.dot(y * w_cod, ax))
        rhs = float(np.dot(apply_adjoint(y) * w_dom, x))
        # scale by the Cauchy-Schwarz bound of the pairing, not the pairing
        # itself, which can be accidentally small
        scale = max(
            np.sqrt(np.dot(y * w_cod, y) * np.dot(ax * w_cod, ax)), abs(lhs), 1e-300
        )
        if abs(lhs - rhs) / scale > tol:
            raise AdjointConsistencyError(
                f"forward/adjoint mismatch {abs(lhs - rhs) / scale:.3e} exceeds {tol:.1e}"
            )


SAMPLING_MODES = ("basis", "nodal")


def rsvd_operator(
    apply,
    apply_adjoint,
    domain_weights: np.ndarray,
    codomain_weights: np.ndarray,
    cfg: RsvdConfig,
    *,
    owner: int = 0,
    fingerprint: str = "",
    field_shape: tuple[int, int] | None = None,
    stream: int = 0,
    sampling: str = "nodal",
) -> LowRankMap:
    """Randomized factorization of a weighted linear operator.

    ``apply`` maps a flat domain vector to a flat codomain vector and
    ``apply_adjoint`` must be its adjoint under the diagonal weighted
    products (checked on a few random pairs before any work is done).

    Stage I draws k Gaussian test inputs, pushes them through the
    operator, and orthonormalizes the outputs under the codomain product.
    With ``sampling="nodal"`` the test inputs are raw nodal Gaussians;
    with ``"basis"`` the draws are coefficients against the weighted
    canonical domain basis e_j / sqrt(w_j) (isotropic in the weighted
    geometry).  Draws are the leading columns of a seed-keyed master
    block, so builds are reproducible and rank-nested.  Stage II applies
    the adjoint to each basis field, takes the weighted SVD of the
    resulting boundary-side matrix, and lifts the small rotation through
    the stage-I basis.  If the sketch captures fewer than ``cfg.rank``
    directions the achieved rank is returned instead.
    """
    w_dom = np.asarray(domain_weights, dtype=float).reshape(-1)
    w_cod = np.asarray(codomain_weights, dtype=float).reshape(-1)
    if cfg.k > w_dom.size:
        raise ValueError(f"rank + oversample = {cfg.k} exceeds the domain dimension {w_dom.size}")
    if sampling not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {sampling!r}")
    rng = rng_for(cfg.seed, stream)
    _check_adjoint_pair(apply, apply_adjoint, w_dom, w_cod, rng)

    if cfg.adaptive:
        q, _ = adaptive_range(
            apply, w_dom, w_cod, tol=cfg.adaptive_tol, max_k=w_dom.size,
            seed=cfg.seed, stream=stream + 1,
        )
    else:
        coeffs = rng.standard_normal((w_dom.size, w_dom.size))[:, : cfg.k]
        samples = coeffs if sampling == "nodal" else coeffs / np.sqrt(w_dom)[:, None]
        y = np.column_stack([apply(samples[:, i]) for i in range(cfg.k)])
        q = weighted_orthonormalize(y, w_cod)

    k_eff = q.shape[1]
    if k_eff == 0:
        sigma = np.zeros(1)
        nu = np.zeros((w_dom.size, 1))
        nu[0, 0] = 1.0 / np.sqrt(w_dom[0])
        mu = np.zeros((w_cod.size, 1))
        mu[0, 0] = 1.0 / np.sqrt(w_cod[0])
    else:
        b = np.column_stack([apply_adjoint(q[:, i]) for i in range(k_eff)])
        u_b, sigma, vt = np.linalg.svd(np.sqrt(w_dom)[:, None] * b, full_matrices=False)
        nu = u_b / np.sqrt(w_dom)[:, None]
        mu = q @ vt.T
    r = min(cfg.rank, sigma.size)
    shape = field_shape or (1, w_cod.size)
    return LowRankMap(
        owner=owner,
        sigma=sigma[:r].copy(),
        nu=nu[:, :r].copy(),
        mu=mu[:, :r].reshape(shape[0], shape[1], r).copy(),
        domain_weights=w_dom,
        fingerprint=fingerprint,
    )


def adaptive_range(
    apply,
    domain_weights: np.ndarray,
    codomain_weights: np.ndarray,
    tol: float,
    max_k: int,
    seed: int,
    stream: int = 0,
    run_length: int = 5,
) -> tuple[np.ndarray, bool]:
    """Grow a sampled range basis one draw at a time.

    Stops once the weighted norm of the component of the newest sample
    outside the current span stays below ``tol`` for ``run_length``
    consecutive draws, or at ``max_k`` (returning converged=False).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    w_dom = np.asarray(domain_weights, dtype=float).reshape(-1)
    w_cod = np.asarray(codomain_weights, dtype=float).reshape(-1)
    rng = rng_for(seed, stream)
    cols: list[np.ndarray] = []
    below = 0
    for _ in range(max_k):
        x = rng.standard_normal(w_dom.size) / np.sqrt(w_dom)
        y = apply(x)
        resid = y.astype(float).copy()
        for _ in range(2):
            for q in cols:
                resid -= np.dot(q * w_cod, resid) * q
        norm = float(np.sqrt(max(np.dot(resid * w_cod, resid), 0.0)))
        if norm < tol:
            below += 1
            if below >= run_length:
                break
        else:
            below = 0
            cols.append(resid / norm)
    else:
        q = np.column_stack(cols) if cols else np.zeros((w_cod.size, 0))
        return q, False
    q = np.column_stack(cols) if cols else np.zeros((w_cod.size, 0))
    return q, True


# ---------------------------------------------------------------------------
# Application and truncation
# ---------------------------------------------------------------------------

def apply_lowrank(
    lrmap: LowRankMap, phi: BoundaryTrace, expected_fingerprint: str | None = None
) -> np.ndarray:
    """Evaluate the compressed map: sum_i sigma_i mu_i <nu_i, phi>.

    Cost is O(rank * boundary size) plus the rank-scaled field synthesis.

    Raises:
        StaleMapError: if the map's fingerprint does not match
            ``expected_fingerprint`` or the trace does not fit the map.
    """
    if expected_fingerprint is not None and lrmap.fingerprint != expected_fingerprint:
        raise StaleMapError(
            f"map for subdomain {lrmap.owner} was built for fingerprint "
            f"{lrmap.fingerprint[:12]}..., current is {expected_fingerprint[:12]}..."
        )
    if phi.kind != "inflow" or phi.values.size != lrmap.nu.shape[0]:
        raise StaleMapError("trace does not match the map's boundary space")
    if phi.owner != lrmap.owner:
        raise StaleMapError(f"trace owner {phi.owner} does not match map owner {lrmap.owner}")
    coeff = lrmap.sigma * (lrmap.nu.T @ (lrmap.domain_weights * phi.values))
    return lrmap.mu @ coeff


def truncate(lrmap: LowRankMap, r: int) -> LowRankMap:
    """Keep the leading r triples of a compressed map."""
    if not (0 <= r <= lrmap.rank):
        raise ValueError(f"truncation rank {r} out of range 0..{lrmap.rank}")
    if r == 0:
        # rank-0 map: a single zero singular value with placeholder factors
        sigma = np.zeros(1)
        nu = np.zeros((lrmap.nu.shape[0], 1))
        nu[0, 0] = 1.0 / np.sqrt(lrmap.domain_weights[0])
        mu = np.zeros((lrmap.mu.shape[0], lrmap.mu.shape[1], 1))
        mu[0, 0, 0] = 1.0
        return LowRankMap(
            owner=lrmap.owner, sigma=sigma, nu=nu, mu=mu,
            domain_weights=lrmap.domain_weights, fingerprint=lrmap.fingerprint,
        )
    return LowRankMap(
        owner=lrmap.owner,
        sigma=lrmap.sigma[:r].copy(),
        nu=lrmap.nu[:, :r].copy(),
        mu=lrmap.mu[:, :, :r].copy(),
        domain_weights=lrmap.domain_weights,
        fingerprint=lrmap.fingerprint,
    )
