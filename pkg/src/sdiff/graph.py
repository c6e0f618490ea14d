"""Item-item graph operators, truncated eigenbasis, and spectral transforms.

The interaction matrix X induces a degree-normalized bipartite matrix
X~ = D_u^{-1/2} X D_i^{-1/2} whose gram operator A = X~^T X~ is the item-item
similarity adjacency. The graph Laplacian is L = I - A, and the frequency of
an eigenvector u of A with eigenvalue mu is d = 1 - mu. Low frequencies
(d near 0) carry the smooth, shared-preference components of user signals.

The eigenbasis is computed matrix-free: A is only ever applied as
X~^T (X~ v), never materialized densely (a dense path exists solely as a
small-instance oracle in :func:`heat_kernel_reference`).
"""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import InteractionMatrix
from .errors import ArtifactError, ConvergenceError
from .validation import as_generator

log = logging.getLogger(__name__)

_BASIS_MAGIC = b"SDIFFBAS"
_BASIS_VERSION = 1

# Largest dense instance the reference heat-kernel path will accept.
DENSE_GUARD = 512


@dataclass(frozen=True)
class NormalizedBipartite:
    """Sparse X~ = D_u^{-1/2} X D_i^{-1/2} with the 0^{-1/2} := 0 convention."""

    matrix: sp.csr_matrix
    n_users: int
    n_items: int
    source_hash: str


def build_normalized_bipartite(m: InteractionMatrix) -> NormalizedBipartite:
    """Degree-normalize the interaction matrix on both sides.

    Zero-degree users/items produce all-zero rows/columns; such items carry
    no collaborative signal and end up at frequency d = 1.
    """
    if m.nnz == 0:
        raise ValueError("interaction matrix is empty")
    x = m.to_csr()
    with np.errstate(divide="ignore"):
        du = 1.0 / np.sqrt(m.user_degrees)
        di = 1.0 / np.sqrt(m.item_degrees)
    du[~np.isfinite(du)] = 0.0
    di[~np.isfinite(di)] = 0.0
    xn = sp.diags(du) @ x @ sp.diags(di)
    return NormalizedBipartite(
        matrix=xn.tocsr(), n_users=m.n_users, n_items=m.n_items,
        source_hash=m.content_hash(),
    )


def apply_item_gram(b: NormalizedBipartite, v: np.ndarray) -> np.ndarray:
    """Apply the item-item gram operator A = X~^T X~ without forming it.

    Accepts a vector of length ``n_items`` or a matrix with ``n_items`` rows
    (columns are transformed independently).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != b.n_items:
        raise ValueError(f"vector has leading dimension {v.shape[0]}, expected {b.n_items}")
    return b.matrix.T @ (b.matrix @ v)


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated orthonormal eigenbasis of the item-item gram operator.

    ``U`` holds K column-orthonormal eigenvectors of A; ``d = 1 - mu`` are
    the corresponding Laplacian frequencies sorted ascending (low frequency
    first); ``residuals[i]`` is ||A u_i - mu_i u_i||_2 certified at solve
    time. ``matrix_hash`` ties the basis to the interaction data it was
    computed from.
    """

    U: np.ndarray
    d: np.ndarray
    residuals: np.ndarray
    matrix_hash: str
    seed: int

    @property
    def k(self) -> int:
        return self.U.shape[1]

    @property
    def n_items(self) -> int:
        return self.U.shape[0]

    def gft(self, x: np.ndarray) -> np.ndarray:
        """Project item-space signals onto the basis: v = U^T x.

        A 1-D input of length ``n_items`` yields a K-vector; a 2-D input with
        rows as signals yields one coefficient row per signal.
        """
        x = np.asarray(x)
        if x.shape[-1] != self.n_items:
            raise ValueError(f"signal has length {x.shape[-1]}, expected {self.n_items}")
        return x @ self.U

    def igft(self, v: np.ndarray) -> np.ndarray:
        """Map coefficients back to item space: x = U v.

        ``igft(gft(x))`` is the orthogonal projection of x onto span(U); it
        equals x exactly when the basis is full-rank.
        """
        v = np.asarray(v)
        if v.shape[-1] != self.k:
            raise ValueError(f"coefficients have length {v.shape[-1]}, expected {self.k}")
        return v @ self.U.T

    def content_hash(self) -> str:
        return hashlib.sha256(_serialize_basis(self)).hexdigest()


def lanczos_eigsh(op, n: int, k: int, m: int = 10, tol: float = 1e-8, seed=None):
    """Largest-k eigenpairs of a symmetric PSD operator by restarted Lanczos.

    ``op`` is a callable applying the operator to a vector of length ``n``
    (and, for the residual check, to a matrix with ``n`` rows). The method is
    Lanczos with full reorthogonalization and thick (Krylov-Schur style)
    restarts: a subspace of ``min(n, 2k+1)`` vectors is expanded one
    matrix-vector product at a time, Rayleigh-Ritz is applied, and the best
    Ritz vectors plus the trailing residual direction seed the next cycle.
    Full reorthogonalization costs an extra O(n * ncv) per step but is what
    keeps U^T U = I to near machine precision at k in the hundreds; plain
    three-term recurrences lose orthogonality long before that.

    Breakdowns (an exactly invariant subspace, common for rank-deficient gram
    operators) are handled by reseeding with a fresh random direction, which
    also lets the solver recover full degenerate eigenspaces.

    ``m`` is the nominal restart-cycle budget; up to ``5 * m`` cycles are
    attempted before a :class:`ConvergenceError` reporting the residuals
    achieved. Convergence requires ||A y - theta y|| <= tol * max(1, |theta|)
    for every requested pair, with residuals measured explicitly (not via the
    Krylov recurrence). Deterministic for a fixed seed.

    Returns ``(values, vectors, residuals)`` with values sorted descending.
    """
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if m < 1:
        raise ValueError("iteration budget m must be >= 1")
    rng = as_generator(seed)
    ncv = min(n, max(2 * k + 1, k + 16))
    max_cycles = 5 * m

    Q = np.zeros((n, ncv), dtype=np.float64)
    H = np.zeros((ncv, ncv), dtype=np.float64)

    def fresh_direction(j):
        # random vector orthogonalized (twice) against the current basis
        for _ in range(50):
            q = rng.standard_normal(n)
            for _ in range(2):
                if j:
                    q -= Q[:, :j] @ (Q[:, :j].T @ q)
            nrm = np.linalg.norm(q)
            if nrm > 1e-8:
                return q / nrm
        return None

    Q[:, 0] = fresh_direction(0)
    j = 1  # number of basis vectors currently held
    last_res = None

    for _cycle in range(max_cycles):
        # Expand the factorization one vector at a time until ncv columns of
        # H = Q^T A Q are complete; the leftover direction q_next carries the
        # Krylov residual used for the thick restart.
        q_next, beta_next = None, 0.0
        while True:
            w = op(Q[:, j - 1])
            hcol = Q[:, :j].T @ w
            w = w - Q[:, :j] @ hcol
            corr = Q[:, :j].T @ w  # second pass keeps orthogonality at eps level
            w -= Q[:, :j] @ corr
            hcol += corr
            H[:j, j - 1] = hcol
            H[j - 1, :j] = hcol
            beta = float(np.linalg.norm(w))
            broken = beta <= 1e-13 * max(1.0, float(np.abs(hcol).max()))
            if j == ncv:
                if not broken:
                    q_next, beta_next = w / beta, beta
                else:
                    q_next, beta_next = fresh_direction(j), 0.0
                break
            if broken:
                q = fresh_direction(j)
                if q is None:  # space exhausted (k close to n)
                    ncv = j
                    break
                Q[:, j] = q
                H[j, j - 1] = H[j - 1, j] = 0.0
            else:
                Q[:, j] = w / beta
                H[j, j - 1] = H[j - 1, j] = beta
            j += 1

        theta, S = np.linalg.eigh(H[:ncv, :ncv])
        top = np.argsort(theta)[::-1][:k]
        Y = Q[:, :ncv] @ S[:, top]
        vals = theta[top]
        resid = np.linalg.norm(op(Y) - Y * vals, axis=0)
        last_res = resid
        if np.all(resid <= tol * np.maximum(1.0, np.abs(vals))):
            return vals, Y, resid

        if q_next is None:
            break  # whole space explored; nothing further to gain

        # Thick restart: keep a few extra Ritz vectors beyond the wanted k,
        # append the residual direction, and continue expanding.
        keep = np.argsort(theta)[::-1][:min(ncv - 1, k + 8)]
        kept = keep.size
        Yk = Q[:, :ncv] @ S[:, keep]
        u = beta_next * S[ncv - 1, keep]
        Q[:, :kept] = Yk
        Q[:, kept] = q_next
        H[:, :] = 0.0
        H[:kept, :kept] = np.diag(theta[keep])
        H[:kept, kept] = u
        H[kept, :kept] = u
        j = kept + 1

    worst = float(np.max(last_res)) if last_res is not None else float("nan")
    raise ConvergenceError(
        f"eigensolver did not reach tol={tol} within {max_cycles} restart cycles "
        f"(worst residual {worst:.3e})",
        residuals=last_res,
    )


def truncated_eigendecomposition(
    b: NormalizedBipartite, k: int, m: int = 10, tol: float = 1e-8, seed: int = 0
) -> SpectralBasis:
    """Compute the K lowest-frequency eigenpairs of the item graph.

    These are the K largest eigenvalues of the gram operator A; the returned
    frequencies d = 1 - mu are sorted ascending. Tiny negative frequencies
    from roundoff are clamped to 0 so that exp(-t d) stays in (0, 1].
    """
    if k > b.n_items:
        raise ValueError(f"rank k={k} exceeds n_items={b.n_items}")
    mu, vecs, resid = lanczos_eigsh(
        lambda v: apply_item_gram(b, v), b.n_items, k, m=m, tol=tol, seed=seed
    )
    d = np.maximum(1.0 - mu, 0.0)
    log.info("eigenbasis: k=%d, d in [%.3e, %.3e], worst residual %.3e",
             k, d[0], d[-1], resid.max())
    return SpectralBasis(U=vecs, d=d, residuals=resid, matrix_hash=b.source_hash, seed=seed)


def heat_kernel_reference(b: NormalizedBipartite, t: float, x: np.ndarray) -> np.ndarray:
    """Dense-eigendecomposition oracle for the graph heat kernel e^{-L t} x.

    Only valid on small instances (n_items <= 512); used to verify that the
    spectral path igft(exp(-t d) * gft(x)) reproduces spatial heat diffusion.
    """
    if b.n_items > DENSE_GUARD:
        raise ValueError(f"dense heat-kernel path limited to {DENSE_GUARD} items, got {b.n_items}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != b.n_items:
        raise ValueError(f"signal has length {x.shape[0]}, expected {b.n_items}")
    xd = b.matrix.toarray()
    lap = np.eye(b.n_items) - xd.T @ xd
    w, v = np.linalg.eigh(lap)
    return v @ (np.exp(-t * w) * (v.T @ x))


def _serialize_basis(basis: SpectralBasis) -> bytes:
    parts = [
        _BASIS_MAGIC,
        struct.pack("<IIIq", _BASIS_VERSION, basis.k, basis.n_items,
                    -1 if basis.seed is None else int(basis.seed)),
        bytes.fromhex(basis.matrix_hash),
        np.asarray(basis.d, dtype="<f8").tobytes(),
        np.asarray(basis.U, dtype="<f4").tobytes(order="F"),  # column-major
        np.asarray(basis.residuals, dtype="<f8").tobytes(),
    ]
    return b"".join(parts)


def save_basis(basis: SpectralBasis, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_serialize_basis(basis))


def load_basis(path) -> SpectralBasis:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _BASIS_MAGIC:
        raise ArtifactError(f"{path}: not a spectral-basis file")
    version, k, n_items, seed = struct.unpack_from("<IIIq", blob, 8)
    if version != _BASIS_VERSION:
        raise ArtifactError(f"{path}: unsupported basis version {version}")
    off = 8 + struct.calcsize("<IIIq")
    matrix_hash = blob[off:off + 32].hex()
    off += 32
    d = np.frombuffer(blob, dtype="<f8", count=k, offset=off).copy()
    off += 8 * k
    u = np.frombuffer(blob, dtype="<f4", count=n_items * k, offset=off)
    u = np.asarray(u.reshape((n_items, k), order="F"), dtype=np.float64)
    off += 4 * n_items * k
    residuals = np.frombuffer(blob, dtype="<f8", count=k, offset=off).copy()
    return SpectralBasis(U=u, d=d, residuals=residuals, matrix_hash=matrix_hash, seed=seed)
