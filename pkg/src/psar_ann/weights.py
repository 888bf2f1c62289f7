"""
Spatial weight matrices: contiguity and distance-based neighbor graphs,
row standardization, real spectra with admissible rho intervals, and GAL I/O.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "WeightMatrix",
    "build_lattice_adjacency",
    "build_minimum_distance",
    "build_knn",
    "build_sphere_of_influence",
    "symmetrize",
    "row_standardize",
    "spectrum_and_bounds",
    "read_gal",
    "write_gal",
    "IsolatedUnitError",
]

RULES = ("rook", "bishop", "queen")


class IsolatedUnitError(ValueError):
    """A unit has no neighbors, so its row cannot be standardized."""

    def __init__(self, units):
        self.units = list(units)
        shown = ", ".join(str(u) for u in self.units[:10])
        more = "" if len(self.units) <= 10 else f" (+{len(self.units) - 10} more)"
        super().__init__(f"isolated units without neighbors: {shown}{more}")


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Sparse n x n spatial weights.

    Parameters
    ----------
    sparse : scipy.sparse.csr_matrix
        Nonnegative weights with a structurally zero diagonal.
    standardized : bool
        True when every row was divided by its sum.
    row_sums : ndarray, optional
        Row sums of the adjacency the matrix was standardized from. Used to
        symmetrize ``D^-1 A`` into ``D^-1/2 A D^-1/2`` for the spectrum.
    lattice : (rows, cols), optional
        Set for lattice-derived matrices (row-major unit order). Lets the
        spectrum be computed blockwise over the reflection symmetries.
    """

    sparse: sp.csr_matrix
    standardized: bool = False
    row_sums: Optional[np.ndarray] = field(default=None, repr=False)
    lattice: Optional[tuple[int, int]] = None

    def __post_init__(self):
        m = sp.csr_matrix(self.sparse, dtype=float)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"weight matrix must be square, got {m.shape}")
        m.eliminate_zeros()
        m.sort_indices()
        if m.nnz and (m.data < 0).any():
            raise ValueError("weight matrix has negative entries")
        if m.diagonal().any():
            raise ValueError("weight matrix must have a zero diagonal")
        object.__setattr__(self, "sparse", m)

    @property
    def n(self) -> int:
        return self.sparse.shape[0]

    def toarray(self) -> np.ndarray:
        return self.sparse.toarray()

    def neighbors(self, i: int) -> np.ndarray:
        m = self.sparse
        return m.indices[m.indptr[i] : m.indptr[i + 1]]

    def cardinalities(self) -> np.ndarray:
        return np.diff(self.sparse.indptr)

    def is_symmetric(self, tol: float = 0.0) -> bool:
        diff = self.sparse - self.sparse.T
        return diff.nnz == 0 or np.abs(diff.data).max() <= tol

    @cached_property
    def spectrum(self) -> np.ndarray:
        """Real eigenvalues in ascending order."""
        return _real_spectrum(self)

    @property
    def rho_interval(self) -> tuple[float, float]:
        tau = float(np.abs(self.spectrum).max())
        if tau == 0.0:
            return (-np.inf, np.inf)
        return (-1.0 / tau, 1.0 / tau)

    def __matmul__(self, other):
        return self.sparse @ other


def _lattice_coords(n1: int, n2: int) -> np.ndarray:
    idx = np.arange(n1 * n2)
    return np.column_stack([idx // n2, idx % n2])


def build_lattice_adjacency(n1: int, n2: int, rule: str = "queen") -> WeightMatrix:
    """Binary contiguity on an ``n1 x n2`` grid, units numbered row-major.

    rook: shared edge; bishop: shared vertex only; queen: either.
    """
    if n1 < 1 or n2 < 1:
        raise ValueError(f"lattice dimensions must be positive, got {n1}x{n2}")
    if rule not in RULES:
        raise ValueError(f"unknown contiguity rule {rule!r}; expected one of {RULES}")
    if rule == "rook":
        offsets = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    elif rule == "bishop":
        offsets = [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    else:
        offsets = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]

    rc = _lattice_coords(n1, n2)
    rows, cols = [], []
    for dr, dc in offsets:
        r = rc[:, 0] + dr
        c = rc[:, 1] + dc
        ok = (r >= 0) & (r < n1) & (c >= 0) & (c < n2)
        rows.append(np.flatnonzero(ok))
        cols.append(r[ok] * n2 + c[ok])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    n = n1 * n2
    adj = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    return WeightMatrix(adj, lattice=(n1, n2))


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"points must be an (n, 2) array, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("point coordinates must be finite")
    if pts.shape[0] < 2:
        raise ValueError("at least two points are required")
    return pts


def _pairwise_distances(pts: np.ndarray) -> np.ndarray:
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    off = ~np.eye(len(pts), dtype=bool)
    if (d[off] == 0).any():
        raise ValueError("duplicate points: pairwise distance of zero")
    return d


def _from_mask(mask: np.ndarray) -> WeightMatrix:
    np.fill_diagonal(mask, False)
    return WeightMatrix(sp.csr_matrix(mask.astype(float)))


def build_minimum_distance(points) -> WeightMatrix:
    """Distance band at the largest nearest-neighbor distance.

    Every unit then has at least one neighbor.
    """
    pts = _as_points(points)
    d = _pairwise_distances(pts)
    np.fill_diagonal(d, np.inf)
    threshold = d.min(axis=1).max()
    return _from_mask(d <= threshold)


def build_knn(points, k: int) -> WeightMatrix:
    """Directed k-nearest-neighbor graph; ties go to the lower unit index."""
    pts = _as_points(points)
    n = len(pts)
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    d = _pairwise_distances(pts)
    np.fill_diagonal(d, np.inf)
    # stable sort keeps ascending column index among equal distances
    order = np.argsort(d, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n), k)
    adj = sp.csr_matrix((np.ones(n * k), (rows, order.ravel())), shape=(n, n))
    return WeightMatrix(adj)


def build_sphere_of_influence(points) -> WeightMatrix:
    """Sphere-of-influence graph.

    Each unit gets a circle whose radius is its nearest-neighbor distance;
    two units are neighbors when their circles cross in two points. Tangent
    circles are not neighbors.
    """
    pts = _as_points(points)
    d = _pairwise_distances(pts)
    np.fill_diagonal(d, np.inf)
    r = d.min(axis=1)
    np.fill_diagonal(d, 0.0)
    lo = np.abs(r[:, None] - r[None, :])
    hi = r[:, None] + r[None, :]
    return _from_mask((lo < d) & (d < hi))


def symmetrize(w: WeightMatrix) -> WeightMatrix:
    """Union of a directed graph with its transpose (binary)."""
    m = w.sparse
    union = ((m + m.T) > 0).astype(float)
    return WeightMatrix(sp.csr_matrix(union), lattice=w.lattice)


def row_standardize(adj: WeightMatrix) -> WeightMatrix:
    """Divide every row by its sum. Zero rows raise :class:`IsolatedUnitError`."""
    sums = np.asarray(adj.sparse.sum(axis=1)).ravel()
    isolated = np.flatnonzero(sums == 0)
    if isolated.size:
        raise IsolatedUnitError(isolated.tolist())
    scaled = sp.diags(1.0 / sums) @ adj.sparse
    return WeightMatrix(sp.csr_matrix(scaled), standardized=True, row_sums=sums, lattice=adj.lattice)


def _symmetric_form(w: WeightMatrix) -> sp.csr_matrix:
    """A symmetric matrix similar to ``w``, or ValueError if none is known."""
    if w.is_symmetric(tol=1e-14 * max(1.0, abs(w.sparse).max() if w.sparse.nnz else 1.0)):
        return w.sparse
    if w.row_sums is not None:
        root = np.sqrt(w.row_sums)
        s = sp.diags(root) @ w.sparse @ sp.diags(1.0 / root)
        s = sp.csr_matrix(s)
        diff = s - s.T
        if diff.nnz == 0 or np.abs(diff.data).max() <= 1e-12 * max(1.0, np.abs(s.data).max()):
            return sp.csr_matrix(0.5 * (s + s.T))
    raise ValueError(
        "real spectrum only available for symmetric W or W row-standardized from a symmetric adjacency"
    )


def _reflection_basis(m: int) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Orthonormal bases of the even and odd subspaces of the reversal of length m."""
    half = m // 2
    k = np.arange(half)
    s2 = 1.0 / np.sqrt(2.0)
    even_rows = np.concatenate([k, m - 1 - k])
    even_cols = np.concatenate([k, k])
    even_vals = np.full(2 * half, s2)
    if m % 2:
        even_rows = np.append(even_rows, half)
        even_cols = np.append(even_cols, half)
        even_vals = np.append(even_vals, 1.0)
    even = sp.csr_matrix((even_vals, (even_rows, even_cols)), shape=(m, half + m % 2))
    odd = sp.csr_matrix(
        (np.concatenate([np.full(half, s2), np.full(half, -s2)]), (np.concatenate([k, m - 1 - k]), np.concatenate([k, k]))),
        shape=(m, half),
    )
    return even, odd


def _lattice_block_spectrum(s: sp.csr_matrix, n1: int, n2: int) -> Optional[np.ndarray]:
    """Eigenvalues via the four parity blocks of the grid's two reflections.

    Returns None when ``s`` does not commute with both reflections.
    """
    n = n1 * n2
    rc = _lattice_coords(n1, n2)
    flip_r = (n1 - 1 - rc[:, 0]) * n2 + rc[:, 1]
    flip_c = rc[:, 0] * n2 + (n2 - 1 - rc[:, 1])
    for perm in (flip_r, flip_c):
        p = sp.csr_matrix((np.ones(n), (np.arange(n), perm)), shape=(n, n))
        diff = p @ s @ p.T - s
        if diff.nnz and np.abs(diff.data).max() > 1e-13:
            return None
    bases_r = _reflection_basis(n1)
    bases_c = _reflection_basis(n2)
    eig = []
    for br in bases_r:
        for bc in bases_c:
            if br.shape[1] == 0 or bc.shape[1] == 0:
                continue
            q = sp.kron(br, bc, format="csr")
            block = (q.T @ s @ q).toarray()
            eig.append(np.linalg.eigvalsh(0.5 * (block + block.T)))
    return np.sort(np.concatenate(eig))


def _real_spectrum(w: WeightMatrix) -> np.ndarray:
    s = _symmetric_form(w)
    if w.n == 0:
        return np.zeros(0)
    if w.lattice is not None and w.n > 400:
        vals = _lattice_block_spectrum(s, *w.lattice)
        if vals is not None:
            return vals
    return np.linalg.eigvalsh(s.toarray())


def spectrum_and_bounds(w: WeightMatrix) -> tuple[np.ndarray, tuple[float, float]]:
    """Real spectrum of ``w`` and the open interval ``(-1/tau, 1/tau)``."""
    return w.spectrum, w.rho_interval


# --- GAL exchange format -------------------------------------------------------


def write_gal(w: WeightMatrix, path=None) -> str:
    """Serialize the adjacency pattern of ``w`` (1-based ids)."""
    lines = [f"0 {w.n}"]
    for i in range(w.n):
        nb = w.neighbors(i) + 1
        lines.append(f"{i + 1} {nb.size}")
        lines.append(" ".join(str(j) for j in nb))
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def read_gal(source) -> WeightMatrix:
    """Parse GAL text (or a path to a GAL file) into a binary adjacency."""
    if isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source) as fh:
            text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty GAL input")
    header = lines[0].split()
    try:
        if len(header) == 1:
            n = int(header[0])
        elif len(header) >= 2:
            n = int(header[1])
        else:
            raise ValueError
    except ValueError:
        raise ValueError(f"malformed GAL header: {lines[0]!r}") from None
    if n < 0:
        raise ValueError(f"malformed GAL header: {lines[0]!r}")

    rows, cols = [], []
    seen = set()
    pos = 1
    for _ in range(n):
        while pos < len(lines) and not lines[pos].strip():
            pos += 1
        if pos >= len(lines):
            raise ValueError(f"GAL file declares {n} units but ends after {len(seen)}")
        parts = lines[pos].split()
        pos += 1
        if len(parts) != 2:
            raise ValueError(f"malformed GAL unit line: {lines[pos - 1]!r}")
        uid, k = int(parts[0]), int(parts[1])
        if not 1 <= uid <= n:
            raise ValueError(f"unit id {uid} outside 1..{n}")
        if uid in seen:
            raise ValueError(f"unit id {uid} listed twice")
        seen.add(uid)
        nbrs: Sequence[str] = []
        if k > 0:
            if pos >= len(lines):
                raise ValueError(f"missing neighbor line for unit {uid}")
            nbrs = lines[pos].split()
            pos += 1
        elif pos < len(lines) and not lines[pos].strip():
            pos += 1
        if len(nbrs) != k:
            raise ValueError(f"unit {uid} declares {k} neighbors but lists {len(nbrs)}")
        for tok in nbrs:
            j = int(tok)
            if not 1 <= j <= n:
                raise ValueError(f"neighbor id {j} of unit {uid} outside 1..{n}")
            if j == uid:
                raise ValueError(f"unit {uid} lists itself as a neighbor")
            rows.append(uid - 1)
            cols.append(j - 1)
    if any(line.strip() for line in lines[pos:]):
        raise ValueError("trailing content after the last GAL unit")
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    if adj.nnz and adj.data.max() > 1:
        raise ValueError("a neighbor id is repeated within one unit's list")
    return WeightMatrix(adj)
