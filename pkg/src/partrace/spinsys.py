"""Real-symmetric spin-1/2 Hamiltonians as matrix-free block operators.

Conventions
-----------
Sites are numbered 1..N with site 1 the leftmost (slowest-varying) tensor
factor, i.e. basis state ``n`` assigns site i the bit ``(n >> (N-i)) & 1``
with bit 0 meaning spin up (sigma^z eigenvalue +1).  A bipartition keeps the
leading ``n_sys_sites`` sites as subsystem (s), so a full-space vector
partitions into ``d_s`` contiguous chunks of length ``d_b``.

The Hamiltonian family

    H = sum_{i<j} [Jx_ij sx_i sx_j + Jy_ij sy_i sy_j + Jz_ij sz_i sz_j]
        + (h/2) sum_i sz_i

is always real symmetric: the product sy_i sy_j has real entries (the two
factors of the imaginary unit multiply to -1), so sy is never materialized
on its own and assembly stays in real arithmetic.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

#: assembly refuses above this site count rather than silently thrashing
MAX_SITES = 24

_AXES = ("x", "y", "z")

Coupling = tuple[int, int, float]


def _validate_couplings(entries, n_sites: int, axis: str) -> tuple[Coupling, ...]:
    seen = set()
    out = []
    for entry in entries:
        i, j, value = int(entry[0]), int(entry[1]), float(entry[2])
        if not (1 <= i < j <= n_sites):
            raise ValueError(
                f"J{axis} coupling ({i},{j}) must satisfy 1 <= i < j <= {n_sites}"
            )
        if (i, j) in seen:
            raise ValueError(f"duplicate J{axis} coupling for pair ({i},{j})")
        if not math.isfinite(value):
            raise ValueError(f"J{axis} coupling ({i},{j}) has non-finite value {value}")
        seen.add((i, j))
        out.append((i, j, value))
    return tuple(out)


@dataclass(frozen=True)
class CouplingSpec:
    """Symbolic description of a spin system.

    Couplings are ``(i, j, value)`` triples with 1-based site indices
    ``1 <= i < j <= n_sites`` (at most one entry per pair per axis);
    ``field_h`` is the uniform z-field strength entering as (h/2)*sum sz_i.
    """

    n_sites: int
    jx: tuple[Coupling, ...] = ()
    jy: tuple[Coupling, ...] = ()
    jz: tuple[Coupling, ...] = ()
    field_h: float = 0.0

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError(f"n_sites must be >= 1, got {self.n_sites}")
        if not math.isfinite(self.field_h):
            raise ValueError(f"field_h must be finite, got {self.field_h}")
        for axis in _AXES:
            entries = _validate_couplings(getattr(self, "j" + axis), self.n_sites, axis)
            object.__setattr__(self, "j" + axis, entries)

    def couplings(self, axis: str) -> tuple[Coupling, ...]:
        if axis not in _AXES:
            raise ValueError(f"axis must be one of {_AXES}, got {axis!r}")
        return getattr(self, "j" + axis)

    def with_field(self, h: float) -> "CouplingSpec":
        return replace(self, field_h=float(h))

    # -- config serialization ------------------------------------------------
    #
    # Schema (JSON):
    #   {"sites": N, "field_h": h,
    #    "couplings": [{"axis": "x"|"y"|"z", "i": int, "j": int, "value": float}, ...]}
    # Unknown keys are rejected.

    def to_config(self) -> str:
        entries = []
        for axis in _AXES:
            for i, j, value in self.couplings(axis):
                entries.append({"axis": axis, "i": i, "j": j, "value": value})
        doc = {"sites": self.n_sites, "field_h": self.field_h, "couplings": entries}
        return json.dumps(doc, indent=2)

    @classmethod
    def from_config(cls, text: str) -> "CouplingSpec":
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise ValueError("coupling config must be a JSON object")
        allowed = {"sites", "field_h", "couplings"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown coupling-config keys: {sorted(unknown)}")
        if "sites" not in doc:
            raise ValueError("coupling config missing required key 'sites'")
        per_axis: dict[str, list[Coupling]] = {a: [] for a in _AXES}
        for entry in doc.get("couplings", []):
            extra = set(entry) - {"axis", "i", "j", "value"}
            if extra:
                raise ValueError(f"unknown coupling-entry keys: {sorted(extra)}")
            axis = entry.get("axis")
            if axis not in _AXES:
                raise ValueError(f"coupling entry axis must be one of {_AXES}, got {axis!r}")
            per_axis[axis].append((entry["i"], entry["j"], entry["value"]))
        return cls(
            n_sites=int(doc["sites"]),
            jx=tuple(per_axis["x"]),
            jy=tuple(per_axis["y"]),
            jz=tuple(per_axis["z"]),
            field_h=float(doc.get("field_h", 0.0)),
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_config() + "\n")

    @classmethod
    def load(cls, path) -> "CouplingSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_config(fh.read())


@dataclass(frozen=True)
class BipartiteSplit:
    """Bipartition keeping the leading ``n_sys_sites`` sites as subsystem (s)."""

    n_sites: int
    n_sys_sites: int

    def __post_init__(self):
        if not (1 <= self.n_sys_sites < self.n_sites):
            raise ValueError(
                f"need 1 <= n_sys_sites < n_sites, got {self.n_sys_sites} of {self.n_sites}"
            )

    @property
    def d_s(self) -> int:
        return 1 << self.n_sys_sites

    @property
    def d_b(self) -> int:
        return 1 << (self.n_sites - self.n_sys_sites)

    @property
    def d_t(self) -> int:
        return 1 << self.n_sites


class LinOp:
    """A real-symmetric operator with a counted block apply.

    Wraps explicit (sparse or dense) storage built once at assembly time;
    ``apply`` is read-only afterwards and safe to call from multiple
    workers.  The apply counter increments by the number of columns of each
    applied block and is protected by a lock so concurrent use stays exact.
    """

    def __init__(self, matrix):
        if sparse.issparse(matrix):
            matrix = matrix.tocsr()
            if not np.issubdtype(matrix.dtype, np.floating):
                raise ValueError("LinOp requires a real-valued matrix")
        else:
            matrix = np.asarray(matrix)
            if np.iscomplexobj(matrix):
                raise ValueError("LinOp requires a real-valued matrix")
            matrix = matrix.astype(float, copy=False)
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"operator must be square, got shape {matrix.shape}")
        self.matrix = matrix
        self._applies = 0
        self._lock = threading.Lock()
        self._norm_bound = None

    @classmethod
    def from_dense(cls, arr) -> "LinOp":
        return cls(np.asarray(arr))

    @classmethod
    def from_sparse(cls, mat) -> "LinOp":
        return cls(mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def applies(self) -> int:
        """Total single-vector applications performed so far."""
        return self._applies

    def reset_applies(self) -> None:
        with self._lock:
            self._applies = 0

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise ValueError(f"block has leading dimension {x.shape[0]}, expected {self.dim}")
        width = 1 if x.ndim == 1 else x.shape[1]
        y = self.matrix @ x
        with self._lock:
            self._applies += width
        return np.asarray(y)

    def norm_bound(self) -> float:
        """An upper bound on the spectral norm (max absolute row sum)."""
        if self._norm_bound is None:
            if sparse.issparse(self.matrix):
                row_sums = np.abs(self.matrix).sum(axis=1)
                self._norm_bound = float(np.max(row_sums)) if self.dim else 0.0
            else:
                self._norm_bound = float(np.max(np.sum(np.abs(self.matrix), axis=1)))
        return self._norm_bound

    def to_array(self) -> np.ndarray:
        """Dense copy of the stored matrix (assembly-time use only)."""
        if sparse.issparse(self.matrix):
            return self.matrix.toarray()
        return np.array(self.matrix, copy=True)


def _z_values(idx: np.ndarray, n: int, site: int) -> np.ndarray:
    """sigma^z eigenvalues (+1/-1) of site ``site`` over the basis indices."""
    return 1.0 - 2.0 * ((idx >> (n - site)) & 1)


def build_hamiltonian(spec: CouplingSpec, max_sites: int = MAX_SITES) -> LinOp:
    """Assemble the spin Hamiltonian of ``spec`` as a sparse-backed operator.

    The xx and yy couplings of a pair are fused into a single real stencil:
    acting on a basis state they flip both spins with amplitude
    ``Jx - Jy * z_i * z_j`` (the yy sign comes from i*i = -1), while zz
    couplings and the Zeeman term are diagonal.
    """
    n = spec.n_sites
    if n > max_sites:
        raise ValueError(
            f"refusing to assemble n_sites={n} > max {max_sites} "
            f"(2^{n} basis states); raise the limit explicitly if intended"
        )
    d = 1 << n
    idx = np.arange(d, dtype=np.int64)

    zcache: dict[int, np.ndarray] = {}

    def z(site: int) -> np.ndarray:
        if site not in zcache:
            zcache[site] = _z_values(idx, n, site)
        return zcache[site]

    # fuse x and y couplings per pair
    xy: dict[tuple[int, int], list[float]] = {}
    for i, j, v in spec.jx:
        xy.setdefault((i, j), [0.0, 0.0])[0] = v
    for i, j, v in spec.jy:
        xy.setdefault((i, j), [0.0, 0.0])[1] = v

    rows, cols, data = [], [], []
    for (i, j), (vx, vy) in sorted(xy.items()):
        mask = (1 << (n - i)) | (1 << (n - j))
        val = vx - vy * (z(i) * z(j))
        nz = val != 0.0
        if not np.any(nz):
            continue
        rows.append(idx[nz] ^ mask)
        cols.append(idx[nz])
        data.append(val[nz])

    diag = np.zeros(d)
    for i, j, v in spec.jz:
        diag += v * (z(i) * z(j))
    if spec.field_h != 0.0:
        zsum = np.zeros(d)
        for i in range(1, n + 1):
            zsum += z(i)
        diag += 0.5 * spec.field_h * zsum

    if rows:
        mat = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(d, d),
        ).tocsr()
    else:
        mat = sparse.csr_matrix((d, d))
    if np.any(diag):
        mat = mat + sparse.diags(diag)
    return LinOp(mat.tocsr())


def subsystem_hamiltonian(spec: CouplingSpec, split: BipartiteSplit) -> np.ndarray:
    """Dense Hamiltonian of subsystem (s): intra-(s) couplings plus the field
    on (s) sites.  Cross couplings belong to the interaction term and are
    excluded."""
    if split.n_sites != spec.n_sites:
        raise ValueError(
            f"split is for {split.n_sites} sites but spec has {spec.n_sites}"
        )
    ns = split.n_sys_sites

    def inside(entries):
        return tuple(e for e in entries if e[1] <= ns)

    sub = CouplingSpec(
        n_sites=ns,
        jx=inside(spec.jx),
        jy=inside(spec.jy),
        jz=inside(spec.jz),
        field_h=spec.field_h,
    )
    return build_hamiltonian(sub).to_array()


# ---------------------------------------------------------------------------
# benchmark system generators
# ---------------------------------------------------------------------------

def chain_xx(n: int, j: float = 1.0, periodic: bool = False) -> CouplingSpec:
    """Nearest-neighbour XX chain: Jx = Jy = j on bonds (i, i+1), Jz = 0."""
    if n < 2:
        raise ValueError(f"chain needs n >= 2, got {n}")
    pairs = [(i, i + 1, float(j)) for i in range(1, n)]
    if periodic and n > 2:
        pairs.append((1, n, float(j)))
    pairs_t = tuple(pairs)
    return CouplingSpec(n_sites=n, jx=pairs_t, jy=pairs_t)


def long_range_xx(n: int, alpha: float) -> CouplingSpec:
    """XX chain with power-law couplings Jx = Jy = |i-j|^(-alpha).

    ``alpha = inf`` reduces to the open nearest-neighbour chain with j = 1.
    """
    if n < 2:
        raise ValueError(f"chain needs n >= 2, got {n}")
    if math.isinf(alpha):
        return chain_xx(n, 1.0, periodic=False)
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0 (or inf), got {alpha}")
    pairs = tuple(
        (i, j, float(abs(i - j)) ** (-alpha))
        for i in range(1, n + 1)
        for j in range(i + 1, n + 1)
    )
    return CouplingSpec(n_sites=n, jx=pairs, jy=pairs)


def kagome_strip(
    n_cells: int,
    j0: float = 1.0,
    j1: float = 1.0,
    j2: float = 1.0,
    periodic: bool = False,
) -> CouplingSpec:
    """Kagome-strip chain of 5-site cells with Heisenberg couplings.

    Cell template (sites numbered within cell c, base = 5*(c-1)):

        base+3 ---j1--- base+4 ..j2.. next cell's +3     (top rail)
             \\          /
              j0  base+5  j0                             (interior)
             /          \\
        base+1 ---j1--- base+2 ..j2.. next cell's +1     (bottom rail)

    Each interior site couples with strength j0 to its four diagonal rail
    neighbours; rail edges inside a cell carry j1 and rail edges linking
    neighbouring cells carry j2 (this intra/inter assignment is this
    generator's convention; see README).  All couplings act identically on
    the x, y and z axes.  Periodic closure adds j2 rail edges from the last
    cell back to the first and needs n_cells >= 2 to avoid duplicate bonds.
    """
    if n_cells < 1:
        raise ValueError(f"need n_cells >= 1, got {n_cells}")
    if periodic and n_cells < 2:
        raise ValueError("periodic closure needs n_cells >= 2")
    edges: list[tuple[int, int, float]] = []

    def cell_sites(c: int) -> tuple[int, int, int, int, int]:
        base = 5 * c
        # bottom-left, bottom-right, top-left, top-right, interior
        return base + 1, base + 2, base + 3, base + 4, base + 5

    for c in range(n_cells):
        b1, b2, t1, t2, mid = cell_sites(c)
        edges += [
            (mid, b1, j0), (mid, b2, j0), (mid, t1, j0), (mid, t2, j0),
            (b1, b2, j1), (t1, t2, j1),
        ]
        if c + 1 < n_cells:
            nb1, _, nt1, _, _ = cell_sites(c + 1)
            edges += [(b2, nb1, j2), (t2, nt1, j2)]
    if periodic:
        b1, b2, t1, t2, _ = cell_sites(n_cells - 1)
        fb1, _, ft1, _, _ = cell_sites(0)
        edges += [(b2, fb1, j2), (t2, ft1, j2)]

    pairs = tuple(
        (min(i, j), max(i, j), float(v)) for i, j, v in edges if v != 0.0
    )
    return CouplingSpec(n_sites=5 * n_cells, jx=pairs, jy=pairs, jz=pairs)
