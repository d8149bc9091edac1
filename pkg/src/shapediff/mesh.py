"""Triangle meshes: representation, OFF/PLY/OBJ I/O, mass matrix, cotangent Laplacian.

Meshes are immutable after construction.  By default meshes are rescaled at
load time so the total surface area is 1, which makes every downstream
tolerance scale-free.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DegeneracyError, MeshFormatError, TopologyError

COT_CLAMP = 1e4  # bound on individual cotangent values near degenerate triangles


class SparseSymMatrix:
    """Sparse symmetric matrix stored with one triplet per unordered pair.

    Only entries with row <= col are kept, so the matrix is symmetric by
    construction: mirroring happens when the CSR form is materialized.
    """

    def __init__(self, dim, rows, cols, vals):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size and (rows.min() < 0 or rows.max() >= dim):
            raise ValueError("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= dim):
            raise ValueError("col index out of range")
        lo = np.minimum(rows, cols)
        hi = np.maximum(rows, cols)
        # combine duplicates on the canonical (lo, hi) key
        acc = sp.coo_matrix((vals, (lo, hi)), shape=(dim, dim)).tocoo()
        acc.sum_duplicates()
        keep = acc.data != 0.0
        self.dim = dim
        self.rows = acc.row[keep].astype(np.int64)
        self.cols = acc.col[keep].astype(np.int64)
        self.vals = acc.data[keep]
        self._csr = None

    @property
    def nnz(self):
        return self.vals.size

    def to_csr(self):
        """Materialize the full symmetric matrix as CSR (cached)."""
        if self._csr is None:
            off = self.rows != self.cols
            r = np.concatenate([self.rows, self.cols[off]])
            c = np.concatenate([self.cols, self.rows[off]])
            v = np.concatenate([self.vals, self.vals[off]])
            self._csr = sp.csr_matrix((v, (r, c)), shape=(self.dim, self.dim))
        return self._csr

    def to_dense(self):
        return self.to_csr().toarray()

    def diagonal(self):
        d = np.zeros(self.dim)
        on = self.rows == self.cols
        d[self.rows[on]] = self.vals[on]
        return d

    def matvec(self, x):
        return self.to_csr() @ x

    def dump(self, path):
        """Write ascii triplet file: one-line header "dim nnz", then "row col value"."""
        with open(path, "w") as fh:
            fh.write(f"{self.dim} {self.nnz}\n")
            for r, c, v in zip(self.rows, self.cols, self.vals):
                fh.write(f"{r} {c} {float(v)!r}\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            dim, nnz = (int(t) for t in fh.readline().split())
            rows = np.empty(nnz, dtype=np.int64)
            cols = np.empty(nnz, dtype=np.int64)
            vals = np.empty(nnz)
            for i in range(nnz):
                r, c, v = fh.readline().split()
                rows[i], cols[i], vals[i] = int(r), int(c), float(v)
        return cls(dim, rows, cols, vals)


class Mesh:
    """Immutable triangle mesh with derived edge list.

    Invariants checked at construction: all triangle indices valid, no
    degenerate triangle (repeated vertex index), single connected component.
    """

    def __init__(self, vertices, triangles):
        v = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(triangles, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be (v, 3)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must be (f, 3)")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise TopologyError(
                f"triangle index out of range [0, {len(v)}): max index {t.max()}"
            )
        if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
            raise TopologyError("degenerate triangle with repeated vertex indices")
        self.vertices = v
        self.triangles = t
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)
        self._check_connected()
        self._edges = None

    def _check_connected(self):
        adj = sp.coo_matrix(
            (
                np.ones(3 * len(self.triangles)),
                (
                    np.concatenate([self.triangles[:, 0], self.triangles[:, 1], self.triangles[:, 2]]),
                    np.concatenate([self.triangles[:, 1], self.triangles[:, 2], self.triangles[:, 0]]),
                ),
            ),
            shape=(self.num_vertices, self.num_vertices),
        )
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise TopologyError(f"mesh has {ncomp} connected components, expected 1")

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def edges(self):
        """Unique undirected edges, each pair once, sorted lexicographically."""
        if self._edges is None:
            t = self.triangles
            e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
            e = np.sort(e, axis=1)
            self._edges = np.unique(e, axis=0)
        return self._edges

    def triangle_areas(self):
        p = self.vertices[self.triangles]
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def total_area(self):
        return float(self.triangle_areas().sum())

    def bbox_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def vertex_normals(self):
        """Area-weighted vertex normals (unit length)."""
        p = self.vertices[self.triangles]
        fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # 2*area weighted
        vn = np.zeros_like(self.vertices)
        for k in range(3):
            np.add.at(vn, self.triangles[:, k], fn)
        norms = np.linalg.norm(vn, axis=1)
        norms[norms == 0] = 1.0
        return vn / norms[:, None]

    def normalized(self):
        """Copy rescaled to total surface area 1."""
        area = self.total_area()
        if area <= 0:
            raise DegeneracyError("mesh has zero total area")
        return Mesh(self.vertices / np.sqrt(area), self.triangles)


def _parse_off(lines):
    idx = 0

    def next_data_line():
        nonlocal idx
        while idx < len(lines):
            raw = lines[idx]
            idx += 1
            s = raw.split("#", 1)[0].strip()
            if s:
                return s, idx
        raise MeshFormatError("unexpected end of file", line=len(lines))

    s, ln = next_data_line()
    if s.startswith("OFF"):
        rest = s[3:].strip()
        if rest:
            counts = rest
        else:
            counts, ln = next_data_line()
    else:
        raise MeshFormatError("missing OFF header", line=ln)
    try:
        nv, nf = (int(t) for t in counts.split()[:2])
    except ValueError:
        raise MeshFormatError(f"bad count line {counts!r}", line=ln) from None
    verts = np.empty((nv, 3))
    for i in range(nv):
        s, ln = next_data_line()
        parts = s.split()
        if len(parts) < 3:
            raise MeshFormatError(f"bad vertex line {s!r}", line=ln)
        try:
            verts[i] = [float(p) for p in parts[:3]]
        except ValueError:
            raise MeshFormatError(f"bad vertex line {s!r}", line=ln) from None
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        s, ln = next_data_line()
        parts = s.split()
        try:
            cnt = int(parts[0])
            if cnt != 3:
                raise MeshFormatError(f"only triangular faces supported, got {cnt}-gon", line=ln)
            faces[i] = [int(p) for p in parts[1:4]]
        except (ValueError, IndexError):
            raise MeshFormatError(f"bad face line {s!r}", line=ln) from None
        if faces[i].min() < 0 or faces[i].max() >= nv:
            raise MeshFormatError(
                f"face index out of range [0, {nv}): {faces[i].max()}", line=ln
            )
    return verts, faces


def _parse_obj(lines):
    verts, faces = [], []
    for ln, raw in enumerate(lines, start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        if parts[0] == "v":
            try:
                verts.append([float(p) for p in parts[1:4]])
            except ValueError:
                raise MeshFormatError(f"bad vertex line {s!r}", line=ln) from None
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshFormatError("only triangular faces supported", line=ln)
            try:
                idxs = [int(p.split("/")[0]) for p in parts[1:4]]
            except ValueError:
                raise MeshFormatError(f"bad face line {s!r}", line=ln) from None
            idxs = [i - 1 if i > 0 else len(verts) + i for i in idxs]
            if min(idxs) < 0 or max(idxs) >= len(verts):
                raise MeshFormatError(
                    f"face index out of range [0, {len(verts)}): {max(idxs)}", line=ln
                )
            faces.append(idxs)
    if not verts:
        raise MeshFormatError("no vertices found", line=len(lines))
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def _parse_ply(lines):
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError("missing ply header", line=1)
    fmt = None
    elements = []  # (name, count, [properties])
    ln = 1
    for ln, raw in enumerate(lines[1:], start=2):
        s = raw.strip()
        if s.startswith("comment") or not s:
            continue
        parts = s.split()
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError("property before element", line=ln)
            elements[-1][2].append(parts[1:])
        elif parts[0] == "end_header":
            break
    else:
        raise MeshFormatError("missing end_header", line=ln)
    if fmt != "ascii":
        raise MeshFormatError(f"only ascii PLY supported, got format {fmt!r}", line=2)
    data_start = ln + 1
    cursor = data_start - 1  # 0-based index into lines
    verts = None
    faces = None
    for name, count, props in elements:
        if name == "vertex":
            names = [p[-1] for p in props]
            try:
                ix, iy, iz = names.index("x"), names.index("y"), names.index("z")
            except ValueError:
                raise MeshFormatError("vertex element lacks x/y/z", line=data_start) from None
            verts = np.empty((count, 3))
            for i in range(count):
                s = lines[cursor].split()
                cursor += 1
                try:
                    verts[i] = [float(s[ix]), float(s[iy]), float(s[iz])]
                except (ValueError, IndexError):
                    raise MeshFormatError("bad vertex line", line=cursor) from None
        elif name == "face":
            faces = np.empty((count, 3), dtype=np.int64)
            for i in range(count):
                s = lines[cursor].split()
                cursor += 1
                try:
                    cnt = int(s[0])
                    if cnt != 3:
                        raise MeshFormatError(
                            f"only triangular faces supported, got {cnt}-gon", line=cursor
                        )
                    faces[i] = [int(t) for t in s[1:4]]
                except (ValueError, IndexError):
                    raise MeshFormatError("bad face line", line=cursor) from None
                if faces[i].min() < 0 or (verts is not None and faces[i].max() >= len(verts)):
                    raise MeshFormatError(
                        f"face index out of range: {faces[i].max()}", line=cursor
                    )
        else:
            cursor += count  # skip unknown elements
    if verts is None or faces is None:
        raise MeshFormatError("PLY lacks vertex or face element", line=data_start)
    return verts, faces


def load_mesh(path, normalize_area=True):
    """Load an OFF, ascii PLY, or OBJ triangle mesh.

    Raises MeshFormatError (with line number) on parse failure, TopologyError
    for multi-component meshes, DegeneracyError for zero total area.  If
    ``normalize_area`` the vertices are uniformly scaled so the total surface
    area is 1; the original area is kept in ``mesh.original_area``.
    """
    path = str(path)
    with open(path) as fh:
        lines = fh.readlines()
    lower = path.lower()
    if lower.endswith(".obj"):
        verts, faces = _parse_obj(lines)
    elif lower.endswith(".ply"):
        verts, faces = _parse_ply(lines)
    else:
        verts, faces = _parse_off(lines)
    mesh = Mesh(verts, faces)
    area = mesh.total_area()
    if area <= 0:
        raise DegeneracyError("mesh has zero total area")
    if normalize_area:
        mesh = Mesh(verts / np.sqrt(area), faces)
    mesh.original_area = area
    return mesh


def save_off(mesh, path):
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.num_vertices} {mesh.num_triangles} 0\n")
        for p in mesh.vertices:
            fh.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def vertex_area_matrix(mesh):
    """Lumped (diagonal) mass matrix: one third of incident triangle area per vertex."""
    areas = mesh.triangle_areas()
    diag = np.zeros(mesh.num_vertices)
    for k in range(3):
        np.add.at(diag, mesh.triangles[:, k], areas / 3.0)
    idx = np.arange(mesh.num_vertices)
    return SparseSymMatrix(mesh.num_vertices, idx, idx, diag)


def cotan_laplacian(mesh):
    """Cotangent-weight stiffness matrix, positive semidefinite.

    Off-diagonal (i, j) = -(cot a + cot b)/2 over the incident triangles,
    diagonal = negated row sum, so the constant vector is in the nullspace.
    Individual cotangents are clamped to +-1e4.
    """
    areas = mesh.triangle_areas()
    total = areas.sum()
    bad = np.nonzero(areas < 1e-12 * total)[0]
    if bad.size:
        raise DegeneracyError(
            f"triangle {bad[0]} has near-zero area ({areas[bad[0]]:.3e})"
        )
    t = mesh.triangles
    p = mesh.vertices
    rows, cols, vals = [], [], []
    # corner k is opposite the edge (k+1, k+2)
    for k in range(3):
        i = t[:, (k + 1) % 3]
        j = t[:, (k + 2) % 3]
        o = t[:, k]
        u = p[i] - p[o]
        v = p[j] - p[o]
        cross = np.linalg.norm(np.cross(u, v), axis=1)
        cot = np.einsum("ij,ij->i", u, v) / np.maximum(cross, 1e-300)
        cot = np.clip(cot, -COT_CLAMP, COT_CLAMP)
        rows.append(i)
        cols.append(j)
        vals.append(-0.5 * cot)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    # diagonal = -(row sum of off-diagonals); accumulate both endpoints
    diag = np.zeros(mesh.num_vertices)
    np.add.at(diag, rows, -vals)
    np.add.at(diag, cols, -vals)
    idx = np.arange(mesh.num_vertices)
    return SparseSymMatrix(
        mesh.num_vertices,
        np.concatenate([rows, idx]),
        np.concatenate([cols, idx]),
        np.concatenate([vals, diag]),
    )
