"""Desk-scale synthetic shape families with exact ground-truth correspondence.

A template mesh is deformed by smooth eigenfunction-normal displacement
fields (ground truth stays the identity) and optionally simplified by a
tracked edge collapse that transfers each removed vertex's correspondence to
its collapse survivor.  Shapes are area-normalized, so all downstream
quantities are scale-free.
"""

import hashlib
import heapq
import json
import os
from dataclasses import dataclass, field

import numpy as np
from skimage.measure import marching_cubes

from . import diffusion
from .errors import ConfigurationError
from .fmaps import PointMap, fmap_from_pointmap
from .mesh import Mesh, cotan_laplacian, vertex_area_matrix
from .sign_correction import correct_signs, extract_features, group_assignment
from .spectral import eigenbasis


@dataclass
class ShapeFamilyConfig:
    template: object = None  # optional Mesh reference
    deform_modes: int = 8
    amplitude: float = 0.05
    decimate_fraction_range: tuple = (0.0, 0.6)
    aniso_probability: float = 0.35

    def __post_init__(self):
        if not (0.0 <= self.amplitude <= 0.2):
            raise ValueError("amplitude must be in (0, 0.2]")
        lo, hi = self.decimate_fraction_range
        if not (0.0 <= lo <= hi <= 0.9):
            raise ValueError("decimate fractions must be within [0, 0.9]")
        if not (0.0 <= self.aniso_probability <= 1.0):
            raise ValueError("aniso_probability must be in [0, 1]")


@dataclass
class GroundTruthPair:
    """A generated shape with exact correspondence to the template.

    ``gt_map_to_template`` sends each shape vertex to its template vertex;
    ``gt_map_from_template`` sends each template vertex to its (surviving)
    shape vertex.  ``warning`` flags a decimation that could not reach the
    requested fraction.
    """

    shape: Mesh
    gt_map_to_template: PointMap
    gt_map_from_template: PointMap
    warning: bool = False


# ---------------------------------------------------------------------------
# templates


def _icosphere(subdivisions):
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(map(tuple, verts))
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                p = np.array(verts[i]) + np.array(verts[j])
                p /= np.linalg.norm(p)
                cache[key] = len(verts)
                verts.append(tuple(p))
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)


def _capsule_sdf(p, a, b, r):
    a = np.asarray(a)
    b = np.asarray(b)
    pa = p - a
    ba = b - a
    denom = float(ba @ ba)
    if denom == 0.0:  # degenerate segment: plain sphere
        return np.linalg.norm(pa, axis=1) - r
    h = np.clip(pa @ ba / denom, 0.0, 1.0)
    return np.linalg.norm(pa - h[:, None] * ba[None, :], axis=1) - r


def _marching_cubes_mesh(sdf, half_extents, grid_n):
    hx, hy, hz = half_extents
    h = 2.0 * max(half_extents) / (grid_n - 1)

    def axis(half):
        m = int(np.ceil(half / h))
        return (np.arange(-m, m + 1)) * h  # symmetric about 0 exactly

    xs, ys, zs = axis(hx), axis(hy), axis(hz)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    vol = sdf(pts).reshape(gx.shape)
    verts, faces, _, _ = marching_cubes(vol, level=0.0, spacing=(h, h, h))
    verts = verts + np.array([xs[0], ys[0], zs[0]])
    keep = ~(
        (faces[:, 0] == faces[:, 1])
        | (faces[:, 1] == faces[:, 2])
        | (faces[:, 0] == faces[:, 2])
    )
    return Mesh(verts, faces[keep].astype(np.int64))


def _humanoid_sdf(p):
    parts = [
        _capsule_sdf(p, (0, -0.35, 0), (0, 0.35, 0), 0.22),  # torso
        _capsule_sdf(p, (0, 0.55, 0), (0, 0.55, 0), 0.16),  # head
        _capsule_sdf(p, (0.18, 0.28, 0), (0.55, 0.05, 0), 0.09),  # arms
        _capsule_sdf(p, (-0.18, 0.28, 0), (-0.55, 0.05, 0), 0.09),
        _capsule_sdf(p, (0.11, -0.30, 0), (0.16, -0.85, 0), 0.10),  # legs
        _capsule_sdf(p, (-0.11, -0.30, 0), (-0.16, -0.85, 0), 0.10),
    ]
    return np.min(np.stack(parts), axis=0)


def _bar_sdf(p):
    # rounded box, elongated along y
    q = np.abs(p) - np.array([0.25, 0.7, 0.25])
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(np.max(q, axis=1), 0.0)
    return outside + inside - 0.05


def make_template(kind, resolution):
    """Closed, bilaterally symmetric base mesh with at least ``resolution``
    vertices, area-normalized.  Deterministic per (kind, resolution)."""
    if resolution < 100:
        raise ValueError("resolution must be >= 100 vertices")
    if kind == "sphere":
        sub = 0
        while 10 * 4**sub + 2 < resolution:
            sub += 1
        verts, faces = _icosphere(sub)
        mesh = Mesh(verts, faces)
    elif kind in ("humanoid-proxy", "bar"):
        sdf = _humanoid_sdf if kind == "humanoid-proxy" else _bar_sdf
        half = (0.8, 1.1, 0.45) if kind == "humanoid-proxy" else (0.45, 0.9, 0.45)
        mesh = None
        for grid_n in range(16, 257, 8):
            mesh = _marching_cubes_mesh(sdf, half, grid_n)
            if mesh.num_vertices >= resolution:
                break
        if mesh is None or mesh.num_vertices < resolution:
            raise ValueError(f"could not reach {resolution} vertices for {kind}")
    else:
        raise ValueError(f"unknown template kind {kind!r}")
    return mesh.normalized()


# ---------------------------------------------------------------------------
# deformation


def deform(template, basis, seed, config):
    """Smooth non-rigid deformation with identity ground truth.

    Displacement: random combination of low-order eigenfunctions times
    vertex normals, rescaled so the max displacement is
    amplitude * bounding-box diagonal.  Output is area-normalized.
    """
    modes = config.deform_modes
    if basis.n < modes + 1:
        raise ValueError(f"basis has {basis.n} eigenpairs, need {modes + 1}")
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(modes)
    g = basis.evecs[:, 1 : modes + 1] @ coeffs  # skip the constant mode
    d = g[:, None] * template.vertex_normals()
    max_norm = np.linalg.norm(d, axis=1).max()
    if max_norm > 0 and config.amplitude > 0:
        d *= config.amplitude * template.bbox_diagonal() / max_norm
    else:
        d[:] = 0.0
    shape = Mesh(template.vertices + d, template.triangles).normalized()
    ident = PointMap(np.arange(template.num_vertices))
    return GroundTruthPair(shape, ident, PointMap(ident.targets.copy()))


# ---------------------------------------------------------------------------
# tracked decimation


def _vertex_quadrics(mesh):
    p = mesh.vertices[mesh.triangles]
    normal = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area2 = np.linalg.norm(normal, axis=1)
    safe = np.maximum(area2, 1e-300)
    normal = normal / safe[:, None]
    dcoef = -np.einsum("ij,ij->i", normal, p[:, 0])
    planes = np.concatenate([normal, dcoef[:, None]], axis=1)  # (f, 4)
    K = planes[:, :, None] * planes[:, None, :]  # (f, 4, 4)
    K *= (0.5 * area2)[:, None, None]  # area-weighted quadrics
    Q = np.zeros((mesh.num_vertices, 4, 4))
    for k in range(3):
        np.add.at(Q, mesh.triangles[:, k], K)
    return Q


def _geodesic_patch(mesh, seed_vertex, area_fraction):
    """Vertices reachable from the seed until the covered vertex area hits
    the requested fraction of the total (Dijkstra over edge lengths)."""
    areas = np.zeros(mesh.num_vertices)
    tri_area = mesh.triangle_areas()
    for k in range(3):
        np.add.at(areas, mesh.triangles[:, k], tri_area / 3.0)
    target = area_fraction * areas.sum()
    adj = [[] for _ in range(mesh.num_vertices)]
    for i, j in mesh.edges:
        w = float(np.linalg.norm(mesh.vertices[i] - mesh.vertices[j]))
        adj[i].append((j, w))
        adj[j].append((i, w))
    visited = set()
    covered = 0.0
    heap = [(0.0, int(seed_vertex))]
    while heap and covered < target:
        d, u = heapq.heappop(heap)
        if u in visited:
            continue
        visited.add(u)
        covered += areas[u]
        for vtx, w in adj[u]:
            if vtx not in visited:
                heapq.heappush(heap, (d + w, vtx))
    return visited


def decimate_tracked(pair, fraction, localized=False, seed=0):
    """Quadric-ordered half-edge collapse removing ~``fraction`` of the faces.

    Each collapse removes vertex u into neighbour v (positions unchanged), so
    every surviving vertex keeps its template correspondence exactly and
    removed vertices transfer theirs to the survivor.  Collapses that would
    break the manifold link condition are skipped; if the target fraction is
    unreachable the best effort is returned with ``warning`` set.
    """
    if not (0.0 <= fraction <= 0.9):
        raise ValueError("fraction must be within [0, 0.9]")
    mesh = pair.shape
    if fraction == 0.0:
        return pair
    rng = np.random.default_rng(seed)

    allowed = None
    if localized:
        patch = _geodesic_patch(mesh, rng.integers(mesh.num_vertices), 0.20)
        allowed = patch

    nv = mesh.num_vertices
    faces = {i: tuple(t) for i, t in enumerate(mesh.triangles)}
    vertex_faces = [set() for _ in range(nv)]
    for fid, tri in faces.items():
        for vv in tri:
            vertex_faces[vv].add(fid)
    Q = _vertex_quadrics(mesh)
    pos = np.concatenate([mesh.vertices, np.ones((nv, 1))], axis=1)  # homogeneous
    parent = np.arange(nv)
    version = np.zeros(nv, dtype=np.int64)
    alive = np.ones(nv, dtype=bool)

    def cost(u, v):
        q = Q[u] + Q[v]
        x = pos[v]
        return float(x @ q @ x)

    heap = []
    for i, j in mesh.edges:
        i, j = int(i), int(j)
        heapq.heappush(heap, (cost(i, j), i, j, version[i] + version[j]))
        heapq.heappush(heap, (cost(j, i), j, i, version[i] + version[j]))

    def neighbors(u):
        out = set()
        for fid in vertex_faces[u]:
            out.update(faces[fid])
        out.discard(u)
        return out

    target_collapses = int(round(fraction * len(faces) / 2.0))
    collapses = 0
    while heap and collapses < target_collapses and len(faces) > 4:
        c, u, v, stamp = heapq.heappop(heap)
        if not (alive[u] and alive[v]) or stamp != version[u] + version[v]:
            continue
        if allowed is not None and (u not in allowed or v not in allowed):
            continue
        shared = vertex_faces[u] & vertex_faces[v]
        if len(shared) != 2:
            continue
        opposite = set()
        for fid in shared:
            opposite.update(faces[fid])
        opposite -= {u, v}
        if neighbors(u) & neighbors(v) != opposite:
            continue  # link condition: collapse would pinch the surface
        # perform collapse u -> v
        for fid in shared:
            for vv in faces[fid]:
                vertex_faces[vv].discard(fid)
            del faces[fid]
        for fid in list(vertex_faces[u]):
            tri = tuple(v if vv == u else vv for vv in faces[fid])
            faces[fid] = tri
            vertex_faces[u].discard(fid)
            vertex_faces[v].add(fid)
        alive[u] = False
        parent[u] = v
        Q[v] = Q[v] + Q[u]
        version[v] += 1
        collapses += 1
        for w in neighbors(v):
            w = int(w)
            heapq.heappush(heap, (cost(w, v), w, v, version[w] + version[v]))
            heapq.heappush(heap, (cost(v, w), v, w, version[w] + version[v]))
    warning = collapses < target_collapses

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    used = sorted({vv for tri in faces.values() for vv in tri})
    new_index = {old: new for new, old in enumerate(used)}
    new_verts = mesh.vertices[used]
    new_faces = np.array(
        [[new_index[a], new_index[b], new_index[c]] for a, b, c in faces.values()],
        dtype=np.int64,
    )
    out_mesh = Mesh(new_verts, new_faces).normalized()
    to_template = PointMap(pair.gt_map_to_template.targets[used])
    from_template = PointMap(
        np.array(
            [new_index[find(int(old))] for old in pair.gt_map_from_template.targets],
            dtype=np.int64,
        )
    )
    return GroundTruthPair(out_mesh, to_template, from_template,
                           warning=warning or pair.warning)


# ---------------------------------------------------------------------------
# dataset generation


def make_shape(template, deform_basis, index, seed, config):
    """One deterministic synthetic shape for a dataset index."""
    rng = np.random.default_rng([seed, index])
    pair = deform(template, deform_basis, rng.integers(2**31), config)
    lo, hi = config.decimate_fraction_range
    fraction = float(rng.uniform(lo, hi))
    if fraction > 0:
        localized = bool(rng.random() < config.aniso_probability)
        pair = decimate_tracked(pair, fraction, localized, int(rng.integers(2**31)))
    return pair


def config_hash(config, n, seed, count):
    payload = json.dumps(
        {
            "deform_modes": config.deform_modes,
            "amplitude": config.amplitude,
            "decimate_fraction_range": list(config.decimate_fraction_range),
            "aniso_probability": config.aniso_probability,
            "n": n,
            "seed": seed,
            "count": count,
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def gen_fmap_dataset(N, template, sign_params, n, seed, config, out_dir,
                     shard_size=64, log=None):
    """Generate N shapes and write (template-wise map, conditioning) shards.

    Per shape: deform (+ tracked decimation), eigenbasis, sign correction,
    functional map to the sign-corrected template basis, conditioning matrix.
    Resumes from the last complete shard when the manifest matches; a
    mismatched manifest raises ConfigurationError.  Returns the manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(config, n, seed, N)
    manifest_path = os.path.join(out_dir, "manifest.json")
    manifest = {
        "seed": seed, "n": n, "requested": N, "config_hash": chash,
        "completed": 0, "skipped": [], "shards": [],
    }
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            existing = json.load(fh)
        if existing.get("config_hash") != chash:
            raise ConfigurationError(
                "existing dataset manifest does not match this configuration; "
                "refusing to resume"
            )
        manifest = existing
        if manifest["completed"] >= N:
            return manifest

    L_t = cotan_laplacian(template)
    A_t = vertex_area_matrix(template)
    deform_basis = eigenbasis(L_t, A_t, max(config.deform_modes + 1, 16),
                              seed=0, mesh_id="template-deform")
    template_basis = eigenbasis(L_t, A_t, n, seed=0, mesh_id="template")
    sigma_t = extract_features(sign_params, template, template_basis)
    template_hat, _ = correct_signs(sigma_t, template_basis)
    grouping = group_assignment(n)

    start = manifest["completed"] + len(manifest["skipped"])
    records = []
    for i in range(start, N):
        try:
            pair = make_shape(template, deform_basis, i, seed, config)
            L = cotan_laplacian(pair.shape)
            A = vertex_area_matrix(pair.shape)
            basis = eigenbasis(L, A, n, seed=i + 1, mesh_id=f"shape-{i:06d}")
            sigma = extract_features(sign_params, pair.shape, basis)
            basis_hat, _ = correct_signs(sigma, basis, grouping)
            C = fmap_from_pointmap(pair.gt_map_from_template, basis_hat, template_hat)
            y = diffusion.build_conditioning(sigma, basis.area, basis_hat, grouping)
            records.append((C.matrix, y))
            manifest["completed"] += 1
        except Exception as exc:  # noqa: BLE001 - failed shapes are skipped by contract
            manifest["skipped"].append({"index": i, "error": str(exc)})
            if log is not None:
                log(f"shape {i} skipped: {exc}")
        if len(records) >= shard_size or (i == N - 1 and records):
            name = f"shard_{len(manifest['shards']):05d}.bin"
            diffusion.write_shard(os.path.join(out_dir, name), records)
            manifest["shards"].append({"name": name, "count": len(records)})
            records = []
            with open(manifest_path, "w") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset(shard_dir):
    """All (C, y) records from a shard directory, in manifest order."""
    with open(os.path.join(shard_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    records = []
    for entry in manifest["shards"]:
        records.extend(diffusion.read_shard(os.path.join(shard_dir, entry["name"])))
    return records, manifest
