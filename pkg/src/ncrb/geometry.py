"""Thermal fin geometry: a central post with horizontal subfins, meshed on a
uniform grid of right triangles.

Region tags: 0 is the post, ``i`` is subfin ``i`` (counted from the root).
Boundary tags: ``ROOT`` for the bottom of the post, ``EXT`` for everything
else.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

ROOT = 0
EXT = 1
EDGE_TAG_NAMES = {ROOT: "root", EXT: "ext"}
_EDGE_TAG_CODES = {v: k for k, v in EDGE_TAG_NAMES.items()}


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class FinShape:
    n_fins: int
    post_half_width: float = 0.5
    subfin_half_span: float = 3.0
    subfin_thickness: float = 0.25
    period: float = 1.0
    refinement: int = 1

    @property
    def h(self) -> float:
        return self.subfin_thickness / self.refinement

    def grid_units(self) -> dict[str, int]:
        """Every characteristic length expressed as an integer number of grid pitches."""
        h = self.h
        out = {}
        for name in ("post_half_width", "subfin_half_span", "subfin_thickness", "period"):
            value = getattr(self, name) / h
            rounded = int(round(value))
            if abs(value - rounded) > 1e-9 * max(1.0, abs(value)):
                raise MeshError(f"{name}={getattr(self, name)} is not a multiple of h={h}")
            out[name] = rounded
        return out

    def validate(self) -> None:
        if int(self.n_fins) != self.n_fins or self.n_fins < 1:
            raise MeshError("n_fins must be a positive integer")
        if int(self.refinement) != self.refinement or self.refinement < 1:
            raise MeshError("refinement must be a positive integer")
        lengths = (self.post_half_width, self.subfin_half_span, self.subfin_thickness, self.period)
        if min(lengths) <= 0:
            raise MeshError("all lengths must be positive")
        if not self.subfin_thickness < self.period:
            raise MeshError("subfin_thickness must be smaller than period")
        if not self.post_half_width < self.subfin_half_span:
            raise MeshError("post_half_width must be smaller than subfin_half_span")
        self.grid_units()

    def union_area(self) -> float:
        post = 2 * self.post_half_width * self.n_fins * self.period
        fins = self.n_fins * 2 * self.subfin_half_span * self.subfin_thickness
        overlap = self.n_fins * 2 * self.post_half_width * self.subfin_thickness
        return post + fins - overlap


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray  # (n_nodes, 2) float
    triangles: np.ndarray  # (n_tri, 3) int, counterclockwise
    regions: np.ndarray  # (n_tri,) int in 0..n_fins
    edges: np.ndarray  # (n_edges, 2) int
    edge_tags: np.ndarray  # (n_edges,) ROOT or EXT
    n_fins: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def edge_lengths(self) -> np.ndarray:
        d = self.nodes[self.edges[:, 1]] - self.nodes[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def content_hash(self) -> str:
        sha = hashlib.sha256()
        for arr in (self.nodes, self.triangles, self.regions, self.edges, self.edge_tags):
            sha.update(np.ascontiguousarray(arr).tobytes())
        return sha.hexdigest()[:16]

    def validate(self) -> None:
        """Raise :class:`MeshError` if any structural invariant fails."""
        n = self.n_nodes
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise MeshError("triangle references a missing node")
        if self.edges.size and (self.edges.min() < 0 or self.edges.max() >= n):
            raise MeshError("edge references a missing node")
        if np.any(self.signed_areas() <= 0):
            raise MeshError("non-positive triangle area")
        if np.any((self.regions < 0) | (self.regions > self.n_fins)):
            raise MeshError("untagged or out-of-range triangle region")
        if np.any((self.edge_tags != ROOT) & (self.edge_tags != EXT)):
            raise MeshError("untagged boundary edge")
        counts = _edge_counts(self.triangles)
        if np.any(counts[1] > 2):
            raise MeshError("edge shared by more than two triangles")
        boundary = {tuple(e) for e in counts[0][counts[1] == 1]}
        tagged = {tuple(sorted(e)) for e in self.edges.tolist()}
        if boundary != tagged or len(tagged) != len(self.edges):
            raise MeshError("boundary edges do not match the triangulation")


def _edge_counts(triangles: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    all_edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    all_edges.sort(axis=1)
    return np.unique(all_edges, axis=0, return_counts=True)


def _cell_regions(shape: FinShape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Integer cell origins (ix, iy) and their region tags."""
    u = shape.grid_units()
    pw, span, t, per = u["post_half_width"], u["subfin_half_span"], u["subfin_thickness"], u["period"]
    top = shape.n_fins * per
    ix, iy = np.meshgrid(np.arange(-span, span), np.arange(0, top), indexing="xy")
    ix, iy = ix.ravel(), iy.ravel()
    region = np.full(ix.shape, -1, dtype=np.int64)
    in_post = (ix >= -pw) & (ix < pw)
    region[in_post] = 0
    for i in range(1, shape.n_fins + 1):
        band = (iy >= i * per - t) & (iy < i * per)
        region[band] = i
    keep = region >= 0
    return ix[keep], iy[keep], region[keep]


def build_fin_mesh(shape: FinShape) -> Mesh:
    shape.validate()
    h = shape.h
    cx, cy, region = _cell_regions(shape)
    corners_x = np.stack([cx, cx + 1, cx + 1, cx], axis=1)
    corners_y = np.stack([cy, cy, cy + 1, cy + 1], axis=1)
    # node numbering: sorted by (y, x)
    pts = np.stack([corners_y.ravel(), corners_x.ravel()], axis=1)
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1, 4)
    nodes = np.stack([uniq[:, 1] * h, uniq[:, 0] * h], axis=1).astype(np.float64)
    # split every cell along its (lower-left, upper-right) diagonal
    tri = np.stack([inverse[:, [0, 1, 2]], inverse[:, [0, 2, 3]]], axis=1).reshape(-1, 3).astype(np.int64)
    reg = np.repeat(region, 2).astype(np.int64)

    edges, counts = _edge_counts(tri)
    edges = edges[counts == 1].astype(np.int64)
    ey = nodes[edges, 1]
    ex = nodes[edges, 0]
    on_root = np.all(np.abs(ey) < 1e-9 * h, axis=1) & np.all(
        np.abs(ex) <= shape.post_half_width + 1e-9 * h, axis=1
    )
    tags = np.where(on_root, ROOT, EXT).astype(np.int64)
    mesh = Mesh(nodes=nodes, triangles=tri, regions=reg, edges=edges, edge_tags=tags, n_fins=shape.n_fins)
    return mesh


def mesh_statistics(mesh: Mesh) -> dict:
    areas = mesh.signed_areas()
    region_areas = np.bincount(mesh.regions, weights=areas, minlength=mesh.n_fins + 1)
    lengths = mesh.edge_lengths()
    return {
        "n_nodes": int(mesh.n_nodes),
        "n_triangles": int(len(mesh.triangles)),
        "region_areas": region_areas.tolist(),
        "total_area": float(areas.sum()),
        "root_length": float(lengths[mesh.edge_tags == ROOT].sum()),
        "ext_length": float(lengths[mesh.edge_tags == EXT].sum()),
    }


def write_mesh(mesh: Mesh, path) -> None:
    lines = ["NCRBMESH 1", f"NODES {mesh.n_nodes}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes]
    lines.append(f"TRIANGLES {len(mesh.triangles)}")
    lines += [f"{i} {j} {k} {r}" for (i, j, k), r in zip(mesh.triangles.tolist(), mesh.regions.tolist())]
    lines.append(f"EDGES {len(mesh.edges)}")
    lines += [f"{i} {j} {EDGE_TAG_NAMES[t]}" for (i, j), t in zip(mesh.edges.tolist(), mesh.edge_tags.tolist())]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if lines[0] != "NCRBMESH 1":
        raise MeshError(f"{path}: bad header {lines[0]!r}")
    pos = 1

    def section(name):
        nonlocal pos
        key, count = lines[pos].split()
        if key != name:
            raise MeshError(f"{path}: expected {name}, found {key}")
        rows = [ln.split() for ln in lines[pos + 1 : pos + 1 + int(count)]]
        pos += 1 + int(count)
        return rows

    nodes = np.array(section("NODES"), dtype=np.float64).reshape(-1, 2)
    tris = np.array(section("TRIANGLES"), dtype=np.int64).reshape(-1, 4)
    edge_rows = section("EDGES")
    edges = np.array([[int(a), int(b)] for a, b, _ in edge_rows], dtype=np.int64).reshape(-1, 2)
    try:
        tags = np.array([_EDGE_TAG_CODES[t] for _, _, t in edge_rows], dtype=np.int64)
    except KeyError as exc:
        raise MeshError(f"{path}: unknown edge tag {exc}") from None
    n_fins = int(tris[:, 3].max()) if len(tris) else 0
    mesh = Mesh(nodes, tris[:, :3].copy(), tris[:, 3].copy(), edges, tags, n_fins)
    mesh.validate()
    return mesh
