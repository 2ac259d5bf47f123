"""Planar triangulation meshes for SPDE random fields.

The mesh covers the study polygon with a fine triangulation and an outer
extension band with coarser triangles.  Neumann conditions on the outer
boundary then inflate variance only in the band, away from the data.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.spatial import Delaunay, cKDTree
import shapely
from shapely.geometry import LineString, MultiPoint, Polygon

from ..errors import MeshError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Mesh2D:
    nodes: np.ndarray        # (n, 2)
    triangles: np.ndarray    # (t, 3) counter-clockwise
    interior: np.ndarray     # (n,) bool, node inside the study polygon

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tri = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshError("nodes must have shape (n, 2)")
        if tri.ndim != 2 or tri.shape[1] != 3 or len(tri) == 0:
            raise MeshError("triangles must have shape (t, 3) with t >= 1")
        if tri.min() < 0 or tri.max() >= len(nodes):
            raise MeshError("triangle index out of range")
        area = _signed_areas(nodes, tri)
        flip = area < 0
        if np.any(flip):
            tri = tri.copy()
            tri[flip] = tri[flip][:, [0, 2, 1]]
            area = np.abs(area)
        if np.any(area <= 1e-14 * max(1.0, np.ptp(nodes) ** 2)):
            raise MeshError("mesh contains degenerate triangles")
        for a in (nodes, tri):
            a.flags.writeable = False
        interior = np.array(self.interior, dtype=bool)
        interior.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tri)
        object.__setattr__(self, "interior", interior)
        if not _edge_connected(tri, len(nodes)):
            raise MeshError("mesh is not edge-connected")

    @property
    def n_nodes(self):
        return len(self.nodes)

    def areas(self):
        return np.abs(_signed_areas(self.nodes, self.triangles))

    def edges(self):
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def edge_lengths(self):
        e = self.edges()
        return np.linalg.norm(self.nodes[e[:, 0]] - self.nodes[e[:, 1]], axis=1)

    def bbox(self):
        return self.nodes.min(axis=0), self.nodes.max(axis=0)

    def diameter(self):
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def save(self, directory):
        """Write ``nodes.csv`` and ``triangles.csv`` into ``directory``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        with (d / "nodes.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node_id", "x_km", "y_km", "interior"])
            for i, (x, y) in enumerate(self.nodes):
                w.writerow([i, repr(float(x)), repr(float(y)), int(self.interior[i])])
        with (d / "triangles.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_id", "n1", "n2", "n3"])
            for i, (a, b, c) in enumerate(self.triangles):
                w.writerow([i, int(a), int(b), int(c)])

    @classmethod
    def load(cls, directory):
        d = Path(directory)
        nodes, interior = [], []
        with (d / "nodes.csv").open(newline="") as fh:
            for row in csv.DictReader(fh):
                nodes.append((float(row["x_km"]), float(row["y_km"])))
                interior.append(bool(int(row["interior"])))
        with (d / "triangles.csv").open(newline="") as fh:
            tri = [(int(r["n1"]), int(r["n2"]), int(r["n3"])) for r in csv.DictReader(fh)]
        return cls(np.array(nodes), np.array(tri), np.array(interior))


def _signed_areas(nodes, tri):
    p0, p1, p2 = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


def _edge_connected(tri, n):
    # triangles sharing an edge are adjacent
    t = len(tri)
    e = np.vstack([np.sort(tri[:, [0, 1]], 1), np.sort(tri[:, [1, 2]], 1), np.sort(tri[:, [2, 0]], 1)])
    owner = np.tile(np.arange(t), 3)
    key = e[:, 0] * n + e[:, 1]
    order = np.argsort(key, kind="stable")
    key, owner = key[order], owner[order]
    same = key[1:] == key[:-1]
    a, b = owner[:-1][same], owner[1:][same]
    g = sp.coo_matrix((np.ones(len(a)), (a, b)), shape=(t, t))
    ncomp, _ = connected_components(g, directed=False)
    used = np.zeros(n, dtype=bool)
    used[tri.ravel()] = True
    return ncomp == 1 and used.all()


def _resample_ring(coords, h):
    """Points along a closed ring with spacing at most ``h``."""
    coords = np.asarray(coords)[:-1]
    out = []
    for a, b in zip(coords, np.roll(coords, -1, axis=0)):
        L = np.linalg.norm(b - a)
        k = max(1, int(np.ceil(L / h - 1e-9)))
        for j in range(k):
            out.append(a + (b - a) * j / k)
    return np.array(out)


def _lattice(poly, h, keep_off):
    """Triangular lattice of spacing ``h`` inside ``poly``, at least
    ``keep_off`` away from every line in the list."""
    minx, miny, maxx, maxy = poly.bounds
    dy = h * np.sqrt(3) / 2
    ys = np.arange(miny + dy / 2, maxy, dy)
    pts = []
    for j, y in enumerate(ys):
        shift = 0.5 * h if j % 2 else 0.0
        xs = np.arange(minx + shift + h / 2, maxx, h)
        pts.append(np.column_stack([xs, np.full(len(xs), y)]))
    if not pts:
        return np.zeros((0, 2))
    pts = np.vstack(pts)
    shapely.prepare(poly)
    pts = pts[shapely.contains_xy(poly, pts[:, 0], pts[:, 1])]
    for line, dmin in keep_off:
        if len(pts) == 0:
            break
        d = shapely.distance(line, shapely.points(pts))
        pts = pts[d >= dmin]
    return pts


def build_mesh_2d(boundary, max_edge_interior, max_edge_exterior, extension, max_nodes=200_000):
    """Triangulate a study polygon plus an extension band.

    Parameters
    ----------
    boundary : (k, 2) array_like or shapely Polygon
        Vertices of a simple polygon (not closed).
    max_edge_interior, max_edge_exterior : float
        Target maximum edge length inside the polygon and in the band.
        Triangles inside the polygon are refined until every edge respects
        ``max_edge_interior``.
    extension : float
        Width of the band (mitred offset, so a square stays a square).

    Returns
    -------
    Mesh2D
    """
    h_in, h_out, ext = float(max_edge_interior), float(max_edge_exterior), float(extension)
    if not (h_in > 0 and h_out > 0 and ext >= 0):
        raise MeshError("edge lengths must be positive and extension non-negative")
    if isinstance(boundary, Polygon):
        boundary = np.asarray(boundary.exterior.coords)[:-1]
    pts = np.asarray(boundary, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise MeshError("boundary must contain at least three planar points")
    poly = Polygon(pts)
    if poly.area <= 0:
        raise MeshError("boundary polygon has zero area")
    if not poly.is_valid or not LineString(np.vstack([pts, pts[:1]])).is_simple:
        raise MeshError("boundary polygon is self-intersecting")
    poly = poly.buffer(0)
    outer = poly.buffer(ext, join_style="mitre", mitre_limit=10.0) if ext > 0 else poly
    approx = (outer.area / (h_in ** 2 * 0.43) if ext == 0 else
              poly.area / (h_in ** 2 * 0.43) + (outer.area - poly.area) / (h_out ** 2 * 0.43))
    if approx > max_nodes:
        raise MeshError(f"edge constraints infeasible: about {int(approx)} nodes needed, "
                        f"limit {max_nodes}")

    # seed below the bound so lattice/boundary junction edges rarely exceed it
    s_in = 0.8 * h_in
    ring_in = _resample_ring(np.array(poly.exterior.coords), s_in)
    parts = [ring_in, _lattice(poly, s_in, [(poly.exterior, 0.5 * s_in)])]
    if ext > 0:
        ring_out = _resample_ring(np.array(outer.exterior.coords), h_out)
        band = outer.difference(poly)
        parts += [ring_out, _lattice(band, h_out, [(poly.exterior, 0.6 * h_out),
                                                   (outer.exterior, 0.5 * h_out)])]
    nodes = _dedupe(np.vstack(parts), 1e-9 * max(1.0, h_in))

    prep_outer = outer.buffer(1e-9 * h_in)
    prep_poly = poly.buffer(1e-9 * h_in)
    shapely.prepare(prep_outer)
    shapely.prepare(prep_poly)
    for _ in range(60):
        tri = _triangulate(nodes, prep_outer)
        cent = nodes[tri].mean(axis=1)
        inside = shapely.contains_xy(prep_poly, cent[:, 0], cent[:, 1])
        p = nodes[tri]
        lens = np.stack([np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                         np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                         np.linalg.norm(p[:, 0] - p[:, 2], axis=1)], axis=1)
        too_long = inside & (lens.max(axis=1) > h_in * (1 + 1e-9))
        log.debug("refine: %d long interior triangles, %d nodes", too_long.sum(), len(nodes))
        if not np.any(too_long):
            break
        j = np.argmax(lens[too_long], axis=1)
        t = tri[too_long]
        a = t[np.arange(len(t)), j]
        b = t[np.arange(len(t)), (j + 1) % 3]
        mids = 0.5 * (nodes[a] + nodes[b])
        nodes = _dedupe(np.vstack([nodes, mids]), 1e-9 * h_in)
        if len(nodes) > max_nodes:
            raise MeshError("edge constraints infeasible: node limit exceeded during refinement")
    else:
        raise MeshError("interior refinement did not converge")

    interior = shapely.contains_xy(prep_poly, nodes[:, 0], nodes[:, 1])
    used = np.unique(tri)
    remap = -np.ones(len(nodes), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return Mesh2D(nodes[used], remap[tri], interior[used])


def _dedupe(pts, tol):
    tree = cKDTree(pts)
    pairs = tree.query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        return pts
    drop = np.zeros(len(pts), dtype=bool)
    drop[pairs.max(axis=1)] = True
    return pts[~drop]


def _triangulate(nodes, prep_outer):
    dt = Delaunay(nodes)
    tri = dt.simplices
    cent = nodes[tri].mean(axis=1)
    keep = shapely.contains_xy(prep_outer, cent[:, 0], cent[:, 1])
    tri = tri[keep]
    area = np.abs(_signed_areas(nodes, tri))
    scale = np.ptp(nodes) ** 2
    return tri[area > 1e-12 * scale]


def grid_mesh(xs, ys, interior=None):
    """Structured triangulation of a rectangular lattice (two triangles per
    lattice square).  Handy for tests and for synthetic domains."""
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    nx = len(xs)
    tri = []
    for j in range(len(ys) - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b, c, d = a + 1, a + nx, a + nx + 1
            tri.append((a, b, d))
            tri.append((a, d, c))
    if interior is None:
        interior = np.ones(len(nodes), dtype=bool)
    return Mesh2D(nodes, np.array(tri), interior)


def convex_hull_polygon(points):
    hull = MultiPoint([tuple(p) for p in np.asarray(points, float)]).convex_hull
    if hull.geom_type != "Polygon":
        raise MeshError("points do not span a two-dimensional region")
    return np.array(hull.exterior.coords)[:-1]
