"""Synthetic meshes, fields and oracles shared across the test suite."""

import numpy as np
from scipy.spatial import ConvexHull

from elsa import TriangleMesh
from elsa.mesh import mesh_edges


def icosahedron(radius=0.5):
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=float,
    )
    verts *= radius / np.linalg.norm(verts[0])
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return TriangleMesh(verts, faces)


def subdivide_midpoint(mesh, project_radius=None):
    """One 4-to-1 midpoint subdivision; optionally reproject to a sphere."""
    verts = [tuple(v) for v in mesh.vertices]
    vert_list = list(mesh.vertices)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            cache[key] = len(vert_list)
            vert_list.append(0.5 * (vert_list[i] + vert_list[j]))
        return cache[key]

    faces = []
    for a, b, c in mesh.faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        faces.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]])
    verts = np.array(vert_list)
    if project_radius is not None:
        verts = verts * (project_radius / np.linalg.norm(verts, axis=1))[:, None]
    return TriangleMesh(verts, np.array(faces))


def icosphere(subdivisions=2, radius=0.5):
    mesh = icosahedron(radius)
    for _ in range(subdivisions):
        mesh = subdivide_midpoint(mesh, project_radius=radius)
    return mesh


def uv_sphere(n_lat=10, n_lon=20, radius=0.5):
    """Latitude/longitude tessellation; a genuinely different sphere remesh."""
    verts = [np.array([0.0, 0.0, radius]), np.array([0.0, 0.0, -radius])]
    rings = []
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        ring = []
        for j in range(n_lon):
            phi = 2.0 * np.pi * j / n_lon
            ring.append(len(verts))
            verts.append(
                radius
                * np.array(
                    [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)]
                )
            )
        rings.append(ring)
    faces = []
    for j in range(n_lon):
        jn = (j + 1) % n_lon
        faces.append([0, rings[0][j], rings[0][jn]])
        faces.append([1, rings[-1][jn], rings[-1][j]])
    for i in range(len(rings) - 1):
        for j in range(n_lon):
            jn = (j + 1) % n_lon
            a, b = rings[i][j], rings[i][jn]
            c, d = rings[i + 1][j], rings[i + 1][jn]
            faces.append([a, c, b])
            faces.append([b, c, d])
    return TriangleMesh(np.array(verts), np.array(faces))


def scale_vertices(mesh, sx, sy, sz):
    return mesh.with_vertices(mesh.vertices * np.array([sx, sy, sz]))


def twist_vertices(vertices, angle):
    """Twist about the z-axis, rotation angle proportional to height."""
    x, y, z = vertices[:, 0], vertices[:, 1], vertices[:, 2]
    phi = angle * z
    return np.stack([x * np.cos(phi) - y * np.sin(phi), x * np.sin(phi) + y * np.cos(phi), z], axis=1)


def grid_mesh(nx=5, ny=5, spacing=1.0):
    """Planar regular triangulated grid in the z=0 plane."""
    xs, ys = np.meshgrid(np.arange(nx) * spacing, np.arange(ny) * spacing, indexing="ij")
    verts = np.stack([xs.ravel(), ys.ravel(), np.zeros(nx * ny)], axis=1)
    faces = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a = i * ny + j
            b = (i + 1) * ny + j
            faces.append([a, b, a + 1])
            faces.append([b, b + 1, a + 1])
    return TriangleMesh(verts, np.array(faces))


def random_convex_mesh(n_vertices=200, radius=0.5, seed=0):
    """Convex triangulated surface with exactly n_vertices, oriented outward."""
    rng = np.random.default_rng(seed)
    pts = rng.standard_normal((n_vertices, 3))
    pts *= radius / np.linalg.norm(pts, axis=1)[:, None]
    hull = ConvexHull(pts)
    faces = hull.simplices.copy()
    v0, v1, v2 = pts[faces[:, 0]], pts[faces[:, 1]], pts[faces[:, 2]]
    normals = np.cross(v1 - v0, v2 - v0)
    centers = (v0 + v1 + v2) / 3.0
    flip = np.einsum("ij,ij->i", normals, centers) < 0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    return TriangleMesh(pts, faces)


def bumpy_mesh(n_vertices=200, radius=0.5, seed=0, bump=0.1):
    """Non-convex star-shaped mesh: convex topology with radial noise."""
    base = random_convex_mesh(n_vertices, radius, seed)
    rng = np.random.default_rng(seed + 1)
    scale = 1.0 + bump * rng.uniform(-1.0, 1.0, base.n_vertices)
    return base.with_vertices(base.vertices * scale[:, None])


def random_field(mesh, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal((mesh.n_vertices, 3))


def permute_mesh(mesh, seed=0):
    """Vertex-permuted and face-shuffled copy; returns (mesh, permutation)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(mesh.n_vertices)
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(mesh.n_vertices)
    faces = inverse[mesh.faces]
    faces = faces[rng.permutation(mesh.n_faces)]
    return TriangleMesh(mesh.vertices[perm], faces), perm


def flip_edges(mesh, count=5, seed=0):
    """Flip random interior edges: (i,j,k)+(j,i,l) becomes (i,l,k)+(l,j,k).

    Keeps orientation consistency and skips flips that would create
    duplicate edges or degenerate faces.
    """
    rng = np.random.default_rng(seed)
    faces = mesh.faces.copy()
    flipped = 0
    attempts = 0
    while flipped < count and attempts < 100 * count:
        attempts += 1
        dir_edge = {}
        for fi, f in enumerate(faces):
            for t in range(3):
                dir_edge[(f[t], f[(t + 1) % 3])] = fi
        fi = int(rng.integers(len(faces)))
        t = int(rng.integers(3))
        f = faces[fi]
        i, j, k = int(f[t]), int(f[(t + 1) % 3]), int(f[(t + 2) % 3])
        fj = dir_edge.get((j, i))
        if fj is None or fj == fi:
            continue
        g = faces[fj]
        pos = int(np.flatnonzero(g == j)[0])
        if g[(pos + 1) % 3] != i:
            continue
        l = int(g[(pos + 2) % 3])
        if l == k or (k, l) in dir_edge or (l, k) in dir_edge:
            continue
        trial = faces.copy()
        trial[fi] = [i, l, k]
        trial[fj] = [l, j, k]
        try:
            TriangleMesh(mesh.vertices, trial)
        except Exception:
            continue
        faces = trial
        flipped += 1
    return TriangleMesh(mesh.vertices, faces)


def translation_basis(template):
    """Three constant fields along the coordinate axes."""
    from elsa import LatentBasis

    n = template.n_vertices
    fields = np.zeros((3, n, 3))
    for k in range(3):
        fields[k, :, k] = 1.0
    return LatentBasis(template=template, fields=fields, n_shape=1, n_pose=2)


def random_basis(template, n_shape=3, n_pose=5, seed=0, scale=0.05):
    """Smooth-ish random deformation fields on a template."""
    from elsa import LatentBasis

    rng = np.random.default_rng(seed)
    n = template.n_vertices
    p = n_shape + n_pose
    fields = np.empty((p, n, 3))
    v = template.vertices
    for i in range(p):
        freq = rng.uniform(1.0, 3.0, 3)
        phase = rng.uniform(0, 2 * np.pi, 3)
        amp = rng.standard_normal((3, 3))
        fields[i] = scale * (np.sin(v * freq + phase) @ amp)
    return LatentBasis(template=template, fields=fields, n_shape=n_shape, n_pose=n_pose)


def rigid_motion(seed=0):
    """A random rotation matrix and translation vector."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q, rng.standard_normal(3)


def fd_gradient(fun, x, eps=1e-6):
    """Central-difference gradient of a scalar function, full coordinate loop."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        g.flat[i] = (fun(xp) - fun(xm)) / (2.0 * eps)
    return g


def fd_directional(fun, x, d, eps=1e-6):
    """Central-difference directional derivative of a scalar function."""
    return (fun(x + eps * d) - fun(x - eps * d)) / (2.0 * eps)


def mean_triangle_diameter(mesh):
    """Mean over faces of the longest edge."""
    v0 = mesh.vertices[mesh.faces[:, 0]]
    v1 = mesh.vertices[mesh.faces[:, 1]]
    v2 = mesh.vertices[mesh.faces[:, 2]]
    lengths = np.stack(
        [
            np.linalg.norm(v1 - v0, axis=1),
            np.linalg.norm(v2 - v1, axis=1),
            np.linalg.norm(v0 - v2, axis=1),
        ]
    )
    return float(lengths.max(axis=0).mean())


def interior_vertices(grid, nx=5, ny=5):
    """Index mask of interior vertices of a grid_mesh."""
    idx = np.arange(nx * ny).reshape(nx, ny)
    return idx[1:-1, 1:-1].ravel()


def count_boundary_edges(mesh):
    edge_count = {}
    for a, b, c in mesh.faces:
        for u, v in ((a, b), (b, c), (c, a)):
            key = (min(u, v), max(u, v))
            edge_count[key] = edge_count.get(key, 0) + 1
    return sum(1 for v in edge_count.values() if v == 1), len(mesh_edges(mesh))
