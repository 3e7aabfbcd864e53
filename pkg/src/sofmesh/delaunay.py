"""Incremental Delaunay tetrahedralization (Bowyer-Watson).

The hull is closed with ghost tetrahedra that share one vertex at infinity, so
every insertion is a cavity retriangulation.  Orientation and in-sphere tests
use a floating-point filter with an exact integer fallback, and cospherical or
coplanar ties are broken by symbolic perturbation over the lexicographic order
of the points.  The result is therefore a valid Delaunay tetrahedralization
even for point sets with many cospherical quintuples (such as box corners).
"""

from __future__ import annotations

import random
from fractions import Fraction
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

GHOST = -1

_ORIENT_ERR = 1e-14
_INSPHERE_ERR = 1e-13


class CoplanarInputError(ValueError):
    pass


@dataclass
class TetGrid:
    vertices: np.ndarray  # (V, 3)
    tetrahedra: np.ndarray  # (T, 4) positively oriented
    opacity: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.tetrahedra)

    def edges(self) -> np.ndarray:
        """Unique sorted vertex pairs of all tetrahedron edges."""
        t = self.tetrahedra
        pairs = np.concatenate([t[:, [i, j]] for i, j in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))])
        pairs.sort(axis=1)
        return np.unique(pairs, axis=0)


# ---------------------------------------------------------------------------
# predicates


def _to_ints(*pts):
    """Scale float coordinates to a common power-of-two integer grid (exact)."""
    ratios = [[float(v).as_integer_ratio() for v in p] for p in pts]
    den = max(d for r in ratios for _, d in r)
    return [[n * (den // d) for n, d in r] for r in ratios]


def _det3(a, b, c):
    return (a[0] * (b[1] * c[2] - b[2] * c[1])
            - a[1] * (b[0] * c[2] - b[2] * c[0])
            + a[2] * (b[0] * c[1] - b[1] * c[0]))


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def orient(a, b, c, d) -> int:
    """Sign of ``det[b - a, c - a, d - a]``; positive when ``d`` lies above ``abc`` (counterclockwise)."""
    bx, by, bz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    cx, cy, cz = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    dx, dy, dz = d[0] - a[0], d[1] - a[1], d[2] - a[2]
    m1 = cy * dz - cz * dy
    m2 = cx * dz - cz * dx
    m3 = cx * dy - cy * dx
    det = bx * m1 - by * m2 + bz * m3
    perm = (abs(bx) * (abs(cy * dz) + abs(cz * dy)) + abs(by) * (abs(cx * dz) + abs(cz * dx))
            + abs(bz) * (abs(cx * dy) + abs(cy * dx)))
    if abs(det) > _ORIENT_ERR * perm:
        return 1 if det > 0 else -1
    ia, ib, ic, id_ = _to_ints(a, b, c, d)
    rows = [[q[k] - ia[k] for k in range(3)] for q in (ib, ic, id_)]
    return _sign(_det3(*rows))


def _insphere_rows(a, pts):
    rows = []
    for q in pts:
        d = [q[k] - a[k] for k in range(3)]
        rows.append(d + [d[0] * d[0] + d[1] * d[1] + d[2] * d[2]])
    return rows


def _det4(m) -> float:
    a, b, c, d = m
    s = 0
    for j in range(4):
        minor = [[r[k] for k in range(4) if k != j] for r in (b, c, d)]
        term = a[j] * _det3(*minor)
        s = s + term if j % 2 == 0 else s - term
    return s


def insphere(a, b, c, d, e) -> int:
    """Positive when ``e`` is inside the sphere through a positively oriented ``abcd``."""
    rows = _insphere_rows(a, (b, c, d, e))
    det = _det4(rows)
    perm = 0.0
    for r in rows:
        perm += sum(abs(v) for v in r)
    perm = perm**4 / 8.0
    if abs(det) > _INSPHERE_ERR * perm:
        return -1 if det > 0 else 1
    ints = _to_ints(a, b, c, d, e)
    return -_sign(_det4(_insphere_rows(ints[0], ints[1:])))


def _normal_exact(a, b, c):
    ia, ib, ic = _to_ints(a, b, c)
    u = [ib[k] - ia[k] for k in range(3)]
    v = [ic[k] - ia[k] for k in range(3)]
    return ia, [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]


def _coplanar_orient(p, q, r, normal) -> int:
    ip, iq, ir = _to_ints(p, q, r)
    u = [iq[k] - ip[k] for k in range(3)]
    v = [ir[k] - ip[k] for k in range(3)]
    cr = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
    return _sign(sum(cr[k] * normal[k] for k in range(3)))


def _coplanar_incircle(a, b, c, p) -> int:
    """Positive when coplanar ``p`` is strictly inside the circumcircle of ``abc``."""
    ints = _to_ints(a, b, c, p)
    ia, ib, ic, ip = ints
    u = [ib[k] - ia[k] for k in range(3)]
    v = [ic[k] - ia[k] for k in range(3)]
    n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]]
    # any sphere through the circle works; lift one point off the plane
    top = [ia[k] + n[k] for k in range(3)]
    o = _sign(_det3(u, v, n))  # orientation of (a, b, c, top), always positive
    s = -_sign(_det4(_insphere_rows(ia, (ib, ic, top, ip))))
    return s * o


def _lex_key(p):
    return (p[0], p[1], p[2])


def perturbed_insphere(pts, p) -> int:
    """In-sphere test for a positively oriented tet with symbolic tie-breaking; never zero."""
    p0, p1, p2, p3 = pts
    s = insphere(p0, p1, p2, p3, p)
    if s != 0:
        return s
    order = sorted(range(5), key=lambda i: _lex_key((p0, p1, p2, p3, p)[i]))
    for i in reversed(order[2:]):
        if i == 4:
            return -1
        q = [p0, p1, p2, p3]
        q[i] = p
        o = orient(*q)
        if o != 0:
            return o
    return -1


def perturbed_coplanar_incircle(a, b, c, p) -> int:
    s = _coplanar_incircle(a, b, c, p)
    if s != 0:
        return s
    _, normal = _normal_exact(a, b, c)
    order = sorted(range(4), key=lambda i: _lex_key((a, b, c, p)[i]))
    for i in reversed(order[1:]):
        if i == 3:
            return -1
        q = [a, b, c]
        q[i] = p
        o = _coplanar_orient(q[0], q[1], q[2], normal)
        if o != 0:
            return o
    return -1


# ---------------------------------------------------------------------------
# triangulation


def _morton_order(points: np.ndarray) -> np.ndarray:
    lo = points.min(axis=0)
    span = np.maximum(points.max(axis=0) - lo, 1e-300)
    q = np.clip(((points - lo) / span * 1023).astype(np.int64), 0, 1023)
    code = np.zeros(len(points), dtype=np.int64)
    for bit in range(10):
        for axis in range(3):
            code |= ((q[:, axis] >> bit) & 1) << (3 * bit + axis)
    return np.argsort(code, kind="stable")


class _Builder:
    def __init__(self, points: np.ndarray, seed: int = 0):
        self.pts = [tuple(map(float, p)) for p in points]
        self.tets: List[Optional[tuple]] = []
        self.nbrs: List[Optional[list]] = []
        self.rng = random.Random(seed)
        self.last = 0

    # tet helpers
    def _coords(self, tet, p=None, at=None):
        return [p if (i == at) else self.pts[v] for i, v in enumerate(tet)]

    def _conflict(self, t: int, p) -> bool:
        tet = self.tets[t]
        if GHOST in tet:
            g = tet.index(GHOST)
            q = self._coords(tet, p, g)
            o = orient(*q)
            if o != 0:
                return o > 0
            a, b, c = (self.pts[v] for v in tet if v != GHOST)
            return perturbed_coplanar_incircle(a, b, c, p) > 0
        return perturbed_insphere(self._coords(tet), p) > 0

    def _add(self, tet) -> int:
        self.tets.append(tuple(tet))
        self.nbrs.append([-1, -1, -1, -1])
        return len(self.tets) - 1

    def _link(self, new_ids, outside):
        """Connect faces among ``new_ids`` and to known outside neighbours ``{face_key: (tet, slot)}``."""
        open_faces = dict(outside)
        for t in new_ids:
            tet = self.tets[t]
            for i in range(4):
                key = tuple(sorted(tet[:i] + tet[i + 1:]))
                other = open_faces.pop(key, None)
                if other is None:
                    open_faces[key] = (t, i)
                else:
                    u, j = other
                    self.nbrs[t][i] = u
                    if u >= 0 and j >= 0:
                        self.nbrs[u][j] = t

    def init(self, order: np.ndarray) -> np.ndarray:
        P = np.asarray(self.pts)
        i0 = int(order[0])
        d = np.linalg.norm(P - P[i0], axis=1)
        i1 = int(np.argmax(d))
        if d[i1] == 0:
            raise CoplanarInputError("all points coincide")
        u = P[i1] - P[i0]
        area = np.linalg.norm(np.cross(u, P - P[i0]), axis=1)
        i2 = int(np.argmax(area))
        if area[i2] == 0:
            raise CoplanarInputError("all points are collinear")
        n = np.cross(u, P[i2] - P[i0])
        vol = np.abs((P - P[i0]) @ n)
        i3 = None
        for j in np.argsort(-vol, kind="stable"):
            if orient(self.pts[i0], self.pts[i1], self.pts[i2], self.pts[int(j)]) != 0:
                i3 = int(j)
                break
        if i3 is None:
            raise CoplanarInputError("all points are coplanar")
        tet = [i0, i1, i2, i3]
        if orient(*self._coords(tet)) < 0:
            tet[0], tet[1] = tet[1], tet[0]
        ids = [self._add(tet)]
        for i in range(4):
            g = list(tet)
            g[i] = GHOST
            j, k = [m for m in range(4) if m != i][:2]
            g[j], g[k] = g[k], g[j]
            ids.append(self._add(g))
        self._link(ids, {})
        self.last = ids[0]
        used = {i0, i1, i2, i3}
        return np.array([i for i in order if int(i) not in used], dtype=np.int64)

    def locate(self, p) -> int:
        t = self.last
        if self.tets[t] is None or GHOST in self.tets[t]:
            t = next(i for i, tt in enumerate(self.tets) if tt is not None and GHOST not in tt)
        prev = -1
        while True:
            tet = self.tets[t]
            if GHOST in tet:
                return t
            start = self.rng.randrange(4)
            moved = False
            for s in range(4):
                i = (start + s) % 4
                nb = self.nbrs[t][i]
                if nb == prev:
                    continue
                if orient(*self._coords(tet, p, i)) < 0:
                    prev, t = t, nb
                    moved = True
                    break
            if not moved:
                # the previous tet's face may be the only exit; check it last
                for i in range(4):
                    if self.nbrs[t][i] == prev and prev >= 0 and orient(*self._coords(tet, p, i)) < 0:
                        prev, t = t, self.nbrs[t][i]
                        moved = True
                        break
            if not moved:
                return t

    def insert(self, v: int):
        p = self.pts[v]
        first = self.locate(p)
        if not self._conflict(first, p):
            raise RuntimeError("point location returned a non-conflicting tetrahedron")
        cavity = {first}
        stack = [first]
        boundary = []
        while stack:
            t = stack.pop()
            for i in range(4):
                nb = self.nbrs[t][i]
                if nb in cavity:
                    continue
                if self._conflict(nb, p):
                    cavity.add(nb)
                    stack.append(nb)
                else:
                    boundary.append((t, i, nb))
        new_ids = []
        outside = {}
        for t, i, nb in boundary:
            tet = list(self.tets[t])
            face_key = tuple(sorted(tet[:i] + tet[i + 1:]))
            tet[i] = v
            nid = self._add(tet)
            new_ids.append(nid)
            slot = self.nbrs[nb].index(t)
            outside[face_key] = (nb, slot)
        for t in cavity:
            self.tets[t] = None
            self.nbrs[t] = None
        self._link(new_ids, outside)
        for nid in new_ids:
            if GHOST not in self.tets[nid]:
                self.last = nid
                break

    def finite_tets(self) -> np.ndarray:
        out = [t for t in self.tets if t is not None and GHOST not in t]
        return np.array(out, dtype=np.int64).reshape(-1, 4)


def delaunay_tetrahedralize(points, seed: int = 0) -> TetGrid:
    """Delaunay tetrahedralization of distinct points.

    Raises :class:`CoplanarInputError` when fewer than four points are given or
    all points lie in one plane.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(P) < 4:
        raise CoplanarInputError("need at least four points")
    if not np.all(np.isfinite(P)):
        raise ValueError("points must be finite")
    if len(np.unique(P, axis=0)) != len(P):
        raise ValueError("points must be distinct")
    b = _Builder(P, seed)
    order = _morton_order(P)
    rest = b.init(order)
    for v in rest:
        b.insert(int(v))
    return TetGrid(P.copy(), b.finite_tets())


# ---------------------------------------------------------------------------
# oracle


def circumspheres(points, tets):
    """Circumcenters and radii of tetrahedra, shape ``(T, 3)`` and ``(T,)``."""
    P = np.asarray(points, dtype=np.float64)
    a = P[tets[:, 0]]
    M = P[tets[:, 1:]] - a[:, None, :]
    rhs = 0.5 * np.einsum("tij,tij->ti", M, M)
    center = np.linalg.solve(M, rhs[..., None])[..., 0]
    return a + center, np.linalg.norm(center, axis=1)


def _exact_inside(tet_pts, x, tol: float) -> bool:
    """Rational circumcenter check: is ``x`` inside the circumsphere by more than ``tol`` (relative)?"""
    a, *rest = [[Fraction(float(v)) for v in p] for p in tet_pts]
    M = [[q[k] - a[k] for k in range(3)] for q in rest]
    rhs = [sum(m * m for m in row) / 2 for row in M]
    det = _det3(*M)
    if det == 0:
        return False
    center = []
    for col in range(3):
        Mc = [[rhs[i] if k == col else M[i][k] for k in range(3)] for i in range(3)]
        center.append(_det3(*Mc) / det)
    r2 = sum(c * c for c in center)
    xq = [Fraction(float(v)) - a[k] for k, v in enumerate(x)]
    d2 = sum((xq[k] - center[k]) ** 2 for k in range(3))
    r = float(r2) ** 0.5
    slack = tol * max(1.0, r)
    return float(d2) < (r - slack) ** 2 if r > slack else False


def delaunay_violations(points, tets, tol: float = 1e-9, chunk: int = 512) -> int:
    """Number of (tet, point) pairs with the point strictly inside the circumsphere beyond ``tol``.

    A float pass flags candidates with a generous margin; flagged pairs are
    confirmed with rational circumcenters, which stay exact for slivers.
    """
    P = np.asarray(points, dtype=np.float64)
    tets = np.asarray(tets, dtype=np.int64)
    if len(tets) == 0:
        return 0
    with np.errstate(all="ignore"):
        centers, radii = circumspheres(P, tets)
    bad = 0
    for s in range(0, len(tets), chunk):
        c = centers[s:s + chunk]
        r = radii[s:s + chunk]
        dist = np.sqrt(((P[None, :, :] - c[:, None, :]) ** 2).sum(-1))
        flagged = ~(dist >= r[:, None] - 1e-6 * np.maximum(1.0, r[:, None]))
        rows = np.arange(len(c))[:, None]
        flagged[rows, tets[s:s + chunk]] = False
        for ti, pi in np.argwhere(flagged):
            if _exact_inside(P[tets[s + ti]], P[pi], tol):
                bad += 1
    return bad
