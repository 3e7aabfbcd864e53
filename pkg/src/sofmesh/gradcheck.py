"""Central finite-difference checks of every analytic loss gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, List

import numpy as np

from . import losses
from .field import RayContribution, exact_depth_gradient, exact_depth_offset, median_depth
from .geometry import tight_bounds

TOLERANCE = 1e-4


@dataclass(frozen=True)
class GradCheckRow:
    name: str
    max_rel_error: float
    configurations: int
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def central_difference(fn: Callable[[np.ndarray], float], x, step: float = 1e-4) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fn(xp) - fn(xm)) / (2.0 * h)
    return g


def relative_error(analytic, numeric, floor: float = 1e-10) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


# ---------------------------------------------------------------------------
# random configurations away from singular sets


def random_samples(rng, n=None, near=0.2, far=100.0) -> losses.RaySamples:
    n = n or int(rng.integers(2, 9))
    alpha = rng.uniform(0.05, 0.9, n)
    t = np.sort(rng.uniform(1.0, 8.0, n))
    A = rng.uniform(0.5, 2.0, n)
    B = -2.0 * A * t
    C = B * B / (4.0 * A) + rng.uniform(0.0, 2.0, n)
    E = tight_bounds(rng.uniform(0.3, 1.0, n))
    return losses.RaySamples(alpha, t, A, B, C, E, near, far)


def random_contributions(rng, n=None) -> List[RayContribution]:
    n = n or int(rng.integers(1, 7))
    t = np.sort(rng.uniform(1.0, 8.0, n))
    out = []
    for i in range(n):
        A = float(rng.uniform(0.5, 2.0))
        B = -2.0 * A * float(t[i])
        C = B * B / (4.0 * A) + float(rng.uniform(0.0, 1.0))
        op = float(rng.uniform(0.3, 1.0))
        out.append(RayContribution(i, float(t[i]), op * math.exp(-0.5 * (C - B * B / (4 * A))), (A, B, C), op))
    return out


# ---------------------------------------------------------------------------
# individual checks


def check_distortion(rng, configs: int) -> List[GradCheckRow]:
    err_a = err_t = 0.0
    for _ in range(configs):
        s = random_samples(rng)
        res = losses.distortion_loss(s)
        fa = central_difference(lambda a: losses.distortion_loss(replace(s, alpha=a)).value, s.alpha)
        ft = central_difference(lambda t: losses.distortion_loss(replace(s, t=t)).value, s.t)
        err_a = max(err_a, relative_error(res.grads["alpha"], fa))
        err_t = max(err_t, relative_error(res.grads["t"], ft))
    return [GradCheckRow("distortion/alpha", err_a, configs), GradCheckRow("distortion/t", err_t, configs)]


def check_extent(rng, configs: int) -> List[GradCheckRow]:
    errs = {k: 0.0 for k in ("A", "B", "C", "alpha")}
    for _ in range(configs):
        s = random_samples(rng)
        res = losses.extent_loss(s)
        for k in errs:
            num = central_difference(lambda v, k=k: losses.extent_loss(replace(s, **{k: v})).value, getattr(s, k))
            errs[k] = max(errs[k], relative_error(res.grads[k], num))
    return [GradCheckRow(f"extent/{k}", v, configs) for k, v in errs.items()]


def check_depth_normal(rng, configs: int) -> List[GradCheckRow]:
    errs = {"alpha": 0.0, "normals": 0.0, "pixel_normal": 0.0}
    for _ in range(configs):
        s = random_samples(rng)
        n = rng.normal(size=(len(s), 3))
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        N = rng.normal(size=3)
        N /= np.linalg.norm(N)
        res = losses.depth_normal_loss(s, n, N)
        num = {
            "alpha": central_difference(lambda a: losses.depth_normal_loss(replace(s, alpha=a), n, N).value, s.alpha),
            "normals": central_difference(lambda m: losses.depth_normal_loss(s, m, N).value, n),
            "pixel_normal": central_difference(lambda m: losses.depth_normal_loss(s, n, m).value, N),
        }
        for k in errs:
            errs[k] = max(errs[k], relative_error(res.grads[k], num[k]))
    return [GradCheckRow(f"depth_normal/{k}", v, configs) for k, v in errs.items()]


def _with_opacity(contribs, opac):
    out = []
    for c, o in zip(contribs, opac):
        A, B, C = c.abc
        out.append(RayContribution(c.gaussian_index, c.t_star, o * math.exp(-0.5 * (C - B * B / (4 * A))), c.abc, o))
    return out


def check_opacity_supervision(rng, configs: int) -> List[GradCheckRow]:
    err = 0.0
    done = 0
    while done < configs:
        contribs = random_contributions(rng)
        # at the exact depth of isolated Gaussians the residual vanishes; probe at the median depth
        depth = median_depth(contribs)
        if depth is None:
            continue
        opac = np.array([c.opacity for c in contribs])
        res = losses.opacity_supervision_loss(contribs, depth)
        # depth is detached: hold it fixed while perturbing opacities
        num = central_difference(lambda o: losses.opacity_supervision_loss(_with_opacity(contribs, o), depth).value,
                                 opac)
        err = max(err, relative_error(res.grads["opacity"], num))
        done += 1
    return [GradCheckRow("opacity_supervision/opacity", err, configs)]


def check_exact_depth(rng, configs: int) -> List[GradCheckRow]:
    err = 0.0
    done = 0
    while done < configs:
        contribs = random_contributions(rng)
        got = exact_depth_gradient(contribs)
        if got is None:
            continue
        i, grad = got
        alphas = [c.alpha for c in contribs]
        T_i = float(np.prod([1.0 - a for a in alphas[:i]]))
        lr = math.log((T_i - 0.5) / (T_i * contribs[i].opacity))
        # the offset has a square-root singularity nearby, so use a finer step
        num = central_difference(lambda v: exact_depth_offset(v[0], v[1], v[2], lr), np.array(contribs[i].abc),
                                 step=1e-7)
        err = max(err, relative_error(np.array(grad), num))
        done += 1
    return [GradCheckRow("exact_depth/abc", err, configs)]


CHECKS = {
    "distortion": check_distortion,
    "extent": check_extent,
    "depth_normal": check_depth_normal,
    "opacity_supervision": check_opacity_supervision,
    "exact_depth": check_exact_depth,
}


def run_gradcheck(configs: int = 100, seed: int = 0, tolerance: float = TOLERANCE) -> List[GradCheckRow]:
    rng = np.random.default_rng(seed)
    rows = []
    for fn in CHECKS.values():
        rows.extend(replace(r, tolerance=tolerance) for r in fn(rng, configs))
    return rows


def format_table(rows: List[GradCheckRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'gradient':<{width}}  {'max rel err':>12}  configs  status"]
    for r in rows:
        lines.append(f"{r.name:<{width}}  {r.max_rel_error:12.3e}  {r.configurations:7d}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
