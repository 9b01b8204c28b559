"""Sampling of the input domain and detection of conflicting labels."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import product

import numpy as np

BRUTE_FORCE_BELOW = 2000


@dataclass(frozen=True)
class SampleDomain:
    kind: str
    center: tuple = ()
    radius: float = 0.0
    lower: tuple = ()
    upper: tuple = ()

    def __post_init__(self):
        if self.kind == "disk":
            if not self.radius > 0:
                raise ValueError("disk radius must be positive")
            object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        elif self.kind == "box":
            lo = tuple(float(x) for x in self.lower)
            hi = tuple(float(x) for x in self.upper)
            if len(lo) != len(hi) or not lo:
                raise ValueError("box bounds must have equal, non-zero length")
            if any(a >= b for a, b in zip(lo, hi)):
                raise ValueError("box lower must be < upper componentwise")
            object.__setattr__(self, "lower", lo)
            object.__setattr__(self, "upper", hi)
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")

    @classmethod
    def disk(cls, center=(0.0, 0.0), radius=0.25) -> "SampleDomain":
        return cls("disk", center=tuple(center), radius=float(radius))

    @classmethod
    def box(cls, lower, upper) -> "SampleDomain":
        return cls("box", lower=tuple(lower), upper=tuple(upper))

    @property
    def dimension(self) -> int:
        return len(self.center) if self.kind == "disk" else len(self.lower)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "disk":
            c = np.asarray(self.center)
            return c - self.radius, c + self.radius
        return np.asarray(self.lower), np.asarray(self.upper)

    @property
    def volume(self) -> float:
        if self.kind == "disk":
            d = self.dimension
            return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d
        lo, hi = self.bounds
        return float(np.prod(hi - lo))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "disk":
            return np.linalg.norm(pts - np.asarray(self.center), axis=1) <= self.radius
        lo, hi = self.bounds
        return np.all((pts >= lo) & (pts <= hi), axis=1)


@dataclass
class SampleSet:
    points: np.ndarray
    pds_radius: float | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)

    def __len__(self):
        return len(self.points)


def sample_uniform(domain: SampleDomain, n: int, rng) -> SampleSet:
    """``n`` i.i.d. uniform points; disks use rejection from the bounding box."""
    if n < 0:
        raise ValueError("n must be non-negative")
    lo, hi = domain.bounds
    d = domain.dimension
    if domain.kind == "box":
        return SampleSet(rng.uniform(lo, hi, size=(n, d)))
    out = np.empty((0, d))
    while len(out) < n:
        cand = rng.uniform(lo, hi, size=(2 * (n - len(out)) + 8, d))
        out = np.vstack([out, cand[domain.contains(cand)]])
    return SampleSet(out[:n])


# ---------------------------------------------------------------------------
# background grid shared by Poisson-disk sampling and radius queries
# ---------------------------------------------------------------------------

class _Grid:
    """Sparse uniform grid with cell size ``r / sqrt(d)``."""

    def __init__(self, r: float, dim: int, origin):
        self.r = r
        self.cell = r / math.sqrt(dim)
        self.origin = np.asarray(origin, dtype=float)
        self.reach = math.ceil(r / self.cell)
        self.offsets = list(product(range(-self.reach, self.reach + 1), repeat=dim))
        self.cells = defaultdict(list)

    def key(self, x):
        return tuple(np.floor((x - self.origin) / self.cell).astype(int))

    def add(self, idx: int, x) -> None:
        self.cells[self.key(x)].append(idx)

    def candidates(self, x):
        k = self.key(x)
        for off in self.offsets:
            yield from self.cells.get(tuple(a + b for a, b in zip(k, off)), ())


def _random_annulus(rng, center, r, k):
    d = len(center)
    u = rng.standard_normal((k, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    # uniform in volume between radii r and 2r
    rad = (rng.uniform(r**d, (2 * r) ** d, size=k)) ** (1.0 / d)
    return center + u * rad[:, None]


def poisson_disk_sample(domain: SampleDomain, r: float, rng, k_attempts: int = 30) -> SampleSet:
    """Bridson dart throwing: every pair of points is at least ``r`` apart.

    With cell size ``r / sqrt(d)`` each background-grid cell holds at most
    one point, so the grid is a dense index array. Above three dimensions
    the grid would be too large and candidates are checked against all
    points instead. The recorded ``pds_radius`` is ``r / 2``.
    """
    if not r > 0:
        raise ValueError("spacing r must be positive")
    lo, hi = domain.bounds
    dim = domain.dimension
    cell = r / math.sqrt(dim)
    shape = np.ceil((hi - lo) / cell).astype(int) + 1
    use_grid = dim <= 3 and np.prod(shape) <= 50_000_000
    if use_grid:
        grid = np.full(shape, -1, dtype=np.int64)
        reach = math.ceil(math.sqrt(dim))
        offsets = np.array(list(product(range(-reach, reach + 1), repeat=dim)))
    cap = 1024
    pts = np.empty((cap, dim))
    n = 0
    r2 = r * r

    def insert(x):
        nonlocal pts, cap, n
        if n == cap:
            cap *= 2
            pts = np.resize(pts, (cap, dim))
        pts[n] = x
        if use_grid:
            grid[tuple(((x - lo) / cell).astype(int))] = n
        n += 1

    insert(sample_uniform(domain, 1, rng).points[0])
    active = [0]
    while active:
        j = int(rng.integers(len(active)))
        cands = _random_annulus(rng, pts[active[j]], r, k_attempts)
        ok = domain.contains(cands)
        cands, idx = cands[ok], np.flatnonzero(ok)
        if use_grid and len(cands):
            cells = ((cands - lo) / cell).astype(int)[:, None, :] + offsets[None]
            inside = np.all((cells >= 0) & (cells < shape), axis=2)
            cells = np.clip(cells, 0, shape - 1)
            nb = grid[tuple(np.moveaxis(cells, 2, 0))]
            nb = np.where(inside, nb, -1)
            d2 = np.sum((pts[np.maximum(nb, 0)] - cands[:, None, :]) ** 2, axis=2)
            free = np.all((nb < 0) | (d2 >= r2), axis=1)
        elif len(cands):
            d2 = np.sum((cands[:, None, :] - pts[None, :n]) ** 2, axis=2)
            free = np.all(d2 >= r2, axis=1)
        else:
            free = np.zeros(0, dtype=bool)
        hit = np.flatnonzero(free)
        if hit.size:
            active.append(n)
            insert(cands[hit[0]])
        else:
            active[j] = active[-1]
            active.pop()
    return SampleSet(pts[:n].copy(), pds_radius=r / 2)


def poisson_disk_sample_n(domain: SampleDomain, n: int, rng, k_attempts: int = 30,
                          iters: int = 12) -> SampleSet:
    """Poisson-disk set of exactly ``n`` points.

    Shrinks the spacing from a volume-based guess until at least ``n``
    points fit, bisects until at most 10% extra points are produced, then
    keeps a random subset of size ``n`` (spacing is preserved).
    """
    if n <= 0:
        return SampleSet(np.empty((0, domain.dimension)))
    dim = domain.dimension
    guess = (domain.volume / n) ** (1.0 / dim)
    state = rng.bit_generator.state

    def attempt(r):
        rng.bit_generator.state = state
        return poisson_disk_sample(domain, r, rng, k_attempts)

    r_hi = guess
    best = attempt(r_hi)
    r_lo = r_hi
    while len(best) < n:
        r_hi, r_lo = r_lo, r_lo * 0.7
        best = attempt(r_lo)
    for _ in range(iters):
        if len(best) <= 1.1 * n:
            break
        r = 0.5 * (r_lo + r_hi)
        s = attempt(r)
        if len(s) >= n:
            best, r_lo = s, r
        else:
            r_hi = r
    keep = np.sort(rng.choice(len(best), size=n, replace=False))
    return SampleSet(best.points[keep], pds_radius=best.pds_radius)


def closest_pair_radius(points) -> float:
    """Half the smallest pairwise distance (the Poisson-disk radius of a set)."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return float("inf")
    best = float("inf")
    for i in range(len(pts) - 1):
        d = np.min(np.sum((pts[i + 1:] - pts[i]) ** 2, axis=1))
        best = min(best, float(d))
    return 0.5 * math.sqrt(best)


def resample_dynamic(domain: SampleDomain, M: int, rng, method: str = "pds") -> SampleSet:
    """A fresh set of ``M`` inputs for one training iteration."""
    if method == "pds":
        return poisson_disk_sample_n(domain, M, rng)
    if method == "uniform":
        return sample_uniform(domain, M, rng)
    raise ValueError(f"unknown resampling method {method!r}")


# ---------------------------------------------------------------------------
# neighbours
# ---------------------------------------------------------------------------

def radius_neighbors(points, r: float, brute_force: bool | None = None) -> list[np.ndarray]:
    """For every point, sorted indices of all points within distance ``r`` (self included)."""
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n == 0:
        return []
    if brute_force is None:
        brute_force = n < BRUTE_FORCE_BELOW or pts.shape[1] > 3
    r2 = r * r
    if brute_force:
        out = []
        for i in range(n):
            d2 = np.sum((pts - pts[i]) ** 2, axis=1)
            out.append(np.flatnonzero(d2 <= r2))
        return out
    grid = _Grid(r, pts.shape[1], pts.min(axis=0))
    for i, x in enumerate(pts):
        grid.add(i, x)
    out = []
    for x in pts:
        cand = np.fromiter(grid.candidates(x), dtype=int)
        d2 = np.sum((pts[cand] - x) ** 2, axis=1)
        out.append(np.sort(cand[d2 <= r2]))
    return out


# ---------------------------------------------------------------------------
# incremental growth
# ---------------------------------------------------------------------------

def select_seed(candidates, policy, energy) -> np.ndarray:
    """Candidate whose policy output has the lowest energy (first index on ties)."""
    from .policy import policy_actions

    P = np.asarray(candidates.points if isinstance(candidates, SampleSet) else candidates,
                   dtype=float)
    if len(P) == 0:
        raise ValueError("cannot select a seed from an empty candidate set")
    E = energy.value_batch(policy_actions(policy, P), P)
    return P[int(np.argmin(E))].copy()


def incremental_expand(current, pool, k: int, seed_point=None, max_size: int = 500) -> SampleSet:
    """Append the ``k`` pool points closest to the current set.

    Distance is to the nearest current member (or to ``seed_point`` when the
    current set is empty). Pool points already in the current set are
    skipped and the result is capped at ``max_size`` points. Ties are broken by
    pool order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    cur = np.asarray(current.points if isinstance(current, SampleSet) else current,
                     dtype=float)
    pl = np.asarray(pool.points if isinstance(pool, SampleSet) else pool, dtype=float)
    if len(pl) == 0:
        raise ValueError("cannot expand from an empty pool")
    room = max(0, max_size - len(cur))
    if room == 0:
        return SampleSet(cur.copy())
    ref = cur if len(cur) else np.atleast_2d(np.asarray(seed_point, dtype=float))
    d2 = np.min(np.sum((pl[:, None, :] - ref[None, :, :]) ** 2, axis=2), axis=1)
    if len(cur):
        used = np.any(np.all(pl[:, None, :] == cur[None, :, :], axis=2), axis=1)
        d2 = np.where(used, np.inf, d2)
    order = np.argsort(d2, kind="stable")
    order = order[np.isfinite(d2[order])][: min(k, room)]
    if len(cur) == 0:
        return SampleSet(pl[order].copy())
    return SampleSet(np.vstack([cur, pl[order]]))


# ---------------------------------------------------------------------------
# conflicts
# ---------------------------------------------------------------------------

@dataclass
class ConflictReport:
    metric: np.ndarray
    average: float
    rejected: np.ndarray
    neighbors: list = field(default_factory=list, repr=False)

    @property
    def flags(self) -> np.ndarray:
        out = np.zeros(len(self.metric), dtype=bool)
        out[self.rejected] = True
        return out

    @property
    def kept(self) -> np.ndarray:
        return np.flatnonzero(~self.flags)


def circular_mean(angles, axis=0) -> np.ndarray:
    """Angle of the averaged ``(sin, cos)`` encoding."""
    angles = np.asarray(angles, dtype=float)
    return np.arctan2(np.mean(np.sin(angles), axis=axis), np.mean(np.cos(angles), axis=axis))


def position_error_metric(p_avg, t_avg, energy) -> float:
    """Distance between the target of ``p_avg`` and the end effector of ``t_avg``."""
    return float(energy.position_error(np.asarray(t_avg, dtype=float),
                                       np.asarray(p_avg, dtype=float)))


def detect_conflicts(P, T, r: float, metric, eps: float, angular: bool = True) -> ConflictReport:
    """Flag samples whose neighbourhood average has a high metric value.

    For every sample the inputs of all neighbours within ``r`` (itself
    included) are averaged, and so are their targets (circular mean per angle
    when ``angular``). ``metric(p_avg, t_avg)`` is stored per sample; any
    sample above ``mean + eps`` is rejected together with its neighbours.
    """
    if not r > 0:
        raise ValueError("search radius must be positive")
    P = np.asarray(P, dtype=float)
    T = np.asarray(T, dtype=float)
    n = len(P)
    if n == 0:
        return ConflictReport(np.zeros(0), 0.0, np.zeros(0, dtype=int), [])
    nbrs = radius_neighbors(P, r)
    D = np.empty(n)
    for m, idx in enumerate(nbrs):
        p_avg = P[idx].mean(axis=0)
        t_avg = circular_mean(T[idx]) if angular else T[idx].mean(axis=0)
        D[m] = metric(p_avg, t_avg)
    d_avg = math.fsum(D) / n
    rejected = np.zeros(n, dtype=bool)
    for m in np.flatnonzero(D > d_avg + eps):
        rejected[nbrs[m]] = True
    return ConflictReport(D, d_avg, np.flatnonzero(rejected), nbrs)


def write_samples_csv(path, P, T=None, report: ConflictReport | None = None,
                      input_dim: int | None = None, target_dim: int | None = None) -> None:
    """Columns: index, p0.., t0.., D, rejected.

    ``input_dim``/``target_dim`` fix the header when the set is empty.
    """
    P = np.asarray(P, dtype=float).reshape(len(P), -1) if len(P) else \
        np.zeros((0, input_dim or 0))
    if T is not None:
        T = (np.asarray(T, dtype=float).reshape(len(P), -1) if len(P)
             else np.zeros((0, target_dim or 0)))
    dp = P.shape[1]
    dt = T.shape[1] if T is not None and len(P) else (target_dim or 0)
    header = ["index"] + [f"p{i}" for i in range(dp)] + [f"t{i}" for i in range(dt)]
    header += ["D", "rejected"]
    flags = report.flags if report is not None else np.zeros(len(P), dtype=bool)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for m in range(len(P)):
            row = [m] + [repr(float(x)) for x in P[m]]
            if T is not None:
                row += [repr(float(x)) for x in T[m]]
            row += [repr(float(report.metric[m])) if report is not None else "",
                    int(flags[m])]
            w.writerow(row)


def read_samples_csv(path, input_dim: int) -> np.ndarray:
    """Inputs from a CSV with columns ``p0..p{d-1}`` (other columns ignored)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [f"p{i}" for i in range(input_dim)]
        missing = [c for c in cols if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = [[float(r[c]) for c in cols] for r in reader]
    return np.array(rows, dtype=float).reshape(-1, input_dim)
