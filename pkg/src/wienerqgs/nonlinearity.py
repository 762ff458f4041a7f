"""Piecewise static output maps built from monotone branches and flat pieces.

A :class:`PiecewiseNonlinearity` partitions the real line into intervals on
which the map is either strictly monotone (a :class:`MonotoneBranch`, with a
closed-form inverse and inverse derivative) or constant (a
:class:`QuantizationSet`).  Intervals are lower-closed and upper-open.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

BRANCH_KINDS = ("affine", "square", "neg_abs", "signed_power", "table")


class UncoveredDomainError(ValueError):
    """Raised by :func:`evaluate` for points outside every piece."""


@dataclass(frozen=True)
class MonotoneBranch:
    """Strictly monotone piece of the map on ``[lo, hi)``.

    ``kind`` selects the forward map from a fixed catalog:

    - ``affine``: ``a*r + b`` with ``params=(a, b)``
    - ``square``: ``r**2`` (the domain must not straddle 0)
    - ``neg_abs``: ``-r``, i.e. ``|r|`` on the negative half line
    - ``signed_power``: ``sign(r)*|r|**p`` with ``params=(p,)``
    - ``table``: piecewise-linear through ``params=(r_knots, z_knots)``
    """

    lo: float
    hi: float
    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in BRANCH_KINDS:
            raise ValueError(f"unknown branch kind {self.kind!r}")
        if not self.lo < self.hi:
            raise ValueError("branch domain must satisfy lo < hi")
        if self.kind == "square" and self.lo < 0 < self.hi:
            raise ValueError("square branch domain must not contain both signs")
        if self.kind == "affine" and self.params[0] == 0:
            raise ValueError("affine branch needs a non-zero slope")
        if self.kind == "table":
            r, z = (np.asarray(p, dtype=float) for p in self.params)
            if r.size < 2 or r.size != z.size or np.any(np.diff(r) <= 0):
                raise ValueError("table knots must be strictly increasing in r")
            dz = np.diff(z)
            if not (np.all(dz > 0) or np.all(dz < 0)):
                raise ValueError("table values must be strictly monotone")
            object.__setattr__(self, "params", (tuple(r), tuple(z)))

    @property
    def increasing(self):
        if self.kind == "affine":
            return self.params[0] > 0
        if self.kind == "square":
            return self.lo >= 0
        if self.kind == "neg_abs":
            return False
        if self.kind == "table":
            z = self.params[1]
            return z[-1] > z[0]
        return True

    def forward(self, r):
        r = np.asarray(r, dtype=float)
        k = self.kind
        if k == "affine":
            a, b = self.params
            return a * r + b
        if k == "square":
            return r * r
        if k == "neg_abs":
            return -r
        if k == "signed_power":
            (p,) = self.params
            return np.sign(r) * np.abs(r) ** p
        rk, zk = self.params
        return np.interp(r, rk, zk)

    def derivative(self, r):
        """Right derivative of ``forward``."""
        r = np.asarray(r, dtype=float)
        k = self.kind
        if k == "affine":
            return np.full(r.shape, float(self.params[0]))
        if k == "square":
            return 2.0 * r
        if k == "neg_abs":
            return np.full(r.shape, -1.0)
        if k == "signed_power":
            (p,) = self.params
            return p * np.abs(r) ** (p - 1.0)
        rk, zk = (np.asarray(a) for a in self.params)
        slopes = np.diff(zk) / np.diff(rk)
        idx = np.searchsorted(rk, r, side="right") - 1
        inside = (idx >= 0) & (idx < slopes.size)
        return np.where(inside, slopes[np.clip(idx, 0, slopes.size - 1)], 0.0)

    def inverse(self, z):
        """Root ``r`` of ``forward(r) = z`` on this branch."""
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "affine":
            a, b = self.params
            return (z - b) / a
        if k == "square":
            s = np.sqrt(np.maximum(z, 0.0))
            return s if self.lo >= 0 else -s
        if k == "neg_abs":
            return -z
        if k == "signed_power":
            (p,) = self.params
            return np.sign(z) * np.abs(z) ** (1.0 / p)
        rk, zk = self.params
        if self.increasing:
            return np.interp(z, zk, rk)
        return np.interp(z, zk[::-1], rk[::-1])

    def log_inverse_derivative(self, z):
        """``log |d inverse / dz|``; ``inf`` where the derivative blows up."""
        z = np.asarray(z, dtype=float)
        k = self.kind
        if k == "affine":
            return np.full(z.shape, -np.log(abs(self.params[0])))
        if k == "neg_abs":
            return np.zeros(z.shape)
        if k == "square":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.log(0.5) - 0.5 * np.log(z)
        if k == "signed_power":
            (p,) = self.params
            with np.errstate(divide="ignore"):
                return -np.log(p) + (1.0 / p - 1.0) * np.log(np.abs(z))
        rk, zk = (np.asarray(a) for a in self.params)
        slopes = np.abs(np.diff(rk) / np.diff(zk))
        order = np.argsort(zk)
        zs = zk[order]
        seg_slopes = slopes if self.increasing else slopes[::-1]
        idx = np.clip(np.searchsorted(zs, z, side="right") - 1, 0, slopes.size - 1)
        return np.log(seg_slopes[idx])

    def inverse_derivative(self, z):
        with np.errstate(over="ignore"):
            return np.exp(self.log_inverse_derivative(z))

    def image(self):
        """``(z_lo, z_hi, lo_closed, hi_closed)`` of the branch image."""
        with np.errstate(invalid="ignore"):
            g_lo = float(self.forward(self.lo))
            g_hi = float(self.forward(self.hi))
        lo_finite = np.isfinite(self.lo)
        if self.increasing:
            return g_lo, g_hi, bool(lo_finite), False
        return g_hi, g_lo, False, bool(lo_finite)

    def image_contains(self, z):
        z = np.asarray(z, dtype=float)
        zlo, zhi, lo_c, hi_c = self.image()
        above = (z >= zlo) if lo_c else (z > zlo)
        below = (z <= zhi) if hi_c else (z < zhi)
        return above & below

    def domain_contains(self, r):
        r = np.asarray(r, dtype=float)
        return (r >= self.lo) & (r < self.hi)


@dataclass(frozen=True)
class QuantizationSet:
    """Interval ``[lower, upper)`` mapped to the constant ``level``.

    Either end may be infinite (half-line flat pieces such as saturation
    tails); a set unbounded on both sides is rejected by :func:`validate`.
    """

    lower: float
    upper: float
    level: float

    @property
    def bounded(self):
        return bool(np.isfinite(self.lower) and np.isfinite(self.upper))

    def contains(self, r):
        r = np.asarray(r, dtype=float)
        return (r >= self.lower) & (r < self.upper)


@dataclass(frozen=True)
class PiecewiseNonlinearity:
    branches: tuple = ()
    quant_sets: tuple = ()
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "quant_sets", tuple(self.quant_sets))

    def __call__(self, r):
        return evaluate(self, r)

    def derivative(self, r):
        """Right-sided derivative ``g'(r)`` (0 on flat pieces)."""
        r_arr = np.asarray(r, dtype=float)
        out = np.zeros(r_arr.shape)
        done = np.zeros(r_arr.shape, dtype=bool)
        for b in self.branches:
            m = b.domain_contains(r_arr) & ~done
            if m.any():
                out[m] = b.derivative(r_arr[m])
                done |= m
        for q in self.quant_sets:
            done |= q.contains(r_arr)
        if not done.all():
            bad = r_arr[~done].ravel()[0]
            raise UncoveredDomainError(f"uncovered domain point r={bad!r}")
        return float(out) if out.ndim == 0 else out


def evaluate(nl, r):
    """``g(r)``; each point is owned by the piece whose ``[lo, hi)`` holds it."""
    r_arr = np.asarray(r, dtype=float)
    out = np.full(r_arr.shape, np.nan)
    done = np.zeros(r_arr.shape, dtype=bool)
    for b in nl.branches:
        m = b.domain_contains(r_arr) & ~done
        if m.any():
            out[m] = b.forward(r_arr[m])
            done |= m
    for q in nl.quant_sets:
        m = q.contains(r_arr) & ~done
        out[m] = q.level
        done |= m
    if not done.all():
        bad = r_arr[~done].ravel()[0]
        raise UncoveredDomainError(f"uncovered domain point r={bad!r}")
    return float(out) if out.ndim == 0 else out


def monotone_roots(nl, z):
    """``[(i, root, inverse_derivative), ...]`` over the branches whose image
    contains ``z`` (0-based branch indices)."""
    z = float(z)
    out = []
    for i, b in enumerate(nl.branches):
        if b.image_contains(z):
            out.append((i, float(b.inverse(z)), float(b.inverse_derivative(z))))
    return out


def quantization_preimages(nl):
    """``[(level, lower, upper), ...]`` sorted by level."""
    return sorted((q.level, q.lower, q.upper) for q in nl.quant_sets)


def output_gpdf(nl, mu, R):
    """Generalized density of ``z = g(r)`` for ``r ~ N(mu, R)``.

    Returns ``(density, masses)``: ``density(z)`` is the continuous part
    ``sum_i phi_i(z) N(gamma_i(z); mu, R)`` and ``masses`` lists
    ``(level, probability)`` for each flat piece.
    """
    sd = np.sqrt(R)

    def density(z):
        z = np.asarray(z, dtype=float)
        total = np.zeros(z.shape)
        for b in nl.branches:
            inside = b.image_contains(z)
            if inside.any():
                zi = z[inside]
                with np.errstate(over="ignore", invalid="ignore"):
                    total[inside] += b.inverse_derivative(zi) * norm.pdf(b.inverse(zi), mu, sd)
        return total

    masses = [(q.level, float(norm.cdf(q.upper, mu, sd) - norm.cdf(q.lower, mu, sd))) for q in nl.quant_sets]
    return density, masses


@dataclass
class Violation:
    kind: str
    location: tuple
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def kinds(self):
        return {v.kind for v in self.violations}

    def __str__(self):
        if self.ok:
            return "valid"
        return "\n".join(f"{v.kind} at {v.location}: {v.detail}" for v in self.violations)


def _runs(mask, grid):
    """Contiguous runs of True in ``mask`` as (start, end) grid locations."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.r_[idx[0], idx[breaks + 1]]
    ends = np.r_[idx[breaks], idx[-1]]
    return [(float(grid[s]), float(grid[e])) for s, e in zip(starts, ends)]


def validate(nl, points=10_000):
    """Probe partition, overlap and invertibility on a deterministic grid."""
    report = ValidationReport()
    ends = []
    for b in nl.branches:
        ends += [b.lo, b.hi]
    for q in nl.quant_sets:
        ends += [q.lower, q.upper]
    finite = [e for e in ends if np.isfinite(e)]
    if finite:
        lo, hi = min(finite), max(finite)
        pad = max(1.0, 0.5 * (hi - lo))
        lo, hi = lo - pad, hi + pad
    else:
        lo, hi = -10.0, 10.0
    grid = np.unique(np.r_[np.linspace(lo, hi, points), finite])

    counts = np.zeros(grid.size, dtype=int)
    for b in nl.branches:
        counts += b.domain_contains(grid)
    for q in nl.quant_sets:
        counts += q.contains(grid)
    for loc in _runs(counts == 0, grid):
        report.violations.append(Violation("gap", loc, "no piece covers this interval"))
    for loc in _runs(counts > 1, grid):
        report.violations.append(Violation("overlap", loc, "pieces overlap"))

    for i, b in enumerate(nl.branches):
        r = grid[b.domain_contains(grid)]
        if r.size < 2:
            continue
        z = b.forward(r)
        dz = np.diff(z)
        if not (np.all(dz > 0) or np.all(dz < 0)):
            report.violations.append(Violation("non-monotone", (float(r[0]), float(r[-1])), f"branch {i}"))
        back = b.inverse(z)
        err = np.abs(back - r) > 1e-10 * np.maximum(1.0, np.abs(r))
        for loc in _runs(err, r):
            report.violations.append(Violation("round-trip", loc, f"branch {i} inverse does not invert forward"))
        zi = z[1:-1]
        zi = zi[b.image_contains(zi)]
        if zi.size and not np.all(b.inverse_derivative(zi) > 0):
            report.violations.append(Violation("inverse-derivative", (float(r[0]), float(r[-1])), f"branch {i}"))

    levels = [q.level for q in nl.quant_sets]
    for j, q in enumerate(nl.quant_sets):
        if not q.lower < q.upper:
            report.violations.append(Violation("empty-quantization-set", (q.lower, q.upper), f"set {j}"))
        if not (np.isfinite(q.lower) or np.isfinite(q.upper)):
            report.violations.append(Violation("unbounded-quantization", (q.lower, q.upper), f"set {j}"))
    if len(set(levels)) != len(levels):
        report.violations.append(Violation("duplicate-level", tuple(levels), "quantization levels must be distinct"))
    return report


# -- presets -----------------------------------------------------------------

INF = np.inf


def square_map():
    return PiecewiseNonlinearity(
        (MonotoneBranch(0.0, INF, "square"), MonotoneBranch(-INF, 0.0, "square")), (), "example1"
    )


def abs_square_map():
    return PiecewiseNonlinearity(
        (MonotoneBranch(-INF, 0.0, "neg_abs"), MonotoneBranch(0.0, INF, "square")), (), "example2"
    )


def deadzone(width=3.0):
    return PiecewiseNonlinearity(
        (MonotoneBranch(-INF, -width, "affine", (1.0, width)), MonotoneBranch(width, INF, "affine", (1.0, -width))),
        (QuantizationSet(-width, width, 0.0),),
        "deadzone",
    )


def saturation(limit=1.0, slope=1.0):
    a = limit / slope
    return PiecewiseNonlinearity(
        (MonotoneBranch(-a, a, "affine", (slope, 0.0)),),
        (QuantizationSet(-INF, -a, -limit), QuantizationSet(a, INF, limit)),
        "saturation",
    )


def rectifier():
    return PiecewiseNonlinearity(
        (MonotoneBranch(0.0, INF, "affine", (1.0, 0.0)),), (QuantizationSet(-INF, 0.0, 0.0),), "rectifier"
    )


def uniform_quantizer(levels=3, step=1.0):
    """Uniform quantizer with ``levels`` outputs centred on zero."""
    z = step * (np.arange(levels) - (levels - 1) / 2.0)
    cuts = np.r_[-INF, 0.5 * (z[1:] + z[:-1]), INF]
    sets = tuple(QuantizationSet(float(cuts[k]), float(cuts[k + 1]), float(z[k])) for k in range(levels))
    return PiecewiseNonlinearity((), sets, "quantizer")


def identity_map():
    return PiecewiseNonlinearity((MonotoneBranch(-INF, INF, "affine", (1.0, 0.0)),), (), "identity")


_PRESETS = {
    "example1": square_map,
    "example2": abs_square_map,
    "example3": deadzone,
    "deadzone": deadzone,
    "saturation": saturation,
    "quantizer": uniform_quantizer,
    "rectifier": rectifier,
    "identity": identity_map,
}


def preset_names():
    return list(_PRESETS)


def preset(name, **kwargs):
    try:
        factory = _PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown nonlinearity preset {name!r}; choose from {preset_names()}") from None
    nl = factory(**kwargs)
    if name == "example3" and nl.name != "example3":
        nl = PiecewiseNonlinearity(nl.branches, nl.quant_sets, "example3")
    return nl
