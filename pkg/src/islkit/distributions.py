"""Latent-noise families and synthetic target distributions.

All sampling is driven by an explicit :class:`~islkit.rng.RandomSource`;
identical (spec, n, seed) triples give bit-identical output.  Heavy-tailed
laws (Cauchy, Pareto, generalized Pareto) are drawn by exact inverse-CDF
transforms, Gaussians by Box-Muller, so no platform-dependent rejection
loops are involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

from .rng import RandomSource

__all__ = [
    "NoiseSpec",
    "TargetSpec",
    "gpd_inverse_cdf",
    "gpd_ccdf",
    "sample_noise",
    "noise_cdf",
    "sample_target",
    "target_cdf",
    "target_quantile",
    "sample_unit_sphere",
    "mode_centers",
    "MIXTURE_PRESETS",
]

_NOISE_FAMILIES = ("gaussian", "uniform", "lognormal", "gpd", "gpd_mixture")
_TARGET_KINDS = (
    "gaussian",
    "uniform",
    "cauchy",
    "pareto",
    "mixture1d",
    "ring2d",
    "grid2d",
    "dual_moon",
    "circle_gaussians",
    "two_rings",
    "linear_gaussian_hd",
    "heavy_tail_2d",
)

# Benchmark 1D mixtures, all with equal component weights.
MIXTURE_PRESETS: dict[str, dict] = {
    "two_gaussians": {
        "components": [
            {"kind": "gaussian", "loc": 5.0, "scale": 2.0},
            {"kind": "gaussian", "loc": -1.0, "scale": 1.0},
        ],
        "weights": [0.5, 0.5],
    },
    "three_gaussians": {
        "components": [
            {"kind": "gaussian", "loc": 5.0, "scale": 2.0},
            {"kind": "gaussian", "loc": -1.0, "scale": 1.0},
            {"kind": "gaussian", "loc": -10.0, "scale": 3.0},
        ],
        "weights": [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    },
    "gaussian_pareto": {
        "components": [
            {"kind": "gaussian", "loc": -5.0, "scale": 2.0},
            {"kind": "pareto", "scale": 5.0, "shape": 1.0},
        ],
        "weights": [0.5, 0.5],
    },
    "two_cauchys": {
        "components": [
            {"kind": "cauchy", "loc": -1.0, "scale": 0.7},
            {"kind": "cauchy", "loc": 1.0, "scale": 0.85},
        ],
        "weights": [0.5, 0.5],
    },
}

_WEIGHT_TOL = 1e-12


# ---------------------------------------------------------------------------
# generalized Pareto primitives
# ---------------------------------------------------------------------------


def gpd_inverse_cdf(u, xi: float, sigma: float):
    """Map a survival level ``u`` in (0,1) to a generalized-Pareto value.

    Returns sigma*(u**-xi - 1)/xi for xi != 0 and -sigma*log(u) in the
    exponential limit xi = 0, i.e. the value z whose CCDF equals u.  The
    map is strictly decreasing in u: u -> 1 gives the lower support end 0,
    u -> 0 runs into the tail.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
        raise ValueError("u must lie strictly inside (0, 1)")
    if xi == 0.0:
        z = -sigma * np.log(u_arr)
    else:
        z = sigma * np.expm1(-xi * np.log(u_arr)) / xi
    return float(z) if np.isscalar(u) else z


def gpd_ccdf(z, xi: float, sigma: float):
    """Survival function S(z; xi, sigma) of the generalized Pareto law."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    z_arr = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if xi == 0.0:
        s = np.exp(-z_arr / sigma)
    else:
        base = 1.0 + xi * z_arr / sigma
        s = np.zeros_like(base)
        ok = base > 0.0
        s[ok] = np.power(base[ok], -1.0 / xi)
    s = np.where(z_arr < 0.0, 1.0, s)
    return float(s[0]) if np.isscalar(z) else s.reshape(np.shape(z))


# ---------------------------------------------------------------------------
# noise specification
# ---------------------------------------------------------------------------


@dataclass
class NoiseSpec:
    """Latent-noise family with per-coordinate i.i.d. draws.

    Families and their parameters:

    - ``gaussian``: loc, scale
    - ``uniform``: low, high
    - ``lognormal``: log_loc, log_scale
    - ``gpd``: xi (tail index), sigma (scale)
    - ``gpd_mixture``: components = [{xi, sigma}, ...], weights
    """

    family: str
    params: dict = field(default_factory=dict)
    dim: int = 1

    def __post_init__(self):
        if self.family not in _NOISE_FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if int(self.dim) < 1:
            raise ValueError("dim must be >= 1")
        self.dim = int(self.dim)
        p = dict(_NOISE_DEFAULTS[self.family])
        unknown = set(self.params) - set(p)
        if unknown:
            raise ValueError(f"unexpected parameter(s) {sorted(unknown)} for noise family {self.family!r}")
        p.update(self.params)
        self.params = p
        self._validate()

    def _validate(self):
        p = self.params
        if self.family == "gaussian" and p["scale"] <= 0:
            raise ValueError("scale must be positive")
        if self.family == "uniform" and not p["low"] < p["high"]:
            raise ValueError("uniform noise requires low < high")
        if self.family == "lognormal" and p["log_scale"] <= 0:
            raise ValueError("log_scale must be positive")
        if self.family == "gpd" and p["sigma"] <= 0:
            raise ValueError("sigma must be positive")
        if self.family == "gpd_mixture":
            comps = p["components"]
            w = np.asarray(p["weights"], dtype=np.float64)
            if len(comps) < 1 or len(comps) != len(w):
                raise ValueError("components and weights must be nonempty and equal length")
            if np.any(w < 0) or abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
                raise ValueError("mixture weights must be nonnegative and sum to 1")
            for c in comps:
                if c["sigma"] <= 0:
                    raise ValueError("every mixture component needs sigma > 0")

    def support(self) -> tuple[float, float]:
        """Per-coordinate support; GPD with xi < 0 is bounded at -sigma/xi."""
        p = self.params
        if self.family == "gaussian":
            return (-math.inf, math.inf)
        if self.family == "uniform":
            return (p["low"], p["high"])
        if self.family == "lognormal":
            return (0.0, math.inf)
        if self.family == "gpd":
            hi = -p["sigma"] / p["xi"] if p["xi"] < 0 else math.inf
            return (0.0, hi)
        hi = max(
            (-c["sigma"] / c["xi"] if c["xi"] < 0 else math.inf) for c in p["components"]
        )
        return (0.0, hi)

    def to_dict(self) -> dict:
        return {"family": self.family, "dim": self.dim, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        d = dict(d)
        family = d.pop("family")
        dim = d.pop("dim", 1)
        return cls(family=family, params=d, dim=dim)


_NOISE_DEFAULTS = {
    "gaussian": {"loc": 0.0, "scale": 1.0},
    "uniform": {"low": -1.0, "high": 1.0},
    "lognormal": {"log_loc": 1.0, "log_scale": 1.0},
    "gpd": {"xi": 1.0, "sigma": 1.0},
    "gpd_mixture": {"components": [{"xi": 1.0, "sigma": 1.0}], "weights": [1.0]},
}


def sample_noise(spec: NoiseSpec, n: int, rng: RandomSource) -> np.ndarray:
    """Draw an (n, dim) matrix of i.i.d. latent noise."""
    if n < 1:
        raise ValueError("n must be >= 1")
    size = (int(n), spec.dim)
    p = spec.params
    if spec.family == "gaussian":
        return p["loc"] + p["scale"] * rng.normal(size)
    if spec.family == "uniform":
        return p["low"] + (p["high"] - p["low"]) * rng.uniform(size)
    if spec.family == "lognormal":
        return np.exp(p["log_loc"] + p["log_scale"] * rng.normal(size))
    if spec.family == "gpd":
        return gpd_inverse_cdf(rng.open_uniform(size), p["xi"], p["sigma"])
    comps = p["components"]
    idx = rng.choice_index(np.asarray(p["weights"]), int(np.prod(size))).reshape(size)
    u = rng.open_uniform(size)
    out = np.empty(size)
    for j, c in enumerate(comps):
        mask = idx == j
        if np.any(mask):
            out[mask] = gpd_inverse_cdf(u[mask], c["xi"], c["sigma"])
    return out


def noise_cdf(spec: NoiseSpec, z) -> np.ndarray:
    """CDF of a 1D noise family, used to build the optimal transport map."""
    if spec.dim != 1:
        raise ValueError("noise_cdf is defined for 1D noise only")
    z_arr = np.atleast_1d(np.asarray(z, dtype=np.float64))
    p = spec.params
    if spec.family == "gaussian":
        out = _phi((z_arr - p["loc"]) / p["scale"])
    elif spec.family == "uniform":
        out = np.clip((z_arr - p["low"]) / (p["high"] - p["low"]), 0.0, 1.0)
    elif spec.family == "lognormal":
        out = np.zeros_like(z_arr)
        pos = z_arr > 0
        out[pos] = _phi((np.log(z_arr[pos]) - p["log_loc"]) / p["log_scale"])
    elif spec.family == "gpd":
        out = 1.0 - gpd_ccdf(z_arr, p["xi"], p["sigma"])
    else:
        w = np.asarray(p["weights"], dtype=np.float64)
        out = sum(
            wi * (1.0 - gpd_ccdf(z_arr, c["xi"], c["sigma"]))
            for wi, c in zip(w, p["components"])
        )
    return float(out[0]) if np.isscalar(z) else out.reshape(np.shape(z))


def _phi(x):
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# target specification
# ---------------------------------------------------------------------------


@dataclass
class TargetSpec:
    """Synthetic target distribution used by the experiments.

    One-dimensional kinds: gaussian, uniform, cauchy, pareto, mixture1d
    (components of the former kinds).  Two-dimensional benchmarks: ring2d
    (8 modes), grid2d (25 modes), dual_moon, circle_gaussians, two_rings,
    heavy_tail_2d.  High-dimensional: linear_gaussian_hd with a mixing
    matrix drawn once from its matrix_seed and then fixed.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind in MIXTURE_PRESETS:
            self.params = dict(MIXTURE_PRESETS[self.kind])
            self.kind = "mixture1d"
        if self.kind not in _TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.kind!r}")
        p = dict(_TARGET_DEFAULTS.get(self.kind, {}))
        unknown = set(self.params) - set(p) if self.kind != "mixture1d" else set()
        if self.kind == "mixture1d":
            required = {"components", "weights"}
            missing = required - set(self.params)
            if missing:
                raise ValueError(f"mixture1d requires {sorted(missing)}")
            unknown = set(self.params) - required
        if unknown:
            raise ValueError(f"unexpected parameter(s) {sorted(unknown)} for target kind {self.kind!r}")
        p.update(self.params)
        self.params = p
        self._validate()

    def _validate(self):
        p = self.params
        k = self.kind
        if k == "gaussian" and p["scale"] <= 0:
            raise ValueError("scale must be positive")
        if k == "uniform" and not p["low"] < p["high"]:
            raise ValueError("uniform target requires low < high")
        if k == "cauchy" and p["scale"] <= 0:
            raise ValueError("scale must be positive")
        if k == "pareto" and (p["scale"] <= 0 or p["shape"] <= 0):
            raise ValueError("pareto scale and shape must be positive")
        if k == "mixture1d":
            w = np.asarray(p["weights"], dtype=np.float64)
            if len(p["components"]) != len(w) or len(w) < 1:
                raise ValueError("components and weights must be nonempty and equal length")
            if np.any(w < 0) or abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
                raise ValueError("mixture weights must be nonnegative and sum to 1")
            for c in p["components"]:
                if c["kind"] not in ("gaussian", "uniform", "cauchy", "pareto"):
                    raise ValueError(f"unsupported mixture component kind {c['kind']!r}")
                TargetSpec(c["kind"], {k2: v for k2, v in c.items() if k2 != "kind"})
        if k in ("ring2d", "grid2d", "circle_gaussians", "two_rings", "dual_moon"):
            for key in ("std", "radius", "spacing", "noise_std", "radial_std"):
                if key in p and p[key] <= 0:
                    raise ValueError(f"{key} must be positive")
        if k == "linear_gaussian_hd":
            if p["data_dim"] < 2 or p["latent_dim"] < 1 or p["latent_dim"] > p["data_dim"]:
                raise ValueError("linear_gaussian_hd needs data_dim >= 2 and 1 <= latent_dim <= data_dim")

    @property
    def dim(self) -> int:
        if self.kind in ("gaussian", "uniform", "cauchy", "pareto", "mixture1d"):
            return 1
        if self.kind == "linear_gaussian_hd":
            return int(self.params["data_dim"])
        return 2

    def mixing_matrix(self) -> np.ndarray:
        """Mixing matrix of the linear-Gaussian model, fixed per spec."""
        if self.kind != "linear_gaussian_hd":
            raise ValueError("mixing_matrix is only defined for linear_gaussian_hd")
        p = self.params
        rng = RandomSource(int(p["matrix_seed"])).split("mixing-matrix")
        return rng.normal((int(p["data_dim"]), int(p["latent_dim"])))

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        out.update(self.params)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TargetSpec":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind=kind, params=d)


_TARGET_DEFAULTS = {
    "gaussian": {"loc": 0.0, "scale": 1.0},
    "uniform": {"low": -1.0, "high": 1.0},
    "cauchy": {"loc": 0.0, "scale": 1.0},
    "pareto": {"scale": 1.0, "shape": 1.0},
    "mixture1d": {},
    "ring2d": {"radius": 2.0, "std": 0.02},
    "grid2d": {"spacing": 2.0, "side": 5, "std": 0.05},
    "dual_moon": {"radius": 2.0, "noise_std": 0.1},
    "circle_gaussians": {"radius": 3.0, "std": 0.2},
    "two_rings": {"radii": [1.0, 3.0], "radial_std": 0.1},
    "linear_gaussian_hd": {
        "data_dim": 20,
        "latent_dim": 2,
        "latent_std": math.sqrt(10.0),
        "obs_std": 0.1,
        "matrix_seed": 0,
    },
    "heavy_tail_2d": {"loc": 0.5, "scale": 1.0},
}


def mode_centers(spec: TargetSpec) -> np.ndarray:
    """Gaussian-component centers of the multi-modal 2D benchmarks."""
    p = spec.params
    if spec.kind == "ring2d":
        ang = 2.0 * np.pi * np.arange(8) / 8.0
        return p["radius"] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if spec.kind == "circle_gaussians":
        ang = 2.0 * np.pi * np.arange(8) / 8.0
        return p["radius"] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    if spec.kind == "grid2d":
        side = int(p["side"])
        axis = p["spacing"] * (np.arange(side) - (side - 1) / 2.0)
        xx, yy = np.meshgrid(axis, axis)
        return np.stack([xx.ravel(), yy.ravel()], axis=1)
    raise ValueError(f"target kind {spec.kind!r} has no mode layout")


# ---------------------------------------------------------------------------
# target sampling
# ---------------------------------------------------------------------------


def _sample_component(kind: str, params: dict, n: int, rng: RandomSource) -> np.ndarray:
    if kind == "gaussian":
        return params["loc"] + params["scale"] * rng.normal(n)
    if kind == "uniform":
        return params["low"] + (params["high"] - params["low"]) * rng.uniform(n)
    if kind == "cauchy":
        u = rng.open_uniform(n)
        return params["loc"] + params["scale"] * np.tan(np.pi * (u - 0.5))
    if kind == "pareto":
        # open_uniform keeps u < 1, so 1 - u stays positive
        u = rng.open_uniform(n)
        return params["scale"] * np.power(1.0 - u, -1.0 / params["shape"])
    raise ValueError(kind)


def sample_target(spec: TargetSpec, n: int, rng: RandomSource) -> np.ndarray:
    """Draw an (n, D) matrix of i.i.d. samples from the target."""
    if n < 1:
        raise ValueError("n must be >= 1")
    n = int(n)
    p = spec.params
    k = spec.kind

    if k in ("gaussian", "uniform", "cauchy", "pareto"):
        return _sample_component(k, p, n, rng).reshape(n, 1)

    if k == "mixture1d":
        idx = rng.choice_index(np.asarray(p["weights"]), n)
        out = np.empty(n)
        for j, c in enumerate(p["components"]):
            mask = idx == j
            if np.any(mask):
                cp = {k2: v for k2, v in c.items() if k2 != "kind"}
                out[mask] = _sample_component(c["kind"], cp, int(mask.sum()), rng)
        return out.reshape(n, 1)

    if k in ("ring2d", "grid2d", "circle_gaussians"):
        centers = mode_centers(spec)
        idx = rng.integers(0, len(centers), n)
        return centers[idx] + p["std"] * rng.normal((n, 2))

    if k == "dual_moon":
        r = p["radius"]
        idx = rng.integers(0, 2, n)
        theta = np.pi * rng.uniform(n)
        x = np.where(idx == 0, r * np.cos(theta), r - r * np.cos(theta))
        y = np.where(idx == 0, r * np.sin(theta), r / 2.0 - r * np.sin(theta))
        return np.stack([x, y], axis=1) + p["noise_std"] * rng.normal((n, 2))

    if k == "two_rings":
        radii = np.asarray(p["radii"], dtype=np.float64)
        idx = rng.integers(0, len(radii), n)
        theta = 2.0 * np.pi * rng.uniform(n)
        r = radii[idx] + p["radial_std"] * rng.normal(n)
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)

    if k == "linear_gaussian_hd":
        mat = spec.mixing_matrix()
        d_lat = int(p["latent_dim"])
        z = p["latent_std"] * rng.normal((n, d_lat))
        eps = p["obs_std"] * rng.normal((n, int(p["data_dim"])))
        return z @ mat.T + eps

    if k == "heavy_tail_2d":
        u = rng.open_uniform((n, 2))
        ab = p["loc"] + p["scale"] * np.tan(np.pi * (u - 0.5))
        a, b = ab[:, 0], ab[:, 1]
        x0 = a + b
        diff = a - b
        x1 = np.sign(diff) * np.sqrt(np.abs(diff))
        return np.stack([x0, x1], axis=1)

    raise ValueError(k)


# ---------------------------------------------------------------------------
# CDF / quantile for 1D targets
# ---------------------------------------------------------------------------


def _component_cdf(kind: str, params: dict, x: np.ndarray) -> np.ndarray:
    if kind == "gaussian":
        return _phi((x - params["loc"]) / params["scale"])
    if kind == "uniform":
        return np.clip((x - params["low"]) / (params["high"] - params["low"]), 0.0, 1.0)
    if kind == "cauchy":
        return 0.5 + np.arctan((x - params["loc"]) / params["scale"]) / np.pi
    if kind == "pareto":
        xm, a = params["scale"], params["shape"]
        out = np.zeros_like(x)
        pos = x > xm
        out[pos] = 1.0 - np.power(xm / x[pos], a)
        return out
    raise ValueError(kind)


def target_cdf(spec: TargetSpec, x) -> np.ndarray:
    """CDF of a one-dimensional target, vectorized over x."""
    if spec.dim != 1:
        raise ValueError("target_cdf is defined for 1D targets only")
    x_arr = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if spec.kind == "mixture1d":
        w = np.asarray(spec.params["weights"], dtype=np.float64)
        out = np.zeros_like(x_arr)
        for wi, c in zip(w, spec.params["components"]):
            cp = {k: v for k, v in c.items() if k != "kind"}
            out = out + wi * _component_cdf(c["kind"], cp, x_arr)
    else:
        out = _component_cdf(spec.kind, spec.params, x_arr)
    return float(out[0]) if np.isscalar(x) else out.reshape(np.shape(x))


_QUANTILE_TOL = 1e-10


def target_quantile(spec: TargetSpec, u):
    """Inverse CDF of a 1D target; closed form where available, bisection
    (absolute tolerance 1e-10) on the mixture CDF otherwise."""
    if spec.dim != 1:
        raise ValueError("target_quantile is defined for 1D targets only")
    u_arr = np.atleast_1d(np.asarray(u, dtype=np.float64))
    if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
        raise ValueError("u must lie strictly inside (0, 1)")
    p = spec.params
    if spec.kind == "cauchy":
        q = p["loc"] + p["scale"] * np.tan(np.pi * (u_arr - 0.5))
    elif spec.kind == "uniform":
        q = p["low"] + (p["high"] - p["low"]) * u_arr
    elif spec.kind == "pareto":
        q = p["scale"] * np.power(1.0 - u_arr, -1.0 / p["shape"])
    else:
        q = _bisect_quantile(lambda x: target_cdf(spec, x), u_arr)
    return float(q[0]) if np.isscalar(u) else q.reshape(np.shape(u))


def _bisect_quantile(cdf, u: np.ndarray) -> np.ndarray:
    lo = np.full_like(u, -1.0)
    hi = np.full_like(u, 1.0)
    # geometric bracket expansion; CDF is monotone so this terminates
    for _ in range(2100):
        bad = cdf(lo) >= u
        if not np.any(bad):
            break
        lo[bad] = lo[bad] * 2.0 - 1.0
    for _ in range(2100):
        bad = cdf(hi) < u
        if not np.any(bad):
            break
        hi[bad] = hi[bad] * 2.0 + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = cdf(mid) < u
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) <= _QUANTILE_TOL:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# random projection directions
# ---------------------------------------------------------------------------


def sample_unit_sphere(d_plus_1: int, m: int, rng: RandomSource) -> np.ndarray:
    """Draw m directions uniformly on the unit sphere in d_plus_1 dims.

    Standard Gaussian vectors normalized to unit length; rows that land at
    (numerically) zero norm are redrawn.
    """
    if d_plus_1 < 1 or m < 1:
        raise ValueError("dimensions must be >= 1")
    out = rng.normal((int(m), int(d_plus_1)))
    norms = np.linalg.norm(out, axis=1)
    for _ in range(100):
        bad = norms < 1e-12
        if not np.any(bad):
            break
        out[bad] = rng.normal((int(bad.sum()), int(d_plus_1)))
        norms = np.linalg.norm(out, axis=1)
    return out / norms[:, None]
