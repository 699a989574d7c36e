"""Synthetic task families, feature-table ingestion, and whitening.

Every generator is a pure function of (spec, n, seed).  Family parameters
that fix a concrete task instance (mixture means, Fourier coefficients, ...)
are drawn from the spec's own seed, so the same spec always denotes the same
distribution while the draw seed only controls the sample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import (
    DataError,
    DimError,
    EmptyTable,
    FormatError,
    SamplerStall,
    SingularCovariance,
)
from .kernels import SupportSet

__all__ = [
    "Gmm",
    "Shell",
    "Moons",
    "Rings",
    "Spirals",
    "FourierDensity",
    "External",
    "TaskSpec",
    "FeatureTable",
    "WhitenConfig",
    "WhitenTransform",
    "sample_task",
    "make_support_and_eval",
    "whiten",
    "load_feature_table",
    "save_feature_table",
    "anisotropic_gaussian_features",
]

_FOURIER_BOX = 3.0
_FOURIER_GRID = 1201
_STALL_FLOOR = 1e-4
_STALL_MIN_PROPOSALS = 20_000


@dataclass(frozen=True)
class FeatureTable:
    """n x d matrix of ingested features with optional column names."""

    rows: np.ndarray
    names: Optional[tuple[str, ...]] = None
    source: Optional[str] = None

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise DimError(f"feature table must be 2-d, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise DataError("feature table contains non-finite entries")
        rows = np.ascontiguousarray(rows)
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class Gmm:
    """Gaussian mixture: k means uniform in [-sep, sep]^d, per-component
    isotropic std log-uniform in [std_lo, std_hi], equal mixture weights."""

    d: int
    k_components: int = 5
    separation_scale: float = 2.0
    std_lo: float = 0.1
    std_hi: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 1 or self.k_components < 1:
            raise ValueError("need d >= 1 and k_components >= 1")
        if not 0.0 < self.std_lo <= self.std_hi:
            raise ValueError("need 0 < std_lo <= std_hi")


@dataclass(frozen=True)
class Shell:
    """Spherical shell: uniform direction, radius ~ N(mean, std^2) truncated
    to the positive part of [mean - 6 std, mean + 6 std]."""

    d: int
    radius_mean: float = 1.0
    radius_std: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("need d >= 1")
        if not self.radius_mean > 0.0 or self.radius_std < 0.0:
            raise ValueError("need radius_mean > 0 and radius_std >= 0")


@dataclass(frozen=True)
class Moons:
    """Two interleaved half-circles in R^2 plus isotropic noise."""

    noise: float = 0.05
    seed: int = 0
    d = 2


@dataclass(frozen=True)
class Rings:
    """k concentric circles in R^2, radii evenly spaced up to 2."""

    k_rings: int = 3
    noise: float = 0.05
    seed: int = 0
    d = 2

    def __post_init__(self) -> None:
        if self.k_rings < 1:
            raise ValueError("need k_rings >= 1")


@dataclass(frozen=True)
class Spirals:
    """k Archimedean arms in R^2 plus isotropic noise."""

    k_arms: int = 2
    noise: float = 0.05
    seed: int = 0
    d = 2

    def __post_init__(self) -> None:
        if self.k_arms < 1:
            raise ValueError("need k_arms >= 1")


@dataclass(frozen=True)
class FourierDensity:
    """Unnormalized log-density on [-3, 3]^d given by a random truncated
    Fourier series of n_modes plane waves with integer frequency vectors,
    coefficient variance 1/|frequency|.

    With a handful of joint modes the log-density range stays O(1) in any
    dimension, so rejection against a uniform proposal keeps a workable
    acceptance rate even at d = 8; the bound comes from a grid scan in low
    dimension and a seeded space scan otherwise, plus a fixed log-margin."""

    d: int
    n_modes: int = 3
    amplitude: float = 1.0
    max_frequency: int = 3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.d < 1 or self.n_modes < 1:
            raise ValueError("need d >= 1 and n_modes >= 1")
        if not self.amplitude > 0.0:
            raise ValueError("amplitude must be positive")
        if self.max_frequency < 1:
            raise ValueError("max_frequency must be >= 1")


@dataclass(frozen=True)
class External:
    """Task backed by an ingested feature table; draws resample its rows."""

    table: FeatureTable


TaskSpec = Union[Gmm, Shell, Moons, Rings, Spirals, FourierDensity, External]

_FAMILY_TAGS = {Gmm: 1, Shell: 2, Moons: 3, Rings: 4, Spirals: 5, FourierDensity: 6, External: 7}


def _draw_rng(spec: TaskSpec, seed: int) -> np.random.Generator:
    tag = _FAMILY_TAGS[type(spec)]
    inst = 0 if isinstance(spec, External) else spec.seed
    return np.random.default_rng(np.random.SeedSequence([tag, inst, seed]))


def _instance_rng(spec: TaskSpec) -> np.random.Generator:
    tag = _FAMILY_TAGS[type(spec)]
    return np.random.default_rng(np.random.SeedSequence([tag, spec.seed]))


def _sample_gmm(spec: Gmm, n: int, rng: np.random.Generator) -> np.ndarray:
    inst = _instance_rng(spec)
    means = inst.uniform(-spec.separation_scale, spec.separation_scale, (spec.k_components, spec.d))
    stds = np.exp(inst.uniform(np.log(spec.std_lo), np.log(spec.std_hi), spec.k_components))
    comp = rng.integers(spec.k_components, size=n)
    return means[comp] + stds[comp, None] * rng.standard_normal((n, spec.d))


def _sample_shell(spec: Shell, n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, spec.d))
    dirs = z / np.linalg.norm(z, axis=1, keepdims=True)
    if spec.radius_std == 0.0:
        return spec.radius_mean * dirs
    radii = np.empty(n)
    todo = np.arange(n)
    lo = max(0.0, spec.radius_mean - 6.0 * spec.radius_std)
    hi = spec.radius_mean + 6.0 * spec.radius_std
    while todo.size:
        r = spec.radius_mean + spec.radius_std * rng.standard_normal(todo.size)
        ok = (r > lo) & (r <= hi) & (r > 0.0)
        radii[todo[ok]] = r[ok]
        todo = todo[~ok]
    return radii[:, None] * dirs


def _sample_moons(spec: Moons, n: int, rng: np.random.Generator) -> np.ndarray:
    which = rng.integers(2, size=n)
    theta = rng.uniform(0.0, np.pi, n)
    x = np.where(which == 0, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(which == 0, np.sin(theta), 0.5 - np.sin(theta))
    pts = np.column_stack([x, y])
    return pts + spec.noise * rng.standard_normal((n, 2))


def _sample_rings(spec: Rings, n: int, rng: np.random.Generator) -> np.ndarray:
    ring = rng.integers(spec.k_rings, size=n)
    radii = 2.0 * (ring + 1) / spec.k_rings
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    pts = radii[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
    return pts + spec.noise * rng.standard_normal((n, 2))


def _sample_spirals(spec: Spirals, n: int, rng: np.random.Generator) -> np.ndarray:
    arm = rng.integers(spec.k_arms, size=n)
    theta = 3.0 * np.pi * np.sqrt(rng.uniform(0.0, 1.0, n))
    r = 2.0 * theta / (3.0 * np.pi)
    angle = theta + 2.0 * np.pi * arm / spec.k_arms
    pts = r[:, None] * np.column_stack([np.cos(angle), np.sin(angle)])
    return pts + spec.noise * rng.standard_normal((n, 2))


_FOURIER_MARGIN = 0.5  # log-space headroom above the scanned maximum


def _fourier_modes(spec: FourierDensity) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Frequency matrix (n_modes, d) in radians plus cosine/sine coefficients."""
    inst = _instance_rng(spec)
    waves = np.zeros((spec.n_modes, spec.d), dtype=np.int64)
    for k in range(spec.n_modes):
        while True:
            w = inst.integers(0, spec.max_frequency + 1, spec.d)
            if w.any():
                break
        waves[k] = w
    norms = np.linalg.norm(waves, axis=1)
    a = spec.amplitude * inst.standard_normal(spec.n_modes) / np.sqrt(norms)
    b = spec.amplitude * inst.standard_normal(spec.n_modes) / np.sqrt(norms)
    return waves * (np.pi / _FOURIER_BOX), a, b


def _fourier_logdens(x: np.ndarray, waves: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    phase = np.atleast_2d(x) @ waves.T
    return np.cos(phase) @ a + np.sin(phase) @ b


def _fourier_scan_mesh(spec: FourierDensity) -> np.ndarray:
    """Box scan: a regular grid while affordable, a seeded space scan above d=2."""
    if spec.d <= 2:
        axis = np.linspace(-_FOURIER_BOX, _FOURIER_BOX, _FOURIER_GRID if spec.d == 1 else 201)
        return np.stack(np.meshgrid(*[axis] * spec.d), axis=-1).reshape(-1, spec.d)
    scan_rng = np.random.default_rng(np.random.SeedSequence([63, spec.seed, spec.d]))
    return scan_rng.uniform(-_FOURIER_BOX, _FOURIER_BOX, (8192, spec.d))


def _fourier_bound(spec: FourierDensity, waves, a, b) -> float:
    """Upper bound on the log-density from the box scan.

    The fixed margin covers the gap between the scanned and true maximum of
    the smooth low-mode series.
    """
    return float(np.max(_fourier_logdens(_fourier_scan_mesh(spec), waves, a, b))) + _FOURIER_MARGIN


def _sample_fourier(
    spec: FourierDensity, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, int, int]:
    """Joint rejection against Uniform[-3, 3]^d; returns (samples, proposed, accepted)."""
    waves, a, b = _fourier_modes(spec)
    bound = _fourier_bound(spec, waves, a, b)
    out = np.empty((n, spec.d))
    filled = 0
    proposed = 0
    while filled < n:
        batch = max(1024, 2 * (n - filled))
        u = rng.uniform(-_FOURIER_BOX, _FOURIER_BOX, (batch, spec.d))
        accept = rng.uniform(0.0, 1.0, batch) < np.exp(_fourier_logdens(u, waves, a, b) - bound)
        proposed += batch
        got = u[accept][: n - filled]
        out[filled : filled + got.shape[0]] = got
        filled += got.shape[0]
        if proposed >= _STALL_MIN_PROPOSALS and filled / proposed < _STALL_FLOOR:
            raise SamplerStall(
                f"rejection acceptance {filled / proposed:.2e} below {_STALL_FLOOR:.0e}"
            )
    return out, proposed, filled


def fourier_acceptance_stats(spec: FourierDensity, n: int, seed: int) -> dict:
    """Empirical vs scan-predicted acceptance rate (envelope guard)."""
    waves, a, b = _fourier_modes(spec)
    bound = _fourier_bound(spec, waves, a, b)
    mesh = _fourier_scan_mesh(spec)
    predicted = float(np.mean(np.exp(_fourier_logdens(mesh, waves, a, b) - bound)))
    _, proposed, accepted = _sample_fourier(spec, n, _draw_rng(spec, seed))
    return {"predicted": predicted, "empirical": accepted / proposed}


def sample_task(spec: TaskSpec, n: int, seed: int) -> np.ndarray:
    """n i.i.d. draws from the task family; deterministic in (spec, n, seed)."""
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = _draw_rng(spec, seed)
    if isinstance(spec, Gmm):
        return _sample_gmm(spec, n, rng)
    if isinstance(spec, Shell):
        return _sample_shell(spec, n, rng)
    if isinstance(spec, Moons):
        return _sample_moons(spec, n, rng)
    if isinstance(spec, Rings):
        return _sample_rings(spec, n, rng)
    if isinstance(spec, Spirals):
        return _sample_spirals(spec, n, rng)
    if isinstance(spec, FourierDensity):
        return _sample_fourier(spec, n, rng)[0]
    if isinstance(spec, External):
        idx = rng.integers(spec.table.n, size=n)
        return spec.table.rows[idx].copy()
    raise TypeError(f"unknown task spec {spec!r}")


def make_support_and_eval(
    spec: TaskSpec, m: int, n_eval: int, seed: int
) -> tuple[SupportSet, np.ndarray]:
    """Support set and evaluation draws from disjoint RNG substreams.

    For an External table the two parts are disjoint row subsets of a seeded
    permutation, so evaluation rows are held out rather than resampled.
    """
    if m < 1:
        raise ValueError(f"need m >= 1, got {m}")
    if isinstance(spec, External):
        if m + n_eval > spec.table.n:
            raise ValueError(
                f"table has {spec.table.n} rows, cannot split into {m} + {n_eval}"
            )
        perm = _draw_rng(spec, seed).permutation(spec.table.n)
        rows = spec.table.rows
        return SupportSet(rows[perm[:m]]), rows[perm[m : m + n_eval]].copy()
    sup_seed, ev_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2, np.uint64))
    support = SupportSet(sample_task(spec, m, sup_seed))
    eval_rows = sample_task(spec, n_eval, ev_seed) if n_eval > 0 else np.empty((0, support.d))
    return support, eval_rows


@dataclass(frozen=True)
class WhitenConfig:
    """Interpolated whitening strength: 0 is identity, 1 makes covariance I."""

    strength: float
    regularization: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= float(self.strength) <= 1.0:
            raise ValueError(f"strength must lie in [0, 1], got {self.strength!r}")
        if float(self.regularization) < 0.0:
            raise ValueError("regularization must be >= 0")


@dataclass(frozen=True)
class WhitenTransform:
    """Record of an affine whitening map x -> W (x - mean) + mean."""

    mean: np.ndarray
    matrix: np.ndarray
    strength: float
    regularization: float
    eigenvalues: np.ndarray

    def apply(self, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        return (rows - self.mean) @ self.matrix.T + self.mean


def whiten(table: FeatureTable, cfg: WhitenConfig) -> tuple[FeatureTable, WhitenTransform]:
    """Map rows by C^(-strength/2) about their mean, C = covariance + ridge.

    strength 0 returns the rows untouched (full identity, mean included);
    strength 1 makes the sample covariance the identity up to the ridge.
    """
    rows = table.rows
    mean = rows.mean(axis=0)
    lam = float(cfg.strength)
    eps = float(cfg.regularization)
    if lam == 0.0:
        record = WhitenTransform(mean, np.eye(table.d), lam, eps, np.ones(table.d))
        return table, record
    if table.n < table.d + 1 and eps == 0.0:
        raise SingularCovariance(
            f"{table.n} rows cannot give a full-rank covariance in d={table.d}; set a ridge"
        )
    cov = np.cov(rows, rowvar=False, ddof=1).reshape(table.d, table.d) + eps * np.eye(table.d)
    vals, vecs = np.linalg.eigh(cov)
    if np.min(vals) <= 0.0:
        raise SingularCovariance("covariance is singular; set a positive ridge")
    w = (vecs * vals ** (-lam / 2.0)) @ vecs.T
    record = WhitenTransform(mean, w, lam, eps, vals)
    out = FeatureTable(rows=record.apply(rows), names=table.names, source=table.source)
    return out, record


_MAGIC = b"NWF1"


def load_feature_table(path: str, fmt: str = "csv") -> FeatureTable:
    """Read a feature table from CSV or the NWF1 binary layout."""
    if fmt == "csv":
        return _load_csv(path)
    if fmt == "bin":
        return _load_bin(path)
    raise FormatError(f"unknown format {fmt!r}; expected 'csv' or 'bin'")


def _load_csv(path: str) -> FeatureTable:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise EmptyTable(f"{path} holds no rows")
    cells = [ln.split(",") for ln in lines]
    widths = {len(row) for row in cells}
    if len(widths) != 1:
        raise FormatError(f"{path} has ragged rows (widths {sorted(widths)})")
    names = None
    try:
        [float(c) for c in cells[0]]
    except ValueError:
        names = tuple(c.strip() for c in cells[0])
        cells = cells[1:]
    if not cells:
        raise EmptyTable(f"{path} has a header but no data rows")
    try:
        rows = np.array([[float(c) for c in row] for row in cells], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: unparseable cell ({exc})") from exc
    if not np.all(np.isfinite(rows)):
        raise DataError(f"{path} contains non-finite values")
    return FeatureTable(rows=rows, names=names, source=path)


def _load_bin(path: str) -> FeatureTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {_MAGIC!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    n, d = struct.unpack("<II", blob[4:12])
    if n == 0:
        raise EmptyTable(f"{path} declares zero rows")
    expected = 12 + 8 * n * d
    if len(blob) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {n}x{d}, got {len(blob)}")
    rows = np.frombuffer(blob, dtype="<f8", offset=12).reshape(n, d)
    if not np.all(np.isfinite(rows)):
        raise DataError(f"{path} contains non-finite values")
    return FeatureTable(rows=rows.astype(np.float64), source=path)


def save_feature_table(
    rows: np.ndarray,
    path: str,
    fmt: str = "csv",
    names: Optional[tuple[str, ...]] = None,
) -> None:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            if names is not None:
                fh.write(",".join(names) + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    elif fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<II", rows.shape[0], rows.shape[1]))
            fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())
    else:
        raise FormatError(f"unknown format {fmt!r}; expected 'csv' or 'bin'")


def anisotropic_gaussian_features(
    n: int, d: int, seed: int = 0, top_std: float = 0.8, decay: float = 0.5
) -> FeatureTable:
    """Synthetic stand-in for PCA-style features: a rotated Gaussian whose
    spectrum decays geometrically, so most variance sits in a few directions."""
    rng = np.random.default_rng(np.random.SeedSequence([97, seed]))
    stds = top_std * decay ** np.arange(d)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    rows = (rng.standard_normal((n, d)) * stds) @ q.T
    return FeatureTable(rows=rows, source="synthetic-anisotropic")
