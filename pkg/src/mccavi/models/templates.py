"""Lorentzian multiplet templates, spectra and the metabolite catalog format."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..stats import as_generator


def lorentzian(x, gamma):
    """Unit-area Lorentzian with full width ``gamma`` at half height."""
    if not gamma > 0:
        raise ValueError("peak width must be positive")
    x = np.asarray(x, dtype=float)
    return (2.0 / math.pi) * gamma / (4.0 * x * x + gamma * gamma)


@dataclass(frozen=True)
class Multiplet:
    center: float
    protons: float
    offsets: tuple = (0.0,)
    weights: tuple = (1.0,)

    def __post_init__(self):
        if len(self.offsets) != len(self.weights) or not self.offsets:
            raise ValueError("a multiplet needs matching, non-empty offset and weight lists")
        if not self.protons > 0:
            raise ValueError("proton count must be positive")
        w = np.asarray(self.weights, float)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("peak weights must be non-negative and sum to 1")
        off = np.sort(np.asarray(self.offsets, float))
        if not np.allclose(off, -off[::-1], atol=1e-12):
            raise ValueError("peak offsets must be symmetric around 0")

    @property
    def n_peaks(self):
        return len(self.offsets)

    def evaluate(self, grid, gamma, center=None):
        c = self.center if center is None else center
        grid = np.asarray(grid, float)
        out = np.zeros(grid.shape)
        for o, w in zip(self.offsets, self.weights):
            out += w * lorentzian(grid - c - o, gamma)
        return self.protons * out


@dataclass(frozen=True)
class MetaboliteTemplate:
    name: str
    multiplets: tuple = field(default_factory=tuple)

    @property
    def centers(self):
        return np.array([m.center for m in self.multiplets])

    def evaluate(self, grid, gamma, centers=None):
        centers = self.centers if centers is None else np.asarray(centers, float)
        return sum(m.evaluate(grid, gamma, c) for m, c in zip(self.multiplets, centers))


def template_matrix(templates, gamma, centers, grid) -> np.ndarray:
    """n x M matrix of template evaluations; ``centers`` is one array per metabolite
    (or a flat array over all multiplets in catalog order)."""
    grid = np.asarray(grid, float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    if centers is None:
        per = [t.centers for t in templates]
    elif len(centers) == sum(len(t.multiplets) for t in templates) and np.ndim(centers[0]) == 0:
        flat = np.asarray(centers, float)
        per, pos = [], 0
        for t in templates:
            per.append(flat[pos:pos + len(t.multiplets)])
            pos += len(t.multiplets)
    else:
        per = centers
    return np.column_stack([t.evaluate(grid, gamma, c) for t, c in zip(templates, per)])


def multiplet_contributions(templates, gamma, flat_centers, grid) -> np.ndarray:
    """One column per multiplet (catalog order), unscaled by concentration."""
    cols = []
    pos = 0
    for t in templates:
        for m in t.multiplets:
            cols.append(m.evaluate(grid, gamma, flat_centers[pos]))
            pos += 1
    return np.column_stack(cols)


def multiplet_owner(templates) -> np.ndarray:
    return np.concatenate([np.full(len(t.multiplets), i) for i, t in enumerate(templates)])


# -- spectra -----------------------------------------------------------------

@dataclass
class Spectrum:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, float)
        self.y = np.asarray(self.y, float)
        if self.x.shape != self.y.shape or self.x.ndim != 1:
            raise ValueError("ppm grid and intensities must be vectors of equal length")
        if np.any(np.diff(self.x) <= 0):
            raise ValueError("ppm grid must be strictly increasing")
        if abs(self.y.sum() - 1.0) > 1e-9:
            raise ValueError("intensities must sum to 1; use Spectrum.normalised")

    @classmethod
    def normalised(cls, x, y):
        y = np.asarray(y, float)
        return cls(x, y / y.sum())

    @property
    def n(self):
        return self.x.size


def write_spectrum(path, spectrum: Spectrum, comment: str | None = None):
    with open(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        fh.write("# ppm intensity\n")
        for a, b in zip(spectrum.x, spectrum.y):
            fh.write(f"{float(a)!r} {float(b)!r}\n")


def read_spectrum(path) -> Spectrum:
    """Two whitespace-separated columns; '#' starts a comment. Renormalised on load."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, found {data.shape[1]}")
    order = np.argsort(data[:, 0])
    return Spectrum.normalised(data[order, 0], data[order, 1])


def catalog_to_dict(templates) -> dict:
    return {"metabolites": [
        {"name": t.name, "multiplets": [
            {"center": m.center, "protons": m.protons,
             "peaks": [[o, w] for o, w in zip(m.offsets, m.weights)]} for m in t.multiplets]}
        for t in templates]}


def catalog_from_dict(d) -> list:
    out = []
    for met in d["metabolites"]:
        mults = []
        for m in met["multiplets"]:
            peaks = m.get("peaks", [[0.0, 1.0]])
            mults.append(Multiplet(float(m["center"]), float(m["protons"]),
                                   tuple(float(p[0]) for p in peaks), tuple(float(p[1]) for p in peaks)))
        out.append(MetaboliteTemplate(met["name"], tuple(mults)))
    return out


def write_catalog(path, templates):
    with open(path, "w") as fh:
        json.dump(catalog_to_dict(templates), fh, indent=2)
        fh.write("\n")


def read_catalog(path) -> list:
    with open(path) as fh:
        return catalog_from_dict(json.load(fh))


# -- synthetic fixture ---------------------------------------------------------

J_COUPLING_PPM = 0.0117


def _binomial_multiplet(center, protons, peaks, j=J_COUPLING_PPM):
    w = np.array([math.comb(peaks - 1, k) for k in range(peaks)], float)
    w /= w.sum()
    offsets = (np.arange(peaks) - (peaks - 1) / 2.0) * j
    return Multiplet(center, protons, tuple(offsets), tuple(w))


def synthetic_fixture(rng=0, n: int = 512, lo: float = 1.0, hi: float = 4.0, noise_precision: float = 1e4,
                      gamma: float = 0.005, raw_beta=(1.0, 0.6), bump_height: float = 20.0):
    """Two-metabolite spectrum with a broad unmodelled bump.

    The noise-free signal is scaled to unit sum and noise of precision
    ``noise_precision`` is added on that scale, projected to zero sum so the
    spectrum still sums to exactly 1. The catalog centres are offset from the
    generating ones by a few thousandths of a ppm, as a database estimate
    would be. Returns ``(spectrum, catalog, truth)``.
    """
    rng = as_generator(rng)
    grid = np.linspace(lo, hi, n)
    true_templates = [
        MetaboliteTemplate("metA", (_binomial_multiplet(1.330, 3.0, 2), _binomial_multiplet(3.750, 1.0, 4))),
        MetaboliteTemplate("metB", (_binomial_multiplet(2.050, 3.0, 1), _binomial_multiplet(3.050, 2.0, 3))),
    ]
    shifts = [(0.004, -0.003), (-0.002, 0.005)]
    catalog = [MetaboliteTemplate(t.name, tuple(
        Multiplet(m.center + s, m.protons, m.offsets, m.weights) for m, s in zip(t.multiplets, sh)))
        for t, sh in zip(true_templates, shifts)]
    T = template_matrix(true_templates, gamma, None, grid)
    bump = bump_height * np.exp(-0.5 * ((grid - 2.6) / 0.15) ** 2)
    signal = T @ np.asarray(raw_beta, float) + bump
    scale = 1.0 / signal.sum()
    noise = rng.normal(0.0, 1.0 / math.sqrt(noise_precision), size=n)
    y = scale * signal + (noise - noise.mean())
    truth = {"beta": np.asarray(raw_beta, float) * scale, "gamma": gamma,
             "centers": np.concatenate([t.centers for t in true_templates]),
             "theta": noise_precision, "bump": scale * bump}
    return Spectrum(grid, y / y.sum()), catalog, truth
