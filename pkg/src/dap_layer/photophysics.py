"""Closed-form photophysics of near-surface donor-acceptor pairs.

The emission energy of a pair follows the classic Coulomb law
``E(R) = E_g - E_D - E_A + C_c / R`` with ``C_c = e^2 / (4 pi eps0 eps_r)``.
Recombination competes between a radiative channel decaying exponentially
with separation (wave-function overlap) and a short-ranged non-radiative
channel with a Gaussian profile (surface quenching).  Under resonant
excitation the detected intensity at interlayer thickness ``d`` is the
product of the quantum yield and a Gaussian energy-matching window.

All functions are pure and accept scalars or numpy arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, fields, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .constants import HC_EV_NM, COULOMB_EV_NM

__all__ = [
    "ModelParams",
    "dap_energy",
    "radiative_rate",
    "nonradiative_rate",
    "quantum_yield",
    "matching_function",
    "thickness_to_energy",
    "intensity_vs_thickness",
    "peak_thickness",
    "resonance_thickness",
    "lifetime_vs_thickness",
    "wavelength_energy",
]


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the pair-recombination model.

    Energies in eV, lengths in nm, rates in 1/ns.  ``a_eff``, ``b``,
    ``sigma`` and the two rate prefactors have no universal defaults; use
    :func:`dap_layer.presets.calibrated_params` for values fitted to the
    published thickness scans.
    """

    a_eff: float            # overlap length of the radiative channel
    b: float                # quenching length of the non-radiative channel
    sigma: float            # energy width of the excitation window
    W0_r: float             # radiative rate at contact
    W0_nr: float            # non-radiative rate at contact
    E_D: float = 2.2        # donor ionization energy (substitutional nitrogen)
    E_A: float = 1.45       # acceptor ionization energy (surface acceptor)
    E_g: float = 5.4        # band gap
    epsilon_r: float = 5.7  # relative dielectric constant
    W_bg: float = 0.0       # optional thickness-independent quenching rate
    d_min: float = 1.3      # near-surface offset of the thickness-energy law
    E_phonon: float = 0.180  # phonon replica shift of the detected line
    linewidth: float = 0.001  # per-line emission width (Gaussian sigma, eV)

    def __post_init__(self):
        positive = ("a_eff", "b", "sigma", "epsilon_r", "d_min",
                    "E_phonon", "linewidth", "E_D", "E_A", "E_g")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        # rate prefactors may be zero (single-channel limits); evaluation
        # raises once the total rate vanishes
        for name in ("W0_r", "W0_nr", "W_bg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.E_g > self.E_D + self.E_A > 0:
            raise ValueError("need E_g > E_D + E_A > 0")

    def delta_E(self) -> float:
        """Asymptotic pair energy E_g - E_D - E_A (eV)."""
        return self.E_g - self.E_D - self.E_A

    def coulomb_scale(self) -> float:
        """Screened Coulomb energy-distance product C_c (eV nm)."""
        return COULOMB_EV_NM / self.epsilon_r

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown ModelParams fields: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        return cls.from_dict(json.loads(text))


def _check_positive(x, name):
    if np.any(np.asarray(x) <= 0):
        raise ValueError(f"{name} must be > 0")


def _check_nonneg(x, name):
    if np.any(np.asarray(x) < 0):
        raise ValueError(f"{name} must be >= 0")


def dap_energy(R, p: ModelParams):
    """Pair emission energy (eV) at true donor-acceptor separation R (nm).

    Strictly decreasing in R, approaching delta_E for infinitely distant
    pairs.
    """
    _check_positive(R, "separation R")
    return p.delta_E() + p.coulomb_scale() / R


def radiative_rate(d, p: ModelParams):
    """Radiative rate W0_r * exp(-2 d / a_eff) in 1/ns."""
    _check_nonneg(d, "d")
    return p.W0_r * np.exp(-2.0 * d / p.a_eff)


def nonradiative_rate(d, p: ModelParams):
    """Non-radiative rate W0_nr * exp(-(d/b)^2) + W_bg in 1/ns."""
    _check_nonneg(d, "d")
    return p.W0_nr * np.exp(-((d / p.b) ** 2)) + p.W_bg


def quantum_yield(d, p: ModelParams):
    """Fraction of recombinations that are radiative, in (0, 1]."""
    w_r = radiative_rate(d, p)
    w_nr = nonradiative_rate(d, p)
    total = w_r + w_nr
    if np.any(np.asarray(total) == 0):
        raise ValueError("total rate is zero; quantum yield undefined")
    return w_r / total


def matching_function(E_exc, E_dap, sigma):
    """Gaussian weight of the detuning between excitation and pair energy.

    Peaks at 1 on exact resonance; ``sigma`` (eV) is the energy width of
    the excitation window.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    detuning = np.subtract(E_exc, E_dap)
    return np.exp(-(detuning ** 2) / (2.0 * sigma ** 2))


def thickness_to_energy(d, p: ModelParams):
    """Pair energy (eV) addressed at interlayer thickness d (nm).

    Inverse of the hyperbola d(E) = C_c/(E - delta_E) + d_min.  Thicknesses
    at or below d_min fall in the near-surface regime where the offset
    energy is no longer constant and the law does not apply.
    """
    if np.any(np.asarray(d) <= p.d_min):
        raise ValueError(
            f"d must exceed d_min = {p.d_min} nm; below that the"
            " constant-offset energy law breaks down")
    return dap_energy(d - p.d_min, p)


def intensity_vs_thickness(d, E_exc, p: ModelParams):
    """Relative detected intensity at thickness d under excitation E_exc.

    Product of the quantum yield and the excitation matching window
    evaluated at the pair energy addressed by this thickness.
    """
    return quantum_yield(d, p) * matching_function(
        E_exc, thickness_to_energy(d, p), p.sigma)


def peak_thickness(E_exc, p: ModelParams, d_range=None, tolerance=1e-6):
    """Thickness (nm) maximizing intensity_vs_thickness over d_range.

    A coarse grid scan brackets the maximum (the resonance spike can be
    much narrower than the search range), then bounded Brent refines it to
    ``tolerance``.  Raises if the objective is flat over the whole range.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be > 0")
    if d_range is None:
        d_range = (p.d_min + 1e-3, p.d_min + 10.0)
    lo, hi = d_range
    if not (p.d_min < lo < hi):
        raise ValueError("d_range must lie inside (d_min, inf)")

    grid = np.linspace(lo, hi, 1201)
    vals = intensity_vs_thickness(grid, E_exc, p)
    vmax = float(vals.max())
    if vmax <= 0 or (vmax - float(vals.min())) <= 1e-12 * vmax:
        raise ValueError("intensity is flat over d_range; no peak found")
    i = int(np.argmax(vals))
    blo, bhi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(
        lambda d: -float(intensity_vs_thickness(d, E_exc, p)),
        bounds=(blo, bhi), method="bounded",
        options={"xatol": tolerance})
    return float(res.x)


def resonance_thickness(E_exc, p: ModelParams) -> float:
    """Thickness whose addressed pair energy equals E_exc exactly."""
    if E_exc <= p.delta_E():
        raise ValueError("excitation energy must exceed delta_E")
    return p.d_min + p.coulomb_scale() / (E_exc - p.delta_E())


def lifetime_vs_thickness(d, p: ModelParams):
    """Mean decay time 1/(W_r + W_nr) in ns.

    Monotone non-decreasing in d when W_bg = 0; a positive W_bg sets the
    large-d plateau at 1/W_bg.
    """
    total = radiative_rate(d, p) + nonradiative_rate(d, p)
    if np.any(np.asarray(total) == 0):
        raise ValueError("total rate is zero; lifetime undefined")
    return 1.0 / total


def wavelength_energy(x, direction="nm_to_ev"):
    """Convert wavelength (nm) to photon energy (eV) or back.

    Both directions evaluate hc/x, so the conversion is its own inverse;
    the flag only states intent.
    """
    if direction not in ("nm_to_ev", "ev_to_nm"):
        raise ValueError("direction must be 'nm_to_ev' or 'ev_to_nm'")
    _check_positive(x, "input")
    return HC_EV_NM / x
