"""Joint calibration of the shape and rate parameters.

The measured thickness scans pin four intensity-peak positions (one per
excitation wavelength) and the 1.9 ns lifetime maximum at d = 1.7 nm.
Those five targets constrain (a_eff, b, sigma, W0_r, W0_nr) only weakly:
the peak positions respond to the quantum-yield slope at second order, so
the data cost is nearly flat along several directions.  The fit therefore
runs in log space with a weak ridge pulling toward a documented starting
point, and the excitation window is capped at 20 meV, the widest value
compatible with the observed spectral-envelope detuning staying within
170-190 meV of the excitation line.
"""

from __future__ import annotations

import numpy as np

from . import photophysics as ph
from .fitting import FitProblem, least_squares

__all__ = ["CalibrationTargets", "calibrate"]

# excitation wavelengths (nm) and measured peak thicknesses (nm)
PEAK_TARGETS = ((457.0, 1.48), (473.0, 1.46), (532.0, 1.67), (633.0, 2.55))
LIFETIME_TARGET = (1.7, 1.9)  # (d in nm, tau_mean in ns)

_NAMES = ("a_eff", "b", "sigma", "W0_r", "W0_nr")
_START = np.log(np.array([1.5, 1.5, 0.015, 0.4, 3.0]))
_LOWER = np.log(np.array([0.5, 0.3, 0.005, 0.05, 0.05]))
_UPPER = np.log(np.array([4.0, 4.0, 0.02, 10.0, 100.0]))
_PEAK_SCALE = 0.1     # nm, softening of the peak-position residuals
_TAU_SCALE = 0.02     # ns, the lifetime target is sharp
_RIDGE_SCALE = 2.0    # log units, weak pull toward the starting point


def _params_from_log(logx, base: ph.ModelParams) -> ph.ModelParams:
    a, b, sig, w0r, w0nr = np.exp(logx)
    return base.replace(a_eff=a, b=b, sigma=sig, W0_r=w0r, W0_nr=w0nr)


def calibrate(base: ph.ModelParams = None, peak_targets=PEAK_TARGETS,
              lifetime_target=LIFETIME_TARGET, d_search=(None, 9.0)):
    """Run the joint peak/lifetime calibration and return ModelParams.

    ``base`` supplies the fixed physics (energies, epsilon_r, d_min);
    defaults match the published hyperbola fit.  Returns the calibrated
    parameter set together with the FitResult for diagnostics.
    """
    if base is None:
        base = ph.ModelParams(a_eff=1.0, b=1.0, sigma=0.01, W0_r=1.0,
                              W0_nr=1.0)
    energies = np.array([ph.wavelength_energy(wl)
                         for wl, _ in peak_targets])
    d_targets = np.array([d for _, d in peak_targets])
    d_tau, tau_target = lifetime_target
    lo = base.d_min + 1e-3 if d_search[0] is None else d_search[0]
    hi = d_search[1]

    def residual(logx):
        p = _params_from_log(logx, base)
        peaks = np.array([ph.peak_thickness(E, p, (lo, hi))
                          for E in energies])
        tau = ph.lifetime_vs_thickness(d_tau, p)
        return np.concatenate([
            (peaks - d_targets) / _PEAK_SCALE,
            [(tau - tau_target) / _TAU_SCALE],
            (logx - _START) / _RIDGE_SCALE,
        ])

    prob = FitProblem(residual, list(_NAMES), _START.copy(), _LOWER, _UPPER)
    result = least_squares(prob, tol=1e-12, max_iter=100)
    params = _params_from_log(result.values, base)
    result.derived.update(
        {f"peak_{int(round(wl))}": ph.peak_thickness(E, params, (lo, hi))
         for (wl, _), E in zip(peak_targets, energies)})
    result.derived["tau_at_target"] = float(
        ph.lifetime_vs_thickness(d_tau, params))
    return params, result
