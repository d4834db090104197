"""Damped least-squares engine and the model fits built on it.

The engine is a plain Levenberg-Marquardt loop on weighted residuals with
box constraints enforced by step clipping.  It is deliberately small: the
models in this package are cheap, so Jacobians come from forward finite
differences unless an analytic one is supplied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import photophysics as ph
from .errors import InputError

__all__ = [
    "FitProblem",
    "FitResult",
    "least_squares",
    "fit_hyperbola",
    "fit_intensity_model",
    "fit_lifetime_model",
    "lifetime_rate_curve",
    "read_fit_csv",
]

_FD_REL_STEP = 1e-6


@dataclass
class FitProblem:
    """A weighted nonlinear least-squares problem.

    ``residual(x)`` returns the residual vector; ``weights`` multiply the
    residuals before squaring.  Bounds are inclusive; omitted bounds are
    infinite.
    """

    residual: callable
    names: list
    x0: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None
    weights: np.ndarray = None
    jacobian: callable = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        n = self.x0.size
        if len(self.names) != n:
            raise ValueError("names and x0 lengths differ")
        self.lower = (np.full(n, -np.inf) if self.lower is None
                      else np.asarray(self.lower, dtype=float))
        self.upper = (np.full(n, np.inf) if self.upper is None
                      else np.asarray(self.upper, dtype=float))
        if np.any(self.lower > self.x0) or np.any(self.x0 > self.upper):
            raise ValueError("need lower <= x0 <= upper")


@dataclass
class FitResult:
    names: list
    values: np.ndarray
    uncertainties: np.ndarray
    reduced_chi2: float
    status: str                    # converged | max-iter | singular
    iterations: int
    residuals: np.ndarray
    covariance: np.ndarray
    cost_history: list = field(default_factory=list)
    at_bounds: list = field(default_factory=list)
    condition_number: float = np.nan
    message: str = ""
    derived: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def sigma(self, name):
        return float(self.uncertainties[self.names.index(name)])

    def as_dict(self):
        return dict(zip(self.names, map(float, self.values)))

    def to_json_dict(self):
        return {
            "parameters": {
                n: {"value": float(v), "sigma": float(s)}
                for n, v, s in zip(self.names, self.values,
                                   self.uncertainties)},
            "reduced_chi2": float(self.reduced_chi2),
            "status": self.status,
            "iterations": int(self.iterations),
            "covariance": [float(c) for c in self.covariance.ravel()],
            "condition_number": float(self.condition_number),
            "at_bounds": list(self.at_bounds),
            "derived": {k: float(v) for k, v in self.derived.items()},
            "message": self.message,
        }


def _forward_jacobian(fun, x, r0, lower, upper, rel_step=_FD_REL_STEP):
    """Forward-difference Jacobian with a relative step.

    Steps that would leave the box are flipped backward.
    """
    n = x.size
    J = np.empty((r0.size, n))
    for j in range(n):
        h = rel_step * abs(x[j]) if x[j] != 0.0 else rel_step
        if x[j] + h > upper[j]:
            h = -h
        xj = x.copy()
        xj[j] += h
        J[:, j] = (fun(xj) - r0) / h
    return J


def least_squares(problem: FitProblem, tol=1e-10, gtol=1e-12,
                  max_iter=200, lam0=1e-3) -> FitResult:
    """Levenberg-Marquardt minimization of ||w * residual(x)||^2.

    The cost is non-increasing across accepted steps.  Convergence is
    declared when the relative cost change of an accepted step drops below
    ``tol`` or the gradient norm below ``gtol``.  If the damped normal
    equations stay unsolvable the fit ends with status ``singular``.
    """
    w = problem.weights
    if w is not None:
        w = np.asarray(w, dtype=float)

    def wres(x):
        r = np.asarray(problem.residual(x), dtype=float)
        return r if w is None else w * r

    if problem.jacobian is not None:
        def wjac(x, r0):
            J = np.asarray(problem.jacobian(x), dtype=float)
            return J if w is None else w[:, None] * J
    else:
        def wjac(x, r0):
            return _forward_jacobian(wres, x, r0, problem.lower,
                                     problem.upper)

    x = problem.x0.copy()
    r = wres(x)
    if not np.all(np.isfinite(r)):
        raise ValueError("residuals not finite at the initial point")
    if r.size < x.size:
        raise ValueError("need at least as many residuals as parameters")
    cost = float(r @ r)
    cost_history = [cost]
    lam = lam0
    status = "max-iter"
    message = ""
    iterations = 0
    J = wjac(x, r)

    for _ in range(max_iter):
        A = J.T @ J
        g = J.T @ r
        if not np.all(np.isfinite(A)):
            status, message = "singular", "non-finite normal equations"
            break
        if np.linalg.norm(g, np.inf) < gtol:
            status = "converged"
            break
        diag = np.clip(np.diag(A), 1e-32, None)
        accepted = False
        while lam < 1e15:
            try:
                delta = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(delta)):
                lam *= 10.0
                continue
            xt = np.clip(x + delta, problem.lower, problem.upper)
            rt = wres(xt)
            ct = float(rt @ rt) if np.all(np.isfinite(rt)) else np.inf
            if ct < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction even under heavy damping
            if np.linalg.norm(g, np.inf) < 1e3 * gtol or cost == 0.0:
                status = "converged"
            else:
                status, message = "singular", "damping exhausted"
            break
        rel_change = (cost - ct) / max(ct, 1e-300)
        x, r, cost = xt, rt, ct
        cost_history.append(cost)
        iterations += 1
        lam = max(lam / 10.0, 1e-14)
        J = wjac(x, r)
        if rel_change < tol:
            status = "converged"
            break

    m, n = r.size, x.size
    dof = max(m - n, 1)
    red_chi2 = cost / dof
    A = J.T @ J
    cond = np.nan
    cov = np.full((n, n), np.nan)
    try:
        cond = float(np.linalg.cond(A))
        cov = np.linalg.inv(A) * red_chi2
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(A) * red_chi2
        message = (message + "; " if message else "") + "covariance from pinv"
    unc = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    at_bounds = [nm for nm, v, lo, hi in
                 zip(problem.names, x, problem.lower, problem.upper)
                 if v <= lo or v >= hi]
    return FitResult(list(problem.names), x, unc, red_chi2, status,
                     iterations, r, cov, cost_history, at_bounds, cond,
                     message)


# ---------------------------------------------------------------------------
# model fits


def fit_hyperbola(points, init=None, bounds=None, e_g=5.4, e_d=2.2,
                  weights=None) -> FitResult:
    """Fit d(E) = A/(E - delta_E) + d_min to (energy, thickness) points.

    Runs a fixed multi-start grid (the pole location makes single starts
    unreliable) and keeps the best converged fit.  The derived acceptor
    energy e_g - e_d - delta_E is reported alongside the parameters.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (energy, thickness) points")
    E, d = pts[:, 0], pts[:, 1]
    e_min = float(E.min())

    def residual(x):
        A, dE, dmin = x
        denom = E - dE
        if np.any(denom <= 0):
            return np.full_like(E, np.inf)
        return A / denom + dmin - d

    lower = np.array([1e-9, -10.0, -10.0])
    upper = np.array([1e3, e_min - 1e-9, 10.0])
    if bounds is not None:
        lower, upper = (np.asarray(bounds[0], float),
                        np.asarray(bounds[1], float))
    if init is not None:
        starts = [np.asarray(init, dtype=float)]
    else:
        starts = [np.array([A0, e_min - off, dm0])
                  for off in (0.15, 0.4, 0.8)
                  for A0 in (0.1, 0.3, 1.0)
                  for dm0 in (0.0, 1.0)]
    best = None
    for x0 in starts:
        x0 = np.clip(x0, lower, upper)
        prob = FitProblem(residual, ["A", "delta_E", "d_min"], x0,
                          lower, upper, weights)
        res = least_squares(prob)
        if best is None or res.cost_history[-1] < best.cost_history[-1]:
            best = res
    best.derived["E_A"] = e_g - e_d - best["delta_E"]
    best.derived["E_A_sigma"] = best.sigma("delta_E")
    return best


_INTENSITY_FREE = ("a_eff", "b", "sigma", "nr_ratio", "scale")


def fit_intensity_model(data, E_exc, free=_INTENSITY_FREE,
                        p0: ph.ModelParams = None, weights=None) -> FitResult:
    """Fit the intensity-vs-thickness model to (d, I) data.

    ``free`` selects any subset of {a_eff, b, sigma, nr_ratio, scale};
    the rest is pinned at ``p0`` (nr_ratio meaning W0_nr/W0_r).  The data
    must bracket the intensity maximum.
    """
    if p0 is None:
        raise ValueError("p0 is required to pin the non-free parameters")
    unknown = set(free) - set(_INTENSITY_FREE)
    if unknown:
        raise ValueError(f"unknown free parameters: {sorted(unknown)}")
    pts = np.asarray(data, dtype=float)
    d, I = pts[:, 0], pts[:, 1]
    imax = int(np.argmax(I))
    if imax in (0, len(I) - 1):
        raise ValueError("data must span both sides of the intensity peak")

    def model(x):
        vals = dict(zip(free, x))
        p = p0.replace(
            a_eff=vals.get("a_eff", p0.a_eff),
            b=vals.get("b", p0.b),
            sigma=vals.get("sigma", p0.sigma),
            W0_nr=vals.get("nr_ratio", p0.W0_nr / p0.W0_r) * p0.W0_r)
        return vals.get("scale", 1.0) * ph.intensity_vs_thickness(d, E_exc, p)

    def residual(x):
        return model(x) - I

    defaults = {"a_eff": p0.a_eff, "b": p0.b, "sigma": p0.sigma,
                "nr_ratio": p0.W0_nr / p0.W0_r, "scale": 1.0}
    x0 = np.array([defaults[nm] for nm in free])
    if "scale" in free:
        # scale-free start keeps shape parameters scale equivariant
        trial = model(x0)
        peak = float(np.max(trial))
        if peak > 0:
            x0[list(free).index("scale")] = float(np.max(I)) / peak
    floors = {"a_eff": 1e-3, "b": 1e-3, "sigma": 1e-6, "nr_ratio": 0.0,
              "scale": 0.0}
    lower = np.array([floors[nm] for nm in free])
    prob = FitProblem(residual, list(free), x0, lower, None, weights)
    res = least_squares(prob)

    fitted = p0.replace(
        a_eff=res.as_dict().get("a_eff", p0.a_eff),
        b=res.as_dict().get("b", p0.b),
        sigma=res.as_dict().get("sigma", p0.sigma),
        W0_nr=res.as_dict().get("nr_ratio", p0.W0_nr / p0.W0_r) * p0.W0_r)
    try:
        res.derived["peak_d"] = ph.peak_thickness(
            E_exc, fitted, (float(d.min()), float(d.max())))
    except ValueError:
        res.message = (res.message + "; " if res.message else "") + \
            "fitted model has no interior peak in the data range"
    return res


_LIFETIME_FREE = ("W0_r", "W0_nr", "W_bg", "a_eff", "b")


def lifetime_rate_curve(d, values: dict, p0: ph.ModelParams):
    """Total decay rate of the lifetime model with fitted overrides.

    Prefactors are allowed to be sign-indefinite here: the phenomenological
    fit to non-monotone lifetime data has no positive-rate interpolant
    (see fit_lifetime_model).
    """
    a = values.get("a_eff", p0.a_eff)
    b = values.get("b", p0.b)
    w0r = values.get("W0_r", p0.W0_r)
    w0nr = values.get("W0_nr", p0.W0_nr)
    wbg = values.get("W_bg", p0.W_bg)
    d = np.asarray(d, dtype=float)
    return w0r * np.exp(-2.0 * d / a) + w0nr * np.exp(-((d / b) ** 2)) + wbg


def fit_lifetime_model(data, free=("W0_r", "W0_nr", "W_bg"),
                       p0: ph.ModelParams = None, d_window=None,
                       weights=None) -> FitResult:
    """Fit the two-channel rate model to (d, tau_mean) points.

    Residuals are taken on the total rate 1/tau.  Parameters default to
    unbounded: lifetime data that first rises and then falls again cannot
    be interpolated by a sum of positive decaying rates, so the prefactors
    of this phenomenological fit are sign-indefinite by design.  Pass
    ``d_window`` to restrict the fit to the rising branch where the
    positive-rate model applies.
    """
    if p0 is None:
        raise ValueError("p0 is required to pin the non-free parameters")
    unknown = set(free) - set(_LIFETIME_FREE)
    if unknown:
        raise ValueError(f"unknown free parameters: {sorted(unknown)}")
    pts = np.asarray(data, dtype=float)
    if d_window is not None:
        keep = (pts[:, 0] >= d_window[0]) & (pts[:, 0] <= d_window[1])
        pts = pts[keep]
    if pts.shape[0] < 3:
        raise ValueError("need at least 3 points inside d_window")
    d, tau = pts[:, 0], pts[:, 1]
    if np.any(tau <= 0):
        raise ValueError("lifetimes must be > 0")
    rate = 1.0 / tau

    def residual(x):
        return lifetime_rate_curve(d, dict(zip(free, x)), p0) - rate

    defaults = {"W0_r": p0.W0_r, "W0_nr": p0.W0_nr, "W_bg": p0.W_bg,
                "a_eff": p0.a_eff, "b": p0.b}
    x0 = np.array([defaults[nm] for nm in free])
    lower = upper = None
    if "a_eff" in free or "b" in free:
        # length scales must stay positive even in the unconstrained fit
        lower = np.array([1e-3 if nm in ("a_eff", "b") else -np.inf
                          for nm in free])
        upper = np.full(len(free), np.inf)
    prob = FitProblem(residual, list(free), x0, lower, upper, weights)
    res = least_squares(prob)
    res.derived["d_window_lo"] = float(d.min())
    res.derived["d_window_hi"] = float(d.max())
    return res


def read_fit_csv(path):
    """Read an ``x,y[,weight]`` CSV; '#' lines and one header row allowed.

    Returns (x, y, weights_or_None).  Raises InputError with the offending
    line number on malformed content.
    """
    xs, ys, ws = [], [], []
    header_allowed = True
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [s.strip() for s in line.split(",")]
            try:
                vals = [float(s) for s in parts]
            except ValueError:
                if header_allowed:
                    header_allowed = False
                    continue
                raise InputError(f"line {lineno}: non-numeric value in {parts}")
            header_allowed = False
            if len(vals) not in (2, 3):
                raise InputError(f"line {lineno}: expected 2 or 3 columns")
            if not all(np.isfinite(vals)):
                raise InputError(f"line {lineno}: non-finite value")
            xs.append(vals[0])
            ys.append(vals[1])
            ws.append(vals[2] if len(vals) == 3 else None)
    if not xs:
        raise InputError("no data rows found")
    if any(w is None for w in ws) and any(w is not None for w in ws):
        raise InputError("weight column present on only some rows")
    w = None if ws[0] is None else np.asarray(ws, dtype=float)
    return np.asarray(xs), np.asarray(ys), w
