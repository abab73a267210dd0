"""All-to-all limit: Lax vector, spectral polynomial, phases, closed forms.

With uniform coupling J the mean-field dynamics is integrable. The Lax vector

    L(u) = Z / J - sum_j s_j / (u - eps_j),    eps_j = h_j / 2,

obeys dL/dt = (2u Z - 2J S) x L, so L(u)^2 is conserved for every complex u.
The roots of Q(u) = J^2 L^2(u) prod_j (u - eps_j)^2 fix the frequency
spectrum: roots hugging the real axis mean the magnetization dephases
(phase I), an isolated complex-conjugate pair means a gapped, spin-locked
state (phase II). The gap is twice the imaginary part of that pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import optimize

from ._io import SCHEMA_VERSION


class PoleError(ValueError):
    pass


class RootFindingError(RuntimeError):
    pass


def _spins_of(state):
    return np.asarray(getattr(state, "spins", state), float).reshape(-1, 3)


def lax_vector(u, fields, J, state, center=False):
    if J == 0:
        raise ValueError("J must be non-zero")
    spins = _spins_of(state)
    eps = 0.5 * np.asarray(fields, float)
    if center:
        eps = eps - eps.mean()
    d = u - eps
    if np.any(d == 0):
        raise PoleError(f"u = {u} sits on a pole")
    L = -(spins / d[:, None]).sum(axis=0).astype(complex)
    L[2] += 1.0 / J
    return L


def lax_square(u, fields, J, state, center=False):
    """L(u) . L(u) (complex bilinear, no conjugation)."""
    L = lax_vector(u, fields, J, state, center)
    return complex(L @ L)


# ---------------------------------------------------------------------------
# spectral polynomial


@dataclass
class SpectralPolynomial:
    """Q(u) = scale^(2N) q((u - shift) / scale), coefficients of q highest first."""

    coeffs: np.ndarray
    shift: float
    scale: float
    exact: list | None = None

    @property
    def degree(self):
        return len(self.coeffs) - 1

    def __call__(self, u):
        x = (np.asarray(u, complex) - self.shift) / self.scale
        return self.scale ** self.degree * np.polyval(self.coeffs, x)

    def roots(self, **kw):
        return self.shift + self.scale * find_roots(self.coeffs, **kw)


def _poly_mul(a, b, ctx):
    out = [ctx(0)] * (len(a) + len(b) - 1)
    for i, ai in enumerate(a):
        if ai == 0:
            continue
        for j, bj in enumerate(b):
            out[i + j] += ai * bj
    return out


def _poly_add(a, b):
    n = max(len(a), len(b))
    a = [0] * (n - len(a)) + list(a)
    b = [0] * (n - len(b)) + list(b)
    return [x + y for x, y in zip(a, b)]


def _synthetic_div(p, root):
    """p(x) / (x - root) for a known exact root, highest first."""
    out = [p[0]]
    for c in p[1:-1]:
        out.append(c + root * out[-1])
    return out


def spectral_polynomial(fields, J, state, center=True, scale=1.0, precision="auto", dps=50):
    """Coefficients of Q(u) = J^2 L^2(u) prod_j (u - eps_j)^2, degree 2N, monic.

    Built by exact polynomial arithmetic on the partial-fraction form in the
    variable x = (u - shift) / scale. ``precision="mp"`` runs the arithmetic
    in mpmath at ``dps`` digits; "auto" switches to it above N = 200.
    """
    if J == 0:
        raise ValueError("J must be non-zero")
    spins = _spins_of(state)
    N = len(spins)
    eps = 0.5 * np.asarray(fields, float)
    shift = float(eps.mean()) if center else 0.0
    e = (eps - shift) / scale
    Jx = J / scale
    use_mp = precision == "mp" or (precision == "auto" and N > 200)

    if use_mp:
        with mpmath.workdps(dps):
            ctx = mpmath.mpf
            ev = [ctx(float(v)) for v in e]
            sv = [[ctx(float(c)) for c in row] for row in spins]
            q = _assemble(ev, sv, ctx(float(Jx)), ctx)
            coeffs = np.array([float(c) for c in q])
            exact = q
    else:
        q = _assemble(list(e), spins.tolist(), float(Jx), float)
        coeffs = np.array(q, float)
        exact = None
    if not np.all(np.isfinite(coeffs)):
        raise OverflowError("coefficients overflow; pass a larger scale or precision='mp'")
    return SpectralPolynomial(coeffs=coeffs, shift=shift, scale=float(scale), exact=exact)


def _assemble(e, spins, Jx, ctx):
    one = ctx(1)
    P = [one]
    for ej in e:
        P = _poly_mul(P, [one, -ej], ctx)
    # V_a(x) prod(x - e) = sum_j s_j^a prod_{k != j}(x - e_k)
    Vp = [[ctx(0)] * len(e) for _ in range(3)]
    for ej, s in zip(e, spins):
        Pj = _synthetic_div(P, ej)
        for a in range(3):
            if s[a] != 0:
                Vp[a] = [v + s[a] * c for v, c in zip(Vp[a], Pj)]
    Q = _poly_mul(P, P, ctx)
    Q = _poly_add(Q, [-2 * Jx * c for c in _poly_mul(P, Vp[2], ctx)])
    for a in range(3):
        if any(c != 0 for c in Vp[a]):
            Q = _poly_add(Q, [Jx * Jx * c for c in _poly_mul(Vp[a], Vp[a], ctx)])
    return Q


# ---------------------------------------------------------------------------
# root finding


def _aberth(newton_ratio, z0, tol, max_iter):
    """Simultaneous Aberth-Ehrlich iteration; returns (roots, converged)."""
    z = np.array(z0, complex)
    n = len(z)
    active = np.ones(n, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if not len(idx):
            return z, True
        with np.errstate(divide="ignore", invalid="ignore"):
            r = newton_ratio(z[idx])
        diff = z[idx, None] - z[None, :]
        diff[np.arange(len(idx)), idx] = 1.0
        inv = 1.0 / diff
        inv[np.arange(len(idx)), idx] = 0.0
        sigma = inv.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = r / (1.0 - r * sigma)
        step = np.where(np.isfinite(step), step, 0.0)
        z[idx] -= step
        done = np.abs(step) <= tol * np.maximum(np.abs(z[idx]), 1.0)
        active[idx[done]] = False
    return z, not active.any()


def _pair_conjugates(z, tol):
    """Symmetrize a root set of a real polynomial under conjugation."""
    z = np.array(z, complex)
    real = np.abs(z.imag) <= tol
    z[real] = z[real].real
    upper = np.flatnonzero(~real & (z.imag > 0))
    lower = list(np.flatnonzero(~real & (z.imag < 0)))
    out = list(z[real])
    for i in upper:
        if not lower:
            raise RootFindingError("unpaired complex root")
        j = min(lower, key=lambda k: abs(z[k] - np.conj(z[i])))
        lower.remove(j)
        m = 0.5 * (z[i] + np.conj(z[j]))
        out.extend([m, np.conj(m)])
    if lower:
        raise RootFindingError("unpaired complex root")
    return np.sort_complex(np.array(out, complex))


def find_roots(coeffs, tol=1e-14, max_iter=1000, pair=True):
    """All complex roots of a real polynomial (coefficients highest first).

    Aberth-Ehrlich iteration from points on a circle; falls back to the
    companion-matrix eigenvalues if the iteration stalls.
    """
    c = np.trim_zeros(np.asarray(coeffs, float), "f")
    n = len(c) - 1
    if n < 1:
        raise ValueError("degree must be >= 1")
    c = c / c[0]
    dc = np.polyder(c)

    def ratio(z):
        return np.polyval(c, z) / np.polyval(dc, z)

    # Fujiwara bound on root moduli
    k = np.arange(1, n + 1)
    radius = 2.0 * np.max(np.abs(c[1:]) ** (1.0 / k))
    radius = radius if radius > 0 else 1.0
    ang = 2 * np.pi * np.arange(n) / n + 0.4
    z, ok = _aberth(ratio, radius * np.exp(1j * ang), tol, max_iter)
    if not ok or not np.all(np.isfinite(z)):
        z = np.roots(c)
    if pair:
        z = _pair_conjugates(z, 1e-10 * max(1.0, np.max(np.abs(z))))
    return z


def _group_levels(eps, spins, rel_tol=1e-12):
    """Merge spins sitting on (numerically) identical eps into one big spin."""
    order = np.argsort(eps, kind="stable")
    e = eps[order]
    s = spins[order]
    span = max(e[-1] - e[0], 1.0)
    new = np.concatenate([[True], np.diff(e) > rel_tol * span])
    starts = np.flatnonzero(new)
    levels = e[starts]
    summed = np.add.reduceat(s, starts, axis=0)
    mult = np.diff(np.append(starts, len(e)))
    return levels, summed, mult


def lax_roots(fields, J, state, center=True, tol=1e-13, max_iter=2000):
    """Roots of Q(u) without forming coefficients.

    Degenerate levels are merged; each level of multiplicity m contributes a
    trivial root of order 2(m - 1) at eps. The remaining 2K roots follow from
    Aberth iteration on the log-derivative of J^2 L^2 prod_k (u - eps_k)^2,
    evaluated in its partial-fraction form, which stays well conditioned for
    thousands of spins. Returns (roots, shift) with roots in the same frame
    as the (optionally centered) eps.
    """
    if J == 0:
        raise ValueError("J must be non-zero")
    spins = _spins_of(state)
    eps = 0.5 * np.asarray(fields, float)
    shift = float(eps.mean()) if center else 0.0
    eps = eps - shift
    levels, S, mult = _group_levels(eps, spins)
    K = len(levels)
    spread = levels[-1] - levels[0] if K > 1 else 1.0
    unit = spread if spread > 0 else abs(J) * len(spins)
    x_lv = levels / unit
    Jx = J / unit

    def ratio(z):
        d = 1.0 / (z[:, None] - x_lv[None, :])
        V = d @ S
        dV = -(d * d) @ S
        L = -V
        L[:, 2] += 1.0 / Jx
        L2 = np.sum(L * L, axis=1)
        dL2 = 2.0 * np.sum(L * (-dV), axis=1)
        logder = dL2 / L2 + 2.0 * d.sum(axis=1)
        return 1.0 / logder

    gaps = np.diff(x_lv)
    local = np.minimum(np.append(gaps, np.inf), np.insert(gaps, 0, np.inf)) if K > 1 else np.ones(1)
    local = np.where(np.isfinite(local), local, 1.0)
    jitter = 0.1 * local * np.cos(np.arange(K))
    z0 = np.concatenate([x_lv + jitter + 0.4j * local, x_lv - jitter - 0.45j * local])
    z, ok = _aberth(ratio, z0, tol, max_iter)
    if not ok or not np.all(np.isfinite(z)):
        raise RootFindingError("Aberth iteration did not converge")
    z = _pair_conjugates(z, 1e-11)
    trivial = np.repeat(levels, 2 * (mult - 1))
    roots = np.concatenate([z * unit, trivial.astype(complex)])
    return np.sort_complex(roots), shift


def uniform_state_roots(fields, J, center=True):
    """Roots of Q for all spins along +X via a rank-one eigenproblem.

    For s_j = (1/2, 0, 0), L^2 = 0 splits into sum_j 1/(u - eps_j) = +-2i/J,
    whose roots are the eigenvalues of diag(eps) -+ (iJ/2) 1 1^T.
    """
    eps = 0.5 * np.asarray(fields, float)
    shift = float(eps.mean()) if center else 0.0
    eps = eps - shift
    N = len(eps)
    A = np.diag(eps).astype(complex) - 0.5j * J * np.ones((N, N))
    w = np.linalg.eigvals(A)
    return np.sort_complex(np.concatenate([w, np.conj(w)])), shift


# ---------------------------------------------------------------------------
# classification


@dataclass
class LaxSpectrum:
    roots: np.ndarray
    phase: str
    complex_pair: tuple | None
    gap_estimate: float
    pair_tolerance: float
    threshold: float
    shift: float = 0.0
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "LaxSpectrum",
            "roots": [[float(r.real), float(r.imag)] for r in self.roots],
            "phase": self.phase,
            "complex_pair": None if self.complex_pair is None else
            [[float(r.real), float(r.imag)] for r in self.complex_pair],
            "gap_estimate_rad_s": self.gap_estimate,
            "gap_factor": 2.0,
            "pair_tolerance": self.pair_tolerance,
            "threshold_rad_s": self.threshold,
            "shift_rad_s": self.shift,
            "meta": self.meta,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


DEFAULT_PAIR_TOLERANCE = 3.0


def classify_phase(roots, fields, pair_tolerance=DEFAULT_PAIR_TOLERANCE, shift=0.0):
    """Phase II iff some root has |Im u| > pair_tolerance * (level spacing).

    The level spacing is the eps spread divided by (K - 1) for K distinct
    levels. At finite N the dephasing-phase roots leave the real axis by at
    most about one spacing, while the isolated gapped pair sits a finite
    fraction of the spread away, so the threshold is tied to the spacing.
    """
    roots = np.asarray(roots, complex)
    eps = 0.5 * np.asarray(fields, float)
    levels = np.unique(eps)
    K = len(levels)
    spread = levels[-1] - levels[0] if K > 1 else 0.0
    spacing = spread / (K - 1) if K > 1 else 0.0
    threshold = pair_tolerance * spacing
    im = np.abs(roots.imag)
    k = int(np.argmax(im))
    top = im[k]
    if top > threshold and top > 0:
        pair = (complex(roots[k].real, top), complex(roots[k].real, -top))
        return LaxSpectrum(roots, "II", pair, 2.0 * top, pair_tolerance, threshold, shift)
    return LaxSpectrum(roots, "I", None, 0.0, pair_tolerance, threshold, shift)


def lax_spectrum(fields, J, state, pair_tolerance=DEFAULT_PAIR_TOLERANCE, center=True):
    roots, shift = lax_roots(fields, J, state, center=center)
    return classify_phase(roots, fields, pair_tolerance, shift)


# ---------------------------------------------------------------------------
# closed forms


@dataclass(frozen=True)
class AnalyticParams:
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")


def critical_coupling(h_tilde, N, params=AnalyticParams()):
    """J_c = 2 sqrt(3) alpha h_tilde / (beta N pi)."""
    if N < 1 or h_tilde < 0:
        raise ValueError("need N >= 1 and h_tilde >= 0")
    return 2.0 * np.sqrt(3.0) * params.alpha * h_tilde / (params.beta * N * np.pi)


def steady_magnetization_analytic(h_tilde, N, J, params=AnalyticParams()):
    """S(inf) = (sqrt3 alpha h / 2 J_eff) cot(sqrt3 alpha h / (N J_eff)), clamped to [0, N/2]."""
    if J == 0:
        raise ValueError("J must be non-zero")
    if h_tilde == 0:
        return N / 2.0
    Jeff = params.beta * J
    x = np.sqrt(3.0) * params.alpha * h_tilde / (N * Jeff)
    if abs(x) >= np.pi / 2:
        return 0.0
    S = np.sqrt(3.0) * params.alpha * h_tilde / (2.0 * Jeff) / np.tan(x)
    return float(np.clip(S, 0.0, N / 2.0))


def gap_analytic(h_tilde, N, J, params=AnalyticParams()):
    """Omega = 2 |J_eff| S(inf); zero at and below J_c."""
    return 2.0 * abs(params.beta * J) * steady_magnetization_analytic(h_tilde, N, J, params)


def fit_analytic_params(h_tilde, N, J_values, Omega_values, x0=(0.5, 0.5)):
    """Least-squares (alpha, beta) of the closed-form gap to measured gaps."""
    J_values = np.asarray(J_values, float)
    Omega_values = np.asarray(Omega_values, float)

    def resid(p):
        prm = AnalyticParams(np.exp(p[0]), np.exp(p[1]))
        model = np.array([gap_analytic(h_tilde, N, J, prm) for J in J_values])
        return (model - Omega_values) / max(np.max(np.abs(Omega_values)), 1e-300)

    best = None
    for a0 in (x0[0], 0.2, 1.0):
        for b0 in (x0[1], 0.3, 1.0):
            r = optimize.least_squares(resid, np.log([a0, b0]), method="lm", xtol=1e-14,
                                       ftol=1e-14, max_nfev=4000)
            if best is None or r.cost < best.cost:
                best = r
    return AnalyticParams(float(np.exp(best.x[0])), float(np.exp(best.x[1])))
