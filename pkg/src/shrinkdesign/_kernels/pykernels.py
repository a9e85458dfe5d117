"""Pure-numpy implementation of the quadrature and risk kernels.

Everything here evaluates expectations of the form

    E[ Z' A Z / (Z'Z)^2 ]   and   E[ 1 / (Z'Z) ],     Z ~ N(g, diag(lams)),

as one-dimensional improper integrals over t in [0, inf).  Tilting the
Gaussian by exp(-t Z'Z) gives, per coordinate, a normal with variance
s_i = lams_i / (1 + 2 t lams_i) and mean m_i = g_i / (1 + 2 t lams_i), so

    E[exp(-t Z'Z)]        = w(t) = prod_i (1+2t lams_i)^(-1/2)
                                   * exp(-t sum_i g_i^2/(1+2t lams_i))
    E[Z'AZ exp(-t Z'Z)]   = w(t) * (sum_i A_ii s_i + m' A m)

and the moments follow from 1/x = int exp(-t x) dt and
1/x^2 = int t exp(-t x) dt.  The integrals exist for K >= 3.

The half-line is mapped to [0, 1) via t = (u/(1-u))^2, which keeps the
transformed integrand bounded at u -> 1 for every K >= 3 (the first-power
map t = u/(1-u) leaves a (1-u)^(-1/2) endpoint singularity at K = 3 whose
unresolved mass exceeds a 1e-9 tolerance in double precision).  Panels are
refined adaptively with a Gauss-Kronrod 15(7) pair.

The compiled extension (``_ckernels``) mirrors this module line for line;
keep the two in sync.
"""

import numpy as np

BACKEND = "python"

KIND_DIFF_IN_MEANS = 0
KIND_BOCK = 1
KIND_SURE_MIN = 2
KIND_DIMMERY = 3

COMP_RECIP = 0  # E[1/(Z'Z)]
COMP_DIAG = 1  # E[Z'AZ/(Z'Z)^2], A diagonal in the working basis
COMP_FULL = 2  # E[Z'AZ/(Z'Z)^2], dense A

# 15-point Kronrod / embedded 7-point Gauss pair (QUADPACK dqk15 constants).
_XGK = np.array(
    [
        -0.991455371120812639206854697526329,
        -0.949107912342758524526189684047851,
        -0.864864423359769072789712788640926,
        -0.741531185599394439863864773280788,
        -0.586087235467691130294144838258730,
        -0.405845151377397166906606412076961,
        -0.207784955007898467600689403773245,
        0.0,
        0.207784955007898467600689403773245,
        0.405845151377397166906606412076961,
        0.586087235467691130294144838258730,
        0.741531185599394439863864773280788,
        0.864864423359769072789712788640926,
        0.949107912342758524526189684047851,
        0.991455371120812639206854697526329,
    ]
)
_WGK = np.array(
    [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
        0.204432940075298892414161999234649,
        0.190350578064785409913256402421014,
        0.169004726639267902826583426598550,
        0.140653259715525918745189590510238,
        0.104790010322250183839876322541518,
        0.063092092629978553290700663189204,
        0.022935322010529224963732008058970,
    ]
)
# Gauss-7 weights sit on the odd-indexed Kronrod nodes.
_WG = np.zeros(15)
_WG[1::2] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
    0.381830050505118944950369775488975,
    0.279705391489276667901467771423780,
    0.129484966168869693270611432679082,
]

_INITIAL_PANELS = 8


def lambda_max_rank_one(d, c):
    """Largest eigenvalue of diag(d) + c * ones*ones'.

    Bisection on the secular equation 1 + c * sum(1/(d_i - lam)) = 0.  The
    largest root is isolated in (max d, max d + c*K] even when diagonal
    entries coincide, so no special degenerate handling is needed.
    """
    d = np.asarray(d, dtype=np.float64)
    if c <= 0.0:
        return float(np.max(d))
    lo = float(np.max(d))
    hi = lo + c * d.size
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f = 1.0 + c * np.sum(1.0 / (d - mid))
        if f < 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def _panel_values(a, b, lams, g, g2, comp_kinds, diag_coefs, full_mats):
    """Kronrod and Gauss estimates plus error for one u-panel, per component."""
    half = 0.5 * (b - a)
    u = 0.5 * (b + a) + half * _XGK
    one_minus = 1.0 - u
    # t = (u/(1-u))^2, dt/du = 2u/(1-u)^3; endpoint-safe (u < 1 on all nodes)
    r = u / one_minus
    t = r * r
    jac = 2.0 * r / (one_minus * one_minus)

    denom = 1.0 + 2.0 * t[:, None] * lams[None, :]  # (15, K)
    logw = -0.5 * np.sum(np.log(denom), axis=1) - t * np.sum(g2[None, :] / denom, axis=1)
    w = np.exp(logw) * jac

    n_comp = len(comp_kinds)
    vals = np.empty(n_comp)
    errs = np.empty(n_comp)
    s = lams[None, :] / denom
    m = g[None, :] / denom
    for ci in range(n_comp):
        kind = comp_kinds[ci]
        if kind == COMP_RECIP:
            f = w
        elif kind == COMP_DIAG:
            alpha = diag_coefs[ci]
            f = w * t * np.sum(alpha[None, :] * (s + m * m), axis=1)
        else:
            A = full_mats[ci]
            quad = np.einsum("ni,ij,nj->n", m, A, m)
            f = w * t * (np.sum(np.diag(A)[None, :] * s, axis=1) + quad)
        k15 = half * np.sum(_WGK * f)
        g7 = half * np.sum(_WG * f)
        vals[ci] = k15
        errs[ci] = abs(k15 - g7)
    return vals, errs


def quad_moments(lams, g, comp_kinds, diag_coefs, full_mats, abs_tol, rel_tol, max_panels):
    """Evaluate all requested moments in a single adaptive sweep.

    Returns (values, error_bounds, converged).  The components share the
    Gaussian weight w(t), so evaluating them together costs one pass.
    """
    lams = np.ascontiguousarray(lams, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    g2 = g * g
    n_comp = len(comp_kinds)

    panels = []
    edges = np.linspace(0.0, 1.0, _INITIAL_PANELS + 1)
    total_val = np.zeros(n_comp)
    total_err = np.zeros(n_comp)
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = _panel_values(a, b, lams, g, g2, comp_kinds, diag_coefs, full_mats)
        panels.append([a, b, v, e])
        total_val += v
        total_err += e

    while True:
        tol = np.maximum(abs_tol, rel_tol * np.abs(total_val))
        if np.all(total_err <= tol):
            return total_val, total_err, True
        if len(panels) >= max_panels:
            return total_val, total_err, False
        # split the panel with the worst tolerance-normalized error
        scores = [np.max(p[3] / tol) for p in panels]
        worst = int(np.argmax(scores))
        a, b, v, e = panels.pop(worst)
        total_val -= v
        total_err -= e
        mid = 0.5 * (a + b)
        for aa, bb in ((a, mid), (mid, b)):
            v2, e2 = _panel_values(aa, bb, lams, g, g2, comp_kinds, diag_coefs, full_mats)
            panels.append([aa, bb, v2, e2])
            total_val += v2
            total_err += e2


def _sigma_dense(d, c):
    K = d.size
    return np.diag(d) + c * np.ones((K, K))


def risk_from_counts(kind, n, V, tau, abs_tol, rel_tol, max_panels):
    """Exact estimator risk at integer-or-continuous arm counts.

    Returns (value, converged).  ``n`` and ``V`` have K+1 entries (control
    first); ``tau`` has K.  The contrast covariance is
    diag(V_k/n_k) + (V_0/n_0) * ones*ones'.
    """
    n = np.asarray(n, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    K = tau.size
    d = V[1:] / n[1:]
    c = V[0] / n[0]
    tr = float(np.sum(d) + K * c)

    if kind == KIND_DIFF_IN_MEANS:
        return tr, True

    if kind == KIND_BOCK:
        lmax = lambda_max_rank_one(d, c)
        pt = tr / lmax
        # tau' Sigma^{-1} tau via Sherman-Morrison on diag(d) + c*11'
        u = tau / d
        kappa = float(tau @ u - c * np.sum(u) ** 2 / (1.0 + c * np.sum(1.0 / d)))
        tau2 = float(tau @ tau)
        # Whitened coordinates are isotropic, so only sum(g^2)=kappa, the
        # numerator trace, and the numerator form at g matter; represent the
        # numerator by a diagonal surrogate with those invariants.
        lams = np.ones(K)
        gvec = np.zeros(K)
        alpha = np.full(K, tr / K)
        if kappa > 0.0:
            gvec[0] = np.sqrt(kappa)
            alpha[0] = tau2 / kappa
            alpha[1:] = (tr - alpha[0]) / (K - 1)
        vals, _, ok = quad_moments(
            lams,
            gvec,
            [COMP_RECIP, COMP_DIAG],
            [None, alpha],
            [None, None],
            abs_tol,
            rel_tol,
            max_panels,
        )
        recip, ratio = vals
        return tr + (pt * pt - 4.0) * ratio - 2.0 * (pt - 2.0) * tr * recip, ok

    lam, Q = np.linalg.eigh(_sigma_dense(d, c))
    gvec = Q.T @ tau

    if kind == KIND_SURE_MIN:
        vals, _, ok = quad_moments(
            lam,
            gvec,
            [COMP_RECIP, COMP_DIAG],
            [None, lam.copy()],
            [None, None],
            abs_tol,
            rel_tol,
            max_panels,
        )
        recip, ratio = vals
        return tr + 4.0 * tr * ratio - tr * tr * recip, ok

    if kind == KIND_DIMMERY:
        sstar = d + c  # diagonal of Sigma
        P = Q.T @ (sstar[:, None] * Q)
        A1 = P @ P
        A2 = 0.5 * (lam[:, None] * P + P * lam[None, :])
        tr_sstar2 = float(np.sum(sstar**2))
        vals, _, ok = quad_moments(
            lam,
            gvec,
            [COMP_RECIP, COMP_FULL, COMP_FULL],
            [None, None, None],
            [None, A1, A2],
            abs_tol,
            rel_tol,
            max_panels,
        )
        recip, r1, r2 = vals
        km2 = K - 2.0
        return tr + km2 * km2 * r1 + 4.0 * km2 * r2 - 2.0 * km2 * tr_sstar2 * recip, ok

    raise ValueError(f"unknown estimator kind code {kind}")


def candidate_risks(kind, n, V, tau, abs_tol, rel_tol, max_panels):
    """Risk of assigning one more unit to each arm: vector of K+1 values.

    Returns (risks, converged_all).
    """
    n = np.asarray(n, dtype=np.float64)
    out = np.empty(n.size)
    ok_all = True
    for k in range(n.size):
        trial_n = n.copy()
        trial_n[k] += 1.0
        out[k], ok = risk_from_counts(kind, trial_n, V, tau, abs_tol, rel_tol, max_panels)
        ok_all = ok_all and ok
    return out, ok_all
