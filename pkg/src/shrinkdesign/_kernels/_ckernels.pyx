# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementation of the quadrature and risk kernels.

Mirrors ``pykernels`` line for line (same substitution t = (u/(1-u))^2,
same Gauss-Kronrod 15(7) pair, same adaptive refinement rule); see that
module for the derivation.  Keep the two in sync.
"""

import numpy as np

from libc.math cimport exp, fabs, log, sqrt
from libc.stdlib cimport free, malloc
from scipy.linalg.cython_lapack cimport dsyev

BACKEND = "c"

KIND_DIFF_IN_MEANS = 0
KIND_BOCK = 1
KIND_SURE_MIN = 2
KIND_DIMMERY = 3

COMP_RECIP = 0
COMP_DIAG = 1
COMP_FULL = 2

DEF MAX_COMP = 3
DEF N_INITIAL = 8

cdef double[15] XGK
cdef double[15] WGK
cdef double[15] WG

XGK[0] = -0.991455371120812639206854697526329
XGK[1] = -0.949107912342758524526189684047851
XGK[2] = -0.864864423359769072789712788640926
XGK[3] = -0.741531185599394439863864773280788
XGK[4] = -0.586087235467691130294144838258730
XGK[5] = -0.405845151377397166906606412076961
XGK[6] = -0.207784955007898467600689403773245
XGK[7] = 0.0
XGK[8] = 0.207784955007898467600689403773245
XGK[9] = 0.405845151377397166906606412076961
XGK[10] = 0.586087235467691130294144838258730
XGK[11] = 0.741531185599394439863864773280788
XGK[12] = 0.864864423359769072789712788640926
XGK[13] = 0.949107912342758524526189684047851
XGK[14] = 0.991455371120812639206854697526329

WGK[0] = 0.022935322010529224963732008058970
WGK[1] = 0.063092092629978553290700663189204
WGK[2] = 0.104790010322250183839876322541518
WGK[3] = 0.140653259715525918745189590510238
WGK[4] = 0.169004726639267902826583426598550
WGK[5] = 0.190350578064785409913256402421014
WGK[6] = 0.204432940075298892414161999234649
WGK[7] = 0.209482141084727828012999174891714
WGK[8] = 0.204432940075298892414161999234649
WGK[9] = 0.190350578064785409913256402421014
WGK[10] = 0.169004726639267902826583426598550
WGK[11] = 0.140653259715525918745189590510238
WGK[12] = 0.104790010322250183839876322541518
WGK[13] = 0.063092092629978553290700663189204
WGK[14] = 0.022935322010529224963732008058970

WG[0] = 0.0
WG[1] = 0.129484966168869693270611432679082
WG[2] = 0.0
WG[3] = 0.279705391489276667901467771423780
WG[4] = 0.0
WG[5] = 0.381830050505118944950369775488975
WG[6] = 0.0
WG[7] = 0.417959183673469387755102040816327
WG[8] = 0.0
WG[9] = 0.381830050505118944950369775488975
WG[10] = 0.0
WG[11] = 0.279705391489276667901467771423780
WG[12] = 0.0
WG[13] = 0.129484966168869693270611432679082
WG[14] = 0.0


cdef struct MomentProblem:
    int K
    int n_comp
    double* lams      # K
    double* g         # K
    double* g2        # K
    int* comp_kind    # n_comp
    double* diag_co   # n_comp * K (COMP_DIAG rows)
    double* full_mats # n_comp * K * K (COMP_FULL blocks)
    double* den       # K scratch


cdef void panel_values(MomentProblem* p, double a, double b,
                       double* vals, double* errs) noexcept nogil:
    cdef double half = 0.5 * (b - a)
    cdef double center = 0.5 * (b + a)
    cdef double acc_k[MAX_COMP]
    cdef double acc_g[MAX_COMP]
    cdef int node, i, j, c, K = p.K
    cdef double u, om, r, t, jac, logw, sexp, w, f, si, mi, quad, diag_part
    cdef double* A

    for c in range(p.n_comp):
        acc_k[c] = 0.0
        acc_g[c] = 0.0

    for node in range(15):
        u = center + half * XGK[node]
        om = 1.0 - u
        if om <= 0.0:
            continue
        r = u / om
        t = r * r
        jac = 2.0 * r / (om * om)
        logw = 0.0
        sexp = 0.0
        for i in range(K):
            p.den[i] = 1.0 + 2.0 * t * p.lams[i]
            logw += log(p.den[i])
            sexp += p.g2[i] / p.den[i]
        logw = -0.5 * logw - t * sexp
        w = exp(logw) * jac
        for c in range(p.n_comp):
            if p.comp_kind[c] == 0:  # COMP_RECIP
                f = w
            elif p.comp_kind[c] == 1:  # COMP_DIAG
                f = 0.0
                for i in range(K):
                    si = p.lams[i] / p.den[i]
                    mi = p.g[i] / p.den[i]
                    f += p.diag_co[c * K + i] * (si + mi * mi)
                f *= w * t
            else:  # COMP_FULL
                A = p.full_mats + c * K * K
                diag_part = 0.0
                quad = 0.0
                for i in range(K):
                    si = p.lams[i] / p.den[i]
                    diag_part += A[i * K + i] * si
                    mi = p.g[i] / p.den[i]
                    for j in range(K):
                        quad += mi * A[i * K + j] * (p.g[j] / p.den[j])
                f = w * t * (diag_part + quad)
            acc_k[c] += WGK[node] * f
            acc_g[c] += WG[node] * f

    for c in range(p.n_comp):
        vals[c] = half * acc_k[c]
        errs[c] = fabs(half * (acc_k[c] - acc_g[c]))


cdef int adaptive_moments(MomentProblem* p, double abs_tol, double rel_tol,
                          int max_panels, double* out_vals, double* out_errs) noexcept nogil:
    """Shared adaptive sweep; returns 1 on convergence, 0 otherwise."""
    cdef int nc = p.n_comp
    cdef double* pa = <double*>malloc(max_panels * sizeof(double))
    cdef double* pb = <double*>malloc(max_panels * sizeof(double))
    cdef double* pv = <double*>malloc(max_panels * nc * sizeof(double))
    cdef double* pe = <double*>malloc(max_panels * nc * sizeof(double))
    cdef int n_panels = 0, i, c, worst, converged
    cdef double a, b, mid, score, best_score, tol_c, t_err
    cdef double total_val[MAX_COMP]
    cdef double total_err[MAX_COMP]
    cdef double tol[MAX_COMP]

    if pa == NULL or pb == NULL or pv == NULL or pe == NULL:
        if pa != NULL: free(pa)
        if pb != NULL: free(pb)
        if pv != NULL: free(pv)
        if pe != NULL: free(pe)
        return 0

    for c in range(nc):
        total_val[c] = 0.0
        total_err[c] = 0.0

    for i in range(N_INITIAL):
        pa[i] = i / <double>N_INITIAL
        pb[i] = (i + 1) / <double>N_INITIAL
        panel_values(p, pa[i], pb[i], pv + i * nc, pe + i * nc)
        for c in range(nc):
            total_val[c] += pv[i * nc + c]
            total_err[c] += pe[i * nc + c]
    n_panels = N_INITIAL

    while True:
        converged = 1
        for c in range(nc):
            tol_c = rel_tol * fabs(total_val[c])
            if abs_tol > tol_c:
                tol_c = abs_tol
            tol[c] = tol_c
            if total_err[c] > tol_c:
                converged = 0
        if converged:
            break
        if n_panels >= max_panels:
            break
        # split the panel with the worst tolerance-normalized error
        worst = 0
        best_score = -1.0
        for i in range(n_panels):
            score = 0.0
            for c in range(nc):
                t_err = pe[i * nc + c] / tol[c]
                if t_err > score:
                    score = t_err
            if score > best_score:
                best_score = score
                worst = i
        a = pa[worst]
        b = pb[worst]
        for c in range(nc):
            total_val[c] -= pv[worst * nc + c]
            total_err[c] -= pe[worst * nc + c]
        mid = 0.5 * (a + b)
        pa[worst] = a
        pb[worst] = mid
        panel_values(p, a, mid, pv + worst * nc, pe + worst * nc)
        pa[n_panels] = mid
        pb[n_panels] = b
        panel_values(p, mid, b, pv + n_panels * nc, pe + n_panels * nc)
        for c in range(nc):
            total_val[c] += pv[worst * nc + c] + pe[0] * 0.0 + pv[n_panels * nc + c]
            total_err[c] += pe[worst * nc + c] + pe[n_panels * nc + c]
        n_panels += 1

    for c in range(nc):
        out_vals[c] = total_val[c]
        out_errs[c] = total_err[c]
    free(pa)
    free(pb)
    free(pv)
    free(pe)
    return converged


cdef double secular_lambda_max(double* d, int K, double c) noexcept nogil:
    cdef double lo = d[0], hi, mid, f
    cdef int i, it
    for i in range(1, K):
        if d[i] > lo:
            lo = d[i]
    if c <= 0.0:
        return lo
    hi = lo + c * K
    for it in range(90):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f = 1.0
        for i in range(K):
            f += c / (d[i] - mid)
        if f < 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def lambda_max_rank_one(d, c):
    """Largest eigenvalue of diag(d) + c * ones*ones' (secular bisection)."""
    cdef double[::1] dv = np.ascontiguousarray(d, dtype=np.float64)
    return secular_lambda_max(&dv[0], dv.shape[0], c)


def quad_moments(lams, g, comp_kinds, diag_coefs, full_mats,
                 double abs_tol, double rel_tol, int max_panels):
    """Evaluate all requested moments in a single adaptive sweep.

    Returns (values, error_bounds, converged); see pykernels.quad_moments.
    """
    cdef double[::1] lv = np.ascontiguousarray(lams, dtype=np.float64)
    cdef double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef int K = lv.shape[0]
    cdef int nc = len(comp_kinds)
    if nc > MAX_COMP:
        raise ValueError("at most three moment components per sweep")

    g2_arr = np.asarray(gv) ** 2
    cdef double[::1] g2v = g2_arr
    diag_arr = np.zeros((nc, K))
    full_arr = np.zeros((nc, K, K))
    cdef int ci
    kinds_arr = np.zeros(nc, dtype=np.intc)
    for ci in range(nc):
        kinds_arr[ci] = comp_kinds[ci]
        if comp_kinds[ci] == 1:
            diag_arr[ci, :] = np.ascontiguousarray(diag_coefs[ci], dtype=np.float64)
        elif comp_kinds[ci] == 2:
            full_arr[ci, :, :] = np.ascontiguousarray(full_mats[ci], dtype=np.float64)
    cdef int[::1] kindsv = kinds_arr
    cdef double[:, ::1] diagv = diag_arr
    cdef double[:, :, ::1] fullv = full_arr

    cdef double* den = <double*>malloc(K * sizeof(double))
    if den == NULL:
        raise MemoryError
    cdef MomentProblem prob
    prob.K = K
    prob.n_comp = nc
    prob.lams = &lv[0]
    prob.g = &gv[0]
    prob.g2 = &g2v[0]
    prob.comp_kind = &kindsv[0]
    prob.diag_co = &diagv[0, 0]
    prob.full_mats = &fullv[0, 0, 0]
    prob.den = den

    vals = np.empty(nc)
    errs = np.empty(nc)
    cdef double[::1] valsv = vals
    cdef double[::1] errsv = errs
    cdef int ok
    try:
        ok = adaptive_moments(&prob, abs_tol, rel_tol, max_panels, &valsv[0], &errsv[0])
    finally:
        free(den)
    return vals, errs, bool(ok)


cdef struct RiskWork:
    int K
    double* d        # K
    double* lams     # K
    double* g        # K
    double* g2       # K
    double* diag_co  # MAX_COMP * K
    double* full     # 2 * K * K  (the two Dimmery numerators)
    double* sig      # K * K      (dsyev in/out)
    double* qwork    # lapack workspace
    int lwork
    double* den      # K scratch
    int comp_kind[MAX_COMP]


cdef RiskWork* riskwork_alloc(int K) noexcept nogil:
    cdef RiskWork* w = <RiskWork*>malloc(sizeof(RiskWork))
    if w == NULL:
        return NULL
    w.K = K
    w.lwork = 66 * K
    w.d = <double*>malloc(K * sizeof(double))
    w.lams = <double*>malloc(K * sizeof(double))
    w.g = <double*>malloc(K * sizeof(double))
    w.g2 = <double*>malloc(K * sizeof(double))
    w.diag_co = <double*>malloc(MAX_COMP * K * sizeof(double))
    w.full = <double*>malloc(2 * K * K * sizeof(double))
    w.sig = <double*>malloc(K * K * sizeof(double))
    w.qwork = <double*>malloc((w.lwork + K * K + K) * sizeof(double))
    w.den = <double*>malloc(K * sizeof(double))
    if (w.d == NULL or w.lams == NULL or w.g == NULL or w.g2 == NULL or
            w.diag_co == NULL or w.full == NULL or w.sig == NULL or
            w.qwork == NULL or w.den == NULL):
        riskwork_free(w)
        return NULL
    return w


cdef void riskwork_free(RiskWork* w) noexcept nogil:
    if w == NULL:
        return
    if w.d != NULL: free(w.d)
    if w.lams != NULL: free(w.lams)
    if w.g != NULL: free(w.g)
    if w.g2 != NULL: free(w.g2)
    if w.full != NULL: free(w.full)
    if w.diag_co != NULL: free(w.diag_co)
    if w.sig != NULL: free(w.sig)
    if w.qwork != NULL: free(w.qwork)
    if w.den != NULL: free(w.den)
    free(w)


cdef int risk_core(RiskWork* w, int kind, double* n, double* V, double* tau,
                   double abs_tol, double rel_tol, int max_panels,
                   double* out) noexcept nogil:
    """Exact risk for one allocation; returns 1 on quadrature convergence."""
    cdef int K = w.K
    cdef int i, j, k, ok, info
    cdef double c = V[0] / n[0]
    cdef double tr = K * c
    cdef double lmax, pt, kappa, tau2, su, sinv, uval
    cdef double vals[MAX_COMP]
    cdef double errs[MAX_COMP]
    cdef double km2, tr_sstar2, sk, pij
    cdef MomentProblem prob

    for i in range(K):
        w.d[i] = V[i + 1] / n[i + 1]
        tr += w.d[i]

    if kind == 0:  # diff-in-means
        out[0] = tr
        return 1

    prob.K = K
    prob.lams = w.lams
    prob.g = w.g
    prob.g2 = w.g2
    prob.comp_kind = w.comp_kind
    prob.diag_co = w.diag_co
    prob.full_mats = w.full
    prob.den = w.den

    if kind == 1:  # Bock
        lmax = secular_lambda_max(w.d, K, c)
        pt = tr / lmax
        su = 0.0
        sinv = 0.0
        kappa = 0.0
        tau2 = 0.0
        for i in range(K):
            uval = tau[i] / w.d[i]
            su += uval
            sinv += 1.0 / w.d[i]
            kappa += tau[i] * uval
            tau2 += tau[i] * tau[i]
        kappa -= c * su * su / (1.0 + c * sinv)
        # isotropic whitened coordinates: a diagonal surrogate with the same
        # trace and the same form value at g is exact (see pykernels)
        for i in range(K):
            w.lams[i] = 1.0
            w.g[i] = 0.0
            w.g2[i] = 0.0
            w.diag_co[K + i] = tr / K
        if kappa > 0.0:
            w.g[0] = sqrt(kappa)
            w.g2[0] = kappa
            w.diag_co[K] = tau2 / kappa
            for i in range(1, K):
                w.diag_co[K + i] = (tr - tau2 / kappa) / (K - 1)
        w.comp_kind[0] = 0
        w.comp_kind[1] = 1
        prob.n_comp = 2
        ok = adaptive_moments(&prob, abs_tol, rel_tol, max_panels, vals, errs)
        out[0] = tr + (pt * pt - 4.0) * vals[1] - 2.0 * (pt - 2.0) * tr * vals[0]
        return ok

    # SURE-min and Dimmery need the eigensystem of Sigma = diag(d) + c*11'
    for i in range(K):
        for j in range(K):
            w.sig[i * K + j] = c
        w.sig[i * K + i] += w.d[i]
    info = dense_eigh(w)
    if info != 0:
        out[0] = 0.0
        return 0
    # rows of w.sig now hold eigenvectors; w.lams the eigenvalues
    for i in range(K):
        su = 0.0
        for j in range(K):
            su += w.sig[i * K + j] * tau[j]
        w.g[i] = su
        w.g2[i] = su * su

    if kind == 2:  # SURE-min
        for i in range(K):
            w.diag_co[K + i] = w.lams[i]
        w.comp_kind[0] = 0
        w.comp_kind[1] = 1
        prob.n_comp = 2
        ok = adaptive_moments(&prob, abs_tol, rel_tol, max_panels, vals, errs)
        out[0] = tr + 4.0 * tr * vals[1] - tr * tr * vals[0]
        return ok

    # Dimmery: numerators Q'S*^2 Q = P^2 and (Lam P + P Lam)/2, P = Q'S* Q
    tr_sstar2 = 0.0
    for i in range(K):
        sk = w.d[i] + c
        w.den[i] = sk  # borrow as sstar scratch until quadrature runs
        tr_sstar2 += sk * sk
    # P into qwork tail (K*K scratch beyond lapack work area)
    cdef double* P = w.qwork + w.lwork
    cdef double* srow = P + K * K
    for i in range(K):
        for j in range(K):
            su = 0.0
            for k in range(K):
                su += w.sig[i * K + k] * w.den[k] * w.sig[j * K + k]
            P[i * K + j] = su
    for i in range(K):
        for j in range(K):
            su = 0.0
            for k in range(K):
                su += P[i * K + k] * P[k * K + j]
            w.full[i * K + j] = su  # A1 = P^2
            w.full[K * K + i * K + j] = 0.5 * (w.lams[i] + w.lams[j]) * P[i * K + j]
    w.comp_kind[0] = 0
    w.comp_kind[1] = 2
    w.comp_kind[2] = 2
    prob.n_comp = 3
    ok = adaptive_moments(&prob, abs_tol, rel_tol, max_panels, vals, errs)
    km2 = K - 2.0
    out[0] = (tr + km2 * km2 * vals[1] + 4.0 * km2 * vals[2]
              - 2.0 * km2 * tr_sstar2 * vals[0])
    return ok


cdef int dense_eigh(RiskWork* w) noexcept nogil:
    """dsyev on w.sig (K x K); eigenvalues to w.lams, eigenvector rows in w.sig."""
    cdef int K = w.K
    cdef int info = 0
    cdef int lwork = w.lwork
    cdef char jobz = b'V'
    cdef char uplo = b'L'
    dsyev(&jobz, &uplo, &K, w.sig, &K, w.lams, w.qwork, &lwork, &info)
    return info


def risk_from_counts(int kind, n, V, tau, double abs_tol, double rel_tol, int max_panels):
    """Exact estimator risk at one allocation; returns (value, converged)."""
    cdef double[::1] nv = np.ascontiguousarray(n, dtype=np.float64)
    cdef double[::1] Vv = np.ascontiguousarray(V, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(tau, dtype=np.float64)
    cdef int K = tv.shape[0]
    cdef RiskWork* w = riskwork_alloc(K)
    if w == NULL:
        raise MemoryError
    cdef double out = 0.0
    cdef int ok
    try:
        ok = risk_core(w, kind, &nv[0], &Vv[0], &tv[0], abs_tol, rel_tol, max_panels, &out)
    finally:
        riskwork_free(w)
    return out, bool(ok)


def candidate_risks(int kind, n, V, tau, double abs_tol, double rel_tol, int max_panels):
    """Risk of adding one unit to each arm; returns (K+1 vector, converged_all)."""
    cdef double[::1] nv = np.ascontiguousarray(n, dtype=np.float64).copy()
    cdef double[::1] Vv = np.ascontiguousarray(V, dtype=np.float64)
    cdef double[::1] tv = np.ascontiguousarray(tau, dtype=np.float64)
    cdef int K = tv.shape[0]
    cdef int narms = nv.shape[0]
    out = np.empty(narms)
    cdef double[::1] outv = out
    cdef RiskWork* w = riskwork_alloc(K)
    if w == NULL:
        raise MemoryError
    cdef int k, ok, ok_all = 1
    try:
        for k in range(narms):
            nv[k] += 1.0
            ok = risk_core(w, kind, &nv[0], &Vv[0], &tv[0], abs_tol, rel_tol,
                           max_panels, &outv[k])
            nv[k] -= 1.0
            if not ok:
                ok_all = 0
    finally:
        riskwork_free(w)
    return out, bool(ok_all)
