"""Compiled numeric core shared by the likelihood, optimizer and MCMC paths.

Everything here works on integer codes and flat float arrays so it can run
under ``numba.njit``. The public modules translate their enums and
dataclasses into these codes.

Block parameter layout (one vector per series)::

    [beta_0 .. beta_nb, alpha_1 .. alpha_na, gamma_1 .. gamma_ng, (rho), phi]

``rho`` is present only for the caused series. ``phi`` is always stored in
natural scale; gradients with respect to it are taken in ``log(phi)``.
"""
import math

import numpy as np
from numba import njit

GAUSSIAN, POISSON, GAMMA, GEOMETRIC, BERNOULLI = 0, 1, 2, 3, 4
LOG, IDENTITY, LOGIT = 0, 1, 2
T_LINK, T_LOG1P, T_IDENTITY = 0, 1, 2
H_EXP, H_TWO_LOGIT = 0, 1

EXP_CAP = 700.0
LOG_2PI = math.log(2.0 * math.pi)
NEG_INF = -np.inf
INF = np.inf

# omega full-conditional rate: conjugate b + k - sum(delta), or b + sum(delta) + k
OMEGA_CONJUGATE = 0
OMEGA_LITERAL = 1


@njit(cache=True, error_model="numpy")
def expit(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True, error_model="numpy")
def inv_link(link, nu):
    if link == LOG:
        return math.exp(nu)
    if link == LOGIT:
        return expit(nu)
    return nu


@njit(cache=True, error_model="numpy")
def dinv_link(link, nu, mu):
    if link == LOG:
        return mu
    if link == LOGIT:
        return mu * (1.0 - mu)
    return 1.0


@njit(cache=True, error_model="numpy")
def coupling(kind, rho, y):
    """Return ``(h_rho(y), saturated)``."""
    a = rho * y
    if kind == H_TWO_LOGIT:
        return 2.0 * expit(a), False
    if a > EXP_CAP:
        return math.exp(EXP_CAP), True
    return math.exp(a), False


@njit(cache=True, error_model="numpy")
def dcoupling_drho(kind, rho, y, h):
    if kind == H_TWO_LOGIT:
        s = 0.5 * h
        return 2.0 * y * s * (1.0 - s)
    if rho * y > EXP_CAP:
        return 0.0
    return y * h


@njit(cache=True, error_model="numpy")
def digamma(x):
    r = 0.0
    while x < 6.0:
        r -= 1.0 / x
        x += 1.0
    f = 1.0 / (x * x)
    t = f * (-1.0 / 12.0 + f * (1.0 / 120.0 + f * (-1.0 / 252.0 + f * (
        1.0 / 240.0 + f * (-1.0 / 132.0)))))
    return r + math.log(x) - 0.5 / x + t


@njit(cache=True, error_model="numpy")
def log_density(fam, y, m, phi, aux, lgk):
    """Log density of ``y`` at mean ``m``; ``-inf`` outside the mean domain.

    ``aux`` is the per-observation constant (``lgamma(y+1)`` for Poisson,
    ``log(y)`` for Gamma) and ``lgk`` is ``lgamma(1/phi)`` for Gamma.
    """
    if fam == GAUSSIAN:
        d = y - m
        return -0.5 * (LOG_2PI + math.log(phi)) - d * d / (2.0 * phi)
    if fam == BERNOULLI:
        if not (m > 0.0 and m < 1.0):
            return NEG_INF
        return y * math.log(m) + (1.0 - y) * math.log1p(-m)
    if not m > 0.0:
        return NEG_INF
    if fam == POISSON:
        return y * math.log(m) - m - aux
    if fam == GAMMA:
        k = 1.0 / phi
        return (k - 1.0) * aux - y * k / m - lgk + k * math.log(k / m)
    # geometric on {0, 1, ...}, success probability 1 / (1 + m)
    return y * math.log(m) - (y + 1.0) * math.log1p(m)


@njit(cache=True, error_model="numpy")
def dlogf_dm(fam, y, m, phi):
    if fam == GAUSSIAN:
        return (y - m) / phi
    if fam == POISSON:
        return y / m - 1.0
    if fam == GAMMA:
        return (y - m) / (phi * m * m)
    if fam == GEOMETRIC:
        return y / m - (y + 1.0) / (1.0 + m)
    return y / m - (1.0 - y) / (1.0 - m)


@njit(cache=True, error_model="numpy")
def dlogf_dlogphi(fam, y, m, phi, aux, psik):
    if fam == GAUSSIAN:
        d = y - m
        return -0.5 + d * d / (2.0 * phi)
    if fam == GAMMA:
        k = 1.0 / phi
        return -k * (aux - y / m - psik + math.log(k / m) + 1.0)
    return 0.0


@njit(cache=True, error_model="numpy")
def block_path(x, dims, series, delta, nu, mu, m):
    """Run the mean recursion, filling ``nu``, ``mu`` and ``m`` in place.

    ``dims`` = (nb, na, ng, has_rho, fam, link, coup, start).
    ``series`` = (y, ty, aux, ycross, tycross).
    Returns ``(first_bad_t, n_saturated)``; ``first_bad_t`` is -1 when every
    intermediate is finite.
    """
    nb, na, ng, has_rho, fam, link, coup, start = dims
    y, ty, aux, ycross, tycross = series
    n = y.shape[0]
    oa = nb + 1
    og = oa + na
    orho = og + ng
    rho = x[orho] if has_rho else 0.0
    nsat = 0
    for t in range(start):
        nu[t] = ty[t]
        mu[t] = inv_link(link, ty[t])
        m[t] = mu[t]
    for t in range(start, n):
        v = x[0]
        for i in range(1, nb + 1):
            v += x[i] * ty[t - i]
        for j in range(1, na + 1):
            v += x[oa + j - 1] * nu[t - j]
        for g in range(1, ng + 1):
            if delta[g - 1] != 0:
                v += x[og + g - 1] * tycross[t - g]
        if not np.isfinite(v):
            return t, nsat
        nu[t] = v
        u = inv_link(link, v)
        mu[t] = u
        if has_rho:
            h, sat = coupling(coup, rho, ycross[t])
            if sat:
                nsat += 1
            u = u * h
        if not np.isfinite(u):
            return t, nsat
        m[t] = u
    return -1, nsat


@njit(cache=True, error_model="numpy")
def block_loglik(x, dims, series, delta):
    """Return ``(loglik, first_bad_t)`` for one block, scored over t >= start."""
    n = series[0].shape[0]
    nu = np.empty(n)
    mu = np.empty(n)
    m = np.empty(n)
    bad, _ = block_path(x, dims, series, delta, nu, mu, m)
    if bad >= 0:
        return NEG_INF, bad
    fam = dims[4]
    start = dims[7]
    phi = x[x.shape[0] - 1]
    if not (phi > 0.0 and phi < INF):
        return NEG_INF, start
    lgk = math.lgamma(1.0 / phi) if fam == GAMMA else 0.0
    y = series[0]
    aux = series[2]
    ll = 0.0
    for t in range(start, n):
        ll += log_density(fam, y[t], m[t], phi, aux[t], lgk)
    return ll, -1


@njit(cache=True, error_model="numpy")
def block_loglik_grad(x, dims, series, delta):
    """Log-likelihood and its gradient; the phi entry is d/d log(phi)."""
    nb, na, ng, has_rho, fam, link, coup, start = dims
    y, ty, aux, ycross, tycross = series
    n = y.shape[0]
    dim = x.shape[0]
    grad = np.zeros(dim)
    oa = nb + 1
    og = oa + na
    orho = og + ng
    nlin = og + ng
    rho = x[orho] if has_rho else 0.0
    phi = x[dim - 1]
    if not (phi > 0.0 and phi < INF):
        return NEG_INF, grad, start
    lgk = 0.0
    psik = 0.0
    if fam == GAMMA:
        lgk = math.lgamma(1.0 / phi)
        psik = digamma(1.0 / phi)
    nu = np.empty(n)
    dnu = np.zeros((n, nlin))
    for t in range(start):
        nu[t] = ty[t]
    ll = 0.0
    for t in range(start, n):
        v = x[0]
        dnu[t, 0] = 1.0
        for i in range(1, nb + 1):
            v += x[i] * ty[t - i]
            dnu[t, i] = ty[t - i]
        for j in range(1, na + 1):
            v += x[oa + j - 1] * nu[t - j]
            dnu[t, oa + j - 1] = nu[t - j]
        for g in range(1, ng + 1):
            if delta[g - 1] != 0:
                v += x[og + g - 1] * tycross[t - g]
                dnu[t, og + g - 1] = tycross[t - g]
        for j in range(1, na + 1):
            a = x[oa + j - 1]
            for c in range(nlin):
                dnu[t, c] += a * dnu[t - j, c]
        if not np.isfinite(v):
            return NEG_INF, grad, t
        nu[t] = v
        u = inv_link(link, v)
        h = 1.0
        if has_rho:
            h, _ = coupling(coup, rho, ycross[t])
        mt = u * h
        if not np.isfinite(mt):
            return NEG_INF, grad, t
        lf = log_density(fam, y[t], mt, phi, aux[t], lgk)
        if lf == NEG_INF:
            return NEG_INF, grad, -1
        ll += lf
        s = dlogf_dm(fam, y[t], mt, phi)
        dm = dinv_link(link, v, u) * h
        for c in range(nlin):
            grad[c] += s * dm * dnu[t, c]
        if has_rho:
            grad[orho] += s * u * dcoupling_drho(coup, rho, ycross[t], h)
        grad[dim - 1] += dlogf_dlogphi(fam, y[t], mt, phi, aux[t], psik)
    return ll, grad, -1


# ---------------------------------------------------------------- sampling

@njit(cache=True, error_model="numpy")
def draw(fam, m, phi, rng):
    if fam == GAUSSIAN:
        return rng.normal(m, math.sqrt(phi))
    if fam == POISSON:
        return float(rng.poisson(m))
    if fam == GAMMA:
        return rng.gamma(1.0 / phi, m * phi)
    if fam == GEOMETRIC:
        return float(rng.geometric(1.0 / (1.0 + m)) - 1)
    return 1.0 if rng.random() < m else 0.0


@njit(cache=True, error_model="numpy")
def transform(tcode, link, y):
    if tcode == T_LOG1P:
        return math.log1p(y)
    if tcode == T_IDENTITY:
        return y
    if link == LOG:
        return math.log(y) if y > 0.0 else NEG_INF
    if link == LOGIT:
        if y <= 0.0 or y >= 1.0:
            return np.inf if y >= 1.0 else NEG_INF
        return math.log(y / (1.0 - y))
    return y


@njit(cache=True, error_model="numpy")
def simulate_kernel(x1, dims1, t1, x2, dims2, t2, n_total, nu_cap, rng):
    """Generate ``n_total`` points; returns (y1, y2, first_diverged_t).

    ``t1``/``t2`` are transform codes. The first ``start`` points are drawn
    at the fixed-point mean of each recursion.
    """
    nb1, na1, _, _, fam1, link1, _, start = dims1
    nb2, na2, ng, _, fam2, link2, coup, _ = dims2
    y1 = np.zeros(n_total)
    y2 = np.zeros(n_total)
    ty1 = np.zeros(n_total)
    ty2 = np.zeros(n_total)
    nu1 = np.zeros(n_total)
    nu2 = np.zeros(n_total)
    phi1 = x1[x1.shape[0] - 1]
    phi2 = x2[x2.shape[0] - 1]
    oa2 = nb2 + 1
    og = oa2 + na2
    rho = x2[og + ng]

    s1 = 0.0
    for j in range(na1):
        s1 += x1[nb1 + 1 + j]
    s2 = 0.0
    for j in range(na2):
        s2 += x2[oa2 + j]
    fp1 = x1[0] / (1.0 - s1) if abs(1.0 - s1) >= 0.1 else x1[0]
    fp2 = x2[0] / (1.0 - s2) if abs(1.0 - s2) >= 0.1 else x2[0]

    for t in range(n_total):
        if t < start:
            v1 = fp1
            v2 = fp2
        else:
            v1 = x1[0]
            for i in range(1, nb1 + 1):
                v1 += x1[i] * ty1[t - i]
            for j in range(1, na1 + 1):
                v1 += x1[nb1 + j] * nu1[t - j]
            v2 = x2[0]
            for i in range(1, nb2 + 1):
                v2 += x2[i] * ty2[t - i]
            for j in range(1, na2 + 1):
                v2 += x2[oa2 + j - 1] * nu2[t - j]
            for g in range(1, ng + 1):
                v2 += x2[og + g - 1] * ty1[t - g]
        if not (abs(v1) <= nu_cap[0] and abs(v2) <= nu_cap[1]):
            return y1, y2, t
        nu1[t] = v1
        nu2[t] = v2
        a = draw(fam1, inv_link(link1, v1), phi1, rng)
        h, _ = coupling(coup, rho, a)
        mean2 = inv_link(link2, v2) * h
        if fam2 == BERNOULLI and mean2 >= 1.0:
            return y1, y2, t
        b = draw(fam2, mean2, phi2, rng)
        y1[t] = a
        y2[t] = b
        ty1[t] = transform(t1, link1, a)
        ty2[t] = transform(t2, link2, b)
        if not (np.isfinite(ty1[t]) and np.isfinite(ty2[t])):
            return y1, y2, t
    return y1, y2, -1


# -------------------------------------------------------------------- MCMC

@njit(cache=True, error_model="numpy")
def propose(value, scale, is_dispersion, rng):
    """Single-site proposal; returns (candidate, log proposal-ratio term)."""
    if is_dispersion:
        new = value * math.exp(scale * rng.standard_normal())
        return new, math.log(new / value)
    return value + scale * rng.standard_normal(), 0.0


@njit(cache=True, error_model="numpy")
def log_prior(value, var, is_dispersion):
    if is_dispersion and value <= 0.0:
        return NEG_INF
    if not np.isfinite(var):
        return 0.0
    return -0.5 * value * value / var


@njit(cache=True, error_model="numpy")
def mh_sweep(x, dims, series, delta, ll_cur, frozen, scales, prior_var,
             gamma_gated, acc, att, rng):
    """One single-site MH pass over a block; returns (loglik, n_failures).

    Coordinates in the gamma range are visited only when their inclusion
    flag is 1 if ``gamma_gated`` is set. The last coordinate is the
    dispersion, proposed log-normally.
    """
    nb, na, ng = dims[0], dims[1], dims[2]
    og = nb + 1 + na
    dim = x.shape[0]
    nfail = 0
    for c in range(dim):
        if frozen[c]:
            continue
        if gamma_gated and c >= og and c < og + ng and delta[c - og] == 0:
            continue
        is_disp = c == dim - 1
        old = x[c]
        new, log_q = propose(old, scales[c], is_disp, rng)
        att[c] += 1
        x[c] = new
        ll_new, bad = block_loglik(x, dims, series, delta)
        if bad >= 0:
            nfail += 1
        if not np.isfinite(ll_new):
            x[c] = old
            continue
        log_r = (ll_new - ll_cur + log_prior(new, prior_var[c], is_disp)
                 - log_prior(old, prior_var[c], is_disp) + log_q)
        if log_r >= 0.0 or math.log(rng.random()) < log_r:
            ll_cur = ll_new
            acc[c] += 1
        else:
            x[c] = old
    return ll_cur, nfail


@njit(cache=True, error_model="numpy")
def omega_draw(delta, a, b, rng, rate_mode=OMEGA_CONJUGATE):
    s = 0.0
    for d in delta:
        s += d
    if rate_mode == OMEGA_LITERAL:
        return rng.beta(a + s, b + s + delta.shape[0])
    return rng.beta(a + s, b + delta.shape[0] - s)


@njit(cache=True, error_model="numpy")
def inclusion_probability(omega, ll_in, ll_out):
    """P(delta_i = 1 | ...) in log space; NaN when both likelihoods vanish."""
    if ll_in == NEG_INF and ll_out == NEG_INF:
        return np.nan
    a = math.log(omega) + ll_in if omega > 0.0 else NEG_INF
    b = math.log1p(-omega) + ll_out if omega < 1.0 else NEG_INF
    top = max(a, b)
    ea = math.exp(a - top)
    eb = math.exp(b - top)
    return ea / (ea + eb)


@njit(cache=True, error_model="numpy")
def delta_sweep(x, dims, series, delta, ll_cur, omega, rng):
    """Full sequential Gibbs sweep over delta; returns (loglik, n_undefined)."""
    ng = dims[2]
    nundef = 0
    for i in range(ng):
        cur = delta[i]
        delta[i] = 1 - cur
        ll_flip, _ = block_loglik(x, dims, series, delta)
        if cur == 1:
            ll_in, ll_out = ll_cur, ll_flip
        else:
            ll_in, ll_out = ll_flip, ll_cur
        p = inclusion_probability(omega, ll_in, ll_out)
        if np.isnan(p):
            delta[i] = cur
            nundef += 1
            continue
        if rng.random() < p:
            delta[i] = 1
            ll_cur = ll_in
        else:
            delta[i] = 0
            ll_cur = ll_out
    return ll_cur, nundef


@njit(cache=True, error_model="numpy")
def adapt(scales, acc_batch, att_batch, batch_index, target):
    eta = 1.0 / math.sqrt(batch_index)
    for c in range(scales.shape[0]):
        if att_batch[c] > 0:
            rate = acc_batch[c] / att_batch[c]
            scales[c] *= math.exp(eta * (rate - target))


@njit(cache=True, error_model="numpy")
def run_chain_kernel(x1, dims1, series1, x2, dims2, series2, delta, omega,
                     frozen1, frozen2, scales1, scales2, pvar1, pvar2,
                     spike_slab, a, b, iterations, burn_in, thinning,
                     batch, target, rng, omega_mode=OMEGA_CONJUGATE):
    """Algorithm: theta1 MH, omega Gibbs, delta Gibbs, theta2 MH per sweep.

    Returns stored draws of both blocks (gamma zeroed where excluded), delta
    and omega draws, post-burn-in acceptance/attempt counts, the number of
    iterations ending at a state with non-finite likelihood, and the number
    of proposals rejected for a non-finite likelihood.
    """
    d1 = x1.shape[0]
    d2 = x2.shape[0]
    ng = dims2[2]
    og = dims2[0] + 1 + dims2[1]
    n_keep = (iterations - burn_in + thinning - 1) // thinning
    out1 = np.empty((n_keep, d1))
    out2 = np.empty((n_keep, d2))
    out_delta = np.empty((n_keep, ng), dtype=np.int8)
    out_omega = np.empty(n_keep)
    acc1 = np.zeros(d1)
    att1 = np.zeros(d1)
    acc2 = np.zeros(d2)
    att2 = np.zeros(d2)
    ones1 = np.ones(0, dtype=np.int8)
    ll1, _ = block_loglik(x1, dims1, series1, ones1)
    ll2, _ = block_loglik(x2, dims2, series2, delta)
    fail_iters = 0
    nonfinite = 0
    batch_index = 0
    keep = 0
    for it in range(iterations):
        if it == burn_in:
            acc1[:] = 0.0
            att1[:] = 0.0
            acc2[:] = 0.0
            att2[:] = 0.0
        ll1, f1 = mh_sweep(x1, dims1, series1, ones1, ll1, frozen1, scales1,
                           pvar1, False, acc1, att1, rng)
        f2 = 0
        if spike_slab and ng > 0:
            omega = omega_draw(delta, a, b, rng, omega_mode)
            ll2, _ = delta_sweep(x2, dims2, series2, delta, ll2, omega, rng)
        ll2, f2 = mh_sweep(x2, dims2, series2, delta, ll2, frozen2, scales2,
                           pvar2, spike_slab, acc2, att2, rng)
        nonfinite += f1 + f2
        if not (np.isfinite(ll1) and np.isfinite(ll2)):
            fail_iters += 1
        if it < burn_in and (it + 1) % batch == 0:
            batch_index += 1
            # counts since the last batch boundary
            adapt(scales1, acc1, att1, batch_index, target)
            adapt(scales2, acc2, att2, batch_index, target)
            acc1[:] = 0.0
            att1[:] = 0.0
            acc2[:] = 0.0
            att2[:] = 0.0
        if it >= burn_in and (it - burn_in) % thinning == 0:
            out1[keep, :] = x1
            out2[keep, :] = x2
            for g in range(ng):
                out_delta[keep, g] = delta[g]
                if delta[g] == 0:
                    out2[keep, og + g] = 0.0
            out_omega[keep] = omega
            keep += 1
    return (out1, out2, out_delta, out_omega, acc1, att1, acc2, att2,
            fail_iters, nonfinite, omega)
