"""Acceptance suite.

Each criterion prints one ``criterion N: PASS|FAIL`` line; the lines are
also repeated in the pytest terminal summary. Studies run at the stated
replication counts, so the module takes a while on one core.
"""
import math

import numpy as np
import pytest
from scipy import stats

from grangerglm.bayes import (
    ChainConfig,
    ChainFailure,
    delta_inclusion_probability,
    gibbs_update_omega,
    run_chain,
    summarize_posterior,
)
from grangerglm.experiments import (
    ExperimentConfig,
    lag_scan_spec,
    run_lag_scan,
    run_pairwise,
    run_spike_slab_study,
    run_table1_study,
    run_table2_study,
)
from grangerglm.model import (
    BivariateSeries,
    ParamVector,
    geometric_spec,
    geometric_theta,
    log_likelihood,
    poisson_gamma_spec,
    preset,
    simulate,
)
from grangerglm.signal import RawRecording, bin_spikes, periodogram

from test_bayes import _hand_ell2, _two_point
from test_model import PG_THETA, Y1_GG, Y1_PG, Y2_GG, Y2_PG, gg_oracle, pg_oracle

pytestmark = pytest.mark.slow

RESULTS = {}

# published Monte Carlo means and SEs, columns n = 500, 1000, 2000
TABLE1 = {
    "beta2_0": ((0.203, 0.201, 0.201), (0.056, 0.039, 0.028)),
    "beta2_1": ((0.298, 0.300, 0.298), (0.053, 0.036, 0.026)),
    "alpha2_1": ((0.201, 0.200, 0.201), (0.056, 0.038, 0.027)),
    "alpha2_2": ((-0.101, -0.100, -0.101), (0.036, 0.024, 0.016)),
    "gamma_1": ((-0.100, -0.100, -0.100), (0.018, 0.012, 0.008)),
    "gamma_2": ((-0.500, -0.500, -0.500), (0.013, 0.009, 0.006)),
    "beta1_0": ((0.242, 0.198, 0.126), (0.273, 0.238, 0.128)),
    "beta1_1": ((-0.089, -0.093, -0.098), (0.045, 0.035, 0.022)),
    "alpha1_1": ((-0.060, -0.019, 0.074), (0.622, 0.493, 0.274)),
    "alpha1_2": ((0.017, 0.160, 0.329), (0.574, 0.459, 0.267)),
    "phi1": ((0.991, 0.998, 0.999), (0.056, 0.039, 0.028)),
    "rho": ((0.099, 0.100, 0.100), (0.015, 0.010, 0.007)),
}
WELL_IDENTIFIED = ("beta2_0", "beta2_1", "alpha2_1", "alpha2_2", "gamma_1", "gamma_2", "rho",
                   "phi1")
WEAK = ("beta1_0", "alpha1_1", "alpha1_2")
TABLE2 = {1000: (0.015, 0.062, 0.109), 2000: (0.009, 0.058, 0.121)}


def verdict(num, ok, detail):
    line = f"criterion {num}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS[num] = line
    print(line)
    assert ok, line


# ------------------------------------------------------------ shared studies

@pytest.fixture(scope="module")
def table2():
    cfg = ExperimentConfig(kind="table2", preset="poisson-gamma-null", replications=1000,
                           sample_sizes=[1000, 2000], seed=2002)
    return run_table2_study(cfg)


def _recovery_run(ss):
    spec, theta = preset("poisson-gamma-bayes")
    rng = np.random.default_rng(ss)
    data = simulate(spec, theta, 1000, rng=rng)
    smp = run_chain(spec, data, config=ChainConfig(iterations=25000, burn_in=5000,
                                                  seed=int(rng.integers(2 ** 31))))
    return summarize_posterior(smp).table, smp.acceptance_rates


@pytest.fixture(scope="module")
def recovery():
    out = []
    for ss in np.random.SeedSequence(5005).spawn(100):
        try:
            out.append(_recovery_run(ss))
        except ChainFailure:
            out.append(None)
    return out


# ---------------------------------------------------------------- criteria

def test_criterion_1_table1():
    cfg = ExperimentConfig(replications=500, sample_sizes=[500, 1000, 2000], seed=1001)
    res = run_table1_study(cfg)
    rows = {(r[0], r[2]): r for r in res.rows}
    bad = []
    for name, (means, ses) in TABLE1.items():
        _, _, _, mean, se, *_ = rows[(name, 1000)]
        if abs(mean - means[1]) > 3 * se:
            bad.append(f"{name} mean {mean:.3f} vs {means[1]}")
        if name in WELL_IDENTIFIED and abs(se - ses[1]) > 0.25 * ses[1]:
            bad.append(f"{name} se {se:.3f} vs {ses[1]}")
    well_max = max(rows[(n, 1000)][4] for n in WELL_IDENTIFIED)
    for name in WEAK:
        s = [rows[(name, n)][4] for n in (500, 1000, 2000)]
        if not s[2] < s[0]:
            bad.append(f"{name} se not shrinking {np.round(s, 3).tolist()}")
        if not s[1] > 2 * well_max:
            bad.append(f"{name} se {s[1]:.3f} not large")
    fails = sum(r[6] for r in res.rows) // len(TABLE1)
    worst = max(abs(rows[(n, 1000)][3] - m[1]) / rows[(n, 1000)][4] for n, (m, _) in TABLE1.items())
    se_dev = max(abs(rows[(n, 1000)][4] / TABLE1[n][1][1] - 1) for n in WELL_IDENTIFIED)
    verdict(1, not bad, f"max |mean - published| {worst:.2f} SE; max SE deviation {se_dev:.0%}; "
                        f"failed fits {fails}; " + "; ".join(bad))


def test_criterion_2_table2(table2):
    bad = []
    for n, level, rate, se, n_ok, *_ in table2.rows:
        target = TABLE2[n][[0.01, 0.05, 0.10].index(level)]
        tol = 3 * math.sqrt(target * (1 - target) / n_ok)
        if abs(rate - target) > tol:
            bad.append(f"n={n} {level:.0%}: {rate:.3f} vs {target}")
    rates = {(r[0], r[1]): round(r[2], 3) for r in table2.rows}
    verdict(2, not bad, f"rates {rates}; " + "; ".join(bad))


def _spike_slab(preset_name, seed):
    cfg = ExperimentConfig(kind="spike-slab", preset=preset_name, replications=100,
                           sample_sizes=[1000], seed=seed, k_max=5, iterations=11000,
                           burn_in=1000)
    return run_spike_slab_study(cfg).extra["median"]


def test_criterion_3_spike_slab_poisson_gamma():
    med = _spike_slab("poisson-gamma-bayes", 3003)
    ok = med[0] >= 0.9 and med[1] >= 0.9 and med[3] <= 0.3 and med[4] <= 0.3 and med[2] > med[4]
    verdict(3, ok, f"median P(delta) {np.round(med, 3).tolist()}")


def test_criterion_4_spike_slab_geometric():
    med = _spike_slab("geometric", 4004)
    ok = med[0] >= 0.9 and np.all(med[1:] <= 0.3)
    verdict(4, ok, f"median P(delta) {np.round(med, 3).tolist()}")


def test_criterion_5_posterior_recovery(recovery):
    spec, theta = preset("poisson-gamma-bayes")
    truth = dict(zip(ParamVector.names(spec), theta.to_vector(spec)))
    runs = [r for r in recovery if r is not None]
    cover = {n: np.mean([t[n]["ci_low"] <= v <= t[n]["ci_high"] for t, _ in runs])
             for n, v in truth.items()}
    low = {n: round(float(c), 2) for n, c in cover.items() if c < 0.8}
    verdict(5, len(runs) == 100 and not low,
            f"{len(runs)} runs; min coverage {min(cover.values()):.2f}; below 0.8: {low}")


def test_criterion_6_conjugacy_oracle():
    rng = np.random.default_rng(6006)
    d = np.array([1, 0, 1, 0, 0])
    draws = np.array([gibbs_update_omega(d, 1.0, 1.0, rng) for _ in range(100000)])
    ref = stats.beta(1 + d.sum(), 1 + d.size - d.sum())
    counts, _ = np.histogram(draws, ref.ppf(np.linspace(0, 1, 21)))
    p_gof = stats.chisquare(counts).pvalue
    spec, data, theta = _two_point()
    ll_in = log_likelihood(spec, theta, data, delta=[1]).ell2
    ll_out = log_likelihood(spec, theta, data, delta=[0]).ell2
    h_in, h_out = _hand_ell2(data, theta, True), _hand_ell2(data, theta, False)
    err = max(abs(delta_inclusion_probability(w, ll_in, ll_out)
                  - w * math.exp(h_in) / (w * math.exp(h_in) + (1 - w) * math.exp(h_out)))
              for w in (0.1, 0.5, 0.83))
    verdict(6, p_gof > 0.01 and err < 1e-12, f"omega GOF p={p_gof:.3f}; delta max err {err:.1e}")


def test_criterion_7_likelihood_oracle():
    rel = []
    pg = log_likelihood(poisson_gamma_spec(), PG_THETA, BivariateSeries(Y1_PG, Y2_PG))
    _, _, e1, e2 = pg_oracle(PG_THETA)
    rel += [abs(pg.ell1 - e1) / abs(e1), abs(pg.ell2 - e2) / abs(e2)]
    th = geometric_theta(gamma=(-0.5,), rho=0.1)
    gg = log_likelihood(geometric_spec(), th, BivariateSeries(Y1_GG, Y2_GG))
    _, _, e1, e2 = gg_oracle(th)
    rel += [abs(gg.ell1 - e1) / abs(e1), abs(gg.ell2 - e2) / abs(e2)]
    data = BivariateSeries(Y1_PG, Y2_PG)
    zeroed = PG_THETA.copy()
    zeroed.gamma[0] = 0.0
    masked = log_likelihood(poisson_gamma_spec(), PG_THETA, data, delta=[0, 1]).ell2
    exact = masked == log_likelihood(poisson_gamma_spec(), zeroed, data).ell2
    verdict(7, max(rel) < 1e-12 and exact,
            f"max relative error {max(rel):.1e}; masking exact {exact}")


def test_criterion_8_numerical_sanity(table2, recovery):
    lr_min = min(v[0] for v in table2.extra["lr_min"].values())
    raw_min = min(v[1] for v in table2.extra["lr_min"].values())
    rates = np.array([list(r[1].values()) for r in recovery if r is not None])
    off = np.abs(rates - 0.44) > 0.10
    rng = np.random.default_rng(8008)
    parseval = 0.0
    for m in (16, 17, 64, 255, 1000):
        x = rng.standard_normal(m) * 10
        _, power = periodogram(x)
        e = np.sum((x - x.mean()) ** 2)
        parseval = max(parseval, abs(np.sum(power) * 2 / m - e) / e)
    spikes = (rng.random(4000) < 0.05).astype(int)
    n_win = bin_spikes(RawRecording(np.zeros(4000), spikes, 1000.0), 30).n
    ok = lr_min >= 0 and not off.any() and parseval < 1e-8 and n_win == 133
    verdict(8, ok, f"min LR {lr_min:.3g} (raw {raw_min:.2g}); acceptance outside band "
                   f"{int(off.sum())}/{off.size} (range {rates.min():.2f}-{rates.max():.2f}); "
                   f"Parseval rel err {parseval:.1e}; windows {n_win}")


def planted_lag_theta(k_max=15, lag=10, effect=0.6):
    g = np.zeros(k_max)
    g[lag - 1] = effect
    return ParamVector(beta1=[0.2, 0.1], alpha1=[0.3], beta2=[0.2, 0.2], alpha2=[0.2],
                       gamma=g, rho=0.0, phi1=0.5, phi2=1.0)


def test_criterion_9_planted_signals():
    spec = lag_scan_spec(15)
    hits = 0
    for i, ss in enumerate(np.random.SeedSequence(9009).spawn(50)):
        rng = np.random.default_rng(ss)
        data = simulate(spec, planted_lag_theta(), 1000, rng=rng)
        cfg = ExperimentConfig(kind="lag-scan", k_max=15, iterations=6000, burn_in=1000,
                               seed=int(rng.integers(2 ** 31)))
        hits += run_lag_scan(cfg, data, ct=False).argmax_lag == 10
    gspec = geometric_spec(k=1)
    gtheta = geometric_theta(gamma=(0.6,), rho=0.0)
    asym = 0
    for ss in np.random.SeedSequence(9010).spawn(50):
        d = simulate(gspec, gtheta, 1000, rng=np.random.default_rng(ss))
        rep = run_pairwise(ExperimentConfig(kind="pairwise"), [d.y1, d.y2], ["l", "m"])
        # cell [effect, cause]
        asym += rep.p_gamma[1, 0] < 0.05 and rep.p_gamma[0, 1] > 0.05
    verdict(9, hits >= 45 and asym >= 40,
            f"lag-10 argmax {hits}/50; one-directional asymmetry {asym}/50")
