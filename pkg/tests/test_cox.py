import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpp.cox import (
    IntensitySpec,
    Window,
    cdf_joint_min,
    cdf_table,
    connect_prob_limit,
    factorial_moment_limit,
    intensity_spec,
    lambda_mass,
    lambda_window,
    order_stat_prob,
    pmf_arithmetic_min,
    pmf_table,
    sample_cox,
    write_table,
)
from fpp.params import build_params
from fpp.weights import Exponential, FiniteSupport
from fpp.wprocess import moment_table, sample_w_bank

EXP = Exponential(1.0)
TWO_POINT = FiniteSupport(((1, 0.5), (2, 0.5)))
PE = build_params(EXP, 2.0)
PL = build_params(TWO_POINT, 2.0)
SE = intensity_spec(PE)
SL = intensity_spec(PL, theta=0.0)


@pytest.fixture(scope="module")
def bank_exp():
    return sample_w_bank(PE, EXP, 50_000, np.random.default_rng(10))


@pytest.fixture(scope="module")
def bank_lat():
    return sample_w_bank(PL, TWO_POINT, 50_000, np.random.default_rng(11))


def test_lambda_mass_examples():
    assert lambda_mass(SE, 0.0, 0.0) == pytest.approx(1.0)
    assert lambda_mass(SE, math.inf, 0.0) == pytest.approx(2.0)
    assert lambda_mass(SE, 1.0, -2.0) == pytest.approx(0.2277, abs=1e-4)
    y = (math.sqrt(5) - 1) / 2
    assert lambda_mass(SL, math.inf, -0.5) == pytest.approx(y / ((1 - y) * PL.nu_bar), rel=1e-12)
    assert lambda_mass(SL, math.inf, -0.5) == pytest.approx(1.17082, abs=1e-5)
    assert lambda_mass(SL, 0.0, -0.5) == pytest.approx(0.5 * 1.17082, abs=1e-5)


def test_spec_validation():
    with pytest.raises(ValueError):
        IntensitySpec(PL, 1.0, -1.5)
    with pytest.raises(ValueError):
        IntensitySpec(PE, None, -0.1)
    assert intensity_spec(PE).kind == "nonarithmetic"
    assert SL.kind == "arithmetic"


def test_lattice_intensity_tends_to_continuous():
    # shrinking span at fixed alpha and nu_bar
    vals = []
    for m in (1.0, 0.1, 0.01, 0.001):
        spec = IntensitySpec(PE, m, 0.0)
        vals.append(lambda_mass(spec, 0.7, -1.0 + m / 2))
    target = lambda_mass(SE, 0.7, -1.0)
    errs = [abs(v - target) for v in vals]
    assert errs[-1] < 1e-2 * target and errs[-1] < errs[0]


def test_sample_cox_empty_and_errors():
    rng = np.random.default_rng(0)
    assert len(sample_cox(SE, 0.0, 3.0, Window(0.0), rng)) == 0
    with pytest.raises(ValueError):
        sample_cox(SE, 1.0, 1.0, Window(math.inf), rng)


def test_sample_cox_normalization():
    rng = np.random.default_rng(1)
    counts = np.array([len(sample_cox(SE, 1.0, 1.0, Window(0.0), rng)) for _ in range(100_000)])
    assert abs(counts.mean() - 2.0) < 4 * math.sqrt(2.0 / len(counts))


def test_sample_cox_window_and_lattice():
    rng = np.random.default_rng(2)
    win = Window(u_hi=1.0, z_hi=0.5, z_lo=-1.0, u_lo=-3.0)
    spec = intensity_spec(PL, theta=-0.3)
    counts = []
    for _ in range(20_000):
        pts = sample_cox(spec, 2.0, 1.5, win, rng)
        counts.append(len(pts))
        if len(pts):
            assert np.all((pts[:, 0] > -1.0) & (pts[:, 0] <= 0.5))
            assert np.all((pts[:, 1] > -3.0) & (pts[:, 1] <= 1.0))
            assert np.allclose(pts[:, 1], np.round(pts[:, 1]))
    mean = 3.0 * math.exp(PL.alpha * -0.3) * lambda_window(spec, win)
    assert abs(np.mean(counts) - mean) < 4 * math.sqrt(mean / len(counts))


def test_sample_cox_u_distribution():
    rng = np.random.default_rng(3)
    pts = np.concatenate([sample_cox(SE, 3.0, 3.0, Window(0.0, u_lo=-2.0), rng) for _ in range(5000)])
    # P(u <= -1 | u in (-2, 0]) = (e^-1 - e^-2)/(1 - e^-2)
    p = (math.exp(-1) - math.exp(-2)) / (1 - math.exp(-2))
    assert abs((pts[:, 1] <= -1).mean() - p) < 5 * math.sqrt(p * (1 - p) / len(pts))


def test_cdf_joint_min_examples(bank_exp):
    eta = PE.eta
    top, se = cdf_joint_min(SE, math.inf, math.inf, bank_exp)
    assert abs(top - (1 - eta) ** 2) < 4 * se + 1e-12
    assert cdf_joint_min(SE, math.inf, -math.inf, bank_exp)[0] == 0.0
    assert cdf_joint_min(SE, math.inf, -60.0, bank_exp)[0] < 1e-20
    a = cdf_joint_min(SE, 0.0, 0.3, bank_exp)[0]
    b = cdf_joint_min(SE, math.inf, 0.3, bank_exp)[0]
    assert a == pytest.approx(b / 2, rel=1e-14)
    with pytest.raises(ValueError):
        cdf_joint_min(SL, 0.0, 0.0, bank_exp)


def test_cdf_joint_min_monotone_and_bounded(bank_exp):
    prev = 0.0
    for u in np.linspace(-5, 8, 30):
        v = cdf_joint_min(SE, 1.0, float(u), bank_exp)[0]
        assert prev <= v <= (1 - PE.eta) ** 2 + 0.01
        prev = v
    zs = [cdf_joint_min(SE, z, 0.0, bank_exp)[0] for z in (-1, 0, 1, 2)]
    assert zs == sorted(zs)


def test_cdf_conditional(bank_exp):
    v, _ = cdf_joint_min(SE, math.inf, 50.0, bank_exp, conditional=True)
    assert v == pytest.approx(1.0)
    u = cdf_joint_min(SE, math.inf, 0.0, bank_exp)[0]
    c = cdf_joint_min(SE, math.inf, 0.0, bank_exp, conditional=True)[0]
    frac = (bank_exp.prod(axis=1) > 0).mean()
    assert c == pytest.approx(u / frac, rel=1e-12)


def test_cdf_matches_cox_simulation(bank_exp):
    # min over a simulated Cox process: P(some point with u <= 0.2 and the argmin's z <= 0.4)
    rng = np.random.default_rng(4)
    win = Window(u_hi=4.0)
    hits = 0
    trials = 20_000
    for i in range(trials):
        w1, w2 = bank_exp[i]
        pts = sample_cox(SE, w1, w2, win, rng)
        if len(pts):
            j = np.argmin(pts[:, 1])
            hits += pts[j, 1] <= 0.2 and pts[j, 0] <= 0.4
    emp = hits / trials
    v, se = cdf_joint_min(SE, 0.4, 0.2, bank_exp)
    assert abs(emp - v) < 4 * math.sqrt(v * (1 - v) / trials) + 4 * se


def test_pmf_total_mass(bank_lat):
    total = 0.0
    for u in range(-80, 120):
        for k in range(1, 40):
            v, se = pmf_arithmetic_min(SL, float(u), k, None, bank_lat)
            total += v
    frac = (bank_lat.prod(axis=1) > 0).mean()
    assert total == pytest.approx(frac, abs=1e-9)
    se = math.sqrt(frac * (1 - frac) / len(bank_lat))
    assert abs(total - (1 - PL.eta) ** 2) < 3 * se


def test_pmf_k1_marginal_captured(bank_lat):
    near = sum(pmf_arithmetic_min(SL, float(u), 1, None, bank_lat)[0] for u in range(-30, 31))
    wide = sum(pmf_arithmetic_min(SL, float(u), 1, None, bank_lat)[0] for u in range(-100, 101))
    assert near >= 0.99 * wide


def test_pmf_matches_cox_simulation(bank_lat):
    rng = np.random.default_rng(5)
    spec = intensity_spec(PL, theta=-0.25)
    win = Window(u_hi=6.0)
    trials = 20_000
    tally = {}
    for i in range(trials):
        w1, w2 = bank_lat[i]
        pts = sample_cox(spec, w1, w2, win, rng)
        if len(pts):
            lo = pts[:, 1].min()
            k = int(np.sum(pts[:, 1] == lo))
            if k <= 3:
                tally[(lo, k)] = tally.get((lo, k), 0) + 1
    for (u, k) in [(-1.0, 1), (0.0, 1), (0.0, 2), (1.0, 1), (1.0, 3)]:
        v, se = pmf_arithmetic_min(spec, u, k, None, bank_lat)
        emp = tally.get((u, k), 0) / trials
        assert abs(emp - v) < 4 * math.sqrt(v * (1 - v) / trials) + 4 * se


def test_pmf_errors_and_impossible(bank_lat):
    with pytest.raises(ValueError):
        pmf_arithmetic_min(SL, 0.5, 1, None, bank_lat)
    with pytest.raises(ValueError):
        pmf_arithmetic_min(SE, 0.0, 1, None, bank_lat)
    assert pmf_arithmetic_min(SL, 0.0, 2, [-math.inf, 1.0], bank_lat)[0] == 0.0


@pytest.mark.parametrize("z", [[0.3], [0.0, 0.5], [1.0, -0.2, 0.8], [-0.5, 0.0, 0.5, 1.0], [0.1, 0.2, 0.3, 0.4, 0.5, 2.0]])
def test_order_stat_prob_vs_monte_carlo(z):
    rng = np.random.default_rng(len(z))
    x = np.sort(rng.standard_normal((400_000, len(z))), axis=1)
    emp = (x <= np.array(z)).all(axis=1).mean()
    p = order_stat_prob(z)
    assert abs(emp - p) < 4 * math.sqrt(p * (1 - p) / 400_000) + 1e-12


def test_order_stat_prob_special_cases():
    from scipy.special import ndtr

    assert order_stat_prob([]) == 1.0
    assert order_stat_prob([math.inf] * 3) == pytest.approx(1.0)
    assert order_stat_prob([0.4]) == pytest.approx(ndtr(0.4))
    # all thresholds equal: the maximum below t
    assert order_stat_prob([0.2] * 3) == pytest.approx(ndtr(0.2) ** 3)
    # only the minimum constrained
    assert order_stat_prob([0.2, math.inf]) == pytest.approx(1 - (1 - ndtr(0.2)) ** 2)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5))
def test_order_stat_prob_bounded_and_monotone(z):
    p = order_stat_prob(z)
    assert 0.0 <= p <= 1.0
    assert order_stat_prob([v + 0.5 for v in z]) >= p - 1e-12


def test_factorial_moment_limit():
    table = moment_table(PE, EXP, 4)
    # Lambda = 1: z = inf, u = log(1/2)
    win = Window(u_hi=math.log(0.5))
    assert lambda_window(SE, win) == pytest.approx(1.0)
    assert factorial_moment_limit(SE, win, 1, table) == pytest.approx(1.0)
    assert factorial_moment_limit(SE, win, 2, table) == pytest.approx(9.0)
    vals = [factorial_moment_limit(SE, win, r, table) for r in range(1, 5)]
    assert vals == sorted(vals)
    empty = Window(u_hi=0.0, z_hi=-math.inf, z_lo=-math.inf)
    assert factorial_moment_limit(SE, empty, 3, table) == 0.0
    assert factorial_moment_limit(SE, Window(u_hi=math.log(1 / 8)), 2, table) == pytest.approx(0.5625)


def test_connect_prob_limit():
    assert connect_prob_limit(PE) == pytest.approx((1 - 0.203188) ** 2, abs=1e-6)
    assert connect_prob_limit(build_params(EXP, 4.0)) == pytest.approx(0.960739, abs=1e-6)
    assert connect_prob_limit(build_params(EXP, 40.0)) > 0.9999


def test_tables(tmp_path, bank_exp, bank_lat):
    rows = cdf_table(SE, [0.0, math.inf], [-1.0, 0.0], bank_exp)
    assert len(rows) == 4 and set(rows[0]) == {"z", "u", "value", "mc_stderr"}
    write_table(rows, tmp_path / "cdf.csv")
    assert (tmp_path / "cdf.csv").read_text().splitlines()[0] == "z,u,value,mc_stderr"
    prow = pmf_table(SL, [0.0, 1.0], [1, 2], bank_lat)
    assert len(prow) == 4
