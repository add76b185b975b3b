import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairps.dynamics import Problem, TrajectoryPoint, fair_rrm, repeated_dro
from fairps.errors import NoCertificate, SingleGroup, TooShort
from fairps.losses import FairMechanism, LossSpec, Model
from fairps.metrics import (
    assumption1_fraction,
    certificate,
    contraction_ratios,
    flag_rows,
    loss_disparity,
    monotonicity_report,
    participation_disparity,
    spread,
    summarize_runs,
    tail_ratios,
)
from fairps.population import GroupDistribution, make_population
from fairps.scenarios import build_problem, load_scenario
from fairps.transitions import RatioRetention

from conftest import point_population

MEAN = LossSpec("scalar_mean_squared", gamma=2.0, beta=2.0, loss_sup=1.0)


def geometric_points(n, r=0.5):
    pts = [TrajectoryPoint(0, np.zeros(1), np.array([0.5, 0.5]), np.zeros(2), 0, 0, 0, 0.0, 0.0)]
    for t in range(1, n):
        d = r ** t
        pts.append(TrajectoryPoint(t, np.zeros(1), np.array([0.5, 0.5]), np.zeros(2), 0, 0, 0, d / 2, d / 2))
    return pts


def test_disparity_examples():
    assert spread([0.1, 0.3, 0.2]) == pytest.approx(0.2)
    assert participation_disparity(point_population([0, 1], [0.5, 0.5])) == 0.0
    assert participation_disparity(point_population([0, 1], [0.3, 0.7])) == pytest.approx(0.4)
    assert participation_disparity(point_population([0, 1, 2], [0.15, 0.25, 0.6])) == pytest.approx(0.45)
    same = point_population([0.4, 0.4], [0.2, 0.8])
    assert loss_disparity(Model([0.1], "mean"), same, MEAN) == 0.0
    with pytest.raises(SingleGroup):
        participation_disparity(point_population([0.0], [1.0]))
    with pytest.raises(SingleGroup):
        loss_disparity(Model([0.1], "mean"), point_population([0.0], [1.0]), MEAN)


@settings(max_examples=300)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=6), st.floats(-2, 2), st.randoms())
def test_disparities_permutation_invariant(points, theta, rnd):
    k = len(points)
    p = np.full(k, 1.0 / k)
    pop = point_population(points, p)
    perm = list(range(k))
    rnd.shuffle(perm)
    shuffled = point_population([points[i] for i in perm], p)
    m = Model([theta], "mean")
    assert loss_disparity(m, pop, MEAN) == pytest.approx(loss_disparity(m, shuffled, MEAN), abs=1e-15)
    assert loss_disparity(m, pop, MEAN) >= 0
    assert participation_disparity(pop) >= 0


def test_geometric_contraction():
    ratios = contraction_ratios(geometric_points(10))
    np.testing.assert_allclose(ratios, 0.5, rtol=1e-12)
    with pytest.raises(TooShort):
        contraction_ratios(geometric_points(2))


def test_converged_run_tail_ratios_below_one():
    cfg = load_scenario("gaussian_mean")
    traj = fair_rrm(build_problem(cfg, 0), FairMechanism("glp", 0.3))
    assert max(tail_ratios(traj)) < 1


def test_dro_ratios_do_not_settle():
    cfg = load_scenario("dro_example4")
    traj = repeated_dro(build_problem(cfg, 0), cfg.radius, max_rounds=40)
    ratios = contraction_ratios(traj)
    assert np.mean(ratios[-10:]) >= 1 - 1e-9


def test_certificate_examples():
    loss = LossSpec("squared_error", gamma=5.0, beta=5.0, loss_sup=1.0)
    c = certificate(loss, "plain", 0.0, 0.1)
    assert c.lhs == pytest.approx(0.2)
    assert c.holds and certificate(loss, "plain", 0.0, 0.1, schema="k_delayed").holds
    assert certificate(loss, "glp", 3.0, 0.0).lhs == 0.0
    with pytest.raises(NoCertificate):
        certificate(loss, "glv", 0.5, 0.1)


def test_certificate_threshold_in_rho():
    # (2 rho lbar + 1) = (1/eps - 1) gamma / beta marks the boundary
    eps, gamma, beta, lbar = 0.2, 2.0, 2.0, 1.0
    loss = LossSpec("scalar_mean_squared", gamma=gamma, beta=beta, loss_sup=lbar)
    rho_star = ((1 / eps - 1) * gamma / beta - 1) / (2 * lbar)
    assert certificate(loss, "glp", rho_star * 0.99, eps).holds
    assert not certificate(loss, "glp", rho_star * 1.01, eps).holds


@settings(max_examples=300)
@given(st.floats(0.01, 0.99), st.sampled_from(["glp", "slp", "rw"]), st.floats(0, 5), st.floats(0, 5))
def test_certificate_monotone_in_rho(eps, kind, r1, r2):
    loss = LossSpec("scalar_mean_squared", gamma=1.0, beta=2.0, loss_sup=1.5)
    lo, hi = sorted([r1, r2])
    assert certificate(loss, kind, hi, eps).holds <= certificate(loss, kind, lo, eps).holds


def test_monotonicity_report_gaussian_mean():
    cfg = load_scenario("gaussian_mean")
    rows = monotonicity_report(lambda s: build_problem(cfg, s), "glp", [0.0, 0.3, 0.7], seeds=[0, 1, 2])
    ld = [r.loss_disparity_ps for r in rows]
    assert ld[0] > ld[1] > ld[2]
    assert not any(r.flagged for r in rows)
    assert all(r.verdict.startswith("Converged") or r.verdict.startswith("Mixed") for r in rows)
    single = monotonicity_report(build_problem(cfg, 0), "glp", [0.0])
    assert len(single) == 1 and not single[0].flagged


def test_report_flags_out_of_hypothesis_scenario():
    # minority engineered to have the lower loss: the guarantee does not apply and a flag may appear
    groups = [GroupDistribution(0, [[0.5]], [0.5], None), GroupDistribution(1, [[0.1], [0.9]], [0.1, 0.9], None)]
    pop = make_population(groups, [0.3, 0.7])
    problem = Problem(pop, MEAN, RatioRetention((0.02, 0.02)), box=(0.0, 1.0))
    rows = monotonicity_report(problem, "glp", [0.0, 0.5, 2.0])
    assert len(rows) == 3
    assert all(0.0 <= r.assumption1_fraction <= 1.0 for r in rows)
    assert rows[0].assumption1_fraction < 1.0


def test_report_records_failures():
    cfg = load_scenario("example2_strategic")
    rows = monotonicity_report(build_problem(cfg, 0), "glp", [0.0, 0.3])
    assert rows[0].verdict.startswith("Converged")
    assert rows[1].verdict == "Error(NonDifferentiableFamily)"
    with pytest.raises(ValueError):
        monotonicity_report(build_problem(cfg, 0), "glp", [0.3, 0.0])


def test_flag_rows():
    rows = [summarize_runs(r, []) for r in (0.0, 0.1)]
    assert [r.flagged for r in flag_rows(rows)] == [False, False]


def test_assumption1_fraction_on_example1():
    cfg = load_scenario("example1_polarization")
    traj = fair_rrm(build_problem(cfg, 0), FairMechanism("plain"))
    assert assumption1_fraction(traj) == 1.0
