import time

import numpy as np
import pytest

from fairps.dynamics import fair_rrm, repeated_dro
from fairps.errors import BadColumn, NonNumericFeature, ParseError, SingleGroup, ValidationError
import json
from fairps.scenarios import (
    build_population,
    build_problem,
    bundled_scenarios,
    ingest_tabular,
    load_scenario,
)

CSV = """age_group,x1,x2,label
young,1.0,2.0,0
old,2.0,2.5,1
young,3.0,1.0,1
old,4.0,0.5,0
old,5.0,3.0,1
young,6.0,4.0,0
"""


@pytest.fixture
def tiny_csv(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text(CSV)
    return path


def test_load_gaussian_mean():
    cfg = load_scenario("gaussian_mean")
    assert cfg.population.fractions == (0.3, 0.7)
    assert cfg.population.means == (0.3, 0.7)
    assert cfg.transition.p_min == (0.02, 0.02)
    assert cfg.population.n_samples == 10000
    assert len(cfg.seeds) == 7


def test_missing_loss_section(tmp_path):
    text = load_path("gaussian_mean").read_text()
    start = text.index("[loss]")
    end = text.index("[transition]")
    bad = tmp_path / "bad.toml"
    bad.write_text(text[:start] + text[end:])
    with pytest.raises(ValidationError) as info:
        load_scenario(bad)
    assert any("loss" in p for p in info.value.problems)


def load_path(name):
    from fairps.scenarios import resolve_scenario_path
    return resolve_scenario_path(name)


def test_validation_collects_every_problem(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text(load_path("gaussian_mean").read_text()
                   .replace('family = "scalar_mean_squared"', 'family = "hinge"')
                   .replace("tau = 1e-6", "tau = -1.0"))
    with pytest.raises(ValidationError) as info:
        load_scenario(bad)
    assert len(info.value.problems) >= 2


def test_dro_config():
    cfg = load_scenario("dro_example4")
    assert cfg.mechanism == "dro_chi2"
    assert cfg.radius == pytest.approx(1 / 6)
    assert cfg.theta0 == (-0.2,)


def test_gaussian_means_match_config():
    cfg = load_scenario("gaussian_mean")
    pop = build_population(cfg, seed=3, full=True)
    for g, mu, p in zip(pop.groups, cfg.population.means, cfg.population.fractions):
        n = len(g.labels)
        assert n == round(10000 * p)
        assert abs(g.labels.mean() - mu) <= 3 * 0.05 / np.sqrt(n)
    assert len(build_population(cfg, seed=3).groups[0].labels) == 300


def test_example1_point_masses():
    pop = build_population(load_scenario("example1_polarization"), 0)
    assert [g.features[:, 0].tolist() for g in pop.groups] == [[1.0], [0.0]]
    np.testing.assert_array_equal(pop.fractions, [0.7, 0.3])
    assert all(len(g.labels) == 1 for g in pop.groups)


def test_ingest_tabular(tiny_csv):
    stats = {}
    pop = ingest_tabular(tiny_csv, ["x1", "x2"], "label", "age_group", normalize=True,
                         group_order=["young", "old"], stats=stats)
    assert [len(g.labels) for g in pop.groups] == [3, 3]
    np.testing.assert_allclose(pop.fractions, [0.5, 0.5])
    X = np.vstack([g.features for g in pop.groups])
    np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(X.std(axis=0), 1.0, atol=1e-9)
    assert stats["groups"] == ["young", "old"]
    first = ingest_tabular(tiny_csv, ["x1"], "label", "age_group")
    assert [len(g.labels) for g in first.groups] == [3, 3]


def test_ingest_counts_fractions(tmp_path):
    rows = ["g,x,y"] + [f"young,{i},0" for i in range(40)] + [f"old,{i},1" for i in range(60)]
    path = tmp_path / "ages.csv"
    path.write_text("\n".join(rows) + "\n")
    pop = ingest_tabular(path, ["x"], "y", "g")
    np.testing.assert_allclose(pop.fractions, [0.4, 0.6])


def test_ingest_errors(tmp_path, tiny_csv):
    bad = tmp_path / "bad.csv"
    bad.write_text(CSV.replace("2.0,2.5,1", "yes,2.5,1"))
    with pytest.raises(NonNumericFeature):
        ingest_tabular(bad, ["x1"], "label", "age_group")
    with pytest.raises(BadColumn):
        ingest_tabular(tiny_csv, ["x9"], "label", "age_group")
    one = tmp_path / "one.csv"
    one.write_text("g,x,y\na,1,0\na,2,1\n")
    with pytest.raises(SingleGroup):
        ingest_tabular(one, ["x"], "y", "g")
    with pytest.raises(FileNotFoundError):
        ingest_tabular(tmp_path / "missing.csv", ["x"], "y", "g")


def test_overrides():
    cfg = load_scenario("gaussian_mean", ["mechanism=slp", "rho=0.5", "population.noise_sd=0.1", "tau=1e-8"])
    assert cfg.mechanism == "slp"
    assert cfg.rho == [0.5]
    assert cfg.population.noise_sd == 0.1
    assert cfg.tau == 1e-8
    assert cfg.config_hash() != load_scenario("gaussian_mean").config_hash()
    with pytest.raises(ParseError):
        load_scenario("gaussian_mean", ["no_equals_sign"])
    with pytest.raises(ValidationError):
        load_scenario("gaussian_mean", ["mechanism=hinge"])


def test_build_is_pure_in_config_and_seed():
    cfg = load_scenario("gaussian_mean")
    a = json.dumps(build_population(cfg, 4).to_dict())
    b = json.dumps(build_population(cfg, 4).to_dict())
    c = json.dumps(build_population(cfg, 5).to_dict())
    assert a == b and a != c


@pytest.mark.parametrize("name", bundled_scenarios())
def test_every_bundled_scenario_runs(name):
    start = time.perf_counter()
    cfg = load_scenario(name)
    problem = build_problem(cfg, cfg.seeds[0])
    if cfg.mechanism == "dro_chi2":
        traj = repeated_dro(problem, cfg.radius, tau=cfg.tau, max_rounds=cfg.max_rounds)
    else:
        traj = fair_rrm(problem, cfg.mechanisms()[-1], tau=cfg.tau, max_rounds=cfg.max_rounds)
    assert len(traj.points) >= 2
    assert time.perf_counter() - start < 60


def test_scenario_dir_env(tmp_path, monkeypatch):
    text = load_path("gaussian_mean").read_text().replace('name = "gaussian_mean"', 'name = "custom"')
    (tmp_path / "custom.toml").write_text(text)
    monkeypatch.setenv("FAIRPS_SCENARIO_DIR", str(tmp_path))
    assert load_scenario("custom").name == "custom"
    monkeypatch.delenv("FAIRPS_SCENARIO_DIR")
    with pytest.raises(ParseError):
        load_scenario("custom")
