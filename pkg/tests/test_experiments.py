import json
import math

import numpy as np
import pytest
from scipy import stats

from accompany_lab.distributions import FiniteLaw, MixtureFactor, RngStream
from accompany_lab.errors import InvalidScheme, NegativeLambda
from accompany_lab.experiments import (
    BERNSTEIN_FORM,
    ExperimentConfig,
    PoissonizationInstance,
    RunManifest,
    bernstein_tail,
    bound_shape_check,
    bound_value,
    delta_tail_exact,
    lambda_profile,
    lecam_cell,
    lecam_experiment,
    poissonization_experiment,
    random_instance,
    run_bound_sweep,
    run_cell,
    run_poissonization,
    sweep_cells,
)
from accompany_lab.polyhedra import make_polyhedron


def exact_config(**kw):
    base = dict(scheme="lattice", n_grid=[6], d_grid=[1], m_grid=[1], p_grid=[0.2, 0.1],
                tau_grid=[0.0, 0.05], mode="exact")
    base.update(kw)
    return ExperimentConfig(**base)


class TestBoundValue:
    def test_tau_zero(self):
        assert bound_value(0.1, 0.0) == 0.1

    def test_formula(self):
        assert bound_value(0.1, 0.05) == pytest.approx(0.1 + 0.05 * (abs(math.log(0.05)) + 1))


class TestConfig:
    def test_empty_grid(self):
        with pytest.raises(ValueError):
            ExperimentConfig(p_grid=[])

    def test_samples(self):
        with pytest.raises(ValueError):
            ExperimentConfig(samples=0)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            ExperimentConfig.from_json({"p_grid": [0.1], "colour": 3})

    def test_scalar_grid(self):
        assert ExperimentConfig(p_grid=0.1).p_grid == [0.1]

    def test_digest_ignores_out(self):
        assert ExperimentConfig(out="a.csv").digest() == ExperimentConfig(out="b.csv").digest()
        assert ExperimentConfig(seed=1).digest() != ExperimentConfig(seed=2).digest()

    def test_roundtrip(self, tmp_path):
        cfg = exact_config(seed=3)
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg.to_json()))
        assert ExperimentConfig.load(path).digest() == cfg.digest()

    def test_bernoulli_cells_have_no_tau(self):
        cells = sweep_cells(ExperimentConfig(scheme="bernoulli", n_grid=[5], d_grid=[1], m_grid=[1]))
        assert {c["tau"] for c in cells} == {0.0}


class TestSweep:
    def test_degenerate_cell(self):
        cfg = exact_config(p_grid=[0.0], tau_grid=[0.0])
        row = run_cell(cfg, 0, sweep_cells(cfg)[0])
        assert row["status"] == "ok"
        assert row["estimate"] == 0.0 and row["ratio"] == 0.0

    def test_bernoulli_halving_p(self):
        cfg = ExperimentConfig(scheme="bernoulli", n_grid=[10], d_grid=[1], m_grid=[1],
                               p_grid=[0.2, 0.1, 0.05, 0.025], mode="exact")
        est = [run_cell(cfg, i, c)["estimate"] for i, c in enumerate(sweep_cells(cfg))]
        assert all(b <= a + 1e-9 for a, b in zip(est, est[1:]))

    def test_monte_carlo_cell(self):
        cfg = exact_config(d_grid=[2], m_grid=[2], p_grid=[0.1], tau_grid=[0.05], mode="auto",
                           samples=5000, family_size=10)
        row = run_cell(cfg, 0, sweep_cells(cfg)[0])
        assert row["mode"] == "monte_carlo" and row["status"] == "ok"
        assert 0.0 <= row["estimate"] <= 1.0 and row["conf_radius"] > 0

    def test_failure_marker(self, tmp_path):
        # well-formed, but its U components are not centered
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(random_instance(RngStream(0), d=1, n=3, m=1).scheme().to_json()))
        cfg = ExperimentConfig(scheme="custom", scheme_path=str(bad), m_grid=[1], mode="exact")
        man = run_bound_sweep(cfg)
        assert not man.ok
        assert man.checks["cells"]["failed"] == [0]
        assert man.cells[0]["status"].startswith("failed")

    def test_malformed_custom_scheme(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        with pytest.raises(InvalidScheme):
            run_bound_sweep(ExperimentConfig(scheme="custom", scheme_path=str(bad), m_grid=[1]))

    def test_manifest_fields(self):
        man = run_bound_sweep(exact_config())
        doc = man.to_json()
        assert doc["config_hash"] == exact_config().digest()
        assert doc["bernstein_form"] == BERNSTEIN_FORM
        assert "wall_clock" not in doc
        assert len(doc["cells"]) == 4
        assert man.to_csv().splitlines()[0].startswith("cell,scheme")

    def test_timing_opt_in(self):
        assert run_bound_sweep(exact_config(), timing=True).wall_clock >= 0.0

    def test_deterministic(self):
        cfg = exact_config(d_grid=[2], m_grid=[1, 2], tau_grid=[0.05], samples=3000, family_size=8, mode="auto")
        assert run_bound_sweep(cfg).dumps() == run_bound_sweep(cfg).dumps()

    def test_thread_count_independent(self, monkeypatch):
        cfg = exact_config(d_grid=[2], m_grid=[1, 2], tau_grid=[0.05], samples=3000, family_size=8, mode="auto")
        monkeypatch.setenv("ACCOMPANY_LAB_THREADS", "1")
        one = run_bound_sweep(cfg).dumps()
        monkeypatch.setenv("ACCOMPANY_LAB_THREADS", "4")
        assert run_bound_sweep(cfg).dumps() == one

    def test_write_sidecar(self, tmp_path):
        man = run_bound_sweep(exact_config())
        paths = man.write(tmp_path / "res.csv")
        assert [p.name for p in paths] == ["res.csv", "res.manifest.json"]
        for p in paths:
            assert p.read_text().endswith("\n")


class TestProfile:
    def test_exponential_shape(self):
        prof = lambda_profile(lambda lam: 0.1 + 0.5 * math.exp(-lam / 0.02), 0.05)
        assert prof["fitted"] == 3 and prof["r"] < -0.999

    def test_flat_profile_unfitted(self):
        prof = lambda_profile(lambda lam: 0.1, 0.05)
        assert prof["fitted"] == 0 and math.isnan(prof["r"])

    def test_needs_positive_tau(self):
        with pytest.raises(ValueError):
            lambda_profile(lambda lam: 0.0, 0.0)

    def test_exact_profile_decreasing(self):
        cfg = exact_config(p_grid=[0.1], tau_grid=[0.1])
        row = run_cell(cfg, 0, sweep_cells(cfg)[0])
        vals = row["profile"]["values"]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_shape_check_flags_spread(self):
        cells = [dict(cell=i, n=5, d=1, m=1, tau=0.0, p=p, ratio=r, status="ok")
                 for i, (p, r) in enumerate([(0.1, 1.0), (0.01, 30.0)])]
        assert not bound_shape_check(cells)["ok"]
        cells[1]["ratio"] = 3.0
        assert bound_shape_check(cells)["ok"]


class TestLeCam:
    def test_trivial(self):
        assert lecam_cell(1, 0.0)["tv"] == pytest.approx(0.0, abs=1e-12)

    def test_n10(self):
        row = lecam_cell(10, 0.1)
        assert row["tv"] <= 0.1 and row["holds"]

    def test_monotone_in_p(self):
        ps = [0.01, 0.02, 0.05, 0.1, 0.2]
        tv = [lecam_cell(20, p)["tv"] for p in ps]
        assert tv == sorted(tv)

    def test_experiment(self):
        man = lecam_experiment([1, 5, 10], [0.05, 0.1])
        assert man.ok and len(man.cells) == 6

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            lecam_experiment([], [0.1])


class TestBernstein:
    def test_zero_weights(self):
        assert bernstein_tail([0.0, 0.0], 1.0) == 1.0
        assert delta_tail_exact([0.0], 1.0) == 0.0

    def test_single_weight(self):
        b = bernstein_tail([1.0], 5.0)
        assert b == pytest.approx(2 * math.exp(-25 / (2 * (1 + 5 / 3))))
        assert b == pytest.approx(0.0185, abs=1e-4)
        exact = stats.poisson.sf(5, 1.0)  # P(nu >= 6); nu <= -4 is impossible
        assert delta_tail_exact([1.0], 5.0) == pytest.approx(exact, rel=1e-9)
        assert exact < b

    def test_monotone(self):
        vals = [bernstein_tail([0.3, -0.5, 1.0], lam) for lam in np.linspace(0, 10, 50)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_dominates_exact(self, gen):
        for _ in range(10):
            w = gen.uniform(-1, 1, 3)
            for lam in (0.5, 1.0, 2.0, 4.0):
                assert delta_tail_exact(w, lam) <= bernstein_tail(w, lam)

    def test_negative_lambda(self):
        with pytest.raises(NegativeLambda):
            bernstein_tail([1.0], -0.1)


class TestPoissonization:
    def test_zero_shifts(self):
        u = FiniteLaw.uniform([[-0.2, 0.0], [0.2, 0.0], [0.0, 0.2], [0.0, -0.2]])
        v = FiniteLaw.point_mass([1.0, 0.5])
        factors = tuple(MixtureFactor(0.1, u, v) for _ in range(4))
        inst = PoissonizationInstance(factors, make_polyhedron([[1, 0], [0, 1]], [0.3, 0.3]), (0.1, 0.3))
        rows = poissonization_experiment(inst, 20000, RngStream(5))
        for r in rows:
            assert r["tail_sum"] == 0.0 and r["bernstein_sum"] == 2.0 * 1.0
            assert r["D_P"] <= r["Dbar_Plam"] <= r["D_P2lam"]
            assert r["ok"]

    def test_single_shift_tail(self):
        # d = 1, one factor with a = 1: Delta = nu - 1
        u = FiniteLaw.point_mass([1.0])
        inst = PoissonizationInstance((MixtureFactor(0.0, u, u),), make_polyhedron([[1.0]], [1.0]),
                                      (0.5, 1.5, 2.5))
        count = 100_000
        for r in poissonization_experiment(inst, count, RngStream(9)):
            exact = delta_tail_exact([1.0], r["lambda"])
            sigma = math.sqrt(exact * (1 - exact) / count)
            assert abs(r["tail_sum"] - exact) <= 4 * sigma

    def test_random_instances(self):
        man = run_poissonization(instances=3, count=20000, seed=1)
        assert man.ok
        assert all(r["tails_ok"] for r in man.cells)

    def test_instance_json(self):
        inst = random_instance(RngStream(2), d=2, n=3, m=2)
        back = PoissonizationInstance.from_json(json.loads(json.dumps(inst.to_json())))
        assert np.array_equal(back.shifts, inst.shifts)
        assert np.array_equal(back.polyhedron.offsets, inst.polyhedron.offsets)

    def test_deterministic(self):
        a = run_poissonization(instances=2, count=5000, seed=4).dumps()
        assert a == run_poissonization(instances=2, count=5000, seed=4).dumps()

    def test_bad_count(self):
        with pytest.raises(ValueError):
            poissonization_experiment(random_instance(RngStream(0)), 0, RngStream(1))


def test_manifest_nonfinite_values():
    man = RunManifest("x", {}, "h", 0, columns=("v",), cells=[{"v": math.inf}, {"v": math.nan}])
    doc = json.loads(man.dumps())
    assert [c["v"] for c in doc["cells"]] == ["inf", "nan"]
