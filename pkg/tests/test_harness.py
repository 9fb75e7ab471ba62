import json

import numpy as np
import pytest

from nep.cli import main
from nep.files import game_from_dict, game_to_dict, graph_from_dict, load_game, load_graph, make_topology
from nep.game import GameError, solve_ne
from nep.harness import (
    AlgorithmSpec,
    ConfigError,
    ExperimentConfig,
    figure1_config,
    figure3_config,
    generate_connectivity_game,
    resolve_step,
    run_experiment,
)
from nep.network import NetworkError, path_graph
from nep.solvers import RunTrace


class TestConnectivityGame:
    def test_zero_linear_terms_give_zero_equilibrium(self):
        game = generate_connectivity_game(6, 3)
        from nep.game import QuadraticGame

        g0 = QuadraticGame(game.dims, game.cost, np.zeros(game.n))
        np.testing.assert_allclose(solve_ne(g0), 0.0, atol=1e-14)

    def test_two_agent_pseudo_gradient_matrix(self):
        game = generate_connectivity_game(2, 0)
        q = [game.block(i, i)[0, 0] - 0.5 for i in range(2)]
        # J_i = q_i |x_i|^2 + 0.5 |x_i - x_j|^2: d/dx_i = (2 q_i + 1) x_i - x_j
        expected = np.zeros((4, 4))
        for i in range(2):
            for c in range(2):
                expected[2 * i + c, 2 * i + c] = 2 * q[i] + 1
                expected[2 * i + c, 2 * (1 - i) + c] = -1
        np.testing.assert_allclose(game.G, expected, atol=1e-15)
        assert all(1 <= v <= 2 for v in q)

    def test_seeded_and_bounded_parameters(self):
        a, b = generate_connectivity_game(5, 9), generate_connectivity_game(5, 9)
        np.testing.assert_array_equal(a.cost, b.cost)
        np.testing.assert_array_equal(a.g, b.g)
        assert np.all(np.abs(a.g) <= 2)

    def test_box(self):
        game = generate_connectivity_game(3, 0, (0.1, 0.5))
        assert game.is_constrained
        np.testing.assert_array_equal(game.box.lower, 0.1)

    def test_rejects_single_agent(self):
        with pytest.raises(ValueError):
            generate_connectivity_game(1, 0)


class TestSteps:
    def test_resolve(self):
        assert resolve_step("theory", 0.2) == 0.2
        assert resolve_step("theory*100", 0.2) == pytest.approx(20.0)
        assert resolve_step(0.3, 0.2) == 0.3
        with pytest.raises(ConfigError):
            resolve_step("fast", 1.0)

    def test_labels(self):
        assert AlgorithmSpec("pppa").label == "pppa"
        assert AlgorithmSpec("agp", "theory*100").label == "agp_theory_x100"
        assert AlgorithmSpec("agp", 0.5).label == "agp_0p5"

    @pytest.mark.parametrize("kw", [{"algo": "newton"}, {"algo": "pppa", "step": "theory+1"},
                                    {"algo": "pppa", "step": -1.0}, {"algo": "pppa", "label": "a/b"}])
    def test_rejects(self, kw):
        with pytest.raises(ConfigError):
            AlgorithmSpec(**kw)


class TestConfig:
    def base(self, **kw):
        d = {"game": "connectivity:4:0", "graph": "complete:4", "algorithms": [{"algo": "pppa"}], "iters": 10}
        d.update(kw)
        return d

    def test_round_trip_from_json(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(self.base(output_dir="o")))
        cfg = ExperimentConfig.from_json(p)
        assert cfg.resolve(cfg.output_dir) == tmp_path / "o"

    @pytest.mark.parametrize("bad", [
        {"algorithms": []},
        {"algorithms": [{"algo": "pppa"}, {"algo": "pppa"}]},
        {"init": "ones"},
        {"tol": 0.0},
        {"iters": 0},
        {"graph": "missing.json"},
        {"speed": 3},
        {"algorithms": [{"algo": "pppa", "colour": 1}]},
    ])
    def test_validation(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(self.base(**bad))

    def test_missing_algorithms(self):
        d = self.base()
        del d["algorithms"]
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(d)

    def test_figure_configs(self):
        assert [a.label for a in figure1_config().algorithms] == ["pppa", "agp", "pppa_theory_x100", "agp_theory_x100"]
        assert figure3_config().game.endswith(":box")


class TestRunExperiment:
    def config(self, out, **kw):
        d = {
            "game": "connectivity:5:1:box",
            "graph": "er:5:0.5:1",
            "algorithms": [{"algo": "pppa"}, {"algo": "agp"}, {"algo": "pppa", "step": "theory*100"}],
            "iters": 300,
            "output_dir": str(out),
        }
        d.update(kw)
        return ExperimentConfig.from_dict(d)

    def test_bundle_contents(self, tmp_path):
        bundle = run_experiment(self.config(tmp_path / "a"))
        names = sorted(p.name for p in bundle.output_dir.iterdir())
        assert names == sorted(["manifest.json", "tuning.json", "convergence.svg", "trace_pppa.csv",
                                "trace_agp.csv", "trace_pppa_theory_x100.csv"])
        man = json.loads((bundle.output_dir / "manifest.json").read_text())
        runs = {r["label"]: r for r in man["runs"]}
        assert runs["pppa"]["guaranteed"] and not runs["pppa_theory_x100"]["guaranteed"]
        assert runs["pppa"]["step"] == pytest.approx(bundle.tuning.alpha)
        assert runs["agp"]["step"] == pytest.approx(bundle.tuning.gamma_theory)
        assert not bundle.failures
        back = RunTrace.from_csv(bundle.output_dir / "trace_pppa.csv")
        assert back.same_measurements(bundle.traces["pppa"])
        assert set(back.wall_time_us) == {0}

    def test_byte_identical_reruns(self, tmp_path):
        a = run_experiment(self.config(tmp_path / "a"))
        b = run_experiment(self.config(tmp_path / "b", parallel=True))
        for p in a.output_dir.iterdir():
            assert p.read_bytes() == (b.output_dir / p.name).read_bytes(), p.name

    def test_random_init_seeded(self, tmp_path):
        a = run_experiment(self.config(tmp_path / "a", init="random", seed=4))
        b = run_experiment(self.config(tmp_path / "b", init="random", seed=4))
        c = run_experiment(self.config(tmp_path / "c", init="random", seed=5))
        assert a.traces["pppa"].same_measurements(b.traces["pppa"])
        assert not a.traces["pppa"].same_measurements(c.traces["pppa"])

    def test_partial_failure_kept(self, tmp_path):
        cfg = self.config(tmp_path / "f", game="connectivity:5:1",
                          algorithms=[{"algo": "pppa"}, {"algo": "agp", "step": "theory*1e8"}])
        bundle = run_experiment(cfg)
        assert bundle.failures == ["agp_theory_x1e8"]
        entry = [r for r in bundle.manifest["runs"] if r["label"] == "agp_theory_x1e8"][0]
        assert entry["status"] == "failed" and "DivergenceError" in entry["error"]
        assert (bundle.output_dir / "trace_agp_theory_x1e8.csv").exists()
        assert bundle.manifest["runs"][0]["status"] == "ok"


class TestFiles:
    def test_game_round_trip(self):
        game = generate_connectivity_game(3, 2, (0.1, 0.5))
        back = game_from_dict(json.loads(json.dumps(game_to_dict(game))))
        np.testing.assert_array_equal(back.cost, game.cost)
        np.testing.assert_array_equal(back.g, game.g)
        np.testing.assert_array_equal(back.box.upper, game.box.upper)

    def test_game_scalar_and_null_bounds(self):
        d = {"dims": [1, 1], "blocks": [{"i": 0, "j": 0, "matrix": [[1.0]]}, {"i": 1, "j": 1, "matrix": [[1.0]]}],
             "box": {"lower": 0.0, "upper": [None, 2.0]}}
        game = game_from_dict(d)
        assert game.box.lower.tolist() == [0.0, 0.0]
        assert game.box.upper[0] == np.inf

    @pytest.mark.parametrize("d", [
        {"blocks": []},
        {"N": 3, "dims": [1], "blocks": [{"i": 0, "j": 0, "matrix": [[1.0]]}]},
        {"dims": [1], "blocks": [{"i": 0, "j": 0, "matrix": [[1.0]]}] * 2},
    ])
    def test_game_file_errors(self, d):
        with pytest.raises(GameError):
            game_from_dict(d)

    def test_graph_with_weights(self, tmp_path):
        W = [[0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]]
        p = tmp_path / "g.json"
        p.write_text(json.dumps({"N": 3, "edges": [[0, 1], [1, 2]], "weights": W}))
        g, weights = load_graph(str(p))
        assert g == path_graph(3)
        with pytest.raises(NetworkError):
            make_topology(g, weights)  # zero self-loop in the middle
        with pytest.raises(NetworkError):
            graph_from_dict({"N": 3, "edges": [[0, 1]], "weights": [[1.0]]})

    def test_generators(self):
        assert load_graph("ring:5")[0].N == 5
        assert load_game("connectivity:4:0:box").is_constrained
        for bad in ("er:5:0.3", "ring:5:1"):
            with pytest.raises(ValueError):
                load_graph(bad)
        with pytest.raises(ValueError):
            load_game("connectivity:4:0:wall")

    def test_degree_topology_default_weights(self):
        topo = make_topology(path_graph(3), mode="degree_variant")
        np.testing.assert_array_equal(topo.degrees, [2, 3, 2])
        with pytest.raises(ValueError):
            make_topology(path_graph(3), mode="other")


class TestCli:
    common = ["--game", "connectivity:10:0", "--graph", "er:10:0.3:0"]

    def test_rates_json(self, capsys):
        assert main(["rates", *self.common, "--json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["alpha"] == pytest.approx(0.99 * data["alpha_max"])
        assert data["alpha_admissible"]

    def test_rates_text(self, capsys):
        assert main(["rates", *self.common]) == 0
        assert "rho_alpha" in capsys.readouterr().out

    def test_run_writes_trace(self, tmp_path, capsys):
        out = tmp_path / "t.csv"
        assert main(["run", *self.common, "--iters", "50", "--no-timing", "--out", str(out)]) == 0
        assert "pppa: 50 iterations" in capsys.readouterr().out
        assert len(RunTrace.from_csv(out)) == 51

    def test_run_agp_random_init(self, capsys):
        assert main(["run", *self.common, "--algo", "agp", "--iters", "20", "--init", "random", "--seed", "3"]) == 0
        assert "agp: 20 iterations" in capsys.readouterr().out

    def test_run_alpha_above_bound(self, capsys):
        assert main(["run", *self.common, "--alpha", "1.0", "--iters", "5"]) == 2
        assert "alpha_max" in capsys.readouterr().err
        assert main(["run", *self.common, "--alpha", "1.0", "--iters", "5", "--force-alpha"]) == 0

    def test_run_divergence_exit_code(self, tmp_path, capsys):
        out = tmp_path / "d.csv"
        assert main(["run", *self.common, "--algo", "agp", "--gamma", "10", "--iters", "5000", "--out", str(out)]) == 1
        assert "error" in capsys.readouterr().err
        assert out.exists()

    def test_check(self, capsys):
        assert main(["check", *self.common, "--samples", "50", "--json"]) == 0
        assert json.loads(capsys.readouterr().out)["passed"]

    def test_generate_and_reload(self, tmp_path):
        gpath, npath = tmp_path / "game.json", tmp_path / "graph.json"
        assert main(["generate", "--game", "connectivity:3:0", "--out", str(gpath)]) == 0
        assert main(["generate", "--graph", "path:3", "--out", str(npath)]) == 0
        assert main(["rates", "--game", str(gpath), "--graph", str(npath)]) == 0

    def test_run_exp(self, tmp_path, capsys):
        cfg = {"game": "connectivity:4:0", "graph": "complete:4", "algorithms": [{"algo": "pppa"}],
               "iters": 20, "output_dir": "out"}
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(cfg))
        assert main(["run-exp", "--config", str(p)]) == 0
        assert (tmp_path / "out" / "manifest.json").exists()
        assert "bundle written" in capsys.readouterr().out

    def test_bad_input_exit_code(self, capsys):
        assert main(["rates", "--game", "connectivity:4:0", "--graph", "nofile.json"]) == 2
