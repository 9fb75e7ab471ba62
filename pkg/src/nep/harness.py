"""Connectivity-game generator and algorithm comparison experiments.

Experiment config (JSON)::

    {
      "game": "connectivity:10:0",          # generator or path to a game file
      "graph": "er:10:0.3:0",               # generator or path to a graph file
      "mode": "doubly_stochastic",          # or "degree_variant"
      "alpha": "theory",                    # F_a weight used by agp runs
      "algorithms": [
        {"algo": "pppa", "step": "theory"},
        {"algo": "agp",  "step": "theory*100", "label": "agp_x100"}
      ],
      "iters": 20000,
      "tol": 1e-6,
      "init": "zero",                       # or "random" (seeded by "seed")
      "seed": 0,
      "timing": false,
      "parallel": false,
      "output_dir": "out"
    }

Step tokens: ``"theory"`` is ``0.99 alpha_max`` for pppa and
``rho_alpha / theta_Fa**2`` for agp, ``"theory*<k>"`` multiplies it by ``k``
and a number is used as is.  Relative paths resolve against the config
file's directory.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .files import load_game, load_graph, make_topology, write_json
from .game import BoxSet, QuadraticGame, solve_ne
from .solvers import RunTrace, SolverConfig, SolverError, augmented_gradient_run, pppa_run
from .tuning import TuningReport, tune

CONNECTIVITY_BOX = (0.1, 0.5)
ALGORITHMS = ("pppa", "agp")
_STEP_RE = re.compile(r"^theory(?:\*([0-9.eE+-]+))?$")


class ConfigError(ValueError):
    pass


def generate_connectivity_game(N: int, seed: int, box: tuple[float, float] | None = None) -> QuadraticGame:
    """Planar sensor connectivity game.

    ``J_i = q_i |x_i|^2 + r_i' x_i + sum_j m_ij |x_i - x_j|^2`` with
    ``x_i`` in the plane, ``m_ij = 1/N``, ``q_i ~ U[1, 2]`` and
    ``r_i ~ U[-2, 2]^2``.  ``box`` bounds every coordinate.
    """
    if N < 2:
        raise ValueError("connectivity game needs N >= 2")
    rng = np.random.default_rng(seed)
    q = rng.uniform(1.0, 2.0, N)
    r = rng.uniform(-2.0, 2.0, (N, 2))
    m = 1.0 / N
    eye = np.eye(2)
    blocks = {}
    for i in range(N):
        blocks[i, i] = (q[i] + m * (N - 1)) * eye
        for j in range(N):
            if j != i:
                # |x_i - x_j|^2 contributes -2 m x_i' x_j
                blocks[i, j] = -2.0 * m * eye
    sets = None if box is None else [BoxSet.uniform(2, *box) for _ in range(N)]
    return QuadraticGame.from_blocks([2] * N, blocks, list(r), sets)


@dataclass
class AlgorithmSpec:
    algo: str
    step: str | float = "theory"
    label: str | None = None

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {ALGORITHMS}")
        if isinstance(self.step, str) and not _STEP_RE.match(self.step):
            raise ConfigError(f"bad step token {self.step!r}")
        if not isinstance(self.step, str) and not float(self.step) > 0:
            raise ConfigError("explicit step must be positive")
        if self.label is None:
            if self.step == "theory":
                self.label = self.algo
            else:
                token = str(self.step).replace("theory*", "theory_x").replace(".", "p")
                self.label = f"{self.algo}_{token}"
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.label):
            raise ConfigError(f"label {self.label!r} is not filename-safe")

    @property
    def is_theory(self) -> bool:
        return self.step == "theory"


def resolve_step(step: str | float, theory: float) -> float:
    if isinstance(step, str):
        m = _STEP_RE.match(step)
        if not m:
            raise ConfigError(f"bad step token {step!r}")
        return theory * (float(m.group(1)) if m.group(1) else 1.0)
    return float(step)


@dataclass
class ExperimentConfig:
    game: str
    graph: str
    algorithms: list[AlgorithmSpec]
    iters: int = 20_000
    tol: float = 1e-6
    output_dir: str = "out"
    mode: str = "doubly_stochastic"
    alpha: str | float = "theory"
    init: str = "zero"
    seed: int = 0
    timing: bool = False
    parallel: bool = False
    base_dir: str | None = None

    def __post_init__(self):
        if not self.algorithms:
            raise ConfigError("experiment needs at least one algorithm")
        labels = [a.label for a in self.algorithms]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate algorithm labels {labels}")
        if self.init not in ("zero", "random"):
            raise ConfigError("init must be 'zero' or 'random'")
        if self.iters < 1 or not self.tol > 0:
            raise ConfigError("iters must be >= 1 and tol > 0")
        for src in (self.game, self.graph):
            if ":" not in src:
                path = Path(src) if self.base_dir is None else Path(self.base_dir) / src
                if not path.exists():
                    raise ConfigError(f"referenced file {path} does not exist")

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | None = None) -> ExperimentConfig:
        data = dict(data)
        try:
            algos = [AlgorithmSpec(**a) for a in data.pop("algorithms")]
        except KeyError:
            raise ConfigError("config needs an 'algorithms' list") from None
        except TypeError as exc:
            raise ConfigError(f"bad algorithm entry: {exc}") from None
        known = set(cls.__dataclass_fields__) - {"algorithms", "base_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(algorithms=algos, base_dir=base_dir, **data)

    @classmethod
    def from_json(cls, path: str | Path) -> ExperimentConfig:
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=str(path.parent))

    def resolve(self, p: str) -> Path:
        return Path(p) if self.base_dir is None else Path(self.base_dir) / p


@dataclass
class ExperimentBundle:
    output_dir: Path
    tuning: TuningReport
    traces: dict[str, RunTrace]
    manifest: dict
    plot: Path | None = None
    failures: list[str] = field(default_factory=list)


def figure1_config(output_dir: str = "fig1", seed: int = 0, iters: int = 20_000) -> ExperimentConfig:
    """Unconstrained comparison at theoretical and 100x theoretical steps."""
    return ExperimentConfig(
        game=f"connectivity:10:{seed}",
        graph=f"er:10:0.3:{seed}",
        algorithms=[
            AlgorithmSpec("pppa", "theory"),
            AlgorithmSpec("agp", "theory"),
            AlgorithmSpec("pppa", "theory*100"),
            AlgorithmSpec("agp", "theory*100"),
        ],
        iters=iters,
        output_dir=output_dir,
    )


def figure3_config(output_dir: str = "fig3", seed: int = 0, iters: int = 20_000) -> ExperimentConfig:
    """Box-constrained comparison at theoretical steps."""
    return ExperimentConfig(
        game=f"connectivity:10:{seed}:box",
        graph=f"er:10:0.3:{seed}",
        algorithms=[AlgorithmSpec("pppa", "theory"), AlgorithmSpec("agp", "theory")],
        iters=iters,
        output_dir=output_dir,
    )


def _run_one(spec, game, topo, report, alpha_fa, cfg, x0, x_star):
    if spec.algo == "pppa":
        alpha = resolve_step(spec.step, report.alpha)
        conf = SolverConfig(
            alpha=alpha, max_iters=cfg.iters, stop_tol=cfg.tol, mode=cfg.mode,
            force_alpha=True, record_time=cfg.timing,
        )
        guaranteed = bool(alpha < report.alpha_max)
        return pppa_run(game, topo, conf, x0=x0, x_star=x_star), alpha, guaranteed
    gamma = resolve_step(spec.step, report.gamma_theory)
    conf = SolverConfig(
        alpha=alpha_fa, max_iters=cfg.iters, stop_tol=cfg.tol, mode=cfg.mode, record_time=cfg.timing,
    )
    guaranteed = bool(alpha_fa == report.alpha and gamma <= report.gamma_theory)
    return augmented_gradient_run(game, topo, gamma, conf, x0=x0, x_star=x_star), gamma, guaranteed


def run_experiment(cfg: ExperimentConfig) -> ExperimentBundle:
    """Run every configured algorithm from the same start and write the bundle.

    Writes ``trace_<label>.csv`` per algorithm, ``tuning.json``,
    ``manifest.json`` and ``convergence.svg`` into the output directory.  A
    failed run keeps its partial trace and is listed in the manifest.
    """
    out = cfg.resolve(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    game = load_game(cfg.game, cfg.base_dir)
    graph, weights = load_graph(cfg.graph, cfg.base_dir)
    topo = make_topology(graph, weights, cfg.mode)
    report = tune(game, topo)
    write_json(out / "tuning.json", report.to_dict())
    alpha_fa = resolve_step(cfg.alpha, report.alpha)
    x_star = solve_ne(game)

    x0 = None
    if cfg.init == "random":
        x0 = np.random.default_rng(cfg.seed).standard_normal((game.N, game.n))

    def job(spec):
        try:
            res, step, guaranteed = _run_one(spec, game, topo, report, alpha_fa, cfg, x0, x_star)
            return spec, res.trace, step, guaranteed, None
        except SolverError as exc:
            return spec, exc.trace, None, None, f"{type(exc).__name__}: {exc}"

    if cfg.parallel:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(job, cfg.algorithms))
    else:
        results = [job(spec) for spec in cfg.algorithms]

    traces, entries, failures = {}, [], []
    for spec, trace, step, guaranteed, error in results:
        csv_name = f"trace_{spec.label}.csv"
        entry = {"label": spec.label, "algo": spec.algo, "step_token": spec.step, "csv": csv_name}
        if trace is not None:
            trace.to_csv(out / csv_name)
            traces[spec.label] = trace
        if error is None:
            entry.update(
                status="ok",
                step=step,
                guaranteed=guaranteed,
                iterations=trace.iter[-1],
                iterations_to_tol=trace.iterations_to(cfg.tol),
                final_dist_to_ne=trace.dist_to_ne[-1],
            )
        else:
            failures.append(spec.label)
            entry.update(status="failed", error=error, iterations=trace.iter[-1] if trace else 0)
        entries.append(entry)

    manifest = {
        "game": cfg.game,
        "graph": cfg.graph,
        "mode": cfg.mode,
        "tol": cfg.tol,
        "iters": cfg.iters,
        "init": cfg.init,
        "seed": cfg.seed,
        "runs": entries,
    }
    write_json(out / "manifest.json", manifest)
    csvs = {e["label"]: out / e["csv"] for e in entries if e["label"] in traces}
    plot = plot_convergence(csvs, out / "convergence.svg", dashed={s.label for s in cfg.algorithms if not s.is_theory})
    return ExperimentBundle(out, report, traces, manifest, plot, failures)


def plot_convergence(csvs: dict[str, Path], path: Path, dashed: set[str] = frozenset()) -> Path:
    """Semilog plot of ``dist_to_ne`` against round, read back from the written CSVs."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "nep", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        for label, csv_path in csvs.items():
            tr = RunTrace.from_csv(csv_path)
            d = tr.column("dist_to_ne")
            keep = d > 0
            ax.semilogy(np.asarray(tr.iter)[keep], d[keep], "--" if label in dashed else "-", label=label)
        ax.set_xlabel("iteration")
        ax.set_ylabel(r"$\|x^k - 1\otimes x^*\|$")
        ax.grid(True, which="both", alpha=0.3)
        if csvs:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
