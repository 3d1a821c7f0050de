"""Generation-quality metrics, the end-to-end DDE pipeline and the
simulation grid runner."""

from __future__ import annotations

import csv
import json
import logging
import time
from contextlib import contextmanager
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, HypergenError, ValidationError
from .hypercore import Hypergraph, cooccurrence_stats, load_hypergraph
from .linmodel import sample_hyperlinks
from .mle import MleConfig, fit
from .scorediff import DiffusionSchedule, ScoreNet, TrainConfig, sample, train_score
from .simgen import SimConfig, generate_ground_truth

log = logging.getLogger(__name__)

REFERENCE_MODES = ("train-sample", "oracle-sample")
METHODS = ("dde", "gau-diff", "ber-diff")


def _same_n(gen: Hypergraph, ref: Hypergraph):
    if gen.n != ref.n:
        raise ValidationError(f"node counts differ: {gen.n} vs {ref.n}")


def rmse_means(gen: Hypergraph, ref: Hypergraph) -> float:
    _same_n(gen, ref)
    d = cooccurrence_stats(gen).mean - cooccurrence_stats(ref).mean
    return float(np.sqrt(np.mean(d * d)))


def rmse_covs(gen: Hypergraph, ref: Hypergraph) -> float:
    """RMSE over the upper triangle (diagonal included) of the covariance matrices."""
    _same_n(gen, ref)
    iu = np.triu_indices(gen.n)
    d = cooccurrence_stats(gen).cov[iu] - cooccurrence_stats(ref).cov[iu]
    return float(np.sqrt(np.mean(d * d)))


def duplicate_rate(gen: Hypergraph, train: Hypergraph) -> float:
    """Fraction of generated hyperlinks identical to some training hyperlink."""
    if gen.m == 0:
        return 0.0
    seen = set(train.links)
    return sum(e in seen for e in gen.links) / gen.m


@dataclass
class EvalReport:
    method: str
    rmse_mean: float
    rmse_cov: float
    duplicate_rate: float
    m_tilde: int
    m: int
    n: int
    K: int
    seed: int
    seconds: float
    reference: str = "train-sample"

    @classmethod
    def columns(cls):
        """CSV columns. Wall-clock time is left out so reruns are byte-identical;
        it goes to meta.json instead."""
        return [f.name for f in fields(cls) if f.name != "seconds"]


def evaluate(method, gen, train, ref, K, seed, seconds, reference) -> EvalReport:
    return EvalReport(
        method=method,
        rmse_mean=rmse_means(gen, ref),
        rmse_cov=rmse_covs(gen, ref),
        duplicate_rate=duplicate_rate(gen, train),
        m_tilde=gen.m, m=train.m, n=train.n, K=K, seed=seed,
        seconds=seconds, reference=reference,
    )


def write_reports(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=EvalReport.columns(), lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow({c: getattr(r, c) for c in EvalReport.columns()})


@dataclass
class PipelineConfig:
    """Everything needed for one DDE run.

    Exactly one of ``sim`` (simulate the observed hypergraph) or ``input_path``
    must be given. ``oracle-sample`` reference mode needs ``sim``.
    """

    sim: SimConfig | None = None
    input_path: str | None = None
    input_format: str = "lines"
    mle: MleConfig = field(default_factory=MleConfig)
    schedule: DiffusionSchedule = field(default_factory=DiffusionSchedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden: tuple[int, ...] = (128, 128)
    m_tilde_multiplier: int = 32
    reference: str = "train-sample"
    seed: int = 0

    def __post_init__(self):
        if self.m_tilde_multiplier < 1:
            raise ConfigError(f"m_tilde multiplier must be >= 1, got {self.m_tilde_multiplier}")
        if self.reference not in REFERENCE_MODES:
            raise ConfigError(f"reference must be one of {REFERENCE_MODES}")
        if (self.sim is None) == (self.input_path is None):
            raise ConfigError("give exactly one of a simulation config or an input path")
        if self.reference == "oracle-sample" and self.sim is None:
            raise ConfigError("oracle-sample reference needs a simulation config")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        if d.get("sim") is not None:
            d["sim"] = SimConfig(**d["sim"])
        for key, typ in (("mle", MleConfig), ("schedule", DiffusionSchedule), ("train", TrainConfig)):
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        if "hidden" in d:
            d["hidden"] = tuple(d["hidden"])
        return cls(**d)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def streams(self):
        names = ("net_init", "sample", "decode", "reference")
        seqs = np.random.SeedSequence([self.seed, 1]).spawn(len(names))
        return {k: np.random.default_rng(s) for k, s in zip(names, seqs)}


@dataclass
class PipelineResult:
    generated: Hypergraph
    report: EvalReport
    observed: Hypergraph
    reference: Hypergraph
    fit: object = None
    net: ScoreNet | None = None
    embeddings: np.ndarray | None = None
    timings: dict = field(default_factory=dict)

    def save(self, out_dir, config: PipelineConfig | None = None) -> None:
        from .hypercore import save_hypergraph
        from .linmodel import save_embeddings

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_hypergraph(self.generated, out / "generated.txt")
        write_reports(out / "report.csv", [self.report])
        if self.embeddings is not None:
            save_embeddings(out / "embeddings.csv", self.embeddings)
        if self.fit is not None:
            self.fit.save(out / "fit")
        if self.net is not None:
            self.net.save(out / "score_net.bin", config.schedule if config else None)
            (out / "loss_trace.csv").write_text(
                "epoch,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(self.net.loss_trace)))
        write_meta(out, config.to_dict() if config else {},
                   timings={**self.timings, "total": self.report.seconds})


def write_meta(out_dir, config: dict, **extra) -> None:
    meta = {"version": __version__, "numpy": np.__version__, "config": config}
    meta.update(extra)
    Path(out_dir, "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))


def _observed(cfg: PipelineConfig):
    if cfg.sim is not None:
        truth = generate_ground_truth(cfg.sim)
        return truth.hypergraph, truth
    return load_hypergraph(cfg.input_path, cfg.input_format), None


def _reference(cfg, observed, truth, m_tilde, rng):
    if cfg.reference == "oracle-sample":
        return truth.reference_sample(m_tilde, rng)
    return observed


class StageError(HypergenError):
    """Wraps a failure with the pipeline stage it came from."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name):
    try:
        yield
    except HypergenError as exc:
        raise StageError(name, exc) from exc


def run_dde_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Estimate embeddings, fit the diffusion model on them, sample new
    embeddings and decode them into hyperlinks."""
    timings = {}
    t_start = time.perf_counter()
    observed, truth = _observed(cfg)
    streams = cfg.streams()
    m_tilde = cfg.m_tilde_multiplier * observed.m

    t0 = time.perf_counter()
    with _stage("mle"):
        mle_fit = fit(observed, cfg.mle)
    timings["mle"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    net = ScoreNet(cfg.mle.K, hidden=cfg.hidden, rng=streams["net_init"])
    with _stage("train"):
        net = train_score(mle_fit.X_hat, net, cfg.schedule, cfg.train)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with _stage("sample"):
        X_new = sample(net, cfg.schedule, m_tilde, streams["sample"])
    generated = sample_hyperlinks(X_new, mle_fit.params_hat, streams["decode"])
    timings["sample"] = time.perf_counter() - t0
    seconds = time.perf_counter() - t_start

    ref = _reference(cfg, observed, truth, m_tilde, streams["reference"])
    report = evaluate("dde", generated, observed, ref, cfg.mle.K, cfg.seed, seconds, cfg.reference)
    return PipelineResult(generated, report, observed, ref, mle_fit, net, X_new, timings)


def run_baseline(method: str, cfg: PipelineConfig, ber_steps: int = 100) -> PipelineResult:
    """Gau-Diff or Ber-Diff on the same observed data, reference and seeds as
    :func:`run_dde_pipeline`."""
    from .baselines import ber_diff_fit_sample, gau_diff_fit_sample

    if method not in ("gau-diff", "ber-diff"):
        raise ConfigError(f"unknown baseline {method!r}")
    t_start = time.perf_counter()
    observed, truth = _observed(cfg)
    streams = cfg.streams()
    m_tilde = cfg.m_tilde_multiplier * observed.m
    rng = streams["sample"]
    with _stage(method):
        if method == "gau-diff":
            generated, model = gau_diff_fit_sample(observed, cfg.schedule, cfg.train, m_tilde, rng,
                                                   hidden=cfg.hidden)
        else:
            generated, model = ber_diff_fit_sample(observed, ber_steps, cfg.train, m_tilde, rng,
                                                   hidden=cfg.hidden)
    seconds = time.perf_counter() - t_start
    ref = _reference(cfg, observed, truth, m_tilde, streams["reference"])
    report = evaluate(method, generated, observed, ref, cfg.mle.K, cfg.seed, seconds, cfg.reference)
    return PipelineResult(generated, report, observed, ref, timings={"total": seconds},
                          fit=None, net=None, embeddings=None), model


# ---------------------------------------------------------------- grid

@dataclass
class GridSpec:
    """Cartesian grid of simulation settings. ``mn`` lists (m, n) pairs."""

    methods: tuple[str, ...] = ("dde",)
    K: tuple[int, ...] = (2,)
    mn: tuple[tuple[int, int], ...] = ((200, 200),)
    alpha_range: tuple[float, float] = (-1.0, 0.0)
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    reference: str = "train-sample"
    m_tilde_multiplier: int = 32
    schedule: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    mle: dict = field(default_factory=dict)
    ber_steps: int = 100

    def __post_init__(self):
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ConfigError(f"unknown methods {sorted(bad)}; choose from {METHODS}")
        self.mn = tuple(tuple(int(v) for v in p) for p in self.mn)

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown grid fields: {sorted(unknown)}")
        return cls(**d)

    def cells(self):
        """Cells in deterministic grid order."""
        return [(meth, K, m, n, s) for meth in self.methods for K in self.K
                for (m, n) in self.mn for s in self.seeds]


def _cell_config(spec: GridSpec, K, m, n, seed) -> PipelineConfig:
    return PipelineConfig(
        sim=SimConfig(K=K, m=m, n=n, alpha_range=spec.alpha_range, seed=seed),
        mle=MleConfig(**{**spec.mle, "K": K}),
        schedule=DiffusionSchedule(**spec.schedule),
        train=TrainConfig(**{**spec.train, "seed": seed}),
        m_tilde_multiplier=spec.m_tilde_multiplier,
        reference=spec.reference,
        seed=seed,
    )


def _run_cell(args):
    spec, (method, K, m, n, seed) = args
    try:
        cfg = _cell_config(spec, K, m, n, seed)
        if method == "dde":
            return asdict(run_dde_pipeline(cfg).report), None
        res, _ = run_baseline(method, cfg, spec.ber_steps)
        return asdict(res.report), None
    except Exception as exc:  # a failed cell is recorded, the grid continues
        log.warning("cell %s failed: %s", (method, K, m, n, seed), exc)
        return None, "".join(traceback.format_exception_only(type(exc), exc)).strip()


GRID_COLUMNS = EvalReport.columns() + ["error"]


def run_experiment_grid(spec: GridSpec, out_csv=None, workers: int = 1):
    """Run every cell and return (rows, medians). Rows are in grid order; a
    failing cell yields a row with NaN metrics and the error message."""
    cells = spec.cells()
    jobs = [(spec, c) for c in cells]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = []
    for (method, K, m, n, seed), (rep, err) in zip(cells, results):
        if rep is None:
            rep = dict(method=method, rmse_mean=float("nan"), rmse_cov=float("nan"),
                       duplicate_rate=float("nan"), m_tilde=spec.m_tilde_multiplier * m,
                       m=m, n=n, K=K, seed=seed, seconds=float("nan"), reference=spec.reference)
        rows.append({**rep, "error": err or ""})
    medians = grid_medians(rows)
    if out_csv is not None:
        _write_rows(out_csv, rows, GRID_COLUMNS)
        write_meta(Path(out_csv).parent, asdict(spec),
                   timings={f"{r['method']}/K{r['K']}/m{r['m']}/n{r['n']}/s{r['seed']}": r["seconds"]
                            for r in rows})
        _write_rows(Path(out_csv).with_name(Path(out_csv).stem + "_medians.csv"), medians, MEDIAN_COLUMNS)
    return rows, medians


MEDIAN_COLUMNS = ["method", "K", "m", "n", "reps", "failed", "rmse_mean", "rmse_cov", "duplicate_rate"]


def grid_medians(rows):
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["method"], r["K"], r["m"], r["n"]), []).append(r)
    out = []
    for (method, K, m, n), rs in groups.items():
        ok = [r for r in rs if not r["error"]]
        med = {k: float(np.median([r[k] for r in ok])) if ok else float("nan")
               for k in ("rmse_mean", "rmse_cov", "duplicate_rate")}
        out.append(dict(method=method, K=K, m=m, n=n, reps=len(rs), failed=len(rs) - len(ok), **med))
    return out


def _write_rows(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({c: r[c] for c in columns})
