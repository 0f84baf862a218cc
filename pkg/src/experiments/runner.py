"""
Experiment runner: one row per (seed, trial) plus a summary.

Each trial derives its instance and protocol randomness from
derive_seed(seed, "trial", trial), so a table is reproducible from the
config alone. Protocol errors inside a trial are logged and recorded in the
row's error column rather than raised.
"""

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from config.settings import ExperimentConfig, Generator, Protocol
from congest.graph import Graph, diamond_edges, grid_edges, load_graph, path_edges, star_edges
from congest.propagation import PropagationConfig, PropagationResult, propagate
from data.generators import (
    load_servers,
    low_rank_dataset,
    node_datasets,
    random_dataset,
    random_row_sets,
    random_servers,
    regression_dataset,
    split_with_overlap,
)
from protocols.correlations import brute_force_correlation, run_correlation
from protocols.fsum import run_fsum
from protocols.functions import FnSpec
from protocols.models import ProtocolConfig, RandomnessConfig, SamplerConfig
from protocols.sampler import sample_additive
from sketches.dataset import Dataset
from sketches.sketch import Sketch, SketchParams, create_sketch, merge_sketches, solve_embedding
from sketches.solvers import (
    embedding_distortion,
    exact_regression,
    lra_residual,
    optimal_lra_residual,
    regression_cost,
    solve_lra,
    solve_regression,
)
from utils.seeds import derive_seed, format_seed
from utils.stats import growth_ratios, relative_error

logger = logging.getLogger(__name__)

RESULT_COLUMNS = ["protocol", "seed", "trial", "estimate", "truth", "rel_err", "ok",
                  "rounds", "total_words", "note", "error"]
SWEEP_COLUMNS = ["field", "value", "trials", "errors", "success_frac", "mean_rel_err",
                 "total_words", "mean_words", "words_ratio"]

# relative error a trial may have and still count as a success, in units of eps
TOLERANCE_FACTOR = {
    Protocol.REGRESS: 3.0,
    Protocol.LRA: 3.0,
}
# share of nodes whose embedding must pass for a congest trial to pass
CONGEST_NODE_SHARE = 0.9


class ResultTable:
    """
    Wrapper for experiment rows stored as a pandas DataFrame.

    Expected columns: RESULT_COLUMNS, one row per (seed, trial).
    """

    def __init__(self, df: pd.DataFrame):
        self.df = df
        self._validate_schema()

    def _validate_schema(self):
        missing = [col for col in RESULT_COLUMNS if col not in self.df.columns]
        if missing:
            raise ValueError(f"Missing required columns: {missing}")
        self.df = self.df[RESULT_COLUMNS]

    def __len__(self) -> int:
        return len(self.df)

    @property
    def errored(self) -> pd.DataFrame:
        return self.df[self.df["error"].fillna("").astype(str) != ""]

    def summary(self) -> Dict[str, Any]:
        """Success fraction and word totals over all rows."""
        df = self.df
        ok = df["ok"].astype(bool)
        rel = pd.to_numeric(df["rel_err"], errors="coerce")
        words = pd.to_numeric(df["total_words"], errors="coerce").fillna(0)
        return {
            "trials": int(len(df)),
            "errors": int(len(self.errored)),
            "success_frac": float(ok.mean()) if len(df) else 0.0,
            "mean_rel_err": float(rel.mean()) if rel.notna().any() else math.nan,
            "total_words": int(words.sum()),
            "mean_words": float(words.mean()) if len(df) else 0.0,
            "max_rounds": int(pd.to_numeric(df["rounds"], errors="coerce").fillna(0).max()) if len(df) else 0,
        }

    def to_csv(self, path: Union[str, Path]):
        self.df.to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "ResultTable":
        df = pd.read_csv(path, keep_default_na=False, na_values=[""])
        df["note"] = df["note"].fillna("").astype(str)
        df["error"] = df["error"].fillna("").astype(str)
        return cls(df)

    def to_json(self, path: Union[str, Path]):
        payload = {
            "rows": json.loads(self.df.to_json(orient="records")),
            "summary": self.summary(),
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


class SweepTable:
    """One row per swept value with word totals and per-step word ratios."""

    def __init__(self, df: pd.DataFrame):
        self.df = df
        missing = [col for col in SWEEP_COLUMNS if col not in self.df.columns]
        if missing:
            raise ValueError(f"Missing required columns: {missing}")

    def summary(self) -> Dict[str, Any]:
        ratios = self.df["words_ratio"].dropna().tolist()
        return {
            "field": str(self.df["field"].iloc[0]) if len(self.df) else None,
            "values": self.df["value"].tolist(),
            "words": self.df["total_words"].tolist(),
            "words_ratios": ratios,
            "errors": int(self.df["errors"].sum()),
        }

    def to_csv(self, path: Union[str, Path]):
        self.df.to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "SweepTable":
        return cls(pd.read_csv(path))

    def to_json(self, path: Union[str, Path]):
        payload = {"rows": json.loads(self.df.to_json(orient="records")), "summary": self.summary()}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))


def _row(cfg: ExperimentConfig, seed: int, trial: int, estimate: float, truth: float,
         rounds: int, words: int, note: str = "", rel_err: Optional[float] = None,
         ok: Optional[bool] = None) -> Dict[str, Any]:
    if rel_err is None:
        rel_err = relative_error(estimate, truth) if not math.isnan(truth) else math.nan
    if ok is None:
        tol = TOLERANCE_FACTOR.get(cfg.protocol, 1.0) * cfg.eps
        ok = bool(rel_err <= tol) if not math.isnan(rel_err) else False
    return {
        "protocol": cfg.protocol.value, "seed": format_seed(seed), "trial": trial,
        "estimate": float(estimate), "truth": float(truth), "rel_err": float(rel_err), "ok": bool(ok),
        "rounds": int(rounds), "total_words": int(words), "note": note, "error": "",
    }


class ExperimentRunner:
    """Dispatches trials of one ExperimentConfig to the protocol and sketch modules."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        rc = RandomnessConfig(precision_bits=config.precision_bits, backend=config.backend)
        self.protocol_config = ProtocolConfig(
            heavy_const=config.heavy_const, sample_const=config.sample_const,
            mark_const=config.mark_const, randomness=rc,
        )
        self.sampler_config = SamplerConfig(
            c_s=config.c_s, heavy_const=config.heavy_const, max_retries=config.max_retries,
            randomness=rc,
        )
        self._file_servers: Optional[List[np.ndarray]] = None
        self._trial_fns: Dict[Protocol, Callable[[int, int], Dict]] = {
            Protocol.SAMPLE: self._sample_trial,
            Protocol.FSUM: self._fsum_trial,
            Protocol.FK: self._fsum_trial,
            Protocol.HOC: self._hoc_trial,
            Protocol.EMBED: self._embed_trial,
            Protocol.REGRESS: self._regress_trial,
            Protocol.LRA: self._lra_trial,
            Protocol.CONGEST: self._congest_trial,
        }
        logger.info(f"Initialized ExperimentRunner: protocol={config.protocol.value}, "
                    f"seeds={len(config.seeds)}, trials={config.trials}")

    def _servers(self, seed: int) -> Tuple[List[np.ndarray], bool]:
        """(server vectors, whether ground truth should be computed)."""
        cfg = self.config
        if cfg.generator == Generator.FILE:
            if self._file_servers is None:
                self._file_servers = load_servers(cfg.input)
            return self._file_servers, cfg.truth
        return random_servers(cfg.generator, cfg.n, cfg.s, cfg.scale, seed), True

    def _dataset(self, seed: int) -> Dataset:
        cfg = self.config
        if cfg.generator == Generator.FILE:
            return Dataset.from_csv(cfg.input)
        if cfg.protocol == Protocol.REGRESS:
            return regression_dataset(cfg.rows, cfg.d, cfg.noise, seed)
        if cfg.protocol == Protocol.LRA:
            return low_rank_dataset(cfg.rows, cfg.d, int(cfg.k), cfg.noise, seed)
        return random_dataset(cfg.generator, cfg.rows, cfg.d, seed)

    def _sketch_params(self, seed: int) -> SketchParams:
        cfg = self.config
        return SketchParams(eps=cfg.eps, delta=cfg.delta, p=cfg.p,
                            salt=derive_seed(seed, "salt"), sketch_const=cfg.sketch_const)

    def _distributed_sketch(self, data: Dataset, seed: int) -> Tuple[Sketch, int]:
        """Split data over s servers with overlap, sketch each and merge: (sketch, words)."""
        cfg = self.config
        params = self._sketch_params(seed)
        if cfg.s == 1:
            sk = create_sketch(data, 1, params)
            return sk, sk.size()[1]
        pieces = split_with_overlap(data, cfg.s, cfg.overlap, derive_seed(seed, "split"))
        sketches = [create_sketch(piece, 2, params) for piece in pieces]
        words = sum(sk.size()[1] for sk in sketches)
        return merge_sketches(sketches), words

    def _sample_trial(self, seed: int, trial: int) -> Dict:
        cfg = self.config
        servers, with_truth = self._servers(derive_seed(seed, "instance"))
        result, stats = sample_additive(servers, cfg.eps, derive_seed(seed, "protocol"), self.sampler_config)
        if not result.ok:
            return _row(cfg, seed, trial, math.nan, math.nan, stats.rounds_used, stats.total_words,
                        note=result.outcome, rel_err=math.nan, ok=False)
        truth = math.nan
        if with_truth:
            total = np.sum(servers, axis=0)
            truth = float(total[result.i_hat] / total.sum())
        return _row(cfg, seed, trial, result.q_hat, truth, stats.rounds_used, stats.total_words,
                    note=f"i_hat={result.i_hat};attempts={result.attempts}")

    def _fsum_trial(self, seed: int, trial: int) -> Dict:
        cfg = self.config
        fn = FnSpec.power(cfg.k) if cfg.protocol == Protocol.FK else FnSpec.parse(cfg.fn)
        servers, with_truth = self._servers(derive_seed(seed, "instance"))
        outcome = run_fsum(servers, fn, cfg.eps, derive_seed(seed, "protocol"), self.protocol_config)
        truth = float(fn(np.sum(servers, axis=0)).sum()) if with_truth else math.nan
        note = ""
        if cfg.diagnostics:
            note = ";".join(f"{d.support_size}/{d.pl_size}/{d.round1_words}/{d.round2_words}"
                            for d in outcome.diagnostics)
        return _row(cfg, seed, trial, outcome.estimate, truth, outcome.rounds, outcome.total_words, note)

    def _hoc_trial(self, seed: int, trial: int) -> Dict:
        cfg = self.config
        fn = FnSpec.parse(cfg.fn)
        row_sets = random_row_sets(cfg.generator, cfg.s, cfg.rows, cfg.n, cfg.scale,
                                   derive_seed(seed, "instance"))
        outcome = run_correlation(row_sets, fn, cfg.g, int(cfg.k), cfg.eps,
                                  derive_seed(seed, "protocol"), self.protocol_config)
        truth = brute_force_correlation(row_sets, fn, cfg.g, int(cfg.k))
        return _row(cfg, seed, trial, outcome.estimate, truth, outcome.rounds, outcome.total_words,
                    note=f"peak_records={outcome.peak_records}")

    def _embed_trial(self, seed: int, trial: int) -> Dict:
        cfg = self.config
        data = self._dataset(derive_seed(seed, "instance"))
        sk, words = self._distributed_sketch(data, seed)
        distortion = embedding_distortion(solve_embedding(sk), data.values, cfg.p,
                                          rng=np.random.default_rng(derive_seed(seed, "directions")))
        return _row(cfg, seed, trial, distortion, math.nan, int(cfg.s > 1), words,
                    note=f"rows={sk.size()[0]}", rel_err=distortion)

    def _regress_trial(self, seed: int, trial: int) -> Dict:
        cfg = self.config
        data = self._dataset(derive_seed(seed, "instance"))
        sk, words = self._distributed_sketch(data, seed)
        result = solve_regression(sk)
        cost = regression_cost(data.values, result.coef, cfg.p)
        optimum = regression_cost(data.values, exact_regression(data, cfg.p).coef, cfg.p)
        rel_err = cost / optimum - 1.0 if optimum > 0 else cost
        note = "rank-deficient" if result.rank_deficient else ""
        return _row(cfg, seed, trial, cost, optimum, int(cfg.s > 1), words, note=note, rel_err=rel_err)

    def _lra_trial(self, seed: int, trial: int) -> Dict:
        cfg = self.config
        data = self._dataset(derive_seed(seed, "instance"))
        result = solve_lra(data, int(cfg.k), cfg.eps, cfg.delta, derive_seed(seed, "protocol"),
                           sign_const=cfg.sign_const, sketch_const=cfg.sketch_const)
        residual = lra_residual(data.values, result.basis)
        optimum = optimal_lra_residual(data.values, int(cfg.k))
        rel_err = residual / optimum - 1.0 if optimum > 0 else residual
        words = result.sketch_rows * (result.sign_dim + data.d + 2)
        return _row(cfg, seed, trial, residual, optimum, 0, words,
                    note=f"sketch_rows={result.sketch_rows}", rel_err=rel_err)

    def build_graph(self, seed: int) -> Graph:
        cfg = self.config
        if cfg.graph == "file":
            return load_graph(cfg.input, cfg.manifest)
        size = cfg.graph_size
        if cfg.graph == "grid":
            nodes, edges = list(range(size * size)), grid_edges(size, size)
        elif cfg.graph == "star":
            nodes, edges = list(range(size + 1)), star_edges(size)
        elif cfg.graph == "diamond":
            nodes, edges = list(range(4)), diamond_edges()
        else:
            nodes, edges = list(range(size)), path_edges(size)
        datasets = node_datasets(nodes, cfg.rows, cfg.d, cfg.generator, seed, cfg.overlap)
        return Graph(datasets, edges)

    def propagate(self, seed: int) -> Tuple[Graph, PropagationResult]:
        cfg = self.config
        graph = self.build_graph(derive_seed(seed, "instance"))
        result = propagate(graph, PropagationConfig(
            rounds=cfg.rounds, eps=cfg.eps, p=cfg.p, t=cfg.t, delta=cfg.delta_budget,
            sketch_const=cfg.sketch_const, salt=derive_seed(seed, "salt"), max_retries=cfg.max_retries,
        ))
        return graph, result

    def _congest_trial(self, seed: int, trial: int) -> Dict:
        cfg = self.config
        graph, result = self.propagate(seed)
        distortions = []
        for u in graph.nodes:
            ball = graph.ball_union(u, cfg.rounds)
            distortions.append(embedding_distortion(result.embedding(u), ball.values, cfg.p))
        distortions = np.asarray(distortions)
        share = float(np.mean(distortions <= cfg.eps))
        return _row(cfg, seed, trial, float(distortions.max()), math.nan, result.stats.rounds_used,
                    result.stats.total_words, note=f"nodes_ok={share:.3f};attempts={result.attempts}",
                    rel_err=float(distortions.max()), ok=share >= CONGEST_NODE_SHARE)

    def run_trial(self, seed: int, trial: int) -> Dict:
        """One trial; exceptions become an error row."""
        trial_seed = derive_seed(seed, "trial", trial)
        try:
            row = self._trial_fns[self.config.protocol](trial_seed, trial)
            return {**row, "seed": format_seed(seed)}
        except Exception as exc:
            logger.error(f"Trial {trial} (seed {format_seed(seed)}) failed: {exc}")
            row = _row(self.config, seed, trial, math.nan, math.nan, 0, 0, rel_err=math.nan, ok=False)
            row["error"] = f"{type(exc).__name__}: {exc}"
            return row

    def run(self) -> ResultTable:
        cfg = self.config
        tasks = [(seed, trial) for seed in cfg.seeds for trial in range(cfg.trials)]
        if cfg.jobs > 1:
            with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
                rows = list(pool.map(lambda st: self.run_trial(*st), tasks))
        else:
            rows = [self.run_trial(seed, trial) for seed, trial in tasks]
        table = ResultTable(pd.DataFrame(rows, columns=RESULT_COLUMNS))
        summary = table.summary()
        logger.info(f"{cfg.protocol.value}: {summary['trials']} trials, success {summary['success_frac']:.2f}, "
                    f"{summary['total_words']} words, {summary['errors']} errors")
        return table


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    """Run every (seed, trial) of cfg; rows come back ordered by (seed, trial)."""
    return ExperimentRunner(cfg).run()


def run_sweep(cfg: ExperimentConfig) -> SweepTable:
    """
    Run cfg once per value of cfg.sweep_field.

    Returns:
        SweepTable with the word totals of each value and their successive ratios
    """
    if not cfg.sweep_values:
        raise ValueError("Sweep needs at least one value")
    kind = type(getattr(cfg, cfg.sweep_field))
    rows = []
    for value in cfg.sweep_values:
        typed = int(value) if kind is int else float(value)
        summary = run_experiment(replace(cfg, **{cfg.sweep_field: typed})).summary()
        rows.append({
            "field": cfg.sweep_field, "value": typed, "trials": summary["trials"],
            "errors": summary["errors"], "success_frac": summary["success_frac"],
            "mean_rel_err": summary["mean_rel_err"], "total_words": summary["total_words"],
            "mean_words": summary["mean_words"],
        })
    ratios = growth_ratios(r["mean_words"] for r in rows)
    for i, row in enumerate(rows):
        row["words_ratio"] = float(ratios[i - 1]) if ratios is not None and i > 0 else math.nan
    return SweepTable(pd.DataFrame(rows, columns=SWEEP_COLUMNS))
