"""Command-line pipeline driver.

Exit codes: 0 success, 1 a theorem check failed, 2 validation problem
(flags, config, missing files, inconsistent shapes), 3 I/O or file-format
problem. All outputs are deterministic for a fixed (config, seed) and do not
depend on --threads.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io as hio
from .banks import activation_sets_from_banks, build_banks, precompute_bank_similarities
from .embeddings import (
    COSINE,
    EmbeddingSet,
    METRICS,
    Ranking,
    l2_normalize_rows,
    rank_rows,
    similarity,
)
from .errors import FileFormatError, HubnormError, ValidationError
from .hubsim import FAMILY_PROJECTED_SPHERE, SyntheticDistribution, verify_theorem1, verify_theorem2, verify_theorem3
from .metrics import build_report, k_occurrence
from .normalize import METHOD_NONE, NormalizationConfig, normalize_query, prepare

_FLOAT = ".17g"


def _parse_list(raw: str, conv):
    return [conv(tok) for tok in raw.split(",") if tok.strip() != ""]


def _require_files(*named: tuple[str, str]) -> None:
    for label, path in named:
        if not path:
            raise ValidationError(f"missing required path for {label}")
        if not Path(path).exists():
            raise ValidationError(f"missing {label} file: {path}")


def _load_set(path: str, metric: str) -> EmbeddingSet:
    emb = hio.load_embeddings(path)
    if metric == COSINE and not emb.normalized:
        emb = l2_normalize_rows(emb)
    return emb


class _Pipeline:
    """Everything loaded and precomputed once per run."""

    def __init__(self, cfg: hio.RunConfig):
        self.cfg = cfg
        if cfg.metric not in METRICS:
            raise ValidationError(f"unknown metric {cfg.metric!r}")
        self.norm_cfg = NormalizationConfig(
            method=cfg.method,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            aggregation=cfg.aggregation,
            activation_k=cfg.activation_k,
            csls_k=cfg.csls_k,
        )
        needs_banks = cfg.method != METHOD_NONE
        required = [("queries", cfg.queries), ("galleries", cfg.galleries)]
        if needs_banks:
            required += [("query bank", cfg.query_bank), ("gallery bank", cfg.gallery_bank)]
        _require_files(*required)

        self.queries = _load_set(cfg.queries, cfg.metric)
        self.galleries = _load_set(cfg.galleries, cfg.metric)
        self.banks = None
        self.activation_g = None
        self.activation_q = None
        self.prepared = None
        if needs_banks:
            qb = _load_set(cfg.query_bank, cfg.metric)
            gb = _load_set(cfg.gallery_bank, cfg.metric)
            query_bank, gallery_bank = build_banks(
                qb, gb, cfg.bank_fraction_q, cfg.bank_fraction_g, cfg.seed
            )
            self.banks = precompute_bank_similarities(
                query_bank, gallery_bank, self.galleries, cfg.metric, sampling_seed=cfg.seed
            )
            self.activation_g, self.activation_q = activation_sets_from_banks(
                self.banks, cfg.activation_k
            )
            self.prepared = prepare(self.banks, self.norm_cfg)

    def normalized_matrix(self) -> np.ndarray:
        """One normalized similarity row per query, thread-count independent."""
        n_q = self.queries.n_rows
        out = np.empty((n_q, self.galleries.n_rows), dtype=np.float64)

        if self.banks is None:
            return np.array(similarity(self.queries, self.galleries, self.cfg.metric).values)

        def work(i: int) -> None:
            out[i] = normalize_query(
                self.queries.data[i],
                self.galleries,
                self.banks,
                self.activation_g,
                self.activation_q,
                self.norm_cfg,
                self.prepared,
            ).values

        threads = max(1, self.cfg.threads)
        if threads == 1:
            for i in range(n_q):
                work(i)
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, range(n_q)))
        return out


def _write_text(path: str, text: str) -> None:
    if path:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _evaluate_report(pipe: _Pipeline, truth):
    matrix = pipe.normalized_matrix()
    ranking = Ranking(rank_rows(matrix))
    ks = _parse_list(pipe.cfg.ks, int)
    return build_report(
        ranking,
        truth,
        ks=ks,
        occurrence_k=pipe.cfg.occurrence_k,
        skewness_k=pipe.cfg.skewness_k,
    )


def cmd_evaluate(cfg: hio.RunConfig) -> int:
    _require_files(("ground truth", cfg.truth))
    pipe = _Pipeline(cfg)
    truth = hio.read_ground_truth(cfg.truth)
    report = _evaluate_report(pipe, truth)
    text = hio.format_report(report, cfg.report_format)
    _write_text(cfg.output, text)
    if cfg.output:
        sys.stdout.write(text)
    return 0


def cmd_normalize(cfg: hio.RunConfig) -> int:
    """Emit the normalized similarity matrix as CSV (one row per query)."""
    pipe = _Pipeline(cfg)
    matrix = pipe.normalized_matrix()
    lines = [",".join(format(v, _FLOAT) for v in row) for row in matrix]
    _write_text(cfg.output, "\n".join(lines) + "\n")
    return 0


def cmd_occurrences(cfg: hio.RunConfig) -> int:
    pipe = _Pipeline(cfg)
    matrix = pipe.normalized_matrix()
    ranking = Ranking(rank_rows(matrix))
    occ = k_occurrence(ranking, cfg.occurrence_k)
    counts = occ.counts
    rows = ["gallery_index,count"] + [f"{i},{int(c)}" for i, c in enumerate(counts)]
    _write_text(cfg.output, "\n".join(rows) + "\n")
    sys.stdout.write(
        f"max={int(counts.max())}\n"
        f"min={int(counts.min())}\n"
        f"median={format(float(np.median(counts)), _FLOAT)}\n"
    )
    return 0


def _simulate_distributions(family: str, dim: int) -> tuple[SyntheticDistribution, SyntheticDistribution]:
    if family == FAMILY_PROJECTED_SPHERE:
        mean_x = np.zeros(dim)
        mean_x[0] = 2.0
        mean_y = mean_x.copy()
        mean_y[1 % dim] += 0.5
        return (
            SyntheticDistribution(family, mean_x, 1.0, dim),
            SyntheticDistribution(family, mean_y, 1.0, dim),
        )
    mean_x = np.zeros(dim)
    mean_x[0] = 1.0
    mean_y = mean_x.copy()
    mean_y[1 % dim] += 0.5
    dist_x = SyntheticDistribution(family, mean_x, 1.0, dim)
    dist_y = SyntheticDistribution(family, mean_y, 0.8, dim)
    return dist_x, dist_y


def cmd_simulate(cfg: hio.RunConfig, invert_pairs: bool = False) -> int:
    families = _parse_list(cfg.sim_families, str)
    dims = _parse_list(cfg.sim_dims, int)
    seeds = _parse_list(cfg.sim_seeds, int)
    if not families or not dims or not seeds:
        raise ValidationError("simulate needs at least one family, dim, and seed")
    blocks = []
    all_passed = True
    for family in families:
        for dim in dims:
            dist_x, dist_y = _simulate_distributions(family, dim)
            for seed in seeds:
                reports = [
                    verify_theorem1(dist_x, cfg.n_trials, seed, _invert_precondition=invert_pairs),
                    verify_theorem2(
                        dist_x, dist_y, cfg.n_trials, seed, _invert_precondition=invert_pairs
                    ),
                    verify_theorem3(
                        dist_x, dist_y, cfg.n_trials, seed, _invert_precondition=invert_pairs
                    ),
                ]
                for rep in reports:
                    all_passed &= rep.passed
                    header = f"family={family}\ndim={dim}\nseed={seed}\n"
                    blocks.append(header + hio.format_report(rep, hio.FORMAT_KV))
    _write_text(cfg.output, "\n".join(blocks))
    return 0 if all_passed else 1


def cmd_sweep(cfg: hio.RunConfig) -> int:
    _require_files(("ground truth", cfg.truth))
    beta1s = sorted(_parse_list(cfg.sweep_beta1, float)) or [cfg.beta1]
    beta2s = sorted(_parse_list(cfg.sweep_beta2, float)) or [cfg.beta2]
    fractions = sorted(_parse_list(cfg.sweep_fractions, float)) or [cfg.bank_fraction_q]
    truth = hio.read_ground_truth(cfg.truth)
    ks = _parse_list(cfg.ks, int)
    header = (
        ["beta1", "beta2", "bank_fraction"]
        + [f"r_at_{k}" for k in ks]
        + ["mdr", "mnr", "skewness"]
    )
    rows = [",".join(header)]
    for b1 in beta1s:
        for b2 in beta2s:
            for frac in fractions:
                point = dataclasses.replace(
                    cfg, beta1=b1, beta2=b2, bank_fraction_q=frac, bank_fraction_g=frac
                )
                report = _evaluate_report(_Pipeline(point), truth)
                cells = [format(b1, _FLOAT), format(b2, _FLOAT), format(frac, _FLOAT)]
                cells += [format(report.r_at[k], _FLOAT) for k in ks]
                cells += [
                    format(report.mdr, _FLOAT),
                    format(report.mnr, _FLOAT),
                    format(report.skewness, _FLOAT),
                ]
                rows.append(",".join(cells))
    _write_text(cfg.output, "\n".join(rows) + "\n")
    return 0


def cmd_bench(cfg: hio.RunConfig) -> int:
    """Time bank precomputation against steady-state per-query cost."""
    rng = np.random.default_rng(cfg.seed)

    def unit(n: int) -> EmbeddingSet:
        x = rng.standard_normal((n, cfg.bench_dim))
        return EmbeddingSet(x / np.linalg.norm(x, axis=1, keepdims=True), normalized=True)

    galleries = unit(cfg.bench_galleries)
    query_bank = unit(cfg.bench_bank)
    gallery_bank = unit(cfg.bench_bank)
    probes = unit(cfg.bench_probes)
    norm_cfg = NormalizationConfig(
        method=cfg.method if cfg.method != METHOD_NONE else "dual_is",
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        aggregation=cfg.aggregation,
        activation_k=cfg.activation_k,
        csls_k=cfg.csls_k,
    )

    t0 = time.perf_counter()
    banks = precompute_bank_similarities(query_bank, gallery_bank, galleries, cfg.metric)
    act_g, act_q = activation_sets_from_banks(banks, cfg.activation_k)
    prepared = prepare(banks, norm_cfg)
    t_pre = time.perf_counter() - t0

    t0 = time.perf_counter()
    for i in range(probes.n_rows):
        normalize_query(
            probes.data[i], galleries, banks, act_g, act_q, norm_cfg, prepared
        )
    t_query = (time.perf_counter() - t0) / probes.n_rows

    text = (
        f"n_galleries={cfg.bench_galleries}\n"
        f"bank_size={cfg.bench_bank}\n"
        f"dim={cfg.bench_dim}\n"
        f"probes={cfg.bench_probes}\n"
        f"method={norm_cfg.method}\n"
        f"precompute_seconds={format(t_pre, _FLOAT)}\n"
        f"per_query_seconds={format(t_query, _FLOAT)}\n"
    )
    _write_text(cfg.output, text)
    if cfg.output:
        sys.stdout.write(text)
    return 0


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file; flags override it")
    sub.add_argument("--method", help="none|is|dis|dual_is|dual_dis|gc|csls")
    sub.add_argument("--metric", help="cosine|neg_sq_l2")
    sub.add_argument("--beta1", type=float, help="gallery-bank softmax temperature")
    sub.add_argument("--beta2", type=float, help="query-bank softmax temperature")
    sub.add_argument("--aggregation", help="multiply|add (dual-branch combination)")
    sub.add_argument("--activation-k", type=int, dest="activation_k", help="top-k for activation sets")
    sub.add_argument("--csls-k", type=int, dest="csls_k", help="neighborhood size for csls")
    sub.add_argument("--bank-fraction-q", type=float, dest="bank_fraction_q", help="query-bank sample fraction")
    sub.add_argument("--bank-fraction-g", type=float, dest="bank_fraction_g", help="gallery-bank sample fraction")
    sub.add_argument("--seed", type=int, help="sampling seed")
    sub.add_argument("--threads", type=int, help="worker threads (HUBNORM_THREADS as fallback)")
    sub.add_argument("--ks", help="comma-separated recall cutoffs")
    sub.add_argument("--occurrence-k", type=int, dest="occurrence_k", help="k for occurrence counts")
    sub.add_argument("--skewness-k", type=int, dest="skewness_k", help="k for the skewness distribution")
    sub.add_argument("--report-format", dest="report_format", help="kv|csv")
    sub.add_argument("--queries", help="query embedding file (EMB1 or .csv)")
    sub.add_argument("--galleries", help="gallery embedding file (EMB1 or .csv)")
    sub.add_argument("--query-bank", dest="query_bank", help="query-bank embedding file")
    sub.add_argument("--gallery-bank", dest="gallery_bank", help="gallery-bank embedding file")
    sub.add_argument("--truth", help="ground-truth file (one line of correct indices per query)")
    sub.add_argument("--output", help="output path (stdout when omitted)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hubnorm",
        description="Dual-bank similarity normalization and hubness diagnostics.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    for name, brief in (
        ("normalize", "write the normalized similarity matrix as CSV"),
        ("evaluate", "retrieval metrics and hubness report for one method"),
        ("occurrences", "k-occurrence counts of the test gallery"),
        ("simulate", "Monte-Carlo checks of the hubness theorems"),
        ("sweep", "evaluate over a grid of temperatures and bank fractions"),
        ("bench", "time precomputation vs per-query normalization"),
    ):
        sub = subs.add_parser(name, help=brief)
        _add_common(sub)
        if name == "simulate":
            sub.add_argument("--n-trials", type=int, dest="n_trials", help="Monte-Carlo trials per check")
            sub.add_argument("--sim-families", dest="sim_families", help="comma-separated families")
            sub.add_argument("--sim-dims", dest="sim_dims", help="comma-separated dimensions")
            sub.add_argument("--sim-seeds", dest="sim_seeds", help="comma-separated seeds")
            sub.add_argument(
                "--debug-invert-pairs",
                action="store_true",
                help="negative control: invert the pair precondition so checks must fail",
            )
        if name == "sweep":
            sub.add_argument("--sweep-beta1", dest="sweep_beta1", help="comma-separated beta1 grid")
            sub.add_argument("--sweep-beta2", dest="sweep_beta2", help="comma-separated beta2 grid")
            sub.add_argument(
                "--sweep-fractions", dest="sweep_fractions", help="comma-separated bank fractions"
            )
        if name == "bench":
            sub.add_argument("--bench-galleries", type=int, dest="bench_galleries")
            sub.add_argument("--bench-bank", type=int, dest="bench_bank")
            sub.add_argument("--bench-dim", type=int, dest="bench_dim")
            sub.add_argument("--bench-probes", type=int, dest="bench_probes")
    return parser


_COMMANDS = {
    "normalize": cmd_normalize,
    "evaluate": cmd_evaluate,
    "occurrences": cmd_occurrences,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    values = vars(args).copy()
    command = values.pop("command")
    config_path = values.pop("config", None)
    invert = bool(values.pop("debug_invert_pairs", False))

    if values.get("threads") is None:
        env = os.environ.get("HUBNORM_THREADS")
        if env is not None:
            values["threads"] = int(env)

    try:
        file_values = hio.parse_config_file(config_path) if config_path else None
        cfg = hio.build_config(file_values, values)
        if command == "simulate":
            return cmd_simulate(cfg, invert_pairs=invert)
        return _COMMANDS[command](cfg)
    except FileFormatError as exc:
        print(f"hubnorm: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, HubnormError) as exc:
        print(f"hubnorm: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"hubnorm: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
