"""Command-line pipelines: generate, train, index, query, evaluate.

Configuration is a flat key=value namespace. Precedence, lowest first:
built-in defaults (the tuned parameter values), a --config file of
key=value lines, DEEPBOW_<KEY> environment variables, then command-line
flags. Unknown keys are rejected. Every command is a pure function of its
inputs and configuration; all randomness is seeded and the seeds are
logged to stderr, so reruns produce byte-identical outputs.

Exit codes: 0 success, 1 data error (the error class name is printed),
2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from . import datastore, simfit, synth
from .errors import DeepbowError, NoTrainingData
from .index import build_index, load_index, memstats, save_index
from .metrics import average_precision, make_report, ns_score
from .normalize import SrnConfig, root_sift, srn
from .scoring import ALL_LEVELS, MatchParams
from .search import QueryConfig, score_query
from .sketch import LshBank, load_lsh_bank, save_lsh_bank, train_he
from .vocab import load_vocabulary, save_vocabulary, train_kmeans

ENV_PREFIX = "DEEPBOW_"


@dataclass
class RunConfig:
    """Every tunable in one flat namespace; defaults are the tuned values."""

    # vocabulary / model training
    k: int = 256
    kmeans_iters: int = 50
    kmeans_tol: float = 1e-4
    train_seed: int = 0
    b_he: int = 128
    b_ctx: int = 128
    lsh_seed: int = 7
    # normalization and kernels
    alpha: float = 0.5
    sigma: float = 21.0
    kappa: int = 60
    gamma: float = 0.8
    theta: float = 0.4
    # query pipeline
    ma: int = 3
    top_k: int = 10
    mode: str = "binary_context"
    levels: str = "local,regional,global"
    burstiness: bool = True
    use_idf: bool = True
    normalization: str = "symmetric"
    regional_combine: str = "multiply"
    # evaluation
    metric: str = "ns"
    exclude_self: bool = True
    threads: int = 1
    # synthetic data
    groups: int = 50
    group_size: int = 4
    keypoints: int = 40
    d_ctx: int = 32
    desc_noise: float = 6.0
    ctx_noise: float = 0.5
    distractors: int = 100
    synth_seed: int = 0
    width: int = 640
    height: int = 480
    # curve fitting
    exponent: int = 3
    bins: int = 20


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELDS:
        raise KeyError(key)
    kind = _FIELDS[key]
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"bad boolean for {key}: {raw!r}")
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def load_run_config(
    config_path: str | None, overrides: list[str], env=None
) -> RunConfig:
    """Merge defaults, config file, environment, and -D overrides."""
    cfg = RunConfig()
    env = os.environ if env is None else env

    def apply(key: str, raw: str, origin: str):
        key = key.strip().replace("-", "_")
        try:
            setattr(cfg, key, _coerce(key, raw))
        except KeyError:
            raise UsageError(f"unknown config key {key!r} ({origin})") from None
        except ValueError as exc:
            raise UsageError(f"bad value for {key!r} ({origin}): {exc}") from None

    if config_path:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                lines = f.readlines()
        except OSError as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from None
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{config_path}:{lineno}: expected key=value")
            apply(key, value.strip(), f"{config_path}:{lineno}")

    for name in _FIELDS:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            apply(name, env[env_key], f"env {env_key}")

    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"override must be key=value, got {item!r}")
        apply(key, value, "flag")

    return cfg


class UsageError(Exception):
    pass


def _parse_levels(raw: str) -> frozenset:
    raw = raw.strip().lower()
    if raw in ("", "none"):
        return frozenset()
    names = frozenset(tok.strip() for tok in raw.split(","))
    unknown = names - ALL_LEVELS
    if unknown:
        raise UsageError(f"unknown levels {sorted(unknown)}")
    return names


def match_params(cfg: RunConfig) -> MatchParams:
    return MatchParams(
        sigma=cfg.sigma,
        kappa=cfg.kappa,
        gamma=cfg.gamma,
        theta=cfg.theta,
        mode=cfg.mode,
        levels=_parse_levels(cfg.levels),
    )


def query_config(cfg: RunConfig, params: MatchParams | None = None) -> QueryConfig:
    return QueryConfig(
        ma=cfg.ma,
        burstiness=cfg.burstiness,
        params=params or match_params(cfg),
        top_k=cfg.top_k,
        use_idf=cfg.use_idf,
        normalization=cfg.normalization,
        regional_combine=cfg.regional_combine,
    )


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_text(path: str | None, text: str) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


# --- commands ----------------------------------------------------------------

def cmd_gen_synthetic(args, cfg: RunConfig) -> int:
    scfg = synth.SynthConfig(
        n_groups=cfg.groups,
        group_size=cfg.group_size,
        keypoints=cfg.keypoints,
        d_ctx=cfg.d_ctx,
        desc_noise=cfg.desc_noise,
        ctx_noise=cfg.ctx_noise,
        distractors=cfg.distractors,
        seed=cfg.synth_seed,
        width=cfg.width,
        height=cfg.height,
    )
    records, truth = synth.generate(scfg)
    datastore.write_dataset(records, args.out)
    datastore.write_ground_truth(truth, args.truth_out)
    _log(
        f"gen-synthetic: seed={scfg.seed} images={len(records)} "
        f"groups={scfg.n_groups} -> {args.out}, {args.truth_out}"
    )
    return 0


def cmd_build_vocab(args, cfg: RunConfig) -> int:
    records = datastore.read_dataset(args.dataset)
    per_image = [r.descriptors for r in records if r.n_keypoints]
    if not per_image:
        raise NoTrainingData("dataset has no keypoints to train on")
    rs = root_sift(np.concatenate(per_image))
    _log(
        f"build-vocab: k={cfg.k} seed={cfg.train_seed} descriptors={rs.shape[0]} "
        f"iters={cfg.kmeans_iters}"
    )
    vocab = train_kmeans(
        rs, cfg.k, seed=cfg.train_seed, max_iters=cfg.kmeans_iters, tol=cfg.kmeans_tol
    )
    he = train_he(vocab, rs, bits=cfg.b_he, seed=cfg.train_seed)
    save_vocabulary(vocab, he, args.vocab_out)
    d_ctx = records[0].d_ctx if records else cfg.d_ctx
    bank = LshBank.from_seed(d_ctx, cfg.b_ctx, cfg.lsh_seed)
    save_lsh_bank(bank, args.lsh_out)
    _log(f"build-vocab: wrote {args.vocab_out} and {args.lsh_out} (lsh seed={cfg.lsh_seed})")
    return 0


def cmd_build_index(args, cfg: RunConfig) -> int:
    vocab, he = load_vocabulary(args.vocab)
    bank = load_lsh_bank(args.lsh)
    records = datastore.read_dataset(args.dataset)
    d_ctx = records[0].d_ctx if records else bank.dim
    index = build_index(
        records, vocab, he, bank, d_ctx=d_ctx, mode=cfg.mode, alpha=cfg.alpha
    )
    save_index(index, args.index_out)
    _log(
        f"build-index: mode={cfg.mode} alpha={cfg.alpha} images={index.n_images} "
        f"-> {args.index_out}"
    )
    return 0


def _load_engine(args, cfg: RunConfig):
    vocab, he = load_vocabulary(args.vocab)
    bank = load_lsh_bank(args.lsh)
    index = load_index(args.index, vocab, alpha=cfg.alpha)
    return vocab, he, bank, index


def cmd_query(args, cfg: RunConfig) -> int:
    vocab, he, bank, index = _load_engine(args, cfg)
    records = {r.img_id: r for r in datastore.read_dataset(args.dataset)}
    if args.query_id not in records:
        raise UsageError(f"query id {args.query_id} not in dataset")
    ranked = score_query(
        records[args.query_id], index, vocab, he, bank, query_config(cfg)
    )
    sep = "," if args.format == "csv" else " "
    lines = (
        [f"rank{sep}img_id{sep}score"] if args.format == "csv" else []
    )
    for rank, (img_id, score) in enumerate(ranked, start=1):
        lines.append(f"{rank}{sep}{img_id}{sep}{score:.12g}")
    _write_text(args.output, "\n".join(lines) + "\n")
    return 0


def _run_queries(index, vocab, he, bank, records, query_ids, qcfg, threads):
    def one(qid):
        return score_query(records[qid], index, vocab, he, bank, qcfg)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return dict(zip(query_ids, pool.map(one, query_ids)))
    return {qid: one(qid) for qid in query_ids}


def _evaluate_once(index, vocab, he, bank, records, truth, cfg: RunConfig, params):
    qcfg = query_config(cfg, params)
    query_ids = sorted(truth.relevant)
    missing = [q for q in query_ids if q not in records]
    if missing:
        raise UsageError(f"queries not in dataset: {missing[:5]}")
    rankings = _run_queries(
        index, vocab, he, bank, records, query_ids, qcfg, cfg.threads
    )
    per_query = []
    for qid in query_ids:
        if cfg.metric == "map":
            value = average_precision(
                rankings[qid],
                truth.relevant[qid],
                exclude_self=cfg.exclude_self,
                query_id=qid,
            )
        else:
            value = float(ns_score(rankings[qid], truth.relevant[qid]))
        per_query.append((qid, value))
    return make_report(cfg.metric, per_query)


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if cfg.metric not in ("ns", "map"):
        raise UsageError(f"metric must be 'ns' or 'map', got {cfg.metric!r}")
    vocab, he, bank, index = _load_engine(args, cfg)
    records = {r.img_id: r for r in datastore.read_dataset(args.dataset)}
    truth = datastore.read_ground_truth(args.truth, valid_ids=set(records))

    if args.sweep_levels:
        lines = ["levels,mean_" + cfg.metric]
        for bits in range(8):
            levels = frozenset(
                name
                for flag, name in ((1, "local"), (2, "regional"), (4, "global"))
                if bits & flag
            )
            params = MatchParams(
                sigma=cfg.sigma,
                kappa=cfg.kappa,
                gamma=cfg.gamma,
                theta=cfg.theta,
                mode=cfg.mode,
                levels=levels,
            )
            report = _evaluate_once(index, vocab, he, bank, records, truth, cfg, params)
            label = "+".join(sorted(levels)) or "none"
            lines.append(f"{label},{report.aggregate:.12g}")
            _log(f"evaluate: levels={label} mean_{cfg.metric}={report.aggregate:.6g}")
        _write_text(args.output, "\n".join(lines) + "\n")
        return 0

    report = _evaluate_once(
        index, vocab, he, bank, records, truth, cfg, match_params(cfg)
    )
    _log(
        f"evaluate: metric={cfg.metric} queries={report.n_queries} "
        f"mean={report.aggregate:.6g}"
    )
    _write_text(args.output, report.to_csv())
    return 0


def cmd_dump_srn(args, cfg: RunConfig) -> int:
    """Plot-ready before/after values for one context vector."""
    records = {r.img_id: r for r in datastore.read_dataset(args.dataset)}
    if args.img_id not in records:
        raise UsageError(f"img_id {args.img_id} not in dataset")
    if not 0 <= args.slot < 81:
        raise UsageError(f"slot must be in [0, 81), got {args.slot}")
    raw = records[args.img_id].contexts[args.slot].astype(np.float64)
    normalized = srn(raw, SrnConfig(cfg.alpha))
    lines = [f"# img_id={args.img_id} slot={args.slot} alpha={cfg.alpha}"]
    lines.append("component,raw,normalized")
    lines += [
        f"{i},{raw[i]:.9g},{normalized[i]:.9g}" for i in range(raw.shape[0])
    ]
    _write_text(args.output, "\n".join(lines) + "\n")
    return 0


def cmd_fit_curves(args, cfg: RunConfig) -> int:
    distances, labels = simfit.read_labeled_samples(args.samples)
    bins = simfit.empirical_match_probability(distances, labels, cfg.bins)
    curve = simfit.fit_curve(bins, cfg.exponent)
    lines = [f"# fitted: p={curve.p} c={curve.c:.12g}", "bin_center,probability"]
    lines += [f"{center:.12g},{prob:.12g}" for center, prob in bins]
    _write_text(args.output, "\n".join(lines) + "\n")
    _log(f"fit-curves: p={curve.p} c={curve.c:.9g} over {len(bins)} bins")
    return 0


def cmd_memstats(args, cfg: RunConfig) -> int:
    stats = memstats(args.images, args.keypoints)
    rows = ["img_id", "tf", "local", "regional", "global"]
    lines = ["component,per_feature_bytes,per_image_bytes,dataset_gb"]
    for name in rows:
        lines.append(
            f"{name},{stats.per_feature[name]:.12g},"
            f"{stats.per_image[name]:.12g},{stats.dataset_gb[name]:.12g}"
        )
    lines.append(
        f"total,{stats.per_feature_total:.12g},"
        f"{stats.per_image_total:.12g},{stats.dataset_gb_total:.12g}"
    )
    lines.append(f"# per-image total: {stats.per_image_total / 1024.0:.12g} KB")
    lines.append(f"# brute-force layout: {stats.brute_force_gb_total:.12g} GB")
    _write_text(args.output, "\n".join(lines) + "\n")
    return 0


# --- argument parsing ---------------------------------------------------------

def _add_common(sub):
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument(
        "-D",
        dest="overrides",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    sub.add_argument("--output", help="write output here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deepbow",
        description="Contextual bag-of-visual-words retrieval engine",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-synthetic", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True, help="dataset file to write")
    p.add_argument("--truth-out", required=True, help="ground-truth file to write")
    _add_common(p)
    p.set_defaults(func=cmd_gen_synthetic)

    p = subs.add_parser("build-vocab", help="train vocabulary, HE model, LSH bank")
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab-out", required=True)
    p.add_argument("--lsh-out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_build_vocab)

    p = subs.add_parser("build-index", help="index a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--lsh", required=True)
    p.add_argument("--index-out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_build_index)

    p = subs.add_parser("query", help="rank the collection against one query image")
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--lsh", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--query-id", type=int, required=True)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    _add_common(p)
    p.set_defaults(func=cmd_query)

    p = subs.add_parser("evaluate", help="run all ground-truth queries and report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--lsh", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument(
        "--sweep-levels",
        action="store_true",
        help="evaluate all 8 level-mask combinations and emit a grid",
    )
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("dump-srn", help="dump one context vector before/after SRN")
    p.add_argument("--dataset", required=True)
    p.add_argument("--img-id", type=int, required=True)
    p.add_argument("--slot", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_dump_srn)

    p = subs.add_parser("fit-curves", help="fit a similarity curve to labeled samples")
    p.add_argument("--samples", required=True, help="'distance,label' file")
    _add_common(p)
    p.set_defaults(func=cmd_fit_curves)

    p = subs.add_parser("memstats", help="memory accounting for a binary-mode index")
    p.add_argument("--images", type=int, required=True)
    p.add_argument("--keypoints", type=float, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_memstats)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_run_config(args.config, args.overrides)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except DeepbowError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
