"""Command-line entry point: ``jpec <subcommand> ...``.

Subcommands write their primary outputs into ``--out`` together with one
``manifest.json``.  Outputs are staged in a temporary directory and moved
into place only after the whole stage succeeded.
"""

from __future__ import annotations

import argparse
import shutil
import sys
import tempfile
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from . import io as jio
from .errors import JpecError
from .evalkit import evaluate, make_regular_split, make_zero_shot_split, rank_candidates
from .gradcheck import check_gradients, random_instance
from .model import JpecConfig, embed, train
from .sampling import NegativeSampleSpec, sample_negatives
from .synth import SynthSpec, generate, oracle_embeddings


class Stage:
    def __init__(self, outdir: Path):
        self.outdir = outdir
        self.tmp = Path(tempfile.mkdtemp(prefix=".jpec-stage-", dir=outdir))
        self.names = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.tmp / name

    def commit(self) -> list[Path]:
        final = []
        for name in self.names:
            target = self.outdir / name
            (self.tmp / name).replace(target)
            final.append(target)
        return final


@contextmanager
def staged(outdir):
    outdir = jio.ensure_dir(outdir)
    stage = Stage(outdir)
    try:
        yield stage
    finally:
        shutil.rmtree(stage.tmp, ignore_errors=True)


def _finish(stage: Stage, args, command: str, config: dict, seeds: dict, inputs, start: float,
            warnings_list=(), extra=None):
    outputs = [stage.tmp / name for name in stage.names]
    manifest = stage.path("manifest.json")
    jio.write_manifest(manifest, command, config, seeds, [p for p in inputs if p], outputs,
                       time.perf_counter() - start, __version__, warnings_list, extra)
    return stage.commit()


# --- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    start = time.perf_counter()
    spec = SynthSpec(n=args.n, industries=args.industries, attr_dim=args.attr_dim,
                     attr_noise=args.attr_noise, intra_competitor_prob=args.intra_prob,
                     supply_edge_prob=args.supply_prob, flow_background=args.flow_background,
                     seed=args.seed)
    g, industry = generate(spec)
    with staged(args.out) as stage:
        jio.save_graph(g, stage.path("nodes.tsv"), stage.path("supply.tsv"),
                       stage.path("competitors.tsv"))
        with open(stage.path("industries.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            for label, ind in zip(g.node_labels, industry):
                fh.write(f"{label}\t{int(ind)}\n")
        jio.save_embeddings(oracle_embeddings(industry), g.node_labels, stage.path("oracle.emb"),
                            seed=spec.seed)
        _finish(stage, args, "generate", vars(spec), {"seed": spec.seed}, [], start)
    print(f"generated {g.n} nodes, {len(g.supply_edges)} supply edges, "
          f"{len(g.competitor_edges)} competitor edges -> {args.out}")
    return 0


def cmd_split(args) -> int:
    start = time.perf_counter()
    g = jio.load_graph(args.nodes, args.supply, args.competitors, args.header).graph
    if args.kind == "regular":
        split = make_regular_split(g, args.fraction, args.min_competitors, args.seed)
    else:
        split = make_zero_shot_split(g, args.fraction, args.min_competitors, args.seed)
    with staged(args.out) as stage:
        tmp_paths = jio.save_split(split, stage.tmp)
        stage.names.extend(p.name for p in tmp_paths)
        _finish(stage, args, "split",
                {"kind": args.kind, "fraction": args.fraction, "min_competitors": args.min_competitors},
                {"seed": args.seed}, [args.nodes, args.supply, args.competitors], start)
    print(f"{args.kind} split: {len(split.queries)} queries, {len(split.removed_edges)} "
          f"held-out edges -> {args.out}")
    return 0


_OVERRIDES = {
    "epochs": "epochs", "seed": "seed", "margin": "margin", "beta": "beta", "lam": "lam",
    "lr": "learning_rate", "norm_mode": "norm_mode", "negative_ratio": "negative_ratio",
    "optimizer": "optimizer", "grad_clip": "grad_clip", "activation": "hidden_activation",
}


def build_config(args, attr_dim: int) -> JpecConfig:
    values = jio.read_config(args.config) if args.config else {}
    for flag, key in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    if args.encoder_dims:
        values["encoder_dims"] = tuple(int(t) for t in args.encoder_dims.split(","))
    values.setdefault("encoder_dims", (attr_dim, 256, 64))
    return JpecConfig(**values)


def cmd_train(args) -> int:
    start = time.perf_counter()
    loaded = jio.load_graph(args.nodes, args.supply, args.competitors, args.header)
    g = loaded.graph
    cfg = build_config(args, g.attr_dim)
    negatives = sample_negatives(g, NegativeSampleSpec(cfg.negative_ratio, cfg.seed,
                                                       not args.all_nodes_negatives))
    model, report = train(g, negatives, cfg)
    y = embed(model, g)
    warn = ["node file has no attributes; using one-hot supply-degree buckets"] if loaded.fallback_features else []
    with staged(args.out) as stage:
        jio.save_model(model, stage.path("model.jpec"))
        jio.write_train_report(report, stage.path("train_report.tsv"))
        jio.save_embeddings(y, g.node_labels, stage.path("embeddings.emb"), seed=cfg.seed)
        stage.path("config.txt").write_text(jio.format_config(cfg), encoding="utf-8")
        jio.write_edges(stage.path("negatives.tsv"), [(p.i, p.j) for p in negatives], g.node_labels)
        _finish(stage, args, "train", cfg.to_dict(), {"seed": cfg.seed, "negatives": cfg.seed},
                [args.nodes, args.supply, args.competitors, args.config], start, warn,
                {"fallback_features": loaded.fallback_features,
                 "epoch_seconds": report.seconds,
                 "final_loss": report.final.total if report.final else None})
    if len(report):
        print(f"trained {cfg.epochs} epochs: loss {report.records[0].total:.6g} -> "
              f"{report.final.total:.6g}")
    else:
        print("epochs=0: wrote the initialized model")
    return 0


def _load_embeddings_for(args, labels):
    """Embeddings reordered to the node order of ``labels``."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", jio.FormatVersionWarning)
        y, ids = jio.load_embeddings(args.embeddings)
    notes = [str(w.message) for w in caught if issubclass(w.category, jio.FormatVersionWarning)]
    if labels is None:
        return y, ids, notes
    pos = {label: k for k, label in enumerate(ids)}
    missing = [label for label in labels if label not in pos]
    if missing:
        raise JpecError(f"embedding file lacks {len(missing)} node(s), e.g. {missing[0]!r}")
    return y[[pos[label] for label in labels]], list(labels), notes


def cmd_rank(args) -> int:
    start = time.perf_counter()
    notes = []
    if args.embeddings:
        labels = None
        if args.nodes:
            labels = jio.load_graph(args.nodes, args.supply, None, args.header).graph.node_labels
        y, labels, notes = _load_embeddings_for(args, labels)
    else:
        if not (args.model and args.nodes):
            raise JpecError("rank needs --embeddings, or --model with --nodes and --supply")
        g = jio.load_graph(args.nodes, args.supply, None, args.header).graph
        y, labels = embed(jio.load_model(args.model), g), list(g.node_labels)
    index = {label: k for k, label in enumerate(labels)}
    queries = list(args.query or [])
    if args.queries_file:
        queries += [line.split("\t")[0].strip() for line in Path(args.queries_file).read_text().splitlines()
                    if line.strip() and not line.startswith("#")]
    if not queries:
        raise JpecError("no query ids given (use --query or --queries-file)")
    unknown = [q for q in queries if q not in index]
    if unknown:
        raise JpecError(f"unknown query id {unknown[0]!r}")
    known = [set() for _ in labels]
    if args.filter_competitors:
        for a, b in jio.load_graph_edges(args.filter_competitors, index):
            known[a].add(b)
            known[b].add(a)
    ranked = [rank_candidates(y, index[q], None, args.score, known[index[q]]) for q in queries]
    with staged(args.out) as stage:
        jio.write_ranked_lists(ranked, labels, args.k, stage.path("ranked.tsv"))
        _finish(stage, args, "rank", {"k": args.k, "score": args.score, "queries": queries}, {},
                [args.embeddings, args.model, args.nodes, args.supply, args.filter_competitors],
                start, notes)
    print(f"ranked {len(queries)} queries -> {Path(args.out) / 'ranked.tsv'}")
    return 0


def cmd_evaluate(args) -> int:
    start = time.perf_counter()
    split = jio.load_split(args.split, args.nodes, args.supply, args.header)
    y, _, notes = _load_embeddings_for(args, split.train_graph.node_labels)
    ks = tuple(int(k) for k in args.ks.split(","))
    report = evaluate(y, split, ks, args.score, not args.unfiltered)
    summary = jio.summary_text(report, f"{split.split_kind} split")
    with staged(args.out) as stage:
        jio.write_metric_report(report, stage.path("metrics.tsv"))
        stage.path("summary.txt").write_text(summary, encoding="utf-8")
        _finish(stage, args, "evaluate",
                {"ks": list(ks), "score": args.score, "filtered": not args.unfiltered}, {},
                [args.embeddings, args.nodes, args.supply, Path(args.split) / "queries.tsv"],
                start, notes)
    sys.stdout.write(summary)
    return 0


def cmd_gradcheck(args) -> int:
    start = time.perf_counter()
    results = []
    for seed in range(args.instances):
        for margin in (None, 0.0):
            model, ops, x, pos, neg = random_instance(seed, margin=margin, activation=args.activation,
                                                      beta=args.beta)
            results.append(check_gradients(model, ops, x, pos, neg, args.eps))
    worst = max(r.max_rel_error for r in results)
    ok = worst < args.tol
    print(f"gradcheck: {len(results)} instances, max relative error {worst:.3e} "
          f"(tolerance {args.tol:g}) {'PASS' if ok else 'FAIL'}")
    if args.out:
        with staged(args.out) as stage:
            with open(stage.path("gradcheck.tsv"), "w", encoding="utf-8", newline="\n") as fh:
                fh.write("instance\thinge_active\tmax_rel_error\n")
                for k, r in enumerate(results):
                    fh.write(f"{k}\t{r.hinge_active}\t{r.max_rel_error!r}\n")
            _finish(stage, args, "gradcheck", {"eps": args.eps, "tol": args.tol}, {}, [], start)
    return 0 if ok else 1


# --- parser -----------------------------------------------------------------

def _add_graph_args(p, competitors=True, required=True):
    p.add_argument("--nodes", required=required, help="node TSV: id, attributes...")
    p.add_argument("--supply", required=required, help="supply TSV: src_id, dst_id")
    if competitors:
        p.add_argument("--competitors", required=required, help="competitor TSV: id_a, id_b")
    p.add_argument("--header", action="store_true", help="input TSVs start with a header line")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jpec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic planted-industry dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--industries", type=int, default=6)
    p.add_argument("--attr-dim", type=int, default=24)
    p.add_argument("--attr-noise", type=float, default=0.5)
    p.add_argument("--intra-prob", type=float, default=0.9)
    p.add_argument("--supply-prob", type=float, default=0.1)
    p.add_argument("--flow-background", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", help="hold out competitor edges (regular or zero-shot)")
    _add_graph_args(p)
    p.add_argument("--kind", choices=("regular", "zero_shot"), default="regular")
    p.add_argument("--fraction", type=float, default=0.2,
                   help="edge fraction (regular) or labelled-node fraction (zero_shot)")
    p.add_argument("--min-competitors", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model and write embeddings")
    _add_graph_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--margin", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--norm-mode", choices=("row", "symmetric"))
    p.add_argument("--encoder-dims", help="comma-separated widths, starting at the attribute width")
    p.add_argument("--negative-ratio", type=float)
    p.add_argument("--optimizer", choices=("gd", "adam"))
    p.add_argument("--grad-clip", type=float)
    p.add_argument("--activation", choices=("relu", "tanh", "identity"))
    p.add_argument("--all-nodes-negatives", action="store_true",
                   help="sample negatives among all nodes, not only labelled ones")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="top-K competitor candidates for query ids")
    p.add_argument("--embeddings")
    p.add_argument("--model")
    _add_graph_args(p, competitors=False, required=False)
    p.add_argument("--query", action="append")
    p.add_argument("--queries-file")
    p.add_argument("--filter-competitors", help="competitor TSV whose pairs are excluded")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--score", choices=("neg_sq_euclidean", "cosine"), default="neg_sq_euclidean")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("evaluate", help="Hits@K / MRR / MAP of embeddings on a split")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--split", required=True, help="directory written by `split`")
    _add_graph_args(p, competitors=False)
    p.add_argument("--ks", default="1,5,10")
    p.add_argument("--score", choices=("neg_sq_euclidean", "cosine"), default="neg_sq_euclidean")
    p.add_argument("--unfiltered", action="store_true",
                   help="keep training competitors in the candidate pool")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    p.add_argument("--instances", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--activation", choices=("relu", "tanh", "identity"), default="tanh")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (JpecError, ValueError, OSError) as exc:
        print(f"jpec {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
