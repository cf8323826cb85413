"""Command-line interface: one binary exposing every workflow as a subcommand."""

from __future__ import annotations

import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import synth
from ._io import read_json, write_json
from .autodiff import grad_check
from .graph import (
    KNOWN_DATASETS,
    import_raw,
    is_canonical_dataset,
    load_canonical,
    load_splits,
    make_splits,
    save_canonical,
    save_splits,
)
from .models import ModelSpec, ParamSet, build_model_operators, init_params, model_forward
from .operators import OperatorKind, build_operator, eigengap_check, export_matrix_market
from .smoothness import render_table, smoothness_report
from .trainer import (
    TrainConfig,
    _split_seed,
    default_hyperparameters,
    export_embeddings,
    run_experiment,
    train,
    write_alphas_csv,
    write_history_csv,
)

ENV_DATA_DIR = "GRAPHFB_DATA_DIR"

MODEL_TOKENS = {"mlp": "mlp", "gcn": "gcn", "fb-gcn": "fb_gcn", "fb-sage": "fb_sage"}

_OPERATOR_CHOICES = [k.value for k in OperatorKind]


def _emit_config(ctx, command, **params):
    resolved = {"command": command, **ctx.obj, **params}
    print(json.dumps(resolved, sort_keys=True, default=str), file=sys.stderr)


def _resolve_data_dir(data):
    """Accept a path, or a bare dataset name under $GRAPHFB_DATA_DIR."""
    p = Path(data)
    if p.exists():
        return p
    root = os.environ.get(ENV_DATA_DIR)
    if root and (Path(root) / data).exists():
        return Path(root) / data
    raise click.ClickException(f"dataset directory not found: {data}")


def _parse_ratios(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise click.ClickException("ratios must be three comma-separated fractions")
    return tuple(parts)


def _limit_threads(n):
    if n is None:
        return
    os.environ.setdefault("OMP_NUM_THREADS", str(n))
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=n)
    except ImportError:
        logging.getLogger(__name__).debug("threadpoolctl unavailable; thread cap is best-effort")


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Global default seed.")
@click.option("--threads", type=int, default=None, help="Cap BLAS/OpenMP threads.")
@click.option("--precision", type=click.Choice(["f64"]), default="f64", show_default=True)
@click.option("-v", "--verbose", is_flag=True, help="Enable info-level logging.")
@click.pass_context
def cli(ctx, seed, threads, precision, verbose):
    """Filterbank GNN toolkit: datasets, operators, smoothness, training."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads(threads)
    ctx.obj = {"seed": seed, "threads": threads, "precision": precision}


@cli.command("import")
@click.option("--nodes", "node_file", required=True, type=click.Path(exists=True))
@click.option("--edges", "edge_file", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--row-normalize", is_flag=True, help="L1-normalize feature rows.")
@click.option("--feature-encoding", type=click.Choice(["dense", "indices"]), default="dense",
              show_default=True)
@click.pass_context
def import_cmd(ctx, node_file, edge_file, out_dir, row_normalize, feature_encoding):
    """Import raw node/edge files into a canonical dataset directory."""
    _emit_config(ctx, "import", nodes=node_file, edges=edge_file, out=out_dir,
                 row_normalize=row_normalize, feature_encoding=feature_encoding)
    g = import_raw(node_file, edge_file, row_normalize=row_normalize,
                   feature_encoding=feature_encoding)
    save_canonical(g, out_dir)
    print(json.dumps({
        "out": str(out_dir),
        "n_nodes": g.n_nodes,
        "n_edges": g.n_edges,
        "n_features": g.n_features,
        "n_classes": g.n_classes,
    }))


@cli.command()
@click.option("--data", required=True)
@click.option("--ratios", default="0.48,0.32,0.20", show_default=True)
@click.option("--count", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=None, help="Defaults to the global --seed.")
@click.option("--out", "out_file", required=True, type=click.Path())
@click.pass_context
def splits(ctx, data, ratios, count, seed, out_file):
    """Generate train/val/test splits for a canonical dataset."""
    seed = ctx.obj["seed"] if seed is None else seed
    _emit_config(ctx, "splits", data=data, ratios=ratios, count=count, split_seed=seed,
                 out=out_file)
    g = load_canonical(_resolve_data_dir(data))
    ss = make_splits(g, _parse_ratios(ratios), seed=seed, count=count)
    save_splits(ss, out_file)
    sizes = [len(s.train) for s in ss], [len(s.val) for s in ss], [len(s.test) for s in ss]
    print(json.dumps({"out": str(out_file), "count": count,
                      "sizes": {"train": sizes[0][0], "val": sizes[1][0], "test": sizes[2][0]}}))


@cli.command()
@click.option("--data", default=None, help="One canonical dataset directory (or name).")
@click.option("--all", "all_datasets", is_flag=True,
              help="Report every known dataset found under $GRAPHFB_DATA_DIR.")
@click.option("--operator", type=click.Choice(_OPERATOR_CHOICES), default="L_sym",
              show_default=True)
@click.option("--feature-mode", type=click.Choice(["raw", "rownorm"]), default="raw",
              show_default=True)
@click.option("--gamma", type=float, default=None)
@click.option("--table", "as_table", is_flag=True, help="Aligned text table instead of JSON.")
@click.pass_context
def smoothness(ctx, data, all_datasets, operator, feature_mode, gamma, as_table):
    """Feature/label smoothness (S-values) of one or all datasets."""
    _emit_config(ctx, "smoothness", data=data, all=all_datasets, operator=operator,
                 feature_mode=feature_mode, gamma=gamma, table=as_table)
    if not data and not all_datasets:
        raise click.ClickException("pass --data DIR or --all")
    reports = {}
    if all_datasets:
        root = os.environ.get(ENV_DATA_DIR)
        if not root:
            raise click.ClickException(f"--all needs ${ENV_DATA_DIR} to be set")
        for name in KNOWN_DATASETS:
            path = Path(root) / name
            if is_canonical_dataset(path):
                reports[name] = smoothness_report(load_canonical(path), operator,
                                                  feature_mode, gamma)
        if not reports:
            raise click.ClickException(f"no canonical datasets under {root}")
    else:
        path = _resolve_data_dir(data)
        reports[path.name] = smoothness_report(load_canonical(path), operator,
                                               feature_mode, gamma)
    if as_table:
        print(render_table(reports))
    else:
        payload = {name: dict(dataset=name, **rep.to_dict()) for name, rep in reports.items()}
        print(json.dumps(payload if all_datasets else next(iter(payload.values())), indent=2))


def _spec_from_flags(arch, dataset_name, hidden, layers, dropout, lp_kind, hp_kind,
                     gamma, channel_mode, transform_mode):
    d_lr, d_wd, d_drop, d_hidden = default_hyperparameters(arch, dataset_name)
    spec = ModelSpec(
        arch=arch,
        n_layers=layers,
        hidden_dim=hidden if hidden is not None else d_hidden,
        lp_kind=OperatorKind(lp_kind) if lp_kind else None,
        hp_kind=OperatorKind(hp_kind) if hp_kind else None,
        gamma=gamma,
        dropout_p=dropout if dropout is not None else d_drop,
        channel_mode=channel_mode,
        transform_mode=transform_mode,
    )
    return spec, d_lr, d_wd


@cli.command("train")
@click.option("--data", required=True)
@click.option("--model", "model_token", type=click.Choice(sorted(MODEL_TOKENS)), required=True)
@click.option("--splits", "splits_file", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--lr", type=float, default=None)
@click.option("--weight-decay", type=float, default=None)
@click.option("--dropout", type=float, default=None)
@click.option("--hidden", type=int, default=None)
@click.option("--layers", type=int, default=2, show_default=True)
@click.option("--max-epochs", type=int, default=500, show_default=True)
@click.option("--patience", type=int, default=100, show_default=True)
@click.option("--lp-kind", type=click.Choice(_OPERATOR_CHOICES), default=None)
@click.option("--hp-kind", type=click.Choice(_OPERATOR_CHOICES), default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--channel-mode", type=click.Choice(["two_channel", "lp_only", "hp_only"]),
              default="two_channel", show_default=True)
@click.option("--transform-mode", type=click.Choice(["nonlinear", "linear"]),
              default="nonlinear", show_default=True)
@click.option("--split-index", type=int, default=None, help="Train a single split only.")
@click.pass_context
def train_cmd(ctx, data, model_token, splits_file, out_dir, lr, weight_decay, dropout,
              hidden, layers, max_epochs, patience, lp_kind, hp_kind, gamma,
              channel_mode, transform_mode, split_index):
    """Train one model over the splits of a dataset; write report + CSV logs."""
    arch = MODEL_TOKENS[model_token]
    data_dir = _resolve_data_dir(data)
    spec, d_lr, d_wd = _spec_from_flags(arch, data_dir.name, hidden, layers, dropout,
                                        lp_kind, hp_kind, gamma, channel_mode, transform_mode)
    config = TrainConfig(
        lr=lr if lr is not None else d_lr,
        weight_decay=weight_decay if weight_decay is not None else d_wd,
        max_epochs=max_epochs,
        patience=patience,
        seed=ctx.obj["seed"],
    )
    _emit_config(ctx, "train", data=str(data_dir), model=model_token, splits=splits_file,
                 out=out_dir, spec=spec.to_dict(), train_config=config.to_dict(),
                 split_index=split_index)
    g = load_canonical(data_dir)
    split_set = load_splits(splits_file)
    indices = range(len(split_set)) if split_index is None else [split_index]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_split = []
    for i in indices:
        cfg_i = replace(config, seed=_split_seed(config.seed, i))
        result = train(g, spec, cfg_i, split_set[i])
        write_history_csv(result, out / f"history_{model_token}_{i}.csv")
        if spec.is_filterbank:
            write_alphas_csv(result, out / f"alphas_{model_token}_{i}.csv")
        params = init_params(spec, g.n_features, g.n_classes, cfg_i.seed)
        params.load_state(result.best_state)
        write_json(out / f"params_{model_token}_{i}.json", params.to_payload())
        per_split.append({"split": i, **result.summary()})
    accs = [r["test_accuracy"] for r in per_split]
    report = {
        "dataset": str(data_dir),
        "splits_file": str(splits_file),
        "model": model_token,
        "spec": spec.to_dict(),
        "train_config": config.to_dict(),
        "per_split": per_split,
        "mean_test_accuracy": float(np.mean(accs)),
        "std_test_accuracy": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
    }
    write_json(out / "report.json", report)
    print(json.dumps({"out": str(out), "mean_test_accuracy": report["mean_test_accuracy"]}))


@cli.command()
@click.option("--config", "config_file", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.pass_context
def benchmark(ctx, config_file, out_dir):
    """Run a multi-model, multi-split experiment described by a JSON config."""
    _emit_config(ctx, "benchmark", config=config_file, out=out_dir)
    cfg = read_json(config_file)
    data_dir = _resolve_data_dir(cfg["dataset"])
    g = load_canonical(data_dir)
    split_set = load_splits(cfg["splits"])
    models = {}
    for entry in cfg["models"]:
        entry = dict(entry)
        name = entry.pop("name")
        arch = MODEL_TOKENS.get(entry.pop("arch"), None) or name
        spec, d_lr, d_wd = _spec_from_flags(
            arch, data_dir.name,
            entry.pop("hidden_dim", None), entry.pop("n_layers", 2),
            entry.pop("dropout", None), entry.pop("lp_kind", None),
            entry.pop("hp_kind", None), entry.pop("gamma", None),
            entry.pop("channel_mode", "two_channel"), entry.pop("transform_mode", "nonlinear"),
        )
        config = TrainConfig(
            lr=entry.pop("lr", d_lr),
            weight_decay=entry.pop("weight_decay", d_wd),
            max_epochs=entry.pop("max_epochs", 500),
            patience=entry.pop("patience", 100),
            seed=entry.pop("seed", ctx.obj["seed"]),
        )
        if entry:
            raise click.ClickException(f"unknown model config keys: {sorted(entry)}")
        models[name] = (spec, config)
    pairs = [tuple(p) for p in cfg.get("pairs", [])] or None
    report = run_experiment(g, models, split_set, pairs=pairs,
                            n_workers=cfg.get("workers", 1), keep_results=True)
    report["dataset"] = str(data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = report.pop("_results")
    for name, runs in results.items():
        for i, result in enumerate(runs):
            write_history_csv(result, out / f"history_{name}_{i}.csv")
            if models[name][0].is_filterbank:
                write_alphas_csv(result, out / f"alphas_{name}_{i}.csv")
    write_json(out / "report.json", report)
    summary = {name: m["mean_test_accuracy"] for name, m in report["models"].items()}
    print(json.dumps({"out": str(out), "mean_test_accuracy": summary,
                      "paired_deltas": {k: v["mean"] for k, v in report["paired_deltas"].items()}}))


@cli.command()
@click.option("--data", default=None)
@click.option("--gamma", type=float, default=1.0, show_default=True)
@click.option("--random", "random_mode", is_flag=True,
              help="Sweep random connected non-bipartite graphs (args: n= trials= gammas= p=).")
@click.argument("random_args", nargs=-1)
@click.pass_context
def eigengap(ctx, data, gamma, random_mode, random_args):
    """Check the lazy-vs-renormalized walk eigengap ratio inequality."""
    _emit_config(ctx, "eigengap", data=data, gamma=gamma, random=random_mode,
                 random_args=list(random_args))
    if random_mode:
        opts = {"n": 30, "trials": 200, "gammas": "0.5,1,2", "p": 0.25}
        for arg in random_args:
            if "=" not in arg:
                raise click.ClickException(f"expected key=value, got {arg!r}")
            key, value = arg.split("=", 1)
            if key not in opts:
                raise click.ClickException(f"unknown sweep option {key!r}")
            opts[key] = value
        n, trials, p = int(opts["n"]), int(opts["trials"]), float(opts["p"])
        gammas = [float(x) for x in str(opts["gammas"]).split(",")]
        rng = np.random.default_rng(ctx.obj["seed"])
        total = held = 0
        worst_margin = np.inf
        for _ in range(trials):
            size = int(rng.integers(3, n + 1))
            g = synth.random_connected_nonbipartite(size, p, rng)
            for gam in gammas:
                res = eigengap_check(g, gam)
                total += 1
                held += res.holds
                worst_margin = min(worst_margin, res.ratio_lazy - res.ratio_renorm)
        print(json.dumps({"holds": f"{held}/{total}", "worst_margin": worst_margin}))
    else:
        if not data:
            raise click.ClickException("pass --data DIR or --random")
        g = load_canonical(_resolve_data_dir(data))
        res = eigengap_check(g, gamma)
        print(json.dumps({"gamma": gamma, "ratio_lazy": res.ratio_lazy,
                          "ratio_renorm": res.ratio_renorm, "holds": res.holds}))


@cli.command("grad-check")
@click.option("--model", "model_token", type=click.Choice(sorted(MODEL_TOKENS)), required=True)
@click.option("--n", "n_nodes", type=int, default=8, show_default=True)
@click.option("--f", "n_features", type=int, default=5, show_default=True)
@click.option("--graphs", type=int, default=5, show_default=True)
@click.option("--tolerance", type=float, default=1e-5, show_default=True)
@click.pass_context
def grad_check_cmd(ctx, model_token, n_nodes, n_features, graphs, tolerance):
    """Finite-difference gradient check of one model on random small graphs."""
    from . import autodiff as ad

    arch = MODEL_TOKENS[model_token]
    _emit_config(ctx, "grad-check", model=model_token, n=n_nodes, f=n_features,
                 graphs=graphs, tolerance=tolerance)
    rng = np.random.default_rng(ctx.obj["seed"])
    worst = 0.0
    for _ in range(graphs):
        g = synth.random_attributed_graph(n_nodes, n_features, 3, 0.4, rng)
        spec = ModelSpec(arch=arch, hidden_dim=4, dropout_p=0.0)
        params = init_params(spec, g.n_features, g.n_classes, int(rng.integers(2**31)))
        operators = build_model_operators(g, spec)
        mask = np.arange(g.n_nodes)

        def forward():
            logits = model_forward(operators, params, g.features, train_mode=False)
            return ad.softmax_cross_entropy(logits, g.labels, mask)

        report = grad_check(forward, params.trainable(), tolerance=tolerance, rng=rng)
        worst = max(worst, report.max_rel_error)
    verdict = "PASS" if worst < tolerance else "FAIL"
    print(f"max_rel_err={worst:.3e} < {tolerance:g}: {verdict}")
    if verdict == "FAIL":
        raise click.ClickException(f"gradient check failed: {worst:.3e}")


@cli.command("export-operator")
@click.option("--data", required=True)
@click.option("--operator", type=click.Choice(_OPERATOR_CHOICES), required=True)
@click.option("--gamma", type=float, default=None)
@click.option("--out", "out_file", required=True, type=click.Path())
@click.pass_context
def export_operator(ctx, data, operator, gamma, out_file):
    """Write one operator in MatrixMarket coordinate format."""
    _emit_config(ctx, "export-operator", data=data, operator=operator, gamma=gamma, out=out_file)
    g = load_canonical(_resolve_data_dir(data))
    op = build_operator(g, operator, gamma)
    export_matrix_market(op, out_file)
    print(json.dumps({"out": str(out_file), "nnz": int(op.matrix.nnz)}))


@cli.command("export-embeddings")
@click.option("--run", "run_dir", required=True, type=click.Path(exists=True))
@click.option("--layer", type=int, required=True)
@click.option("--channel", type=click.Choice(["lp", "hp", "combined"]), required=True)
@click.option("--split", "split_index", type=int, default=0, show_default=True)
@click.option("--data", default=None, help="Override the dataset path recorded in the run.")
@click.option("--out", "out_file", default=None, type=click.Path())
@click.pass_context
def export_embeddings_cmd(ctx, run_dir, layer, channel, split_index, data, out_file):
    """Export a trained run's hidden representations as TSV."""
    _emit_config(ctx, "export-embeddings", run=run_dir, layer=layer, channel=channel,
                 split=split_index, data=data, out=out_file)
    run = Path(run_dir)
    report = read_json(run / "report.json")
    model_token = report["model"]
    params_file = run / f"params_{model_token}_{split_index}.json"
    if not params_file.exists():
        raise click.ClickException(f"no saved parameters: {params_file}")
    params = ParamSet.from_payload(read_json(params_file))
    g = load_canonical(_resolve_data_dir(data or report["dataset"]))
    if out_file is None:
        out_file = run / f"embeddings_{model_token}_{split_index}_{channel}_layer{layer}.tsv"
    export_embeddings(g, params, layer, channel, out_file)
    print(json.dumps({"out": str(out_file)}))


def main(argv=None):
    try:
        cli(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        print("error: aborted", file=sys.stderr)
        return 1
    except click.ClickException as exc:
        print(f"error: {exc.format_message()}", file=sys.stderr)
        return 1
    except Exception as exc:  # one-line machine-parsable failure surface
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
