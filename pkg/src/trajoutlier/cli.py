"""``trajoutlier`` command line: simulate, train, score, eval, transfer, ablate."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import evalkit
from .config import help_text, load_config
from .data import load_dataset, load_labels
from .errors import ConfigError, DataError, TrajOutlierError
from .modality import ABLATIONS, SemanticEmbedder
from .model import Model, TrajectoryTable
from .objective import train
from .scoring import load_scores, score_dataset, write_scores
from .sim import simulate, write_simulation

log = logging.getLogger("trajoutlier")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.exit(1)


def _config(args):
    cfg = load_config(args.config)
    over = {"seed": getattr(args, "seed", None)}
    if getattr(args, "arch", None):
        over["model.arch"] = args.arch
    if getattr(args, "ablate", None):
        over["model.ablation"] = args.ablate
    return cfg.with_overrides(**over)


def _data_path(d):
    path = os.path.join(d, "checkins.jsonl")
    if not os.path.exists(path):
        raise DataError(f"no checkins.jsonl in {d}")
    return path


def _labels(d):
    path = os.path.join(d, "labels.csv")
    if not os.path.exists(path):
        raise DataError(f"no labels.csv in {d}")
    return load_labels(path)


def _embedder(cfg):
    path = cfg["model.embeddings"]
    if path:
        return SemanticEmbedder.from_file(path, dim=cfg["model.dim"])
    return SemanticEmbedder(cfg["model.dim"], cfg["model.embedder_seed"])


def _provenance_lines(meta):
    lines = [f"config_hash={meta.get('config_hash', '')}"]
    return lines + [f"config: {line}" for line in meta.get("config", "").splitlines()]


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


# -- subcommands ------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config(args)
    sim_cfg = cfg.sim()
    result = simulate(sim_cfg, threads=args.threads)
    write_simulation(result, sim_cfg, args.out_dir, cfg.provenance())
    print(f"wrote {len(result.streams)} users to {args.out_dir}")


def train_model(cfg, data_dir, out, progress=None):
    ds = load_dataset(_data_path(data_dir), cutoff_len=cfg["model.cutoff_len"])
    model = Model(cfg.model(), _embedder(cfg))
    table = TrajectoryTable(ds, model.embedder)
    base = os.path.splitext(out)[0]
    result = train(model, table, cfg.train(), log_path=base + ".log.jsonl",
                   timing_path=base + ".timing.jsonl", progress=progress)
    model.save(out, {**cfg.provenance(), "epochs": len(result.records),
                     "score": {"mode": cfg["score.mode"], "w_time": cfg["score.w_time"],
                               "w_pop": cfg["score.w_pop"], "k": list(cfg.ks())}})
    return model, result


def cmd_train(args):
    cfg = _config(args)

    def progress(rec):
        log.info("epoch %d phase %d align=%s consistency=%s clustering=%s", rec["epoch"], rec["phase"],
                 rec["mean_align"], rec["mean_consistency"], rec["mean_clustering"])

    train_model(cfg, args.data, args.out, progress)
    print(f"wrote checkpoint {args.out}")


def _score(model, meta, data_dir, mode=None):
    ds = load_dataset(_data_path(data_dir), cutoff_len=model.config.cutoff_len)
    table = TrajectoryTable(ds, model.embedder)
    sc = meta.get("score", {})
    scores = score_dataset(model, table, mode or sc.get("mode", "closest"),
                           sc.get("w_time", 0.5), sc.get("w_pop", 0.5))
    return ds, scores


def cmd_score(args):
    model, meta = Model.load(args.model)
    _, scores = _score(model, meta, args.data, args.mode)
    write_scores(args.out, scores, _provenance_lines(meta) + [f"model={os.path.basename(args.model)}"])
    print(f"wrote {len(scores)} scores to {args.out}")


def cmd_eval(args):
    scores = load_scores(args.scores)
    labels = load_labels(args.labels)
    ks = tuple(int(k) for k in args.k.split(","))
    report = evalkit.evaluate(scores, labels, ks)
    if args.data:
        ds = load_dataset(_data_path(args.data))
        report["baseline"] = evalkit.baseline_metrics(ds, labels, ks)
    if args.timing:
        with open(args.timing, encoding="utf-8") as fh:
            report["seconds_per_epoch"] = [json.loads(line)["seconds"] for line in fh if line.strip()]
    report["scores_file"] = os.path.basename(args.scores)
    config_lines = []
    with open(args.scores, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("# config_hash="):
                report["config_hash"] = line.strip().split("=", 1)[1]
            elif line.startswith("# config: "):
                config_lines.append(line[len("# config: "):].rstrip("\n"))
    report["config"] = "".join(f"{line}\n" for line in config_lines)
    evalkit.write_report(args.report, report)
    ch = report["channels"][report["best_channel"]]
    print(f"best channel {report['best_channel']}: AUC {ch['auc']:.4f} AP {ch['ap']:.4f}")


def cmd_transfer(args):
    model, meta = Model.load(args.model)
    labels = _labels(args.data) if not args.labels else load_labels(args.labels)
    ds, scores = _score(model, meta, args.data)
    report = {"config_hash": meta.get("config_hash"), "config": meta.get("config"), "rows": {}}
    report["rows"]["transfer"] = evalkit.evaluate(scores, labels)
    if args.scratch:
        scratch, smeta = Model.load(args.scratch)
        _, s2 = _score(scratch, smeta, args.data)
        report["rows"]["original"] = evalkit.evaluate(s2, labels)
        report["scratch_config_hash"] = smeta.get("config_hash")
        report["scratch_config"] = smeta.get("config")
    report["baseline"] = evalkit.baseline_metrics(ds, labels)
    evalkit.write_report(args.report, report)
    for row, rep in sorted(report["rows"].items()):
        print(f"{row}: AUC {rep['best_auc']:.4f} ({rep['best_channel']})")


def cmd_ablate(args):
    base = _config(args)
    labels = _labels(args.data)
    os.makedirs(args.out_dir, exist_ok=True)
    variants = args.variants.split(",") if args.variants else list(ABLATIONS)
    report = {**base.provenance(), "rows": {}}
    for v in variants:
        if v not in ABLATIONS:
            raise ConfigError(f"unknown ablation {v!r}")
        cfg = base.with_overrides(**{"model.ablation": v})
        ckpt = os.path.join(args.out_dir, f"{v}.ckpt")
        model, _ = train_model(cfg, args.data, ckpt)
        _, meta = Model.load(ckpt)
        _, scores = _score(model, meta, args.data)
        write_scores(os.path.join(args.out_dir, f"{v}.scores.csv"), scores, _provenance_lines(meta))
        report["rows"][v] = evalkit.evaluate(scores, labels, cfg.ks())
        print(f"{v}: AUC {report['rows'][v]['best_auc']:.4f}")
    evalkit.write_report(os.path.join(args.out_dir, "ablation.json"), report)


# -- entry point --------------------------------------------------------------

def build_parser():
    p = _Parser(prog="trajoutlier", formatter_class=argparse.RawDescriptionHelpFormatter,
                description="Trajectory outlier detection from check-in data.",
                epilog="config keys and defaults:\n" + help_text())
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, help="flat key = value config file")
            sp.add_argument("--seed", type=int, help="override the config seed everywhere")
        sp.add_argument("--threads", type=int, default=1, help="worker/BLAS thread cap (default 1)")

    sp = sub.add_parser("simulate", help="generate check-ins and labels")
    common(sp)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("train", help="train a model checkpoint")
    common(sp)
    sp.add_argument("--data", required=True, help="directory with checkins.jsonl")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--arch", choices=("mlp", "rnn", "cnn", "transformer"))
    sp.add_argument("--ablate", choices=ABLATIONS)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("score", help="score users with a checkpoint")
    common(sp, config=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="score CSV path")
    sp.add_argument("--mode", choices=("closest", "paper-eq11"))
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("eval", help="evaluate a score file against labels")
    common(sp, config=False)
    sp.add_argument("--scores", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--data", help="dataset directory, adds the distance baseline")
    sp.add_argument("--timing", help="training timing file, adds seconds per epoch")
    sp.add_argument("--k", default="10,20", help="comma-separated Top-K cutoffs")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("transfer", help="apply a trained model to another dataset")
    common(sp, config=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--report", required=True)
    sp.add_argument("--scratch", help="checkpoint trained on --data, adds the 'original' row")
    sp.add_argument("--labels", help="labels file (default: <data>/labels.csv)")
    sp.set_defaults(func=cmd_transfer)

    sp = sub.add_parser("ablate", help="train and evaluate ablation variants")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--variants", help="comma-separated subset of: " + ", ".join(ABLATIONS))
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        sys.stderr.write("trajoutlier: error: --threads must be >= 1\n")
        return 1
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except TrajOutlierError as exc:
        sys.stderr.write(f"trajoutlier: {type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(f"trajoutlier: DataError: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
