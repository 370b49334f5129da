"""Command-line entry point: ``mindread <subcommand> [flags]``.

Every subcommand accepts ``--config FILE``, a JSON object whose keys are the
subcommand's flag names (dashes or underscores). Flags given on the command
line override the file. The resolved settings are printed to stderr as one
JSON line before any work starts.

Exit status is 0 on success, 1 on invalid input or configuration and 2 on a
numerical failure. Relative output paths are placed under
``$MINDREAD_OUTPUT_DIR`` when that variable is set.
"""

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import training
from .checkpoint import atomic_write_bytes, atomic_write_text
from .dataset import generate_synthetic, load_corpus, save_corpus
from .embeddings import hashed_word_vectors, load_word_vectors, toy_embed, word_average_embed
from .features import ConfigurationError
from .graph import build_adjacency, count_cooccurrence
from .icc import MODELS, icc, load_ratings
from .tensor import NonFiniteError
from .vocab import CROSS, ReasonVocabulary

OUTPUT_ENV = "MINDREAD_OUTPUT_DIR"

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def output_path(path):
    path = Path(path)
    base = os.environ.get(OUTPUT_ENV)
    if base and not path.is_absolute():
        return Path(base) / path
    return path


def int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def float_list(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def str_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _train_options():
    special = {"heads": int_list, "split_ratios": float_list, "D": int, "word_vectors": str,
               "corpus_seed": int}
    opts = {}
    for f in fields(training.TrainConfig):
        kind = special.get(f.name) or type(f.default)
        opts[f.name] = (kind, f.default, f"training setting {f.name}")
    return opts


TRAIN_OPTIONS = _train_options()

# subcommand -> {option: (type, default, help)}
OPTIONS = {
    "gen": {
        "n": (int, 2000, "number of records"),
        "seed": (int, 0, "base seed"),
        "noise": (float, 0.05, "per-record reason flip probability"),
        "min_frames": (int, 10, "shortest track"),
        "max_frames": (int, 20, "longest track"),
        "out": (str, "corpus.jsonl", "output corpus file"),
    },
    "stats": {
        "corpus": (str, None, "corpus file"),
        "out": (str, None, "optional JSON report (includes the adjacency)"),
    },
    "icc": {
        "ratings": (str, None, "CSV of subjects x raters with a header row"),
        "model": (str, "twoway_random_agreement", f"one of {', '.join(MODELS)}"),
    },
    "embed": {
        "mode": (str, "toy", "toy (hashed bag of words) or word (word-vector average)"),
        "d": (int, 32, "embedding width"),
        "seed": (int, 0, "hash seed"),
        "word_vectors": (str, None, "word-vector file for --mode word; hashed vectors if omitted"),
        "out": (str, "embeddings.txt", "output table"),
    },
    "train": dict(TRAIN_OPTIONS, **{
        "corpus": (str, None, "corpus file; the planted corpus when omitted"),
        "out_dir": (str, "run", "directory for the checkpoint and training log"),
    }),
    "eval": {
        "checkpoint": (str, None, "checkpoint directory"),
        "corpus": (str, None, "corpus file; the planted corpus of the run when omitted"),
        "part": (str, "test", "train, validation, test or all"),
        "out": (str, None, "optional JSON report"),
    },
    "ablate": dict(TRAIN_OPTIONS, **{
        "variants": (str_list, ["full", "no_crossmodal"], "comma-separated variants"),
        "weight_grid": (bool, False, "also run the loss-weight grid"),
        "seeds": (int_list, [0, 1, 2], "comma-separated seeds (at least 3)"),
        "out": (str, "ablation.json", "comparison table"),
    }),
    "gradcheck": {
        "seed": (int, 0, "seed of the toy batch and parameters"),
        "tolerance": (float, 1e-4, "maximum relative error"),
        "variant": (str, "full", "full or no_crossmodal"),
    },
    "plot": {
        "table": (str, None, "comparison table from ablate"),
        "metric": (str, "reason_macro_f1", "summary key to chart"),
        "out": (str, "ablation.png", "image file"),
    },
}

HELP = {
    "gen": "sample a planted synthetic corpus",
    "stats": "corpus statistics and reason co-occurrence",
    "icc": "intraclass correlation of a ratings grid",
    "embed": "build a reason embedding table",
    "train": "train a model",
    "eval": "evaluate a checkpoint",
    "ablate": "compare variants over several seeds",
    "gradcheck": "finite-difference check of every parameter group",
    "plot": "chart a comparison table",
}


def build_parser():
    parser = Parser(prog="mindread", description="Pedestrian intent and reason models.")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=HELP[name], argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of option values")
        for opt, (kind, default, text) in opts.items():
            flag = "--" + opt.replace("_", "-")
            if kind is bool:
                p.add_argument(flag, action="store_true", help=text)
            else:
                p.add_argument(flag, type=kind, help=f"{text} (default: {default})")
    return parser


def resolve(command, given):
    """Defaults, then the config file, then explicit flags."""
    opts = OPTIONS[command]
    values = {k: default for k, (_, default, _) in opts.items()}
    path = given.pop("config", None)
    if path:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"{path}: config must be a JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key not in opts:
                raise ConfigurationError(f"{path}: unknown option {key!r} for {command}")
            kind = opts[key][0]
            if kind in (int_list, float_list, str_list) and not isinstance(value, list):
                value = kind(value)
            values[key] = value
    values.update(given)
    return values


def require(values, *names):
    missing = [n for n in names if values.get(n) is None]
    if missing:
        raise ConfigurationError("missing required option(s): " + ", ".join(
            "--" + n.replace("_", "-") for n in missing))


def train_config(values):
    return training.TrainConfig.from_dict({k: values[k] for k in TRAIN_OPTIONS})


# -- subcommands ----------------------------------------------------------------


def cmd_gen(v):
    corpus = generate_synthetic(v["n"], seed=v["seed"], noise_rate=v["noise"],
                                track_length=(v["min_frames"], v["max_frames"]))
    out = output_path(v["out"])
    save_corpus(out, corpus)
    print(f"wrote {len(corpus)} records to {out}")


def corpus_stats(corpus, vocab):
    stats = count_cooccurrence(corpus, vocab)
    n_cross = sum(r.intent == CROSS for r in corpus)
    return {
        "records": len(corpus),
        "cross_fraction": n_cross / len(corpus) if corpus else 0.0,
        "mean_reasons": float(np.mean([len(r.reasons) for r in corpus])) if corpus else 0.0,
        "mean_frames": float(np.mean([len(r.frames) for r in corpus])) if corpus else 0.0,
        "reason_counts": stats.count_i.tolist(),
        "cooccurrence": stats.count_ij.tolist(),
        "adjacency": build_adjacency(stats).tolist(),
    }


def cmd_stats(v):
    require(v, "corpus")
    vocab = ReasonVocabulary.default()
    report = corpus_stats(load_corpus(v["corpus"], vocab), vocab)
    print(f"records {report['records']}  crossing {report['cross_fraction']:.3f}  "
          f"reasons/record {report['mean_reasons']:.2f}  frames/record {report['mean_frames']:.1f}")
    for reason, count in zip(vocab, report["reason_counts"]):
        print(f"{reason.id:>3} {reason.intent_class:>2} {count:>7}  {reason.text}")
    if v["out"]:
        atomic_write_text(output_path(v["out"]), json.dumps(report, indent=2) + "\n")


def cmd_icc(v):
    require(v, "ratings")
    print(repr(icc(load_ratings(v["ratings"]), v["model"])))


def cmd_embed(v):
    vocab = ReasonVocabulary.default()
    if v["mode"] == "toy":
        table = toy_embed(vocab, v["d"], v["seed"])
    elif v["mode"] == "word":
        words = (load_word_vectors(v["word_vectors"]) if v["word_vectors"]
                 else hashed_word_vectors(vocab, v["d"], v["seed"]))
        table = word_average_embed(vocab, words)
    else:
        raise ConfigurationError(f"mode must be toy or word, got {v['mode']!r}")
    out = output_path(v["out"])
    table.save(out)
    print(f"wrote {table.n} x {table.d} {table.provider_tag} embeddings to {out}")


def _load_or_plant(path, config):
    return load_corpus(path) if path else training.planted_corpus(config)


def cmd_train(v):
    config = train_config(v)
    out_dir = output_path(v["out_dir"])
    result = training.train(config, _load_or_plant(v["corpus"], config), out_dir=out_dir)
    last = result.history[-1] if result.history else {}
    print(f"best epoch {result.estimator.best_epoch_}; "
          f"val loss {last.get('val_loss', float('nan')):.4f}; checkpoint {result.checkpoint}")


def cmd_eval(v):
    require(v, "checkpoint")
    est, config = training.load_model(v["checkpoint"])
    report = training.evaluate((est, config), _load_or_plant(v["corpus"], config), v["part"])
    d = report.to_dict()
    print(f"intent   accuracy {d['intent']['accuracy']:.4f}  f1 {d['intent']['f1']:.4f}  "
          f"precision {d['intent']['precision']:.4f}  auc {d['intent']['auc']:.4f}")
    print(f"reasons  subset {d['reason']['subset_accuracy']:.4f} (primary)  "
          f"hamming {d['reason']['hamming_accuracy']:.4f}  macro-F1 {d['reason']['macro_f1']:.4f}")
    if v["out"]:
        atomic_write_text(output_path(v["out"]), json.dumps(d, indent=2) + "\n")


def cmd_ablate(v):
    base = train_config(v)
    variants = list(v["variants"])
    if v["weight_grid"]:
        variants += list(training.WEIGHT_GRID)
    table = training.run_ablation(
        base, variants, v["seeds"],
        on_run=lambda name, seed, r: print(f"{name} seed {seed}: intent {r.intent['accuracy']:.4f} "
                                           f"subset {r.reason['subset_accuracy']:.4f} "
                                           f"macro-F1 {r.reason['macro_f1']:.4f}", flush=True),
    )
    print(training.format_table(table))
    atomic_write_text(output_path(v["out"]), json.dumps(table, indent=2) + "\n")


def cmd_gradcheck(v):
    report = training.gradcheck(seed=v["seed"], variant=v["variant"])
    for group, err in report.items():
        print(f"{group:<14} {err:.3e}")
    worst = max(report.values())
    print(f"max relative error {worst:.3e} (tolerance {v['tolerance']:g})")
    if not worst <= v["tolerance"]:
        raise NonFiniteError(f"gradient check failed: {worst:.3e} > {v['tolerance']:g}")


def cmd_plot(v):
    require(v, "table")
    import io

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    table = json.loads(Path(v["table"]).read_text(encoding="utf-8"))
    names = [r["name"] for r in table["rows"]]
    try:
        stats = [r["summary"][v["metric"]] for r in table["rows"]]
    except KeyError:
        raise ConfigurationError(f"metric {v['metric']!r} not in the table") from None
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(names)), 3.5))
    ax.bar(names, [s["mean"] for s in stats], yerr=[s["std"] for s in stats], capsize=4,
           color="0.6", edgecolor="0.2")
    ax.set_ylabel(v["metric"].replace("_", " "))
    ax.set_ylim(0, 1.05)
    ax.set_title(f"{len(table['seeds'])} seeds")
    fig.autofmt_xdate(rotation=20)
    fig.tight_layout()
    out = output_path(v["out"])
    fmt = out.suffix.lstrip(".").lower() or "png"
    buf = io.BytesIO()
    # dropping the software tag keeps repeated renders byte-identical
    fig.savefig(buf, format=fmt, metadata={"Software": None} if fmt == "png" else None)
    plt.close(fig)
    atomic_write_bytes(out, buf.getvalue())
    print(f"wrote {out}")


COMMANDS = {
    "gen": cmd_gen, "stats": cmd_stats, "icc": cmd_icc, "embed": cmd_embed,
    "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck, "plot": cmd_plot,
}


def main(argv=None):
    parser = build_parser()
    try:
        ns = vars(parser.parse_args(argv))
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return exc.code if isinstance(exc.code, int) else EXIT_OK
    command = ns.pop("command")
    verbose = ns.pop("verbose", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = resolve(command, ns)
        print(json.dumps({"command": command, "config": values}, sort_keys=True, default=str),
              file=sys.stderr)
        COMMANDS[command](values)
    except NonFiniteError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
