"""Command-line entry point.

Subcommands: synth-data, distill, eval, xarch, decode, langstats.

Option precedence: command-line flag > ``--config`` file > built-in default.
The config file is flat ``key = value`` text; keys are option names with
dashes or underscores (``outer-lr = 0.5``). The effective configuration of
every command is written to ``<out>/config.snapshot``.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .classifier import ArchSpec, InitSpec
from .corpus import DEFAULT_SIZES, generate_synthetic, load_jsonl, save_jsonl
from .distiller import DistillConfig, distill
from .encoder import Contextualizer, Encoder, load_embedding_file, save_embedding_file
from .errors import NumericalError, TextDistillError
from .strategies import DistilledData, StrategyKind, decode

log = logging.getLogger("textdistill")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3

CORPUS_FILE = "corpus.jsonl"
EMBEDDINGS_FILE = "embeddings.tsv"


class InputError(Exception):
    pass


# ----------------------------------------------------------------------
# config plumbing
# ----------------------------------------------------------------------
def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InputError(f"{path}:{lineno}: expected 'key = value'")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise InputError(f"not a boolean: {value!r}")


def apply_config_defaults(parser: argparse.ArgumentParser, values: dict) -> None:
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            raise InputError(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            flag = _parse_bool(raw)
            defaults[key] = flag
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (TypeError, ValueError):
                raise InputError(f"bad value for {key}: {raw!r}") from None
        else:
            defaults[key] = raw
        if action.choices is not None and defaults[key] not in action.choices:
            raise InputError(f"{key} must be one of {list(action.choices)}")
    parser.set_defaults(**defaults)


def write_snapshot(out: Path, args: argparse.Namespace) -> None:
    skip = {"func", "config"}
    lines = []
    for key in sorted(vars(args)):
        if key in skip:
            continue
        value = getattr(args, key)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    (out / "config.snapshot").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _prepare_out(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise InputError(f"output directory {out} is not writable: {exc}") from None
    return out


def _attach_log(out: Path) -> logging.Handler:
    handler = logging.FileHandler(out / "run.log", mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def _require(path, what: str) -> Path:
    if path is None:
        raise InputError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise InputError(f"{what} file not found: {p}")
    return p


# ----------------------------------------------------------------------
# shared loaders
# ----------------------------------------------------------------------
def _run_record(run_dir) -> dict:
    path = Path(run_dir) / "record.json"
    if not path.is_file():
        raise InputError(f"no record.json in {run_dir}")
    return json.loads(path.read_text(encoding="utf-8"))


def _load_distilled(run_dir) -> DistilledData:
    path = Path(run_dir) / "distilled.bin"
    if not path.is_file():
        raise InputError(f"no distilled.bin in {run_dir}")
    return DistilledData.load(path)


def _encoder_settings(args, record: dict | None) -> dict:
    cfg = (record or {}).get("config", {})
    return {
        "seq_len": cfg.get("seq_len", args.seq_len),
        "contextualizer": cfg.get("contextualizer", args.contextualizer),
        "encoder_seed": cfg.get("encoder_seed", args.encoder_seed),
        "metric": cfg.get("metric", args.metric),
    }


def _build_encoder(embeddings_path, settings: dict) -> Encoder:
    vocab, table = load_embedding_file(embeddings_path)
    if settings["contextualizer"] == "attention":
        ctx = Contextualizer.frozen_attention(table.dim, settings["encoder_seed"])
    else:
        ctx = Contextualizer.identity()
    return Encoder(vocab, table, ctx, seq_len=int(settings["seq_len"]), metric=settings["metric"])


def _arch(args, classes: int, dim: int, record: dict | None = None) -> ArchSpec:
    saved = (record or {}).get("config", {}).get("arch")
    if saved:
        return ArchSpec(tuple(saved["filter_heights"]), saved["filters_per_height"],
                        saved["extra_fc_layers"], saved["fc_hidden"], saved["classes"],
                        saved["embed_dim"])
    return ArchSpec(tuple(args.filter_heights), args.filters, args.extra_fc, args.fc_hidden,
                    classes, dim)


def _init_spec(args, record: dict | None) -> InitSpec:
    cfg = (record or {}).get("config", {})
    return InitSpec(cfg.get("init_mode", args.init), int(cfg.get("seed", args.seed)))


def _inputs(args, record=None):
    corpus_path = _require(args.corpus, "corpus")
    emb_path = _require(args.embeddings, "embeddings")
    corpus = load_jsonl(corpus_path)
    encoder = _build_encoder(emb_path, _encoder_settings(args, record))
    return corpus, encoder


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------
def cmd_synth_data(args) -> int:
    out = _prepare_out(args.out)
    corpus, vocab, table = generate_synthetic(
        languages=args.langs, num_classes=args.classes,
        sizes=(args.train_size, args.dev_size, args.test_size), seed=args.seed, dim=args.dim)
    save_jsonl(corpus, out / CORPUS_FILE)
    save_embedding_file(out / EMBEDDINGS_FILE, vocab, table)
    write_snapshot(out, args)
    print(f"wrote {len(corpus.train)}/{len(corpus.dev)}/{len(corpus.test)} examples, "
          f"{len(corpus.languages)} languages, {corpus.num_classes} classes, V={len(vocab)}")
    return EXIT_OK


def cmd_distill(args) -> int:
    corpus, encoder = _inputs(args)
    out = _prepare_out(args.out)
    handler = _attach_log(out)
    try:
        arch = _arch(args, corpus.num_classes, encoder.dim)
        config = DistillConfig(
            strategy=args.strategy, samples_per_class=args.per_class, steps=args.steps,
            batch_size=args.batch_size, outer_lr=args.outer_lr, inits_per_step=args.inits,
            init_mode=args.init, eta0=args.eta0, learn_labels=args.learn_labels,
            learn_eta=not args.fixed_eta, optimizer=args.optimizer, tau=args.tau,
            tau_final=args.tau_final, seed=args.seed, threads=args.threads)
        write_snapshot(out, args)

        def progress(step, meta, eta):
            if not args.quiet:
                print(f"{step},{meta:.6f},{eta:.6f}")

        log.info("distill start strategy=%s steps=%d", config.strategy, config.steps)
        dd, record = distill(config, corpus, encoder, arch, callback=progress)
        record.config.update({"contextualizer": encoder.contextualizer.kind,
                              "encoder_seed": args.encoder_seed, "metric": encoder.metric})
        dd.save(out / "distilled.bin")
        (out / "record.json").write_text(record.to_json(), encoding="utf-8")
        log.info("distill done in %.2fs", record.wall_clock)
        print(f"final meta_loss={record.meta_losses[-1]:.6f} eta={dd.eta:.6f}")
    finally:
        log.removeHandler(handler)
        handler.close()
    return EXIT_OK


def cmd_eval(args) -> int:
    record = _run_record(args.run) if args.run else None
    corpus, encoder = _inputs(args, record)
    out = _prepare_out(args.out)
    write_snapshot(out, args)
    arch = _arch(args, corpus.num_classes, encoder.dim, record)
    base_arch = ArchSpec(arch.filter_heights, arch.filters_per_height, 0, arch.fc_hidden,
                         arch.classes, arch.embed_dim)
    full_params = ev.train_full(base_arch, corpus, encoder, args.epochs, args.lr, args.seed)
    full = ev.evaluate_full(full_params, encoder, corpus)
    reports = [full]
    if record is not None:
        dd = _load_distilled(args.run)
        spec = _init_spec(args, record)
        dist = ev.evaluate_distilled(dd, encoder, corpus, arch, spec, full.f1_macro,
                                     steps=args.eval_steps)
        dist.extra.update({"init": spec.mode, "samples_per_class":
                           dd.num_samples // dd.num_classes, "baseline_f1": full.f1_macro})
        reports.append(dist)
        ev.train_from_distilled(arch, dd, encoder, spec, args.eval_steps).save(out / "params.bin")
    else:
        full_params.save(out / "params.bin")
    main = reports[-1]
    (out / "report.json").write_text(main.to_json(), encoding="utf-8")
    (out / "report.csv").write_text(ev.rows_to_csv([r.csv_row() for r in reports]),
                                    encoding="utf-8")
    langs = list(full.per_language_f1)
    rows = [{"language": lang, **{r.source: f"{r.per_language_f1.get(lang, float('nan')):.6f}"
                                  for r in reports}} for lang in langs]
    (out / "per_language.csv").write_text(ev.rows_to_csv(rows), encoding="utf-8")
    for r in reports:
        rn = "" if r.r_n is None else f" r_n={r.r_n:.2f}"
        print(f"{r.source}: f1_macro={100 * r.f1_macro:.2f}{rn}")
    return EXIT_OK


def cmd_xarch(args) -> int:
    record = _run_record(args.run) if args.run else None
    if record is None:
        raise InputError("--run is required")
    corpus, encoder = _inputs(args, record)
    out = _prepare_out(args.out)
    write_snapshot(out, args)
    dd = _load_distilled(args.run)
    arch = _arch(args, corpus.num_classes, encoder.dim, record)
    scores = ev.cross_arch_eval(dd, encoder, arch, _init_spec(args, record), corpus,
                                steps=args.eval_steps)
    rows = [{"strategy": dd.kind.value,
             "variant": "original" if k == 0 else f"original+{k}fc",
             "extra_fc_layers": k, "f1_macro": f"{v:.6f}"} for k, v in scores.items()]
    (out / "xarch.csv").write_text(ev.rows_to_csv(rows), encoding="utf-8")
    for r in rows:
        print(f"{r['variant']}: f1_macro={100 * float(r['f1_macro']):.2f}")
    return EXIT_OK


def cmd_decode(args) -> int:
    record = _run_record(args.run) if args.run else None
    if record is None:
        raise InputError("--run is required")
    emb_path = _require(args.embeddings, "embeddings")
    encoder = _build_encoder(emb_path, _encoder_settings(args, record))
    dd = _load_distilled(args.run)
    if args.strategy is not None and StrategyKind(args.strategy) is not dd.kind:
        raise InputError(f"--strategy {args.strategy} does not match stored kind {dd.kind.value}")
    if dd.x.shape[1] != encoder.seq_len:
        raise InputError("distilled sentence length does not match the encoder")
    out = _prepare_out(args.out)
    write_snapshot(out, args)
    summary = decode(dd, encoder)
    (out / "decoded.jsonl").write_text(summary.to_jsonl(), encoding="utf-8")
    (out / "decoded.txt").write_text(summary.to_text(), encoding="utf-8")
    print(summary.to_text(), end="")
    return EXIT_OK


def cmd_langstats(args) -> int:
    corpus, encoder = _inputs(args, _run_record(args.run[0]) if args.run else None)
    out = _prepare_out(args.out)
    write_snapshot(out, args)
    columns = {"original": ev.corpus_language_proportion(corpus.texts("train"), encoder.vocab)}
    for run in args.run or []:
        dd = _load_distilled(run)
        name = dd.kind.value
        if name in columns:
            name = f"{name}:{Path(run).name}"
        columns[name] = ev.language_proportion(decode(dd, encoder), encoder.vocab)
    langs = encoder.vocab.languages()
    rows = [{"language": lang, **{k: f"{v.get(lang, 0.0):.4f}" for k, v in columns.items()}}
            for lang in langs]
    (out / "langstats.csv").write_text(ev.rows_to_csv(rows), encoding="utf-8")
    print(ev.rows_to_csv(rows), end="")
    return EXIT_OK


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1)


def _data_inputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", help=f"corpus JSONL (synth-data writes {CORPUS_FILE})")
    p.add_argument("--embeddings", help=f"embedding table (synth-data writes {EMBEDDINGS_FILE})")
    p.add_argument("--seq-len", type=int, default=12)
    p.add_argument("--contextualizer", choices=["attention", "identity"], default="attention")
    p.add_argument("--encoder-seed", type=int, default=0,
                   help="seed of the frozen contextualizer weights")
    p.add_argument("--metric", choices=["cosine", "l2"], default="cosine")


def _arch_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--filter-heights", type=lambda s: [int(v) for v in s.split(",")],
                   default=[3, 4, 5])
    p.add_argument("--filters", type=int, default=8)
    p.add_argument("--fc-hidden", type=int, default=32)
    p.add_argument("--extra-fc", type=int, default=0, choices=[0, 1, 2, 3])
    p.add_argument("--init", choices=["fixed", "random"], default="fixed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="textdistill", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic multilingual corpus")
    _common(p)
    p.add_argument("--langs", type=int, default=8)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--train-size", type=int, default=DEFAULT_SIZES[0], help="per language")
    p.add_argument("--dev-size", type=int, default=DEFAULT_SIZES[1], help="per language")
    p.add_argument("--test-size", type=int, default=DEFAULT_SIZES[2], help="per language")
    p.add_argument("--dim", type=int, default=16)
    p.set_defaults(func=cmd_synth_data)

    d = DistillConfig()
    p = sub.add_parser("distill", help="run the bi-level distillation loop")
    _common(p)
    _data_inputs(p)
    _arch_flags(p)
    p.add_argument("--strategy", choices=[k.value for k in StrategyKind], default=d.strategy)
    p.add_argument("--per-class", type=int, default=d.samples_per_class)
    p.add_argument("--steps", type=int, default=d.steps)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--outer-lr", type=float, default=d.outer_lr)
    p.add_argument("--inits", type=int, default=d.inits_per_step, help="initial-weight draws per step")
    p.add_argument("--eta0", type=float, default=d.eta0)
    p.add_argument("--learn-labels", action="store_true")
    p.add_argument("--fixed-eta", action="store_true", help="do not learn the inner learning rate")
    p.add_argument("--optimizer", choices=["sgd", "adam"], default=d.optimizer)
    p.add_argument("--tau", type=float, default=d.tau)
    p.add_argument("--tau-final", type=float, default=None)
    p.add_argument("--quiet", action="store_true", help="suppress per-step progress lines")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="full-data baseline and (with --run) distilled-data scores")
    _common(p)
    _data_inputs(p)
    _arch_flags(p)
    p.add_argument("--run", help="output directory of a distill run")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--eval-steps", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("xarch", help="cross-architecture scores (0..3 extra FC layers)")
    _common(p)
    _data_inputs(p)
    _arch_flags(p)
    p.add_argument("--run", help="output directory of a distill run")
    p.add_argument("--eval-steps", type=int, default=1)
    p.set_defaults(func=cmd_xarch)

    p = sub.add_parser("decode", help="map distilled data back to tokens")
    _common(p)
    _data_inputs(p)
    p.add_argument("--run", help="output directory of a distill run")
    p.add_argument("--strategy", choices=[k.value for k in StrategyKind], default=None,
                   help="assert the stored strategy")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("langstats", help="token-level language proportions")
    _common(p)
    _data_inputs(p)
    p.add_argument("--run", action="append", help="distill run directory (repeatable)")
    p.set_defaults(func=cmd_langstats)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            apply_config_defaults(sub, read_config_file(args.config))
            args = parser.parse_args(argv)
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, TextDistillError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
