"""Command-line entry point: ``unitrans <command> [options]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .align import (
    DEFAULT_K,
    Translator,
    build_seed_dictionary,
    export_translation_table,
    load_mapping,
    save_mapping,
    solve_procrustes,
    transfer_corpus,
)
from .config import OUTPUT_ENV, load_run_config, parse_overrides
from .corpus import LabeledSentence, LabelSet, read_conll, read_tokens, write_conll, write_pseudo_labels
from .distill import (
    DistillConfig,
    save_soft_labels,
    soft_labels,
    train_student,
    vote_hard_labels,
)
from .embed import DEFAULT_MAX_VOCAB, load_embeddings, normalize_rows
from .errors import ConfigError, UnitransError
from .metrics import evaluate, format_keyvalue, format_table
from .pipeline import VARIANTS, PipelineInputs, run_pipeline
from .synth import SynthConfig, generate_synthetic_bilingual, write_synthetic
from .tagger import (
    EncoderConfig,
    TrainConfig,
    decode_corpus,
    featurize,
    finetune,
    load_model,
    save_model,
    train,
)

log = logging.getLogger("unitrans")


# ---------------------------------------------------------------------------
# helpers


def _read(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None


def _write(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data, encoding="utf-8")


def _label_set(args) -> LabelSet:
    types = getattr(args, "entity_types", None)
    return LabelSet(tuple(t for t in types.split(",") if t)) if types else LabelSet()


def _table(path, max_vocab, mapping_path=None):
    table = normalize_rows(load_embeddings(_read(path), max_vocab))
    if mapping_path:
        table = table.mapped(load_mapping(_read(mapping_path)))
    return table


def _load_model(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return load_model(data)


def _output_dir(args, default=None):
    out = getattr(args, "out", None) or os.environ.get(OUTPUT_ENV) or default
    if out is None:
        raise ConfigError(f"no output location: pass --out or set {OUTPUT_ENV}")
    return Path(out)


def _train_config(args, **defaults) -> TrainConfig:
    values = dict(defaults)
    for name in ("epochs", "batch_size", "learning_rate", "weight_decay", "seed", "max_sequence_length"):
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    return TrainConfig(**values)


def _encoder_config(args) -> EncoderConfig:
    return EncoderConfig(window=args.window, hidden_dim=args.hidden_dim, dropout_rate=args.dropout)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args):
    values = parse_overrides(args.set)
    config = SynthConfig.from_dict(values)
    data = generate_synthetic_bilingual(config, args.seed)
    paths = write_synthetic(data, _output_dir(args))
    for name, path in paths.items():
        print(f"{name}={path}")


def cmd_align(args):
    src = normalize_rows(load_embeddings(_read(args.src_emb), args.max_vocab))
    tgt = normalize_rows(load_embeddings(_read(args.tgt_emb), args.max_vocab))
    dictionary = build_seed_dictionary(src, tgt, args.max_pairs, args.skip_numeric)
    mapping = solve_procrustes(dictionary, src, tgt)
    _write(args.out, save_mapping(mapping))
    report = (
        f"pairs={len(dictionary)}\n"
        f"dim={mapping.dim}\n"
        f"residual={mapping.residual!r}\n"
        f"orthogonality_defect={mapping.orthogonality_defect!r}\n"
    )
    if args.report:
        _write(args.report, report)
    sys.stdout.write(report)


def cmd_translate(args):
    src = normalize_rows(load_embeddings(_read(args.src_emb), args.max_vocab))
    tgt = normalize_rows(load_embeddings(_read(args.tgt_emb), args.max_vocab))
    label_set = _label_set(args)
    corpus = read_conll(_read(args.corpus), label_set)
    translator = Translator(load_mapping(_read(args.mapping)), src, tgt, args.k)
    translated = transfer_corpus(corpus, translator)
    _write(args.out, write_conll(translated, label_set))
    if args.table:
        words = sorted({tok for s in corpus for tok in s.tokens})
        _write(args.table, export_translation_table(translator.table(words)))
    print(f"sentences={len(translated)}")


def cmd_train(args):
    label_set = _label_set(args)
    table = _table(args.emb, args.max_vocab, args.mapping)
    corpus = read_conll(_read(args.corpus), label_set)
    encoder = _encoder_config(args)
    feats = featurize(corpus, table, encoder.window)
    model = train(feats, _train_config(args), label_set=label_set, encoder=encoder)
    _write(args.out, save_model(model))


def cmd_finetune(args):
    init = _load_model(args.model)
    table = _table(args.emb, args.max_vocab, args.mapping)
    corpus = read_conll(_read(args.corpus), init.label_set)
    feats = featurize(corpus, table, init.encoder.window)
    _write(args.out, save_model(finetune(init, feats, _train_config(args))))


def cmd_distill(args):
    teachers = [_load_model(p) for p in args.teacher]
    table = _table(args.emb, args.max_vocab)
    unlabeled = read_tokens(_read(args.unlabeled))
    feats = featurize(unlabeled, table, teachers[0].encoder.window)
    config = DistillConfig(
        eta=args.eta,
        train=_train_config(args, learning_rate=DistillConfig().train.learning_rate),
        use_soft=not args.no_soft,
        use_hard=not args.no_hard,
        warm_start=args.warm_start,
        vote_with_viterbi=args.vote_viterbi,
    )
    soft = soft_labels(feats, teachers)
    pseudo = None
    if config.use_hard:
        if not (args.src_model and args.trans_model):
            raise ConfigError("the hard loss needs --src-model and --trans-model voters")
        src = [_load_model(p) for p in args.src_model]
        trans = [_load_model(p) for p in args.trans_model]
        pseudo = vote_hard_labels(feats, src, teachers, trans, viterbi=config.vote_with_viterbi)
        if args.pseudo_out:
            _write(args.pseudo_out, write_pseudo_labels(unlabeled, pseudo.labels, teachers[0].label_set))
    if args.soft_out:
        _write(args.soft_out, save_soft_labels(soft))
    student = train_student(feats, soft, pseudo, config, encoder=teachers[0].encoder,
                            init=teachers[0], label_set=teachers[0].label_set)
    _write(args.out, save_model(student))


def cmd_predict(args):
    model = _load_model(args.model)
    table = _table(args.emb, args.max_vocab, args.mapping)
    sentences = read_tokens(_read(args.corpus))
    pred = decode_corpus(model, featurize(sentences, table, model.encoder.window))
    out = [LabeledSentence(s.tokens, y) for s, y in zip(sentences, pred)]
    _write(args.out, write_conll(out, model.label_set))


def cmd_eval(args):
    label_set = _label_set(args)
    gold = read_conll(_read(args.gold), label_set)
    pred = read_conll(_read(args.pred), label_set)
    for k, (g, p) in enumerate(zip(gold, pred)):
        if g.tokens != p.tokens:
            raise ConfigError(f"sentence {k}: gold and predicted tokens differ")
    report = evaluate(gold, [p.labels for p in pred], label_set)
    text = format_keyvalue(report)
    if args.report:
        _write(args.report, text)
    sys.stdout.write(format_table({"eval": report}) if args.table else text)


def _pipeline_inputs(run, label_set):
    paths = run.paths
    if "source" in paths:
        missing = [k for k in ("source_vectors", "target_vectors", "unlabeled") if k not in paths]
        if missing:
            raise ConfigError(f"missing paths: {', '.join('paths.' + m for m in missing)}")
        max_vocab = run.pipeline.align.max_vocab
        evaluation = read_conll(_read(paths["evaluation"]), label_set) if "evaluation" in paths else None
        return PipelineInputs(
            read_conll(_read(paths["source"]), label_set),
            load_embeddings(_read(paths["source_vectors"]), max_vocab),
            load_embeddings(_read(paths["target_vectors"]), max_vocab),
            read_tokens(_read(paths["unlabeled"])),
            evaluation,
            label_set,
        )
    synth = SynthConfig.from_dict(run.synth)
    data = generate_synthetic_bilingual(synth, run.synth_seed)
    return PipelineInputs(data.source, data.source_table, data.target_table,
                          data.unlabeled, data.target, data.label_set)


def cmd_pipeline(args):
    overrides = parse_overrides(args.set)
    if args.variant:
        overrides["pipeline.variants"] = ",".join(args.variant)
    if args.seeds:
        overrides["pipeline.seeds"] = args.seeds
    if args.ensemble is not None:
        overrides["pipeline.ensemble"] = str(args.ensemble)
    if args.out:
        overrides["paths.output"] = str(Path(args.out).resolve())
    run = load_run_config(args.config, overrides)
    if "output" not in run.paths:
        raise ConfigError(f"no output directory: set paths.output, --out or {OUTPUT_ENV}")
    out = run.paths["output"]
    label_set = LabelSet(run.entity_types) if run.entity_types else LabelSet()
    inputs = _pipeline_inputs(run, label_set)
    result = run_pipeline(run.variants, inputs, run.pipeline)

    _write(out / "mapping.txt", save_mapping(result.alignment.mapping))
    _write(out / "translated.conll", write_conll(result.alignment.translated, inputs.label_set))
    for (name, seed), model in sorted(result.models.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        _write(out / "models" / name / f"seed{seed}.model", save_model(model))
    if result.reports:
        lines = [f"alignment.pairs={len(result.alignment.dictionary)}\n",
                 f"alignment.residual={result.alignment.mapping.residual!r}\n"]
        for variant, report in result.reports.items():
            lines.append(format_keyvalue(report, prefix=f"{variant}."))
        _write(out / "report.txt", "".join(lines))
        table = format_table(result.reports)
        _write(out / "report_table.txt", table)
        sys.stdout.write(table)
    print(f"output={out}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_train_flags(p, lr_default=None):
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float, default=lr_default)
    g.add_argument("--weight-decay", dest="weight_decay", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--max-sequence-length", dest="max_sequence_length", type=int)


def _add_encoder_flags(p):
    g = p.add_argument_group("encoder")
    g.add_argument("--window", type=int, default=EncoderConfig.window)
    g.add_argument("--hidden-dim", dest="hidden_dim", type=int, default=EncoderConfig.hidden_dim)
    g.add_argument("--dropout", type=float, default=EncoderConfig.dropout_rate)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unitrans", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic bilingual benchmark")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="generator option")
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("align", help="learn the orthogonal mapping from identical strings")
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.add_argument("--max-vocab", type=int, default=DEFAULT_MAX_VOCAB)
    p.add_argument("--max-pairs", type=int)
    p.add_argument("--skip-numeric", action="store_true")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("translate", help="word-by-word translate a labeled corpus")
    p.add_argument("--src-emb", required=True)
    p.add_argument("--tgt-emb", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--table", help="also write src<TAB>tgt<TAB>score")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--max-vocab", type=int, default=DEFAULT_MAX_VOCAB)
    p.add_argument("--entity-types")
    p.set_defaults(func=cmd_translate)

    for name, func, help_ in (("train", cmd_train, "train a tagger on a labeled corpus"),
                              ("finetune", cmd_finetune, "continue training a tagger")):
        p = sub.add_parser(name, help=help_)
        if name == "finetune":
            p.add_argument("--model", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--emb", required=True)
        p.add_argument("--mapping", help="map the embeddings first (source-language text)")
        p.add_argument("--out", required=True)
        p.add_argument("--max-vocab", type=int, default=DEFAULT_MAX_VOCAB)
        _add_train_flags(p)
        if name == "train":
            _add_encoder_flags(p)
            p.add_argument("--entity-types")
        p.set_defaults(func=func)

    p = sub.add_parser("distill", help="train a student on unlabeled target text")
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--teacher", action="append", required=True, help="repeat to ensemble")
    p.add_argument("--src-model", action="append")
    p.add_argument("--trans-model", action="append")
    p.add_argument("--out", required=True)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--no-soft", action="store_true")
    p.add_argument("--no-hard", action="store_true")
    p.add_argument("--warm-start", action="store_true")
    p.add_argument("--vote-viterbi", action="store_true")
    p.add_argument("--soft-out")
    p.add_argument("--pseudo-out")
    p.add_argument("--max-vocab", type=int, default=DEFAULT_MAX_VOCAB)
    _add_train_flags(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("predict", help="Viterbi-decode a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--mapping")
    p.add_argument("--out", required=True)
    p.add_argument("--max-vocab", type=int, default=DEFAULT_MAX_VOCAB)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="entity-level precision/recall/F1")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report")
    p.add_argument("--table", action="store_true", help="human-readable output")
    p.add_argument("--entity-types")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("pipeline", help="run pipeline variants over seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", action="append", choices=VARIANTS)
    p.add_argument("--seeds", help="e.g. 1..5 or 1,2,3")
    p.add_argument("--ensemble", type=int)
    p.add_argument("--out")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UnitransError as exc:
        print(f"unitrans {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
