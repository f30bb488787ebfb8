"""End-to-end pipeline and its ablation variants.

One run per seed trains, in order: the source model on P-mapped source
embeddings, the teacher (source model fine-tuned on the translated
corpus), the translation model, and the student distilled on unlabeled
target text. Models shared by several variants are trained once per seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

from .align import DEFAULT_K, Translator, build_seed_dictionary, solve_procrustes, transfer_corpus
from .corpus import LabelSet, UnlabeledSentence
from .distill import DistillConfig, soft_labels, train_student, vote_hard_labels
from .embed import DEFAULT_MAX_VOCAB, EmbeddingTable, normalize_rows
from .errors import ConfigError
from .metrics import aggregate, evaluate
from .tagger import EncoderConfig, TrainConfig, decode_corpus, featurize, finetune, train

log = logging.getLogger(__name__)

VARIANTS = (
    "full",
    "no_soft",
    "no_hard",
    "teacher_src",
    "teacher_trans",
    "teacher_only",
    "model_transfer",
    "data_transfer",
    "data_combination",
)

# variant -> (teacher for soft labels, use_soft, use_hard)
_STUDENT_VARIANTS = {
    "full": ("teach", True, True),
    "no_soft": ("teach", False, True),
    "no_hard": ("teach", True, False),
    "teacher_src": ("src", True, False),
    "teacher_trans": ("trans", True, False),
}
_DIRECT_VARIANTS = {
    "teacher_only": "teach",
    "model_transfer": "src",
    "data_transfer": "trans",
    "data_combination": "comb",
}

ENSEMBLE_SEED_STRIDE = 1000


@dataclass(frozen=True)
class AlignConfig:
    k: int = DEFAULT_K
    max_vocab: int | None = DEFAULT_MAX_VOCAB
    max_pairs: int | None = None
    skip_numeric: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    align: AlignConfig = field(default_factory=AlignConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    teacher: TrainConfig = field(default_factory=TrainConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    seeds: tuple = (1, 2, 3, 4, 5)
    ensemble: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.ensemble < 1:
            raise ConfigError("ensemble size must be >= 1")


@dataclass(frozen=True, eq=False)
class PipelineInputs:
    source: list                      # labeled source-language sentences
    source_table: EmbeddingTable
    target_table: EmbeddingTable
    unlabeled: list                   # target-language sentences, labels unused
    evaluation: list | None = None    # labeled target-language sentences
    label_set: LabelSet = field(default_factory=LabelSet)


@dataclass(frozen=True, eq=False)
class Alignment:
    mapping: object
    dictionary: object
    translator: Translator
    translated: list
    mapped_source: EmbeddingTable
    target: EmbeddingTable


@dataclass(eq=False)
class PipelineResult:
    alignment: Alignment
    reports: dict = field(default_factory=dict)       # variant -> aggregated EvalReport
    runs: dict = field(default_factory=dict)          # (variant, seed) -> EvalReport
    models: dict = field(default_factory=dict)        # (name, seed) -> TaggerModel or list


def member_seed(seed: int, m: int) -> int:
    return seed + ENSEMBLE_SEED_STRIDE * m


def align_inputs(inputs: PipelineInputs, config: AlignConfig) -> Alignment:
    src = normalize_rows(inputs.source_table)
    tgt = normalize_rows(inputs.target_table)
    dictionary = build_seed_dictionary(src, tgt, config.max_pairs, config.skip_numeric)
    mapping = solve_procrustes(dictionary, src, tgt)
    log.info("aligned with %d seed pairs, residual %.6g", len(dictionary), mapping.residual)
    translator = Translator(mapping, src, tgt, config.k)
    translated = transfer_corpus(inputs.source, translator)
    return Alignment(mapping, dictionary, translator, translated, src.mapped(mapping), tgt)


class _SeedRun:
    """Lazily trains and caches the models of one seed."""

    def __init__(self, seed, config, feats, label_set):
        self.seed = seed
        self.config = config
        self.feats = feats
        self.label_set = label_set
        self.cache = {}

    def teacher_config(self, seed):
        return replace(self.config.teacher, seed=seed)

    def _train(self, feats, seed):
        return train(feats, self.teacher_config(seed), label_set=self.label_set,
                     encoder=self.config.encoder)

    def model(self, name, m=0):
        key = (name, m)
        if key in self.cache:
            return self.cache[key]
        seed = member_seed(self.seed, m)
        if name == "src":
            model = self._train(self.feats["source"], seed)
        elif name == "trans":
            model = self._train(self.feats["translated"], seed)
        elif name == "teach":
            model = finetune(self.model("src", m), self.feats["translated"], self.teacher_config(seed))
        elif name == "comb":
            model = self._train(self.feats["source"] + self.feats["translated"], seed)
        else:
            raise ConfigError(f"unknown model {name!r}")
        self.cache[key] = model
        return model

    def members(self, name):
        return [self.model(name, m) for m in range(self.config.ensemble)]

    def student(self, variant):
        key = ("student", variant)
        if key in self.cache:
            return self.cache[key]
        teacher, use_soft, use_hard = _STUDENT_VARIANTS[variant]
        dcfg = replace(self.config.distill, use_soft=use_soft, use_hard=use_hard,
                       train=replace(self.config.distill.train, seed=self.seed))
        unl = self.feats["unlabeled"]
        soft = soft_labels(unl, self.members(teacher))
        pseudo = None
        if use_hard:
            pseudo = vote_hard_labels(unl, self.members("src"), self.members("teach"),
                                      self.members("trans"), viterbi=dcfg.vote_with_viterbi)
        init = self.model("teach") if dcfg.warm_start else None
        model = train_student(unl, soft, pseudo, dcfg, encoder=self.config.encoder,
                              init=init, label_set=self.label_set)
        self.cache[key] = model
        return model

    def final_model(self, variant):
        if variant in _STUDENT_VARIANTS:
            return self.student(variant)
        return self.model(_DIRECT_VARIANTS[variant])


def build_features(inputs: PipelineInputs, alignment: Alignment, window: int) -> dict:
    feats = {
        "source": featurize(inputs.source, alignment.mapped_source, window),
        "translated": featurize(alignment.translated, alignment.target, window),
        "unlabeled": featurize([UnlabeledSentence(s.tokens) for s in inputs.unlabeled], alignment.target, window),
    }
    if inputs.evaluation is not None:
        feats["evaluation"] = featurize(inputs.evaluation, alignment.target, window)
    return feats


def run_pipeline(variants, inputs: PipelineInputs, config: PipelineConfig,
                 alignment: Alignment | None = None) -> PipelineResult:
    """Run each variant for every seed; evaluate on ``inputs.evaluation`` if given."""
    if isinstance(variants, str):
        variants = [variants]
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {', '.join(VARIANTS)}")
    alignment = alignment or align_inputs(inputs, config.align)
    feats = build_features(inputs, alignment, config.encoder.window)
    result = PipelineResult(alignment)
    for seed in config.seeds:
        run = _SeedRun(seed, config, feats, inputs.label_set)
        for variant in variants:
            model = run.final_model(variant)
            result.models[(variant, seed)] = model
            if "evaluation" in feats:
                pred = decode_corpus(model, feats["evaluation"])
                report = evaluate(inputs.evaluation, pred, inputs.label_set)
                result.runs[(variant, seed)] = report
                log.info("seed %s %-16s F1 %.4f", seed, variant, report.f1)
        for (name, m), model in run.cache.items():
            if name != "student":
                result.models[(f"{name}{'' if m == 0 else f'.m{m}'}", seed)] = model
    if "evaluation" in feats:
        for variant in variants:
            result.reports[variant] = aggregate(result.runs[(variant, s)] for s in config.seeds)
    return result
