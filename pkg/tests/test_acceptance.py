"""Acceptance checks, one test per criterion.

Each test prints a measurement line, and the terminal summary lists one
PASS/FAIL line per criterion.
"""

import itertools
import time
from dataclasses import replace

import numpy as np
import pytest

from unitrans import cli
from unitrans.align import build_seed_dictionary, procrustes_objective, solve_procrustes, translate_word, \
    OrthogonalMapping
from unitrans.corpus import LabeledSentence, LabelSet, UnlabeledSentence, read_conll, read_tokens, \
    write_conll, write_tokens
from unitrans.distill import (
    distill_loss,
    distill_loss_and_grad,
    hard_loss,
    soft_labels,
    soft_loss,
    vote_hard_labels,
)
from unitrans.embed import EmbeddingTable
from unitrans.metrics import evaluate
from unitrans.pipeline import VARIANTS, run_pipeline
from unitrans.synth import SynthConfig, generate_synthetic_bilingual
from unitrans.tagger import (
    EncoderConfig,
    ce_loss,
    ce_loss_and_grad,
    featurize,
    init_model,
    make_batch,
    predict_proba,
    predict_proba_features,
    viterbi_decode,
)

from conftest import BENCHMARK

LABELS = LabelSet()


def _random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def _tables(s, t):
    """Source/target tables whose columns of ``s`` and ``t`` share the words w0..w{D-1}."""
    words = tuple(f"w{i}" for i in range(s.shape[1]))
    return EmbeddingTable(words, s.T.copy()), EmbeddingTable(words, t.T.copy())


# ---------------------------------------------------------------------------


@pytest.mark.criterion(1, "Procrustes correctness")
def test_procrustes_correctness(note):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_defect = worst_planted = 0.0
    beaten = 0
    for n in range(100):
        d = (2, 4, 8)[n % 3]
        big_d = (d, 2 * d, 10 * d)[(n // 3) % 3]
        s = rng.standard_normal((d, big_d))
        t = rng.standard_normal((d, big_d))
        src, tgt = _tables(s, t)
        p = solve_procrustes(build_seed_dictionary(src, tgt), src, tgt).matrix
        worst_defect = max(worst_defect, np.linalg.norm(p.T @ p - np.eye(d)))
        best = procrustes_objective(p, s, t)
        for _ in range(1000):
            if procrustes_objective(_random_orthogonal(rng, d), s, t) < best - 1e-12:
                beaten += 1

        r = _random_orthogonal(rng, d)
        src, tgt = _tables(s, r @ s)
        p = solve_procrustes(build_seed_dictionary(src, tgt), src, tgt).matrix
        worst_planted = max(worst_planted, np.linalg.norm(p - r))
    elapsed = time.perf_counter() - start
    note(f"max ||P^T P - I||={worst_defect:.2e} beaten={beaten} max ||P - R||={worst_planted:.2e} "
         f"time={elapsed:.1f}s")
    assert worst_defect < 1e-6
    assert beaten == 0
    assert worst_planted < 1e-6
    assert elapsed < 10


# ---------------------------------------------------------------------------


def _csls_direct(p, src, tgt, k):
    """Quadratic-time CSLS translations written straight from the definition."""
    def unit(v):
        return v / np.sqrt(sum(x * x for x in v))

    mapped = [unit(p @ v) for v in src.vectors]
    targets = [unit(v) for v in tgt.vectors]
    cos = [[float(np.dot(ms, t)) for t in targets] for ms in mapped]
    r_t = [sum(sorted(row, reverse=True)[:k]) / k for row in cos]
    r_s = [sum(sorted((cos[i][j] for i in range(len(mapped))), reverse=True)[:k]) / k
           for j in range(len(targets))]
    out = {}
    for i, word in enumerate(src.vocab):
        best, best_j = -np.inf, None
        for j in range(len(targets)):
            score = 2 * cos[i][j] - r_t[i] - r_s[j]
            if score > best:       # strict: the first maximum wins
                best, best_j = score, j
        out[word] = tgt.vocab[best_j]
    return out


@pytest.mark.criterion(2, "CSLS oracle equivalence")
def test_csls_oracle(note):
    rng = np.random.default_rng(7)
    elapsed = 0.0
    checked = mismatches = 0
    for case in range(12):
        d = int(rng.integers(2, 9))
        n_src = int(rng.integers(5, 60))
        n_tgt = int(rng.integers(5, 60))
        k = int(rng.integers(1, min(n_src, n_tgt, 12) + 1))
        sv = rng.standard_normal((n_src, d))
        tv = rng.standard_normal((n_tgt, d))
        if case % 3 == 0:
            # exact duplicates in the target vocabulary force score ties
            tv[1::2] = tv[0:n_tgt - 1:2][: len(tv[1::2])]
        src = EmbeddingTable(tuple(f"s{i}" for i in range(n_src)), sv)
        tgt = EmbeddingTable(tuple(f"t{i}" for i in range(n_tgt)), tv)
        mapping = OrthogonalMapping(_random_orthogonal(rng, d), 0.0, 0)
        want = _csls_direct(mapping.matrix, src, tgt, k)
        start = time.perf_counter()
        got = {word: translate_word(word, mapping, src, tgt, k).word for word in src.vocab}
        elapsed += time.perf_counter() - start
        checked += len(got)
        mismatches += sum(got[w] != want[w] for w in src.vocab)
    note(f"words={checked} mismatches={mismatches} time={elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < 5


# ---------------------------------------------------------------------------


def _bio_valid(names):
    prev = "O"
    for name in names:
        if name.startswith("I-") and prev[2:] != name[2:]:
            return False
        prev = name
    return True


def _valid_sequences(n):
    names = LABELS.labels
    seqs = [seq for seq in itertools.product(range(len(names)), repeat=n)
            if _bio_valid([names[c] for c in seq])]
    return np.array(seqs, dtype=np.int64)


@pytest.mark.criterion(3, "Viterbi oracle equivalence")
def test_viterbi_oracle(note):
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    valid = {n: _valid_sequences(n) for n in range(1, 6)}
    agree = 0
    for trial in range(1000):
        n = int(rng.integers(1, 6))
        scale = (0.5, 2.0, 5.0)[trial % 3]
        z = scale * rng.standard_normal((n, 9))
        probs = np.exp(z - z.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        seqs = valid[n]
        scores = np.log(probs)[np.arange(n), seqs].sum(axis=1)
        best = seqs[int(np.argmax(scores))]
        agree += np.array_equal(viterbi_decode(probs, LABELS), best)
    elapsed = time.perf_counter() - start
    note(f"agreement={agree}/1000 time={elapsed:.1f}s")
    assert agree == 1000
    assert elapsed < 30


# ---------------------------------------------------------------------------


def _grad_instance(rng):
    d = 3
    words = tuple(f"v{i}" for i in range(6))
    table = EmbeddingTable(words, rng.standard_normal((6, d)))
    encoder = EncoderConfig(window=1, hidden_dim=5, dropout_rate=0.0)
    model = init_model(LABELS, d, encoder, seed=int(rng.integers(1 << 30)))
    for name in model.params:
        model.params[name] = model.params[name] + 0.5 * rng.standard_normal(model.params[name].shape)
    sentences = []
    for _ in range(3):
        n = int(rng.integers(1, 6))
        tokens = [words[i] if i < 6 else "unseen" for i in rng.integers(0, 7, size=n)]
        labels = [0] * n
        for j in range(n):
            c = int(rng.integers(0, 9))
            prev = labels[j - 1] if j else None
            labels[j] = c if LABELS.allowed(prev, c) else LABELS.begin_id(LABELS.type_of(c))
        sentences.append(LabeledSentence(tokens, labels))
    soft = [rng.dirichlet(np.ones(9), size=len(s.tokens)) for s in sentences]
    hard = []
    for s in sentences:
        y = rng.integers(0, 9, size=len(s.tokens))
        y[rng.random(len(y)) < 0.4] = -1
        hard.append(y)
    return model, table, sentences, soft, hard


def _max_rel_error(model, analytic, objective, h=1e-5):
    worst = 0.0
    for name, value in model.params.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = objective()
            flat[i] = old - h
            down = objective()
            flat[i] = old
            num = (up - down) / (2 * h)
            denom = max(abs(num), abs(grad[i]), 1e-6)
            worst = max(worst, abs(num - grad[i]) / denom)
    return worst


@pytest.mark.criterion(4, "Gradient checks")
def test_gradient_checks(note):
    rng = np.random.default_rng(11)
    worst = {"ce": 0.0, "soft": 0.0, "hard": 0.0, "distill": 0.0}
    for _ in range(20):
        model, table, sentences, soft, hard = _grad_instance(rng)
        feats = featurize(sentences, table, model.encoder.window).with_targets(soft=soft, hard=hard)
        batch = make_batch(feats)

        def rows():
            return predict_proba_features(model, feats)

        _, g = ce_loss_and_grad(model.params, batch)
        worst["ce"] = max(worst["ce"], _max_rel_error(
            model, g, lambda: ce_loss(sentences, model, table)))

        _, g = distill_loss_and_grad(model.params, batch, use_soft=True, use_hard=False)
        worst["soft"] = max(worst["soft"], _max_rel_error(
            model, g, lambda: np.mean([soft_loss(p, q) for p, q in zip(rows(), soft)])))

        _, g = distill_loss_and_grad(model.params, batch, eta=1.0, use_soft=False, use_hard=True)
        worst["hard"] = max(worst["hard"], _max_rel_error(
            model, g, lambda: np.mean([hard_loss(p, y) for p, y in zip(rows(), hard)])))

        _, g = distill_loss_and_grad(model.params, batch, eta=1.0)
        worst["distill"] = max(worst["distill"], _max_rel_error(
            model, g, lambda: distill_loss(rows(), soft, hard, eta=1.0)))
    note(" ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert max(worst.values()) < 1e-4


# ---------------------------------------------------------------------------


@pytest.mark.criterion(5, "Voting semantics")
def test_voting_semantics(note):
    data = generate_synthetic_bilingual(
        SynthConfig(dim=8, unlabeled_sentences=200, source_sentences=10, target_sentences=10), seed=5)
    table = data.target_table
    sentences = data.unlabeled
    assert len(sentences) == 200
    encoder = EncoderConfig(window=1, hidden_dim=6)
    rng = np.random.default_rng(0)
    feats = featurize(sentences, table, encoder.window)
    covered = total = 0
    for trial in range(5):
        base = init_model(LABELS, 8, encoder, seed=trial)
        models = []
        for _ in range(3):
            m = base.copy()
            for name in m.params:
                m.params[name] = m.params[name] + 0.3 * rng.standard_normal(m.params[name].shape)
            m.params["b"] = m.params["b"] + np.array([1.5] + [0.0] * 8)
            models.append(m)
        pseudo = vote_hard_labels(feats, *models)
        for s, got in zip(sentences, pseudo.labels):
            preds = [np.argmax(predict_proba(s.tokens, m, table), axis=1) for m in models]
            want = np.where((preds[0] == preds[1]) & (preds[1] == preds[2]), preds[1], -1)
            assert np.array_equal(got, want)
            covered += int((want >= 0).sum())
            total += len(want)
    note(f"tokens={total} voted={covered} exact match")
    assert 0 < covered < total


# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def benchmark_result(benchmark_config, benchmark_inputs):
    start = time.perf_counter()
    result = run_pipeline(VARIANTS, benchmark_inputs, benchmark_config.pipeline)
    return result, time.perf_counter() - start


@pytest.mark.criterion(6, "Ordinal reproduction of the ablation table")
def test_ordinal_reproduction(benchmark_config, benchmark_result, note):
    assert benchmark_config.pipeline.seeds == (1, 2, 3, 4, 5)
    result, elapsed = benchmark_result
    f1 = {v: 100 * r.mean_f1 for v, r in result.reports.items()}
    for v in VARIANTS:
        print(f"{v:18s} {f1[v]:6.2f}")
    a = f1["teacher_only"] - max(f1["model_transfer"], f1["data_transfer"])
    b = f1["full"] - f1["teacher_only"]
    c = f1["full"] - f1["data_combination"]
    note(f"(a) {a:+.2f} (b) {b:+.2f} (c) {c:+.2f} time={elapsed:.0f}s")
    assert a >= -0.5
    assert b >= -0.5
    assert c >= -0.5
    assert elapsed < 300


def test_student_beats_teacher_on_most_seeds(benchmark_config, benchmark_result):
    result, _ = benchmark_result
    seeds = benchmark_config.pipeline.seeds
    full = [result.runs[("full", s)].f1 for s in seeds]
    teach = [result.runs[("teacher_only", s)].f1 for s in seeds]
    wins = sum(f > t for f, t in zip(full, teach))
    print("per-seed full - teacher:", " ".join(f"{100 * (f - t):+.2f}" for f, t in zip(full, teach)))
    assert 100 * (np.mean(full) - np.mean(teach)) >= -0.5
    assert wins > len(seeds) / 2


@pytest.mark.criterion(7, "Ensembling sanity")
def test_ensembling(benchmark_config, benchmark_inputs, benchmark_result, note):
    single, _ = benchmark_result
    # identical members give back the single teacher's rows bit for bit
    feats = featurize(benchmark_inputs.unlabeled[:100], single.alignment.target, 1)
    teacher = single.models[("teach", 1)]
    one = soft_labels(feats, teacher)
    for m in (2, 3, 5):
        many = soft_labels(feats, [teacher] * m)
        assert all(np.array_equal(x, y) for x, y in zip(one.rows, many.rows))

    config = replace(benchmark_config.pipeline, ensemble=5)
    ens = run_pipeline(["full"], benchmark_inputs, config, alignment=single.alignment)
    f_single = 100 * single.reports["full"].mean_f1
    f_ens = 100 * ens.reports["full"].mean_f1
    note(f"bitwise ok; M=5 {f_ens:.2f} vs M=1 {f_single:.2f} ({f_ens - f_single:+.2f})")
    assert f_ens >= f_single - 0.3


# ---------------------------------------------------------------------------

# (gold, predicted) per sentence; counted by hand below
_SCORER_FIXTURE = [
    ("B-PER I-PER O", "B-PER I-PER O"),
    ("B-LOC O B-ORG", "B-LOC O B-LOC"),
    ("O O O", "O O O"),
    ("B-ORG I-ORG I-ORG", "B-ORG I-ORG O"),
    ("B-MISC", "O"),
    ("O", "B-PER"),
    ("B-PER B-PER", "B-PER I-PER"),
    ("B-PER I-PER", "B-PER B-PER"),
    ("O B-LOC I-LOC O", "O B-LOC I-LOC O"),
    ("B-ORG O B-MISC I-MISC", "B-ORG O B-MISC I-MISC"),
    ("B-LOC I-LOC", "B-ORG I-ORG"),
    ("O O B-PER", "O O B-PER"),
    ("B-MISC O O", "B-MISC O B-LOC"),
    ("O B-ORG", "O O"),
    ("B-PER I-PER I-PER O B-LOC", "B-PER I-PER I-PER O B-LOC"),
    ("O", "O"),
    ("B-LOC O", "B-LOC O"),
    ("O B-MISC I-MISC", "B-MISC I-MISC I-MISC"),
    ("B-ORG B-LOC", "B-ORG B-LOC"),
    ("B-PER O B-PER O B-PER", "B-PER O O O B-PER"),
]
# gold spans 24, predicted 23, exact matches 14; PER alone 9 / 9 / 5
_HAND = {"gold": 24, "predicted": 23, "correct": 14}


def _fixture_corpus(column):
    lines = []
    for k, pair in enumerate(_SCORER_FIXTURE):
        for j, label in enumerate(pair[column].split()):
            lines.append(f"tok{k}_{j} {label}")
        lines.append("")
    return read_conll("\n".join(lines) + "\n", LABELS)


@pytest.mark.criterion(8, "Evaluation scorer")
def test_scorer_and_round_trip(benchmark_inputs, note):
    gold = _fixture_corpus(0)
    pred = _fixture_corpus(1)
    assert len(gold) == 20
    report = evaluate(gold, [s.labels for s in pred], LABELS)
    c = report.counts
    assert (c.gold, c.predicted, c.correct) == (_HAND["gold"], _HAND["predicted"], _HAND["correct"])
    assert report.precision == 14 / 23
    assert report.recall == 14 / 24
    assert report.f1 == pytest.approx(28 / 47, abs=1e-15)
    per = report.per_type["PER"]
    assert (per.gold, per.predicted, per.correct) == (9, 9, 5)

    corpora = 0
    for seed in (0, 1, 2):
        data = generate_synthetic_bilingual(SynthConfig(unlabeled_sentences=300), seed)
        for corpus in (data.source, data.target):
            assert read_conll(write_conll(corpus, LABELS), LABELS) == corpus
            corpora += 1
        assert read_tokens(write_tokens(data.unlabeled)) == data.unlabeled
        corpora += 1
    for corpus in (benchmark_inputs.source, benchmark_inputs.evaluation):
        assert read_conll(write_conll(corpus, LABELS), LABELS) == corpus
        corpora += 1
    assert read_tokens(write_tokens(benchmark_inputs.unlabeled)) == \
        [UnlabeledSentence(s.tokens) for s in benchmark_inputs.unlabeled]
    corpora += 1
    note(f"P={report.precision:.4f} R={report.recall:.4f} F1={report.f1:.4f}; "
         f"{corpora} corpora round-trip")


# ---------------------------------------------------------------------------


def _snapshot(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.criterion(9, "Determinism")
def test_pipeline_determinism(tmp_path, note, monkeypatch):
    monkeypatch.delenv("UNITRANS_OUTPUT_DIR", raising=False)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = cli.main(["pipeline", "--config", str(BENCHMARK), "--seeds", "1..2", "--out", str(out)])
        assert code == 0
        runs.append(_snapshot(out))
    models = [k for k in runs[0] if k.endswith(".model")]
    assert "report.txt" in runs[0] and models
    assert runs[0].keys() == runs[1].keys()
    differing = [k for k in runs[0] if runs[0][k] != runs[1][k]]
    note(f"{len(runs[0])} files ({len(models)} models), {len(differing)} differ")
    assert not differing
