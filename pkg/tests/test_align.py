import math

import numpy as np
import pytest

from unitrans.align import (
    OrthogonalMapping,
    SeedDictionary,
    Translator,
    build_seed_dictionary,
    compute_penalties,
    csls_score,
    export_translation_table,
    load_mapping,
    procrustes_objective,
    save_mapping,
    solve_procrustes,
    transfer_corpus,
    translate_word,
)
from unitrans.corpus import LabeledSentence
from unitrans.embed import EmbeddingTable
from unitrans.errors import AlignmentError, ConfigError, LookupFailure, ParseError


def _rotation(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def test_identity_when_tables_agree():
    rng = np.random.default_rng(0)
    v = rng.standard_normal((10, 4))
    words = tuple(f"w{i}" for i in range(10))
    src = tgt = EmbeddingTable(words, v)
    m = solve_procrustes(build_seed_dictionary(src, tgt), src, tgt)
    np.testing.assert_allclose(m.matrix, np.eye(4), atol=1e-12)
    assert m.residual < 1e-12


def test_rotation_matches_angle_search():
    # in 2-D every rotation is one angle, so a dense sweep is an exact oracle
    rng = np.random.default_rng(1)
    s = rng.standard_normal((2, 12))
    t = _rotation(math.pi / 2) @ s + 0.3 * rng.standard_normal((2, 12))
    words = tuple(f"w{i}" for i in range(12))
    src, tgt = EmbeddingTable(words, s.T), EmbeddingTable(words, t.T)
    p = solve_procrustes(build_seed_dictionary(src, tgt), src, tgt).matrix
    angles = np.linspace(-math.pi, math.pi, 200001)
    losses = [procrustes_objective(_rotation(a), s, t) for a in angles[::100]]
    coarse = angles[::100][int(np.argmin(losses))]
    fine = np.linspace(coarse - 0.01, coarse + 0.01, 20001)
    best = fine[int(np.argmin([procrustes_objective(_rotation(a), s, t) for a in fine]))]
    np.testing.assert_allclose(p, _rotation(best), atol=1e-5)
    assert np.linalg.det(p) > 0


def test_seed_dictionary_from_identical_strings():
    src = EmbeddingTable(("a", "b", "c", "1990"), np.eye(4))
    tgt = EmbeddingTable(("c", "x", "a", "1990"), np.eye(4))
    assert build_seed_dictionary(src, tgt).pairs == (("a", "a"), ("c", "c"), ("1990", "1990"))
    assert build_seed_dictionary(src, tgt, skip_numeric=True).pairs == (("a", "a"), ("c", "c"))
    assert len(build_seed_dictionary(src, tgt, max_pairs=2)) == 2


def test_disjoint_vocabularies_fail():
    src = EmbeddingTable(("a", "b"), np.eye(2))
    tgt = EmbeddingTable(("x", "y"), np.eye(2))
    with pytest.raises(AlignmentError):
        build_seed_dictionary(src, tgt)


def test_missing_dictionary_word():
    src = EmbeddingTable(("a", "b"), np.eye(2))
    with pytest.raises(LookupFailure):
        solve_procrustes(SeedDictionary((("a", "a"), ("q", "q"))), src, src)


def test_csls_arithmetic():
    a = np.array([1.0, 0.0])
    b = np.array([0.9, math.sqrt(1 - 0.81)])
    assert csls_score(a, b, 0.5, 0.3) == pytest.approx(2 * 0.9 - 0.5 - 0.3)


def test_penalties_brute_force():
    rng = np.random.default_rng(2)
    mapped = rng.standard_normal((7, 3))
    tgt = rng.standard_normal((9, 3))
    k = 3
    r_t, r_s = compute_penalties(mapped, tgt, k)

    def cos(x, y):
        return x @ y / np.linalg.norm(x) / np.linalg.norm(y)

    for i, m in enumerate(mapped):
        assert r_t[i] == pytest.approx(np.mean(sorted((cos(m, t) for t in tgt), reverse=True)[:k]))
    for j, t in enumerate(tgt):
        assert r_s[j] == pytest.approx(np.mean(sorted((cos(t, m) for m in mapped), reverse=True)[:k]))


def test_penalty_k_range():
    with pytest.raises(ConfigError):
        compute_penalties(np.ones((3, 2)), np.ones((3, 2)), 0)
    with pytest.raises(ConfigError):
        compute_penalties(np.ones((3, 2)), np.ones((2, 2)), 3)


def _tables():
    src = EmbeddingTable(("house", "dog", "rare"), [[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]])
    tgt = EmbeddingTable(("casa", "perro", "gato"), [[1.0, 0.05], [0.05, 1.0], [0.0, 1.0]])
    return src, tgt, OrthogonalMapping(np.eye(2))


def test_oov_passes_through():
    src, tgt, m = _tables()
    tr = translate_word("Zürich", m, src, tgt, k=1)
    assert tr.word == "Zürich" and tr.passthrough


def test_ties_go_to_lower_target_index():
    src = EmbeddingTable(("a",), [[1.0, 0.0]])
    tgt = EmbeddingTable(("first", "second", "far"), [[1.0, 1.0], [1.0, 1.0], [-1.0, 0.0]])
    assert translate_word("a", OrthogonalMapping(np.eye(2)), src, tgt, k=1).word == "first"


def test_transfer_copies_labels_and_passes_oov():
    src, tgt, m = _tables()
    tr = Translator(m, src, tgt, k=1)
    corpus = [LabeledSentence(("house", "Bob", "dog"), (0, 7, 0))]
    (out,) = transfer_corpus(corpus, tr)
    assert out.tokens == ("casa", "Bob", tr.translate("dog").word)
    assert out.labels == (0, 7, 0)


def test_translation_table_export():
    src, tgt, m = _tables()
    tr = Translator(m, src, tgt, k=1)
    lines = export_translation_table(tr.table(["house", "unknown"])).splitlines()
    assert len(lines) == 1 and lines[0].startswith("house\tcasa\t")


def test_mapping_round_trip_is_exact():
    q, _ = np.linalg.qr(np.random.default_rng(3).standard_normal((5, 5)))
    back = load_mapping(save_mapping(OrthogonalMapping(q)))
    np.testing.assert_array_equal(back.matrix, q)
    assert back.orthogonality_defect < 1e-12


def test_mapping_parse_errors():
    with pytest.raises(ParseError):
        load_mapping("2\n1 0\n")
    with pytest.raises(ParseError):
        load_mapping("2\n1 0\n0 x\n")
