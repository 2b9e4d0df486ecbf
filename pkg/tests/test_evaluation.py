import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from cogan.data import NIR, TEST, TRAIN, VIS, DatasetManifest, ImageBank, ImageRecord, synthetic_manifest
from cogan.evaluation import (
    ScoreSet,
    VerificationReport,
    compute_roc_metrics,
    emit_report,
    enumerate_test_pairs,
    evaluate_encoders,
    expected_pair_counts,
    load_report,
    protocol_hash,
    score_pairs,
)
from cogan.models import ModelConfig, encode, instantiate_models

# -- protocol ---------------------------------------------------------------


@pytest.mark.parametrize("classes,samples,genuine,imposter", [(209, 15, 21945, 9781200), (120, 8, 3360, 913920)])
def test_reference_protocol_counts(classes, samples, genuine, imposter):
    m = synthetic_manifest(classes, samples)
    assert expected_pair_counts(m) == (genuine, imposter)
    assert enumerate_test_pairs(m).counts == (genuine, imposter)


def test_two_by_two_matches_brute_force():
    m = synthetic_manifest(2, 2)
    keys = [(r.class_id, r.spectrum, r.sample_index) for r in m.records]
    assert oracles.brute_force_pairs(keys) == (2, 8)
    pairs = enumerate_test_pairs(m)
    assert pairs.counts == (2, 8)
    for v, n in pairs.genuine:
        assert m.records[v].class_id == m.records[n].class_id
        assert m.records[v].sample_index < m.records[n].sample_index


def _manifest_from(spec):
    """spec: per class, (vis sample indices, nir sample indices)."""
    records = []
    for c, (vis, nir) in enumerate(spec):
        for spectrum, idxs in ((VIS, vis), (NIR, nir)):
            for i in idxs:
                records.append(ImageRecord(f"c{c}/{spectrum}/{i}.png", f"c{c}", spectrum, i, TEST, f"c{c}", "L"))
    return DatasetManifest(records, ".")


_index_sets = st.sets(st.integers(0, 7), min_size=1, max_size=5).map(sorted)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.tuples(_index_sets, _index_sets), min_size=1, max_size=6))
def test_enumeration_matches_brute_force(spec):
    m = _manifest_from(spec)
    keys = [(r.class_id, r.spectrum, r.sample_index) for r in m.records]
    pairs = enumerate_test_pairs(m)
    assert pairs.counts == oracles.brute_force_pairs(keys)

    for v, n in pairs.genuine:
        rv, rn = m.records[v], m.records[n]
        assert (rv.spectrum, rn.spectrum) == (VIS, NIR)
        assert rv.class_id == rn.class_id and rv.sample_index < rn.sample_index
    for v, n in pairs.imposter:
        assert m.records[v].class_id != m.records[n].class_id
    all_pairs = [tuple(p) for p in np.concatenate([pairs.genuine, pairs.imposter])]
    assert len(set(all_pairs)) == len(all_pairs)


def test_uniform_classes_closed_form():
    for c in range(1, 7):
        for n in range(1, 6):
            g, i = enumerate_test_pairs(synthetic_manifest(c, n)).counts
            assert g == c * math.comb(n, 2)
            assert i == (c * n) ** 2 - c * n * n


def test_missing_spectrum_in_test_split():
    m = _manifest_from([([0, 1], [0, 1]), ([0], [])])
    with pytest.raises(ValueError, match="c1"):
        enumerate_test_pairs(m)


def test_empty_test_split():
    m = synthetic_manifest(2, 2, split=TRAIN)
    with pytest.raises(ValueError, match="empty"):
        enumerate_test_pairs(m)


def test_protocol_hash_tracks_content():
    a = synthetic_manifest(3, 3)
    assert protocol_hash(a) == protocol_hash(synthetic_manifest(3, 3))
    assert protocol_hash(a) != protocol_hash(synthetic_manifest(3, 4))


# -- metrics ----------------------------------------------------------------


def test_perfect_separation():
    r = compute_roc_metrics(ScoreSet.from_lists([0.1, 0.2], [0.3, 0.4]))
    assert (r.auc, r.eer) == (1.0, 0.0)
    assert r.frr_at_far_1pct == 0.0 and r.frr_at_far_10pct == 0.0


def test_fully_inverted_scores():
    r = compute_roc_metrics(ScoreSet.from_lists([0.3, 0.4], [0.1, 0.2]))
    assert (r.auc, r.eer) == (0.0, 1.0)


def test_all_tied():
    r = compute_roc_metrics(ScoreSet.from_lists([0.7] * 3, [0.7] * 5))
    assert r.auc == 0.5
    assert r.eer == 0.5


def test_worked_example_against_oracles():
    g, i = [0.1, 0.35], [0.3, 0.4]
    r = compute_roc_metrics(ScoreSet.from_lists(g, i))
    assert r.auc == pytest.approx(0.75, abs=1e-12)
    assert r.auc == pytest.approx(oracles.sweep_auc(g, i), abs=1e-12)
    assert r.auc == pytest.approx(oracles.mann_whitney_auc(g, i), abs=1e-12)
    assert r.eer == pytest.approx(oracles.sweep_eer(g, i), abs=1e-12)
    assert r.eer == pytest.approx(0.5, abs=1e-12)


def test_single_class_scoreset_rejected():
    with pytest.raises(ValueError):
        compute_roc_metrics(ScoreSet.from_lists([0.1, 0.2], []))
    with pytest.raises(ValueError):
        compute_roc_metrics(ScoreSet.from_lists([], [0.1]))


_scores = st.lists(st.integers(0, 12).map(lambda k: k / 8), min_size=1, max_size=25)


@settings(max_examples=200, deadline=None)
@given(_scores, _scores)
def test_metrics_match_sweep_oracle(g, i):
    r = compute_roc_metrics(ScoreSet.from_lists(g, i))
    far, frr = oracles.sweep_roc(g, i)
    assert [p[0] for p in r.roc] == pytest.approx(far, abs=1e-12)
    assert [p[1] for p in r.roc] == pytest.approx(frr, abs=1e-12)
    assert r.auc == pytest.approx(oracles.sweep_auc(g, i), abs=1e-9)
    assert r.auc == pytest.approx(oracles.mann_whitney_auc(g, i), abs=1e-9)
    assert r.eer == pytest.approx(oracles.sweep_eer(g, i), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(_scores, _scores)
def test_report_invariants(g, i):
    r = compute_roc_metrics(ScoreSet.from_lists(g, i))
    far = np.array([p[0] for p in r.roc])
    frr = np.array([p[1] for p in r.roc])
    assert np.all(np.diff(far) >= 0) and np.all(np.diff(frr) <= 0)
    for v in (r.auc, r.eer, r.frr_at_far_1pct, r.frr_at_far_10pct):
        assert 0.0 <= v <= 1.0
    assert r.counts == (len(g), len(i))


@settings(max_examples=60, deadline=None)
@given(_scores, _scores, st.randoms(use_true_random=False))
def test_metrics_invariant_to_order_and_monotone_maps(g, i, rnd):
    base = compute_roc_metrics(ScoreSet.from_lists(g, i))
    d = np.array(g + i)
    y = np.array([0] * len(g) + [1] * len(i))
    perm = list(range(len(d)))
    rnd.shuffle(perm)
    shuffled = compute_roc_metrics(ScoreSet(d[perm], y[perm]))
    mapped = compute_roc_metrics(ScoreSet(np.exp(3 * d) + 2, y))
    for other in (shuffled, mapped):
        assert other.auc == pytest.approx(base.auc, abs=1e-12)
        assert other.eer == pytest.approx(base.eer, abs=1e-12)


def test_frr_at_far_interpolates():
    # imposters at 1..10, genuine at 0.5 and 5.5: FAR steps by 0.1
    r = compute_roc_metrics(ScoreSet.from_lists([0.5, 5.5], list(range(1, 11))))
    assert r.frr_at_far_10pct == pytest.approx(0.5)
    assert r.frr_at_far_1pct == pytest.approx(0.5)
    r = compute_roc_metrics(ScoreSet.from_lists([1.5, 2.5], list(range(1, 11))))
    # two ROC points share FAR 0.1 (thresholds 1 and 1.5); the later, lower FRR wins
    assert r.frr_at_far_10pct == pytest.approx(0.5)
    assert r.frr_at_far_1pct == pytest.approx(1.0)


# -- reports ----------------------------------------------------------------


def test_report_roundtrip(tmp_path):
    scores = ScoreSet.from_lists([0.1, 0.35, 0.2], [0.3, 0.4, 0.9, 0.35])
    r = compute_roc_metrics(scores, config={"seed": 1}, protocol="abc")
    paths = emit_report(r, tmp_path / "out", scores)
    assert paths["roc"].stat().st_size > 0
    with open(paths["roc"], "rb") as fh:
        assert fh.read(8) == b"\x89PNG\r\n\x1a\n"
    doc = json.loads(paths["report"].read_text())
    assert doc["roc"][0][2] is None
    assert load_report(paths["report"]) == r
    lines = paths["scores"].read_text().splitlines()
    assert lines[0] == "vis_record,nir_record,distance,label" and len(lines) == 8


def test_report_schema_version_checked():
    d = compute_roc_metrics(ScoreSet.from_lists([0.1], [0.2])).to_json()
    d["schema_version"] = 99
    with pytest.raises(ValueError):
        VerificationReport.from_json(d)


# -- scoring ----------------------------------------------------------------


@pytest.fixture(scope="module")
def encoders():
    bundle = instantiate_models(ModelConfig(embedding_dim=16, weight_seed=4))
    return bundle.generator_V.encoder, bundle.generator_I.encoder


def test_dual_path_scoring(small_dataset, encoders):
    _, m = small_dataset
    pairs = enumerate_test_pairs(m)
    cached = score_pairs(encoders, pairs, m, batch_size=1)
    batched = score_pairs(encoders, pairs, m)
    bank = ImageBank(m, np.arange(len(m.records)), m.profile)
    enc_v, enc_i = encoders
    direct = []
    for v, n in np.concatenate([pairs.genuine, pairs.imposter]):
        zv = encode(enc_v, bank.get([v]))[0].double()
        zi = encode(enc_i, bank.get([n]))[0].double()
        direct.append(torch.linalg.vector_norm(zv - zi).item())
    np.testing.assert_allclose(cached.distances, direct, rtol=1e-12, atol=1e-12)
    # batched convolutions reorder float32 sums
    np.testing.assert_allclose(batched.distances, direct, rtol=1e-5)
    assert cached.labels.tolist() == [0] * len(pairs.genuine) + [1] * len(pairs.imposter)


def test_identical_embeddings_give_zero_distance(small_dataset):
    _, m = small_dataset
    shared = instantiate_models(ModelConfig(embedding_dim=8)).generator_V.encoder
    pairs = enumerate_test_pairs(m)
    # same encoder on both sides and a pair of one image with itself
    pairs.genuine = np.array([[pairs.genuine[0, 0], pairs.genuine[0, 0]]])
    scores = score_pairs((shared, shared), pairs, m)
    assert scores.distances[0] == 0.0


def test_missing_image_reports_affected_pairs(small_dataset, encoders, tmp_path):
    root, m = small_dataset
    copy = DatasetManifest(m.records, root, m.channel_stats, m.profile)
    pairs = enumerate_test_pairs(copy)
    v = int(pairs.genuine[0, 0])
    copy.records = list(m.records)
    r = copy.records[v]
    copy.records[v] = ImageRecord("nowhere/missing.png", r.class_id, r.spectrum, r.sample_index, r.split, r.subject, r.eye)
    with pytest.raises(FileNotFoundError, match=r"1 image files missing.*missing\.png.*pairs affected"):
        score_pairs(encoders, pairs, copy)


def test_evaluate_encoders_end_to_end(small_dataset, encoders):
    _, m = small_dataset
    report, scores, pairs = evaluate_encoders(encoders, m, config={"note": "untrained"})
    assert report.counts == pairs.counts == expected_pair_counts(m)
    assert len(scores.distances) == sum(pairs.counts)
    assert report.protocol_hash == pairs.protocol_hash
    assert 0.0 <= report.auc <= 1.0
