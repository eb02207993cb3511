import copy
import math
import random

import numpy as np
import pytest

from agentic_qpp.errors import PredictorInputError, PredictorUndefined, QppWarning
from agentic_qpp.qpp import (
    PredictorConfig,
    a_pair_ratio,
    dense_qpp,
    estimate_all,
    max_score,
    nqc,
    zscore,
)
from agentic_qpp.types import EmbeddingStore, RankedList, RetrieverKind

from oracles import oracle_a_pair_ratio, oracle_dense_qpp, oracle_nqc

EPS = 1e-9


def ranked_from(scores, query="q"):
    return RankedList.from_scores(query, [(f"d{i:03d}", s) for i, s in enumerate(scores)])


def unit_vectors(rng, count, dim):
    table = {}
    for i in range(count):
        vec = [rng.gauss(0, 1) for _ in range(dim)]
        norm = math.sqrt(sum(x * x for x in vec)) or 1.0
        table[f"d{i:03d}"] = [x / norm for x in vec]
    return table


class TestNqc:
    def test_zero_dispersion(self):
        assert nqc(ranked_from([2.0, 2.0, 2.0]), 10) == 0.0

    def test_population_std(self):
        assert nqc(ranked_from([3.0, 2.0, 1.0]), 10) == pytest.approx(
            0.816496580927726, abs=1e-12
        )

    def test_depth_limits_prefix(self):
        assert nqc(ranked_from([5.0, 1.0, 0.0]), 2) == pytest.approx(2.0, abs=1e-12)

    def test_empty_list_is_undefined(self):
        with pytest.raises(PredictorUndefined):
            nqc(RankedList("q"), 10)

    def test_translation_invariance_and_scale_equivariance(self):
        rng = random.Random(11)
        for _ in range(50):
            scores = sorted((rng.uniform(0, 10) for _ in range(rng.randint(1, 30))), reverse=True)
            depth = rng.randint(1, 40)
            base = nqc(ranked_from(scores), depth)
            shift = rng.uniform(-5, 5)
            scale = rng.uniform(0.1, 4.0)
            shifted = nqc(ranked_from([s + shift for s in scores]), depth)
            scaled = nqc(ranked_from([s * scale for s in scores]), depth)
            assert shifted == pytest.approx(base, abs=1e-9)
            assert scaled == pytest.approx(base * scale, abs=1e-9)


class TestMaxScore:
    def test_reads_rank_one(self):
        assert max_score(ranked_from([0.9, 0.5, 0.1])) == 0.9

    def test_singleton(self):
        assert max_score(ranked_from([5.0])) == 5.0

    def test_empty_list_is_undefined(self):
        with pytest.raises(PredictorUndefined):
            max_score(RankedList("q"))

    def test_equals_max_over_scores(self):
        rng = random.Random(5)
        for _ in range(20):
            scores = sorted((rng.uniform(-3, 3) for _ in range(rng.randint(1, 20))), reverse=True)
            lst = ranked_from(scores)
            assert max_score(lst) == max(lst.scores)


class TestAPairRatio:
    def test_identical_embeddings_give_one(self):
        cfg = PredictorConfig(apr_head=2, apr_tail=2, apr_depth=10)
        table = {f"d{i:03d}": [0.5, 0.5] for i in range(6)}
        store = EmbeddingStore(2, table)
        lst = ranked_from([6.0, 5.0, 4.0, 3.0, 2.0, 1.0])
        assert a_pair_ratio(lst, store, cfg) == pytest.approx(1.0)

    def test_orthogonal_tail_clamps_to_epsilon(self):
        cfg = PredictorConfig(apr_head=2, apr_tail=2, apr_depth=4)
        table = {
            "d000": [1.0, 0.0, 0.0],
            "d001": [1.0, 0.0, 0.0],
            "d002": [0.0, 1.0, 0.0],
            "d003": [0.0, 0.0, 1.0],
        }
        store = EmbeddingStore(3, table)
        lst = ranked_from([4.0, 3.0, 2.0, 1.0])
        with pytest.warns(QppWarning):
            value = a_pair_ratio(lst, store, cfg)
        assert value == pytest.approx(1.0 / EPS)

    def test_matches_pair_enumeration_oracle(self):
        rng = random.Random(97)
        cfg = PredictorConfig(apr_head=5, apr_tail=5, apr_depth=10)
        table = unit_vectors(rng, 10, 4)
        store = EmbeddingStore(4, table)
        lst = ranked_from(sorted((rng.random() for _ in range(10)), reverse=True))
        expected = oracle_a_pair_ratio(lst.docnos, table, 5, 5, 10, EPS)
        assert a_pair_ratio(lst, store, cfg) == pytest.approx(expected, abs=1e-9)

    def test_short_list_uses_half_split_and_flags_degraded(self):
        cfg = PredictorConfig()
        table = unit_vectors(random.Random(3), 4, 3)
        store = EmbeddingStore(3, table)
        lst = ranked_from([4.0, 3.0, 2.0, 1.0])
        with pytest.warns(QppWarning, match="degraded"):
            value = a_pair_ratio(lst, store, cfg)
        expected = oracle_a_pair_ratio(lst.docnos, table, 5, 5, 50, EPS)
        assert value == pytest.approx(expected, abs=1e-9)

    def test_missing_embedding_names_docno(self):
        cfg = PredictorConfig(apr_head=1, apr_tail=1, apr_depth=2)
        store = EmbeddingStore(2, {"d000": [1.0, 0.0]})
        lst = ranked_from([2.0, 1.0])
        with pytest.raises(PredictorInputError, match="d001"):
            a_pair_ratio(lst, store, cfg)

    def test_single_document_is_undefined(self):
        store = EmbeddingStore(2, {"d000": [1.0, 0.0]})
        with pytest.raises(PredictorUndefined):
            a_pair_ratio(ranked_from([1.0]), store, PredictorConfig())

    def test_rotation_invariance(self):
        rng = random.Random(29)
        cfg = PredictorConfig(apr_head=3, apr_tail=3, apr_depth=8)
        for _ in range(10):
            dim = rng.randint(2, 4)
            # positive-orthant vectors keep coherences positive, away from the clamp
            table = {}
            for i in range(8):
                vec = [abs(rng.gauss(0, 1)) + 0.1 for _ in range(dim)]
                norm = math.sqrt(sum(x * x for x in vec))
                table[f"d{i:03d}"] = [x / norm for x in vec]
            lst = ranked_from(sorted((rng.random() for _ in range(8)), reverse=True))
            base = a_pair_ratio(lst, EmbeddingStore(dim, table), cfg)
            gaussian = np.array(
                [[rng.gauss(0, 1) for _ in range(dim)] for _ in range(dim)]
            )
            rotation, _ = np.linalg.qr(gaussian)
            rotated = {d: (rotation @ np.asarray(v)).tolist() for d, v in table.items()}
            value = a_pair_ratio(lst, EmbeddingStore(dim, rotated), cfg)
            assert value == pytest.approx(base, abs=1e-9)


class TestDenseQpp:
    def test_all_points_identical(self):
        cfg = PredictorConfig()
        store = EmbeddingStore(2, {"d000": [0.3, 0.7], "d001": [0.3, 0.7]})
        lst = ranked_from([2.0, 1.0])
        value = dense_qpp([0.3, 0.7], lst, store, cfg)
        assert value == pytest.approx(20.72326583694641, abs=1e-9)

    def test_hand_evaluated_ranges(self):
        cfg = PredictorConfig()
        store = EmbeddingStore(2, {"d000": [1.0, 0.0], "d001": [0.0, 0.5]})
        lst = ranked_from([2.0, 1.0])
        value = dense_qpp([0.0, 0.0], lst, store, cfg)
        assert value == pytest.approx(-math.log(1 + EPS), abs=1e-12)

    def test_shrinking_offsets_increases_output(self):
        cfg = PredictorConfig()
        query = [0.2, -0.4, 0.1]
        offsets = {"d000": [0.6, 0.2, -0.3], "d001": [-0.2, 0.5, 0.4], "d002": [0.1, -0.6, 0.2]}
        far = {d: [q + o for q, o in zip(query, off)] for d, off in offsets.items()}
        near = {d: [q + o / 2 for q, o in zip(query, off)] for d, off in offsets.items()}
        lst = ranked_from([3.0, 2.0, 1.0])
        value_far = dense_qpp(query, lst, EmbeddingStore(3, far), cfg)
        value_near = dense_qpp(query, lst, EmbeddingStore(3, near), cfg)
        assert value_near > value_far

    def test_widening_the_widest_dimension_strictly_decreases(self):
        cfg = PredictorConfig()
        table = {"d000": [1.0, 0.2], "d001": [0.4, 0.1]}
        lst = ranked_from([2.0, 1.0])
        base = dense_qpp([0.0, 0.0], lst, EmbeddingStore(2, table), cfg)
        table_wider = {"d000": [1.5, 0.2], "d001": [0.4, 0.1]}
        wider = dense_qpp([0.0, 0.0], lst, EmbeddingStore(2, table_wider), cfg)
        assert wider < base

    def test_dimension_mismatch_is_input_error(self):
        store = EmbeddingStore(2, {"d000": [1.0, 0.0]})
        with pytest.raises(PredictorInputError):
            dense_qpp([1.0, 0.0, 0.0], ranked_from([1.0]), store, PredictorConfig())

    def test_matches_coordinate_scan_oracle(self):
        rng = random.Random(61)
        for _ in range(20):
            dim = rng.randint(1, 8)
            count = rng.randint(1, 12)
            table = {
                f"d{i:03d}": [rng.uniform(-2, 2) for _ in range(dim)] for i in range(count)
            }
            store = EmbeddingStore(dim, table)
            lst = ranked_from(sorted((rng.random() for _ in range(count)), reverse=True))
            query = [rng.uniform(-2, 2) for _ in range(dim)]
            k = rng.randint(1, 5)
            cfg = PredictorConfig(dense_qpp_k=k)
            expected = oracle_dense_qpp(query, lst.docnos, table, k, EPS)
            assert dense_qpp(query, lst, store, cfg) == pytest.approx(expected, abs=1e-9)


class TestZscore:
    def test_symmetric_three_values(self):
        assert zscore([1.0, 2.0, 3.0]) == pytest.approx(
            [-1.224744871391589, 0.0, 1.224744871391589], abs=1e-12
        )

    def test_zero_variance(self):
        assert zscore([5.0, 5.0, 5.0]) == [0.0, 0.0, 0.0]

    def test_singleton(self):
        assert zscore([7.0]) == [0.0]


class TestEstimateAll:
    def store_and_list(self):
        rng = random.Random(19)
        table = unit_vectors(rng, 6, 3)
        store = EmbeddingStore(3, table)
        lst = ranked_from(sorted((rng.random() for _ in range(6)), reverse=True))
        return store, lst

    def test_lexical_kind_gets_nqc_only(self):
        _, lst = self.store_and_list()
        estimates = estimate_all(lst, PredictorConfig(), RetrieverKind.LEXICAL)
        assert set(estimates) == {"nqc"}

    def test_dense_kind_gets_all_predictors(self):
        store, lst = self.store_and_list()
        cfg = PredictorConfig(apr_head=2, apr_tail=2, apr_depth=6)
        estimates = estimate_all(
            lst, cfg, RetrieverKind.DENSE, query_vec=[1.0, 0.0, 0.0], store=store
        )
        assert set(estimates) == {"nqc", "max_score", "dense_qpp", "a_pair_ratio"}

    def test_reranked_kind_without_store(self):
        _, lst = self.store_and_list()
        estimates = estimate_all(lst, PredictorConfig(), RetrieverKind.RERANKED)
        assert set(estimates) == {"nqc", "max_score"}

    def test_failed_predictor_is_recorded_and_others_survive(self):
        store = EmbeddingStore(3, {"d000": [1.0, 0.0, 0.0]})
        lst = ranked_from([2.0, 1.0])
        errors = {}
        cfg = PredictorConfig(apr_head=1, apr_tail=1, apr_depth=2)
        with pytest.warns(QppWarning):
            estimates = estimate_all(
                lst,
                cfg,
                RetrieverKind.DENSE,
                query_vec=[1.0, 0.0, 0.0],
                store=store,
                errors=errors,
            )
        assert "a_pair_ratio" in errors and "d001" in errors["a_pair_ratio"]
        assert "a_pair_ratio" not in estimates
        assert {"nqc", "max_score"} <= set(estimates)

    def test_empty_list_is_undefined(self):
        with pytest.raises(PredictorUndefined):
            estimate_all(RankedList("q"), PredictorConfig(), RetrieverKind.LEXICAL)

    def test_deterministic_on_deep_copies(self):
        store, lst = self.store_and_list()
        cfg = PredictorConfig(apr_head=2, apr_tail=2, apr_depth=6)
        first = estimate_all(
            lst, cfg, RetrieverKind.DENSE, query_vec=[0.5, 0.5, 0.0], store=store
        )
        second = estimate_all(
            copy.deepcopy(lst),
            cfg,
            RetrieverKind.DENSE,
            query_vec=[0.5, 0.5, 0.0],
            store=store,
        )
        assert first == second


class TestPredictorConfig:
    def test_head_tail_must_fit_depth(self):
        with pytest.raises(ValueError):
            PredictorConfig(apr_head=30, apr_tail=30, apr_depth=50)

    def test_depths_must_be_positive(self):
        with pytest.raises(ValueError):
            PredictorConfig(nqc_depth=0)
