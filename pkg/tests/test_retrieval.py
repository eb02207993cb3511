import random

import numpy as np
import pytest

from agentic_qpp.errors import (
    ConfigurationError,
    IngestError,
    PipelineError,
    RerankError,
    RetrievalWarning,
)
from agentic_qpp.retrieval import (
    CosineScorer,
    Cutoff,
    DenseSearch,
    LexicalSearch,
    LookupEmbedder,
    Pipeline,
    Reranker,
    TableScorer,
    build_lexical_index,
    embed_query,
    preset_stages,
    read_embeddings_tsv,
    rerank,
    run_pipeline,
    search_dense,
    search_lexical,
    tokenize,
)
from agentic_qpp.types import Document, EmbeddingStore, RankedList, RetrieverKind, validate_ranked_list

from oracles import oracle_bm25_score, oracle_dense_topk

# Hand-evaluated BM25 values for the cat/dog corpus (idf = ln 1.6, k1=1.2, b=0.75).
BM25_CAT_D1 = 0.6118390439885317
BM25_CAT_D2 = 0.4344571362775708


class TestTokenize:
    def test_splits_on_non_alphanumeric(self):
        assert tokenize("Queen's heir, 2018!") == ["queen", "s", "heir", "2018"]

    def test_empty_input(self):
        assert tokenize("") == []

    def test_lowercases(self):
        assert tokenize("A a A") == ["a", "a", "a"]

    def test_underscore_splits(self):
        assert tokenize("foo_bar") == ["foo", "bar"]


class TestBuildIndex:
    def test_term_frequencies(self):
        docs = [
            Document("d1", "", "throne and throne"),
            Document("d2", "", "crown"),
            Document("d3", "", "queen"),
        ]
        index = build_lexical_index(docs)
        assert dict(index.postings["throne"]) == {"d1": 2}

    def test_empty_stream(self):
        index = build_lexical_index([])
        assert index.doc_count == 0
        assert len(search_lexical(index, "anything", 5)) == 0

    def test_average_length(self):
        docs = [
            Document("a", "", "one two"),
            Document("b", "", "one two three four"),
            Document("c", "", "one two three four five six"),
        ]
        assert build_lexical_index(docs).avg_doc_length == 4.0

    def test_title_is_indexed(self):
        index = build_lexical_index([Document("d", "Heir Apparent", "succession")])
        assert "heir" in index.postings
        assert index.doc_lengths["d"] == 3

    def test_duplicate_docno_rejected(self):
        docs = [Document("dup", "", "x"), Document("dup", "", "y")]
        with pytest.raises(IngestError, match="dup"):
            build_lexical_index(docs)


class TestSearchLexical:
    def test_hand_evaluated_scores(self, cat_dog_index):
        result = search_lexical(cat_dog_index, "cat", 2)
        assert result.docnos == ("d1", "d2")
        assert result.entries[0].score == pytest.approx(BM25_CAT_D1, abs=1e-12)
        assert result.entries[1].score == pytest.approx(BM25_CAT_D2, abs=1e-12)
        assert result.entries[0].score > result.entries[1].score

    def test_matches_direct_formula_oracle(self, cat_dog_index):
        result = search_lexical(cat_dog_index, "cat dog", 3)
        df = {t: len(p) for t, p in cat_dog_index.postings.items()}
        for entry in result.entries:
            doc_tf = {
                t: dict(p).get(entry.docno, 0) for t, p in cat_dog_index.postings.items()
            }
            expected = oracle_bm25_score(
                ["cat", "dog"],
                doc_tf,
                cat_dog_index.doc_lengths[entry.docno],
                cat_dog_index.doc_count,
                cat_dog_index.avg_doc_length,
                df,
            )
            assert entry.score == pytest.approx(expected, abs=1e-12)

    def test_no_matching_terms(self, cat_dog_index):
        assert len(search_lexical(cat_dog_index, "zebra", 5)) == 0

    def test_k_larger_than_corpus(self, cat_dog_index):
        result = search_lexical(cat_dog_index, "cat dog", 100)
        assert len(result) == 3
        assert validate_ranked_list(result) is None

    def test_k_below_one_rejected(self, cat_dog_index):
        with pytest.raises(ValueError):
            search_lexical(cat_dog_index, "cat", 0)

    def test_prefix_consistency(self, cat_dog_index):
        full = search_lexical(cat_dog_index, "cat dog", 3)
        for k in (1, 2, 3):
            assert search_lexical(cat_dog_index, "cat dog", k).entries == full.entries[:k]

    def test_random_corpora_satisfy_invariants(self):
        rng = random.Random(73)
        vocabulary = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]
        for _ in range(25):
            docs = [
                Document(
                    f"d{i}",
                    "",
                    " ".join(rng.choices(vocabulary, k=rng.randint(1, 12))),
                )
                for i in range(rng.randint(1, 10))
            ]
            index = build_lexical_index(docs)
            query = " ".join(rng.choices(vocabulary, k=rng.randint(1, 3)))
            result = search_lexical(index, query, rng.randint(1, 12))
            assert validate_ranked_list(result) is None


class TestEmbedders:
    def test_lookup_embedder_returns_table_vector(self):
        embedder = LookupEmbedder({"q1": [1.0, 0.0]})
        assert embed_query(embedder, "q1").tolist() == [1.0, 0.0]

    def test_lookup_embedder_unknown_text(self):
        embedder = LookupEmbedder({"q1": [1.0, 0.0]})
        with pytest.raises(ConfigurationError):
            embed_query(embedder, "unseen")

    def test_dimension_mismatch_is_configuration_error(self):
        class BadEmbedder:
            dim = 3

            def embed(self, text):
                return np.array([1.0, 2.0])

        with pytest.raises(ConfigurationError):
            embed_query(BadEmbedder(), "q")


class TestSearchDense:
    def test_orthonormal_geometry(self):
        store = EmbeddingStore(2, {"d1": [1.0, 0.0], "d2": [0.0, 1.0]})
        result = search_dense(store, [1.0, 0.0], 2)
        assert result.docnos == ("d1", "d2")
        assert result.entries[0].score == pytest.approx(1.0)
        assert result.entries[1].score == pytest.approx(0.0)

    def test_self_similarity(self):
        store = EmbeddingStore(2, {"d": [0.6, 0.8]})
        result = search_dense(store, [0.6, 0.8], 1)
        assert result.entries[0].score == pytest.approx(1.0)

    def test_matches_brute_force_oracle(self):
        rng = random.Random(41)
        for _ in range(30):
            dim = rng.randint(1, 8)
            count = rng.randint(1, 64)
            table = {
                f"d{i:03d}": [rng.uniform(-1, 1) for _ in range(dim)] for i in range(count)
            }
            # duplicated vectors force cosine ties, exercising docno tie-break
            if count >= 2:
                table["d000"] = list(table[f"d{count - 1:03d}"])
            store = EmbeddingStore(dim, table)
            query = [rng.uniform(-1, 1) for _ in range(dim)]
            k = rng.randint(1, count)
            got = search_dense(store, query, k)
            expected = oracle_dense_topk(query, table, k)
            assert got.docnos == tuple(d for d, _ in expected)
            for entry, (_, score) in zip(got.entries, expected):
                assert entry.score == pytest.approx(score, abs=1e-12)

    def test_zero_norm_document_ranks_last_with_warning(self):
        store = EmbeddingStore(2, {"zero": [0.0, 0.0], "unit": [1.0, 0.0]})
        with pytest.warns(RetrievalWarning):
            result = search_dense(store, [1.0, 0.0], 2)
        assert result.docnos == ("unit", "zero")
        assert result.entries[1].score == float("-inf")

    def test_dimension_mismatch_rejected(self):
        store = EmbeddingStore(2, {"d": [1.0, 0.0]})
        with pytest.raises(ValueError):
            search_dense(store, [1.0, 0.0, 0.0], 1)


class TestRerank:
    def docs(self):
        return {f"d{i}": Document(f"d{i}", "", f"text {i}") for i in range(1, 6)}

    def test_table_scorer_reverses_list(self):
        lst = RankedList.from_scores("q", [("d1", 3.0), ("d2", 2.0), ("d3", 1.0)])
        out = rerank(TableScorer({"d1": 1.0, "d2": 2.0, "d3": 3.0}), lst, 3, self.docs())
        assert out.docnos == ("d3", "d2", "d1")
        assert [e.rank for e in out.entries] == [1, 2, 3]

    def test_depth_truncates(self):
        lst = RankedList.from_scores("q", [(f"d{i}", 6.0 - i) for i in range(1, 6)])
        out = rerank(TableScorer({f"d{i}": float(i) for i in range(1, 6)}), lst, 2, self.docs())
        assert len(out) == 2

    def test_constant_scorer_orders_by_docno(self):
        lst = RankedList.from_scores("q", [("d1", 3.0), ("d2", 2.0), ("d3", 1.0)])
        out = rerank(TableScorer({"d1": 7.0, "d2": 7.0, "d3": 7.0}), lst, 3, self.docs())
        assert out.docnos == ("d1", "d2", "d3")

    def test_original_score_scorer_is_identity(self):
        lst = RankedList.from_scores("q", [("d2", 9.0), ("d1", 5.0), ("d3", 2.0)])

        class OriginalScore:
            def score_all(self, query_text, docs):
                by_docno = {e.docno: e.score for e in lst.entries}
                return [by_docno[d.docno] for d in docs]

        out = rerank(OriginalScore(), lst, len(lst), self.docs())
        assert out.docnos == lst.docnos

    def test_missing_score_fails_whole_list(self):
        lst = RankedList.from_scores("q", [("d1", 2.0), ("d2", 1.0)])
        with pytest.raises(RerankError):
            rerank(TableScorer({"d1": 1.0}), lst, 2, self.docs())

    def test_cosine_scorer(self):
        store = EmbeddingStore(2, {"d1": [1.0, 0.0], "d2": [0.0, 1.0]})
        embedder = LookupEmbedder({"q": [1.0, 0.0]})
        lst = RankedList.from_scores("q", [("d2", 2.0), ("d1", 1.0)])
        out = rerank(CosineScorer(store, embedder), lst, 2, self.docs())
        assert out.docnos == ("d1", "d2")


class TestPipeline:
    def test_single_lexical_stage_equals_search(self, cat_dog_index):
        pipeline = Pipeline(
            stages=(LexicalSearch(depth=2),), context_k=1, index=cat_dog_index
        )
        assert run_pipeline(pipeline, "cat") == search_lexical(cat_dog_index, "cat", 2)

    def test_cutoff_limits_length(self, succession_index):
        pipeline = Pipeline(
            stages=(LexicalSearch(depth=10), Cutoff(3)),
            context_k=3,
            index=succession_index,
        )
        assert len(run_pipeline(pipeline, "the throne")) <= 3

    def test_lexical_rerank_composition_matches_stagewise_oracle(self, succession_index):
        table = {doc.docno: float(len(doc.text)) for doc in succession_index.doc_store.values()}
        scorer = TableScorer(table)
        pipeline = Pipeline(
            stages=(LexicalSearch(depth=20), Cutoff(20), Reranker(scorer, 20)),
            context_k=3,
            index=succession_index,
        )
        got = run_pipeline(pipeline, "succession to the throne")
        first = search_lexical(succession_index, "succession to the throne", 20)
        expected = rerank(scorer, first.top(20), 20, succession_index.doc_store)
        assert got == expected

    def test_rerank_preset_reproduces_table_ordering(self, succession_index):
        ordering = ["monarchy", "heir-apparent", "succession-throne", "crown-act"]
        table = {docno: 0.0 for docno in succession_index.doc_store}
        table.update({docno: float(len(ordering) - i) for i, docno in enumerate(ordering)})
        pipeline = Pipeline(
            stages=preset_stages("lexical%20>>rerank", scorer=TableScorer(table)),
            context_k=3,
            index=succession_index,
        )
        got = run_pipeline(pipeline, "succession to the throne")
        retrieved = set(got.docnos)
        assert [d for d in ordering if d in retrieved] == [
            d for d in got.docnos if d in ordering
        ]
        assert pipeline.retriever_kind is RetrieverKind.RERANKED

    def test_stage_error_carries_index(self, succession_index):
        pipeline = Pipeline(
            stages=(LexicalSearch(depth=5), Reranker(TableScorer({}), 5)),
            context_k=1,
            index=succession_index,
        )
        with pytest.raises(PipelineError) as excinfo:
            run_pipeline(pipeline, "throne")
        assert excinfo.value.stage_index == 1

    def test_first_stage_must_search(self, cat_dog_index):
        with pytest.raises(ValueError):
            Pipeline(stages=(Cutoff(3),), context_k=1, index=cat_dog_index)

    def test_context_k_bounded_by_output_depth(self, cat_dog_index):
        with pytest.raises(ValueError):
            Pipeline(
                stages=(LexicalSearch(depth=10), Cutoff(2)),
                context_k=3,
                index=cat_dog_index,
            )

    def test_dense_pipeline_kind(self):
        store = EmbeddingStore(2, {"d1": [1.0, 0.0]})
        embedder = LookupEmbedder({"q": [1.0, 0.0]})
        pipeline = Pipeline(
            stages=(DenseSearch(depth=1),),
            context_k=1,
            store=store,
            embedder=embedder,
            docs={"d1": Document("d1", "", "x")},
        )
        assert pipeline.retriever_kind is RetrieverKind.DENSE
        result = run_pipeline(pipeline, "q")
        assert result.docnos == ("d1",)
        assert result.query_text == "q"


class TestEmbeddingsTsv:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "vectors.tsv"
        path.write_text("dim=3\nd1\t1.0,2.0,3.0\nd2\t0.5,0.0,-1.5\n")
        store = read_embeddings_tsv(path)
        assert store.dim == 3
        assert store.vector("d2").tolist() == [0.5, 0.0, -1.5]

    def test_dimension_mismatch_rejected(self, tmp_path):
        path = tmp_path / "vectors.tsv"
        path.write_text("dim=3\nd1\t1.0,2.0\n")
        with pytest.raises(IngestError, match="line 2"):
            read_embeddings_tsv(path)

    def test_missing_header_rejected(self, tmp_path):
        path = tmp_path / "vectors.tsv"
        path.write_text("d1\t1.0,2.0\n")
        with pytest.raises(IngestError, match="line 1"):
            read_embeddings_tsv(path)
