from __future__ import annotations

import numpy as np
import pytest

from claimtrace.corpus import load_corpus
from claimtrace.embedding import EmbeddingCache, EmbeddingService, EmbeddingSpec, Head, top_k
from claimtrace.mining import build_triplets
from tracetune import (
    FINETUNED_PROVIDER_ID,
    FinetunedEmbeddingProvider,
    TrainConfig,
    base_spec,
    export_embeddings,
    train_retriever,
)

from conftest import mock_service, synthetic_corpus_records, write_corpus

HYP_SPEC = EmbeddingSpec(provider_id=FINETUNED_PROVIDER_ID, head=Head.RETRIEVAL_HYPOTHESIS)
EV_SPEC = EmbeddingSpec(provider_id=FINETUNED_PROVIDER_ID, head=Head.RETRIEVAL_EVIDENCE)


def _trained(tmp_path, n_docs=6, epochs=2):
    path = write_corpus(tmp_path / "corpus.jsonl", synthetic_corpus_records(n_docs))
    corpus = load_corpus(path)
    service = mock_service()
    triplets = build_triplets(corpus, service, base_spec("mock"))
    result = train_retriever(triplets, TrainConfig(epochs=epochs), service)
    return corpus, service, result


class TestExport:
    def test_record_arity_two_heads_per_paragraph(self, tmp_path):
        # 3 docs with 10 paragraphs in total -> 20 records (2 heads x 10).
        records = synthetic_corpus_records(2, n_paragraphs=3)
        records.append(synthetic_corpus_records(3, n_paragraphs=4)[2])
        path = write_corpus(tmp_path / "c.jsonl", records)
        corpus = load_corpus(path)
        assert sum(doc.n_paragraphs for doc in corpus) == 10
        service = mock_service()
        triplets = build_triplets(corpus, service, base_spec("mock"))
        result = train_retriever(triplets, TrainConfig(epochs=1), service)
        written = export_embeddings(result, corpus, service, tmp_path / "sidecar")
        assert written == 20

    def test_include_queries_adds_one_record_per_doc_and_head(self, tmp_path):
        corpus, service, result = _trained(tmp_path, n_docs=3, epochs=1)
        n_paragraphs = sum(doc.n_paragraphs for doc in corpus)
        written = export_embeddings(
            result, corpus, service, tmp_path / "sidecar_q", include_queries=True
        )
        assert written == 2 * n_paragraphs + 2 * len(corpus)
        offline = EmbeddingService(providers={}, cache=EmbeddingCache(tmp_path / "sidecar_q"))
        doc = corpus[0]
        assert offline.embed_one(doc.trace.finding, HYP_SPEC).shape == (16,)
        composite = doc.trace.finding + " " + doc.trace.gold_hypothesis
        assert offline.embed_one(composite, EV_SPEC).shape == (16,)

    def test_sidecar_served_by_primary_without_provider(self, tmp_path):
        corpus, service, result = _trained(tmp_path)
        sidecar = tmp_path / "sidecar"
        export_embeddings(result, corpus, service, sidecar)
        offline = EmbeddingService(providers={}, cache=EmbeddingCache(sidecar))
        texts = corpus[0].paragraph_texts()
        vectors = offline.embed(texts, HYP_SPEC)
        assert len(vectors) == len(texts)
        assert all(v.shape == (result.config.projection_dim,) for v in vectors)
        assert all(np.all(np.isfinite(v)) for v in vectors)

    def test_sidecar_round_trip_is_lossless(self, tmp_path):
        # What the exporter computed must come back bit-identical through the
        # primary's cache loader (batched exactly like the export itself).
        corpus, service, result = _trained(tmp_path)
        sidecar = tmp_path / "sidecar"
        export_embeddings(result, corpus, service, sidecar)
        provider = FinetunedEmbeddingProvider(result, service)
        texts = corpus[0].paragraph_texts()
        direct = provider.embed_batch(texts, HYP_SPEC)
        cache = EmbeddingCache(sidecar)
        for text, vector in zip(texts, direct):
            assert np.array_equal(vector, cache.get(HYP_SPEC, text))

    def test_heads_produce_distinct_spaces(self, tmp_path):
        corpus, service, result = _trained(tmp_path)
        provider = FinetunedEmbeddingProvider(result, service)
        text = corpus[0].paragraphs[0].text
        hyp_vec = provider.embed_batch([text], HYP_SPEC)[0]
        ev_vec = provider.embed_batch([text], EV_SPEC)[0]
        assert not np.allclose(hyp_vec, ev_vec)

    def test_rankings_change_after_training(self, tmp_path):
        corpus, service, result = _trained(tmp_path, n_docs=8, epochs=5)
        sidecar = tmp_path / "sidecar"
        export_embeddings(result, corpus, service, sidecar)
        tuned = EmbeddingService(
            providers={FINETUNED_PROVIDER_ID: FinetunedEmbeddingProvider(result, service)},
            cache=EmbeddingCache(sidecar),
        )
        changed = 0
        for doc in corpus:
            query = doc.trace.finding
            base_rank = top_k(
                service.embed_one(query, base_spec("mock")),
                service.embed(doc.paragraph_texts(), base_spec("mock")),
                5,
            )
            tuned_rank = top_k(
                tuned.embed_one(query, HYP_SPEC),
                tuned.embed(doc.paragraph_texts(), HYP_SPEC),
                5,
            )
            if base_rank != tuned_rank:
                changed += 1
        assert changed >= 1

    def test_unknown_head_rejected(self, tmp_path):
        corpus, service, result = _trained(tmp_path, n_docs=4, epochs=1)
        provider = FinetunedEmbeddingProvider(result, service)
        with pytest.raises(Exception, match="no projection head"):
            provider.embed_batch(["text"], EmbeddingSpec(FINETUNED_PROVIDER_ID, Head.EVALUATION))
