from __future__ import annotations

import json
import math
import random
import threading

import pytest

from roomsmith import (
    BatchQuery,
    FeatureCache,
    RetrievalConfig,
    RetrievalError,
    ValidationError,
    coarse_filter,
    estimate_prior,
    estimate_prior_by_category,
    rank_inventory,
    rerank_with_lambda,
    retrieve,
    retrieve_batch,
    score_object,
    uniform_prior,
)
from roomsmith.gateway import mock_gateway
from roomsmith.retrieval import ObjectPrior

from conftest import make_inventory, random_unit_vector


def brute_force_ranking(description: str, assets, prior, lambda_p,
                        score_table) -> list[tuple[str, float]]:
    """Independent reimplementation of the scoring objective.

    Looks token log-probs up directly in the mock table, sums them by hand,
    and sorts with an explicit comparison; shares no code with the engine.
    """
    totals = []
    for asset in assets:
        token_logprobs = score_table[(asset.image, description)]
        if isinstance(token_logprobs, (int, float)):
            loglik = token_logprobs * len(description.split())
        else:
            loglik = 0.0
            for entry in token_logprobs:
                loglik += entry[1] if isinstance(entry, tuple) else entry
        totals.append((asset.id, lambda_p * prior.log_prior[asset.id] + loglik))
    totals.sort(key=lambda pair: (-pair[1], pair[0]))
    return totals


class TestEstimatePrior:
    def test_formula_forced_example(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed"), ("c", "bed")])
        prior = estimate_prior({"a": 2, "b": 1, "c": 0}, inventory, alpha=1.0)
        assert math.exp(prior.log_prior["a"]) == pytest.approx(3 / 6, abs=1e-12)
        assert math.exp(prior.log_prior["b"]) == pytest.approx(2 / 6, abs=1e-12)
        assert math.exp(prior.log_prior["c"]) == pytest.approx(1 / 6, abs=1e-12)
        assert prior.kind == "dirichlet_smoothed"

    def test_empty_counts_reduce_to_uniform(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed"), ("c", "bed")])
        prior = estimate_prior({}, inventory, alpha=1.0)
        for asset_id in ("a", "b", "c"):
            assert math.exp(prior.log_prior[asset_id]) == pytest.approx(1 / 3,
                                                                        abs=1e-12)

    def test_dominant_count_keeps_support(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed")])
        prior = estimate_prior({"a": 999_999}, inventory, alpha=1.0)
        assert math.exp(prior.log_prior["b"]) > 0
        assert prior.log_prior["b"] > -math.inf

    def test_unknown_id_rejected(self):
        inventory = make_inventory([("a", "bed")])
        with pytest.raises(ValidationError, match="unknown asset ids"):
            estimate_prior({"zzz": 1}, inventory, alpha=1.0)

    def test_alpha_must_be_positive(self):
        inventory = make_inventory([("a", "bed")])
        for alpha in (0.0, -1.0):
            with pytest.raises(ValidationError):
                estimate_prior({}, inventory, alpha=alpha)

    def test_negative_count_rejected(self):
        inventory = make_inventory([("a", "bed")])
        with pytest.raises(ValidationError):
            estimate_prior({"a": -1}, inventory, alpha=1.0)

    def test_randomized_mass_and_formula(self, rng):
        for _ in range(50):
            n = rng.randrange(1, 30)
            inventory = make_inventory([(f"a{i}", "bed") for i in range(n)])
            alpha = rng.choice([0.25, 0.5, 1.0, 2.0, 7.5])
            counts = {f"a{i}": rng.randrange(0, 50) for i in range(n)
                      if rng.random() < 0.7}
            prior = estimate_prior(counts, inventory, alpha=alpha)
            total = sum(counts.values())
            for i in range(n):
                expected = (counts.get(f"a{i}", 0) + alpha) / (total + alpha * n)
                assert math.exp(prior.log_prior[f"a{i}"]) == pytest.approx(
                    expected, abs=1e-12)
            mass = math.fsum(math.exp(v) for v in prior.log_prior.values())
            assert abs(mass - 1.0) <= 1e-9

    def test_by_category_mass_shared_equally(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed"), ("c", "lamp")])
        prior = estimate_prior_by_category({"bed": 3, "lamp": 1}, inventory,
                                           alpha=1.0)
        # p(bed) = 4/6 split over two members, p(lamp) = 2/6 over one.
        assert math.exp(prior.log_prior["a"]) == pytest.approx(2 / 6, abs=1e-12)
        assert math.exp(prior.log_prior["b"]) == pytest.approx(2 / 6, abs=1e-12)
        assert math.exp(prior.log_prior["c"]) == pytest.approx(2 / 6, abs=1e-12)
        mass = math.fsum(math.exp(v) for v in prior.log_prior.values())
        assert abs(mass - 1.0) <= 1e-9

    def test_uniform_prior_kind(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed")])
        prior = uniform_prior(inventory)
        assert prior.kind == "uniform"
        assert math.exp(prior.log_prior["a"]) == pytest.approx(0.5, abs=1e-12)

    def test_prior_serialization_round_trip(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed")])
        prior = estimate_prior({"a": 3}, inventory, alpha=0.5)
        again = ObjectPrior.from_dict(prior.to_dict())
        assert again.log_prior == prior.log_prior
        assert again.kind == prior.kind
        assert again.alpha == prior.alpha


class TestScoreObject:
    def test_two_asset_hand_arithmetic(self):
        inventory = make_inventory([("asset1", "bed"), ("asset2", "bed")])
        gateway, _ = mock_gateway(scores={
            ("asset1.png", "blue bed"): [("blue", -0.1), ("bed", -0.2)],
            ("asset2.png", "blue bed"): [("blue", -1.0), ("bed", -1.0)],
        })
        prior = uniform_prior(inventory)
        cfg = RetrievalConfig(lambda_p=0.1)
        first = score_object("blue bed", inventory.assets[0], prior, cfg, gateway)
        second = score_object("blue bed", inventory.assets[1], prior, cfg, gateway)
        log_half = math.log(0.5)
        assert first.total == pytest.approx(0.1 * log_half + (-0.1 - 0.2),
                                            abs=1e-12)
        assert second.total == pytest.approx(0.1 * log_half + (-1.0 - 1.0),
                                             abs=1e-12)
        assert first.total == pytest.approx(-0.36931, abs=1e-5)
        assert second.total == pytest.approx(-2.06931, abs=1e-5)
        assert first.total > second.total

    def test_zero_weight_total_equals_loglik(self):
        inventory = make_inventory([("a", "bed")])
        gateway, _ = mock_gateway(scores={("a.png", "a bed"): -0.7})
        score = score_object("a bed", inventory.assets[0],
                             uniform_prior(inventory),
                             RetrievalConfig(lambda_p=0.0), gateway)
        assert score.total == score.token_loglik

    def test_total_recomputable_from_parts(self):
        inventory = make_inventory([("a", "bed")])
        gateway, _ = mock_gateway(scores={("a.png", "a bed"): -0.7})
        cfg = RetrievalConfig(lambda_p=0.3)
        score = score_object("a bed", inventory.assets[0],
                             uniform_prior(inventory), cfg, gateway)
        assert abs(score.total - score.recomputed_total(0.3)) <= 1e-9

    def test_gateway_failure_carries_asset_id(self):
        inventory = make_inventory([("a", "bed")])
        gateway, _ = mock_gateway(scores={})
        with pytest.raises(RetrievalError) as excinfo:
            score_object("a bed", inventory.assets[0],
                         uniform_prior(inventory), RetrievalConfig(), gateway)
        assert excinfo.value.asset_id == "a"

    def test_length_normalized_mode(self):
        inventory = make_inventory([("a", "bed")])
        gateway, _ = mock_gateway(scores={("a.png", "one two four"): -0.6})
        score = score_object("one two four", inventory.assets[0],
                             uniform_prior(inventory),
                             RetrievalConfig(lambda_p=0.0, length_normalize=True),
                             gateway)
        assert score.token_loglik == pytest.approx(-0.6, abs=1e-12)


class TestRankInventory:
    def test_single_candidate(self):
        inventory = make_inventory([("only", "bed")])
        gateway, _ = mock_gateway(scores={("only.png", "a bed"): -0.5})
        result = rank_inventory("a bed", list(inventory),
                                uniform_prior(inventory), RetrievalConfig(),
                                gateway)
        assert result.ranking == ["only"]

    def test_empty_candidates_rejected(self):
        inventory = make_inventory([("a", "bed")])
        gateway, _ = mock_gateway()
        with pytest.raises(ValidationError):
            rank_inventory("a bed", [], uniform_prior(inventory),
                           RetrievalConfig(), gateway)

    def test_permutation_invariance(self, rng):
        inventory = make_inventory([(f"a{i}", "bed") for i in range(6)])
        table = {(f"a{i}.png", "a bed"): -round(rng.uniform(0.05, 3.0), 3)
                 for i in range(6)}
        gateway, _ = mock_gateway(scores=table)
        prior = uniform_prior(inventory)
        cfg = RetrievalConfig()
        base = rank_inventory("a bed", list(inventory), prior, cfg, gateway)
        shuffled = list(inventory)
        rng.shuffle(shuffled)
        permuted = rank_inventory("a bed", shuffled, prior, cfg, gateway)
        assert permuted.ranking == base.ranking

    def test_ties_break_by_ascending_asset_id(self):
        inventory = make_inventory([("zed", "bed"), ("abe", "bed")])
        gateway, _ = mock_gateway(scores={("zed.png", "a bed"): -0.5,
                                          ("abe.png", "a bed"): -0.5})
        result = rank_inventory("a bed", list(inventory),
                                uniform_prior(inventory), RetrievalConfig(),
                                gateway)
        assert result.ranking == ["abe", "zed"]

    def test_matches_brute_force_on_five_candidates(self, rng):
        inventory = make_inventory([(f"c{i}", "bed") for i in range(5)])
        description = "a carved oak bed"
        table = {}
        for i in range(5):
            tokens = description.split()
            table[(f"c{i}.png", description)] = [
                (tok, -round(rng.uniform(0.01, 2.5), 4)) for tok in tokens]
        gateway, _ = mock_gateway(scores=table)
        prior = estimate_prior({"c0": 5, "c3": 2}, inventory, alpha=1.0)
        cfg = RetrievalConfig(lambda_p=0.1)
        result = rank_inventory(description, list(inventory), prior, cfg, gateway)
        oracle = brute_force_ranking(description, list(inventory), prior,
                                     0.1, table)
        assert result.ranking == [asset_id for asset_id, _ in oracle]
        for score, (asset_id, total) in zip(result.scores, oracle):
            assert score.asset == asset_id
            assert abs(score.total - total) <= 1e-9

    def test_argmax_invariant_under_constant_shift(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed"), ("c", "bed")])
        base = {"a": -0.4, "b": -1.2, "c": -0.9}
        prior = estimate_prior({"b": 4}, inventory)
        cfg = RetrievalConfig(lambda_p=0.25)
        rankings = []
        for shift in (0.0, 0.5, 3.7):
            table = {(f"{k}.png", "x"): [("x", v - shift)]
                     for k, v in base.items()}
            gateway, _ = mock_gateway(scores=table)
            rankings.append(rank_inventory("x", list(inventory), prior, cfg,
                                           gateway).ranking)
        assert rankings[0] == rankings[1] == rankings[2]

    def test_huge_lambda_converges_to_prior_order(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed"), ("c", "bed")])
        prior = estimate_prior({"c": 10, "b": 5}, inventory)
        table = {("a.png", "x"): -0.1, ("b.png", "x"): -0.2, ("c.png", "x"): -3.0}
        gateway, _ = mock_gateway(scores=table)
        result = rank_inventory("x", list(inventory), prior,
                                RetrievalConfig(lambda_p=1e6), gateway)
        by_prior = sorted(inventory.ids,
                          key=lambda i: (-prior.log_prior[i], i))
        assert result.ranking == by_prior

    def test_zero_lambda_ignores_prior(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed")])
        prior = estimate_prior({"b": 1000}, inventory)
        table = {("a.png", "x"): -0.1, ("b.png", "x"): -0.2}
        gateway, _ = mock_gateway(scores=table)
        result = rank_inventory("x", list(inventory), prior,
                                RetrievalConfig(lambda_p=0.0), gateway)
        assert result.ranking == ["a", "b"]

    def test_skip_failures_collects_and_warns(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed")])
        gateway, _ = mock_gateway(scores={("a.png", "x"): -0.5})
        cfg = RetrievalConfig(skip_failures=True)
        result = rank_inventory("x", list(inventory), uniform_prior(inventory),
                                cfg, gateway)
        assert result.ranking == ["a"]
        assert [asset for asset, _ in result.skipped] == ["b"]

    def test_abort_is_default_on_failure(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed")])
        gateway, _ = mock_gateway(scores={("a.png", "x"): -0.5})
        with pytest.raises(RetrievalError):
            rank_inventory("x", list(inventory), uniform_prior(inventory),
                           RetrievalConfig(), gateway)

    def test_concurrent_jobs_match_serial(self, rng):
        inventory = make_inventory([(f"c{i}", "bed") for i in range(12)])
        table = {(f"c{i}.png", "x"): -round(rng.uniform(0.1, 2.0), 3)
                 for i in range(12)}
        prior = uniform_prior(inventory)
        gateway_a, _ = mock_gateway(scores=table)
        serial = rank_inventory("x", list(inventory), prior,
                                RetrievalConfig(jobs=1), gateway_a)
        gateway_b, _ = mock_gateway(scores=table)
        threaded = rank_inventory("x", list(inventory), prior,
                                  RetrievalConfig(jobs=4), gateway_b)
        assert [s.to_dict() for s in threaded.scores] == \
            [s.to_dict() for s in serial.scores]


class TestCoarseFilter:
    def test_full_inventory_when_m_is_size(self):
        embeddings = {"a": [1.0, 0.0, 0.0], "b": [0.0, 1.0, 0.0],
                      "c": [0.0, 0.0, 1.0]}
        inventory = make_inventory([("a", "bed"), ("b", "bed"), ("c", "bed")],
                                   embeddings=embeddings)
        gateway, _ = mock_gateway(embeddings={"query": [0.0, 1.0, 0.0]})
        result = coarse_filter("query", inventory, 3, gateway)
        assert [a.id for a in result] == ["b", "a", "c"]  # similarity then id

    def test_exact_match_geometry(self):
        embeddings = {"a": [1.0, 0.0, 0.0], "b": [0.0, 1.0, 0.0],
                      "c": [0.0, 0.0, 1.0]}
        inventory = make_inventory([("a", "bed"), ("b", "bed"), ("c", "bed")],
                                   embeddings=embeddings)
        gateway, _ = mock_gateway(embeddings={"query": [0.0, 1.0, 0.0]})
        result = coarse_filter("query", inventory, 1, gateway)
        assert [a.id for a in result] == ["b"]

    def test_top2_matches_exhaustive_cosine(self):
        vectors = {
            "a": [0.5, 0.5, 0.5, 0.5],
            "b": [1.0, 0.0, 0.0, 0.0],
            "c": [0.0, 1.0, 0.0, 0.0],
            "d": [-0.5, 0.5, -0.5, 0.5],
        }
        query = [0.9, 0.1, 0.3, 0.1]
        inventory = make_inventory([(k, "bed") for k in vectors],
                                   embeddings=vectors)
        gateway, _ = mock_gateway(embeddings={"q": query})
        result = coarse_filter("q", inventory, 2, gateway)

        def cosine(u, v):
            nu = math.sqrt(sum(x * x for x in u))
            nv = math.sqrt(sum(x * x for x in v))
            return sum(x * y for x, y in zip(u, v)) / (nu * nv)

        ranked = sorted(vectors, key=lambda k: (-cosine(vectors[k], query), k))
        assert [a.id for a in result] == ranked[:2]

    def test_missing_embeddings_computed_via_gateway(self):
        inventory = make_inventory([("a", "bed"), ("b", "bed")])
        gateway, backend = mock_gateway(embeddings={
            "q": [1.0, 0.0], "a.png": [1.0, 0.0], "b.png": [0.0, 1.0]})
        result = coarse_filter("q", inventory, 1, gateway)
        assert [a.id for a in result] == ["a"]
        assert backend.embed_count("a.png") == 1

    def test_missing_embedding_capability_is_configuration_error(self):
        from roomsmith import ConfigurationError
        inventory = make_inventory([("a", "bed")])
        gateway, _ = mock_gateway(embeddings={"q": [1.0, 0.0]})
        with pytest.raises(ConfigurationError):
            coarse_filter("q", inventory, 1, gateway)

    def test_dimension_mismatch_is_configuration_error(self):
        from roomsmith import ConfigurationError
        inventory = make_inventory([("a", "bed")],
                                   embeddings={"a": [1.0, 0.0, 0.0]})
        gateway, _ = mock_gateway(embeddings={"q": [1.0, 0.0]})
        with pytest.raises(ConfigurationError):
            coarse_filter("q", inventory, 1, gateway)

    def test_m_larger_than_inventory_returns_all(self):
        inventory = make_inventory([("a", "bed")], embeddings={"a": [1.0, 0.0]})
        gateway, _ = mock_gateway(embeddings={"q": [1.0, 0.0]})
        assert len(coarse_filter("q", inventory, 10, gateway)) == 1


def _retrieval_fixture(rng, n_assets=6):
    description = "a mid century armchair"
    specs = [(f"m{i}", "armchair") for i in range(n_assets)]
    embeddings = {f"m{i}": random_unit_vector(rng, 4) for i in range(n_assets)}
    inventory = make_inventory(specs, embeddings=embeddings)
    table = {(f"m{i}.png", description):
             [(tok, -round(rng.uniform(0.05, 2.0), 4))
              for tok in description.split()]
             for i in range(n_assets)}
    gateway, backend = mock_gateway(
        scores=table, embeddings={description: random_unit_vector(rng, 4)})
    return description, inventory, table, gateway, backend


class TestRetrieve:
    def test_all_mode_equals_rank_inventory(self, rng):
        description, inventory, table, gateway, _ = _retrieval_fixture(rng)
        prior = uniform_prior(inventory)
        cfg = RetrievalConfig(coarse_m="all")
        via_retrieve = retrieve(description, inventory, prior, cfg, gateway)
        direct = rank_inventory(description, list(inventory), prior, cfg,
                                gateway)
        assert via_retrieve.ranking == direct.ranking
        assert [s.to_dict() for s in via_retrieve.scores] == \
            [s.to_dict() for s in direct.scores]

    def test_coarse_one_returns_single_winner(self, rng):
        description, inventory, table, gateway, _ = _retrieval_fixture(rng)
        prior = uniform_prior(inventory)
        result = retrieve(description, inventory, prior,
                          RetrievalConfig(coarse_m=1), gateway)
        assert len(result.scores) == 1

    def test_numeric_result_is_subset_of_coarse_output(self, rng):
        description, inventory, table, gateway, _ = _retrieval_fixture(rng, 8)
        prior = uniform_prior(inventory)
        survivors = coarse_filter(description, inventory, 3, gateway)
        result = retrieve(description, inventory, prior,
                          RetrievalConfig(coarse_m=3), gateway)
        assert set(result.ranking) <= {a.id for a in survivors}

    def test_coarse_filter_can_drop_full_rank_winner(self):
        # 'best' wins the full likelihood ranking but its embedding is
        # orthogonal to the query, so a tight coarse filter excludes it:
        # the accuracy/runtime trade-off in miniature.
        description = "velvet chaise"
        embeddings = {"best": [0.0, 1.0], "near_a": [1.0, 0.0],
                      "near_b": [0.9, 0.43588989435406736]}
        inventory = make_inventory([(k, "chaise") for k in embeddings],
                                   embeddings=embeddings)
        table = {("best.png", description): -0.1,
                 ("near_a.png", description): -2.0,
                 ("near_b.png", description): -1.0}
        gateway, _ = mock_gateway(scores=table,
                                  embeddings={description: [1.0, 0.0]})
        prior = uniform_prior(inventory)
        full = retrieve(description, inventory, prior,
                        RetrievalConfig(coarse_m="all"), gateway)
        narrowed = retrieve(description, inventory, prior,
                            RetrievalConfig(coarse_m=2), gateway)
        assert full.best.asset == "best"
        assert narrowed.best.asset == "near_b"
        assert "best" not in narrowed.ranking

    def test_deterministic_serialization(self, rng):
        description, inventory, table, gateway, _ = _retrieval_fixture(rng)
        prior = uniform_prior(inventory)
        cfg = RetrievalConfig(coarse_m=4)
        first = retrieve(description, inventory, prior, cfg, gateway)
        second = retrieve(description, inventory, prior, cfg, gateway)
        assert json.dumps(first.to_dict(), sort_keys=True) == \
            json.dumps(second.to_dict(), sort_keys=True)

    def test_result_document_round_trip(self, rng):
        from roomsmith import RankedResult
        description, inventory, table, gateway, _ = _retrieval_fixture(rng)
        result = retrieve(description, inventory, uniform_prior(inventory),
                          RetrievalConfig(), gateway)
        again = RankedResult.from_dict(result.to_dict())
        assert again.to_dict() == result.to_dict()


class TestRerankWithLambda:
    def test_reranking_recovers_engine_totals(self, rng):
        description, inventory, table, gateway, _ = _retrieval_fixture(rng)
        prior = estimate_prior({"m0": 9, "m1": 3}, inventory)
        base = retrieve(description, inventory, prior,
                        RetrievalConfig(lambda_p=0.1), gateway)
        for lam in (0.0, 0.01, 0.5, 1.0):
            reranked = rerank_with_lambda(base.scores, lam)
            direct = retrieve(description, inventory, prior,
                              RetrievalConfig(lambda_p=lam), gateway)
            assert [s.asset for s in reranked] == direct.ranking


class TestRetrieveBatch:
    def test_batch_of_one_equals_retrieve(self, rng):
        description, inventory, table, gateway, backend = _retrieval_fixture(rng)
        prior = uniform_prior(inventory)
        cfg = RetrievalConfig(coarse_m=3)
        single = retrieve(description, inventory, prior, cfg, gateway)
        batch = retrieve_batch(
            [BatchQuery(description=description, candidates=tuple(inventory))],
            prior, cfg, gateway, embedding_dim=inventory.embedding_dim)
        assert len(batch) == 1
        assert batch[0].ranking == single.ranking

    def test_shared_candidate_embedded_once_scored_twice(self):
        inventory = make_inventory([("shared", "bed"), ("other", "bed")])
        descriptions = ["a red bed", "a blue bed"]
        scores = {}
        for description in descriptions:
            scores[("shared.png", description)] = -0.4
            scores[("other.png", description)] = -0.9
        gateway, backend = mock_gateway(
            scores=scores,
            embeddings={"shared.png": [1.0, 0.0], "other.png": [0.0, 1.0],
                        "a red bed": [1.0, 0.0], "a blue bed": [0.6, 0.8]},
        )
        prior = uniform_prior(inventory)
        cfg = RetrievalConfig(coarse_m=2)
        queries = [BatchQuery(description=d, candidates=tuple(inventory))
                   for d in descriptions]
        retrieve_batch(queries, prior, cfg, gateway, embedding_dim=2)
        assert backend.embed_count("shared.png") == 1
        assert backend.embed_count("other.png") == 1
        assert backend.count("score", ("shared.png", "a red bed")) == 1
        assert backend.count("score", ("shared.png", "a blue bed")) == 1

    def test_three_categories_each_asset_loaded_once(self, rng):
        categories = ["bed", "lamp", "rug"]
        specs = [(f"{cat}{i}", cat) for cat in categories for i in range(3)]
        inventory = make_inventory(specs)
        descriptions = {cat: [f"a {cat} one", f"a {cat} two"]
                        for cat in categories}
        scores = {}
        embeddings = {}
        for asset_id, cat in specs:
            embeddings[f"{asset_id}.png"] = random_unit_vector(rng, 3)
            for description in descriptions[cat]:
                scores[(f"{asset_id}.png", description)] = \
                    -round(rng.uniform(0.1, 2.0), 3)
        for cat in categories:
            for description in descriptions[cat]:
                embeddings[description] = random_unit_vector(rng, 3)
        gateway, backend = mock_gateway(scores=scores, embeddings=embeddings)
        prior = uniform_prior(inventory)
        queries = [
            BatchQuery(description=description,
                       candidates=tuple(inventory.by_category(cat)))
            for cat in categories for description in descriptions[cat]
        ]
        results = retrieve_batch(queries, prior, RetrievalConfig(coarse_m=2),
                                 gateway, embedding_dim=3)
        assert len(results) == len(queries)
        for asset_id, _ in specs:
            assert backend.embed_count(f"{asset_id}.png") == 1

    def test_batch_results_identical_to_independent_retrieves(self, rng):
        categories = ["bed", "lamp"]
        specs = [(f"{cat}{i}", cat) for cat in categories for i in range(4)]
        embeddings = {asset_id: random_unit_vector(rng, 4)
                      for asset_id, _ in specs}
        inventory = make_inventory(specs, embeddings=embeddings)
        descriptions = [(cat, f"a {cat} with brass details")
                        for cat in categories]
        scores = {}
        query_embeddings = {}
        for cat, description in descriptions:
            query_embeddings[description] = random_unit_vector(rng, 4)
            for asset_id, asset_cat in specs:
                if asset_cat == cat:
                    scores[(f"{asset_id}.png", description)] = \
                        -round(rng.uniform(0.1, 2.0), 3)
        gateway, _ = mock_gateway(scores=scores, embeddings=query_embeddings)
        prior = uniform_prior(inventory)
        cfg = RetrievalConfig(coarse_m=2)
        queries = [BatchQuery(description=description,
                              candidates=tuple(inventory.by_category(cat)))
                   for cat, description in descriptions]
        batch = retrieve_batch(queries, prior, cfg, gateway,
                               embedding_dim=inventory.embedding_dim)
        for query, batched in zip(queries, batch):
            solo_gateway, _ = mock_gateway(scores=scores,
                                           embeddings=query_embeddings)
            solo = rank_inventory(
                query.description,
                _coarse(query, solo_gateway, inventory.embedding_dim),
                prior, cfg, solo_gateway)
            assert batched.ranking == solo.ranking


def _coarse(query: BatchQuery, gateway, dim):
    from roomsmith.retrieval import _coarse_over
    return _coarse_over(query.description, list(query.candidates), 2, gateway,
                        embedding_dim=dim, cache=None)


class TestFeatureCache:
    def test_single_population_under_concurrency(self):
        cache = FeatureCache()
        calls = {"n": 0}
        gate = threading.Event()

        def compute():
            calls["n"] += 1
            gate.wait(timeout=1.0)
            return ("vector",)

        results = []

        def worker():
            results.append(cache.get_or_compute("key", compute))

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for thread in threads:
            thread.start()
        gate.set()
        for thread in threads:
            thread.join()
        assert calls["n"] == 1
        assert all(r == ("vector",) for r in results)

    def test_failed_population_releases_key(self):
        cache = FeatureCache()

        def boom():
            raise RuntimeError("nope")

        with pytest.raises(RuntimeError):
            cache.get_or_compute("k", boom)
        assert cache.get_or_compute("k", lambda: 42) == 42

    def test_clear(self):
        cache = FeatureCache()
        cache.get_or_compute("k", lambda: 1)
        assert len(cache) == 1
        cache.clear()
        assert len(cache) == 0
