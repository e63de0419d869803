#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "editlab/error.hpp"
#include "editlab/evaluation.hpp"
#include "editlab/fixtures.hpp"
#include "editlab/metrics.hpp"
#include "oracles.hpp"

using namespace editlab;

namespace {

const ToyTransformer& model() {
  static const ToyTransformer m = oracle::small_model(16, 2, 4, 32, 17);
  return m;
}

std::string decode_text(const ToyTransformer& m, const std::string& query, int n) {
  return detokenize(greedy_decode(m, tokenize(query, m.vocab()), n), m.vocab());
}

// Every position outputs LayerNorm(e) for a fixed e, and the unembedding
// favours `favoured` heavily.
ToyTransformer dominant_model(TokenId favoured) {
  ModelConfig cfg;
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 8;
  const Vocab vocab = toy_vocab();
  const auto v = static_cast<Eigen::Index>(vocab.size());
  std::mt19937_64 gen(5);
  const Vec e = oracle::random_matrix(gen, 8, 1).col(0);
  Mat tok(8, v);
  for (Eigen::Index i = 0; i < v; ++i) tok.col(i) = e;
  LayerWeights w{Mat::Zero(8, 8), Mat::Zero(8, 8), Mat::Zero(8, 8), Mat::Zero(8, 8),
                 Mat::Zero(8, 8), Mat::Zero(8, 8)};
  const Vec centred = e.array() - e.mean();
  const Vec ln = centred / std::sqrt(centred.squaredNorm() / 8.0 + 1e-5);
  Mat unembed = Mat::Zero(v, 8);
  unembed.row(favoured) = 2.0 * ln.transpose();
  return ToyTransformer(cfg, vocab, tok, Mat::Zero(8, cfg.max_seq), {w}, unembed);
}

std::vector<std::string> fixture_queries() {
  std::vector<std::string> out;
  for (const auto& q : make_factual_fixture(model(), FixtureOptions{}).preservation_queries) {
    out.push_back(q.query);
  }
  return out;
}

}  // namespace

TEST_SUITE("s_accuracy and t_accuracy") {
  TEST_CASE("self-consistent answers score 100 on both") {
    std::vector<GroundTruthItem> items;
    for (const auto& q : fixture_queries()) {
      items.push_back({q, decode_text(model(), q, 2)});
      if (items.size() == 20) break;
    }
    CHECK(s_accuracy(model(), items) == 100.0);
    CHECK(t_accuracy(model(), items) == 100.0);
  }

  TEST_CASE("unknown-token answers score 0") {
    std::vector<GroundTruthItem> items;
    for (const auto& q : fixture_queries()) {
      REQUIRE(greedy_decode(model(), tokenize(q, model().vocab()), 1).front() != model().vocab().unk());
      items.push_back({q, "qqqq"});
      if (items.size() == 10) break;
    }
    CHECK(s_accuracy(model(), items) == 0.0);
  }

  TEST_CASE("crafted three-item set with two matching decodes") {
    const auto qs = fixture_queries();
    std::vector<GroundTruthItem> items;
    items.push_back({qs[0], decode_text(model(), qs[0], 1)});
    items.push_back({qs[1], "  " + decode_text(model(), qs[1], 2) + " "});
    const TokenId wrong = (greedy_decode(model(), tokenize(qs[2], model().vocab()), 1)[0] == 10) ? 11 : 10;
    items.push_back({qs[2], model().vocab().token(wrong)});
    CHECK(s_accuracy(model(), items) == doctest::Approx(66.67).epsilon(0.01 / 66.67));
  }

  TEST_CASE("single four-token answer with exactly one top-1 position gives 25") {
    const TokenSeq query = tokenize(fixture_queries()[3], model().vocab());
    TokenSeq answer;
    TokenSeq context = query;
    for (int t = 0; t < 4; ++t) {
      const auto logits = last_token_logits(model(), context);
      TokenId pick = argmax(logits);
      if (t > 0) {
        Eigen::Index low = 0;
        logits.scores.minCoeff(&low);
        pick = static_cast<TokenId>(low);
      }
      answer.push_back(pick);
      context.push_back(pick);
    }
    const std::vector<GroundTruthItem> items{{fixture_queries()[3], detokenize(answer, model().vocab())}};
    REQUIRE(answer_tokens(items[0].answer, model().vocab()) == answer);
    CHECK(t_accuracy(model(), items) == 25.0);
    CHECK(s_accuracy(model(), items) == 0.0);
  }

  TEST_CASE("property: s_accuracy never exceeds t_accuracy") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      FixtureOptions opts;
      opts.seed = seed;
      opts.consistent_fraction = 0.5;
      const Dataset ds = make_factual_fixture(model(), opts);
      std::vector<GroundTruthItem> gt;
      for (const auto& q : ds.preservation_queries) gt.push_back({q.query, *q.gt_answer});
      const double s = s_accuracy(model(), gt);
      const double t = t_accuracy(model(), gt);
      CHECK(s <= t);
      CHECK(s >= 0.0);
      CHECK(t <= 100.0);
    }
    const auto inc = make_inconsistency_fixture(model(), 3);
    std::vector<GroundTruthItem> gt;
    for (const auto& q : inc.dataset.preservation_queries) gt.push_back({q.query, *q.gt_answer});
    CHECK(s_accuracy(model(), gt) <= t_accuracy(model(), gt));
  }

  TEST_CASE("empty sets") {
    const std::vector<GroundTruthItem> none;
    CHECK_THROWS_AS(s_accuracy(model(), none), Error);
    CHECK_THROWS_AS(t_accuracy(model(), none), Error);
  }

  TEST_CASE("teacher-forced probabilities factorize the sequence probability") {
    const TokenSeq query = tokenize(fixture_queries()[4], model().vocab());
    const TokenSeq answer{40, 41, 90};
    double product = 1.0;
    double log_sum = 0.0;
    for (const auto& s : teacher_force_score(model(), query, answer)) {
      product *= s.prob;
      log_sum += s.log_prob;
    }
    double oracle_product = 1.0;
    for (const auto& s : oracle::autoregressive_scores(model(), query, answer)) oracle_product *= s.prob;
    CHECK(product == doctest::Approx(oracle_product).epsilon(1e-12));
    CHECK(std::exp(log_sum) == doctest::Approx(oracle_product).epsilon(1e-12));
  }
}

TEST_SUITE("c_accuracy") {
  TEST_CASE("identical old and new answers never win") {
    Dataset ds = make_counterfactual_fixture(model(), FixtureOptions{});
    for (auto& item : ds.edit_items) item.target_old = item.target_new;
    CHECK(c_accuracy(model(), ds.edit_items) == 0.0);
  }

  TEST_CASE("a model dominated by the old answer scores 100") {
    const Vocab vocab = toy_vocab();
    const TokenId old_id = *vocab.find("Halia");
    const ToyTransformer m = dominant_model(old_id);
    EditItem item;
    item.id = "e";
    item.query = "the employer of Bal";
    item.target_new = "Jelia";
    item.target_old = "Halia";
    item.neighborhood_queries = {"the employer of Dex", "who employs Gil", "the home city of Pal"};
    const std::vector<EditItem> items{item};
    const auto old_score = teacher_force_score(m, tokenize(item.neighborhood_queries[0], vocab),
                                               TokenSeq{old_id});
    REQUIRE(old_score[0].prob >= 0.9);
    REQUIRE(old_score[0].is_top1);
    const auto new_score = teacher_force_score(m, tokenize(item.neighborhood_queries[0], vocab),
                                               TokenSeq{*vocab.find("Jelia")});
    REQUIRE(new_score[0].prob <= 0.1);
    CHECK(c_accuracy(m, items) == 100.0);
  }

  TEST_CASE("ten neighborhood pairs match the per-token probability product oracle") {
    Dataset ds = make_counterfactual_fixture(model(), FixtureOptions{});
    std::vector<EditItem> items(ds.edit_items.begin(), ds.edit_items.begin() + 5);
    // Mixed answer lengths make the length normalization matter.
    items[1].target_old = *items[1].target_old + " " + items[2].target_new;
    items[3].target_new = items[3].target_new + " " + items[0].target_new + " and";
    std::size_t pairs = 0;
    std::size_t wins = 0;
    for (const auto& item : items) {
      for (const auto& q : item.neighborhood_queries) {
        auto geo_mean = [&](const std::string& answer) {
          const TokenSeq a = encode(answer, model().vocab());
          double product = 1.0;
          for (const auto& s : oracle::autoregressive_scores(model(), tokenize(q, model().vocab()), a)) {
            product *= s.prob;
          }
          return std::pow(product, 1.0 / static_cast<double>(a.size()));
        };
        if (geo_mean(*item.target_old) > geo_mean(item.target_new)) ++wins;
        ++pairs;
      }
    }
    REQUIRE(pairs == 10);
    CHECK(std::abs(c_accuracy(model(), items) - 100.0 * static_cast<double>(wins) / 10.0) <= 1e-9);
  }

  TEST_CASE("missing target_old and empty neighborhoods") {
    Dataset ds = make_counterfactual_fixture(model(), FixtureOptions{});
    std::vector<EditItem> items(ds.edit_items.begin(), ds.edit_items.begin() + 3);
    items[1].target_old.reset();
    CHECK_THROWS_AS(c_accuracy(model(), items), Error);
    for (auto& item : items) item.neighborhood_queries.clear();
    CHECK_THROWS_AS(c_accuracy(model(), items), Error);
  }
}

TEST_SUITE("kl") {
  TEST_CASE("two-point closed form") {
    const LogitVector p{Vec::Map(std::vector<double>{std::log(0.9), std::log(0.1)}.data(), 2)};
    const LogitVector q{Vec::Zero(2)};
    const double expected = 0.9 * std::log(1.8) + 0.1 * std::log(0.2);
    CHECK(std::abs(kl_divergence(p, q) - expected) <= 1e-9);
    CHECK(std::abs(kl_divergence(p, q) - 0.3681) < 1e-4);
  }

  TEST_CASE("property: Gibbs inequality and agreement with a long-double oracle") {
    std::mt19937_64 gen(19);
    for (int trial = 0; trial < 1000; ++trial) {
      const LogitVector a{oracle::random_matrix(gen, 20, 1).col(0) * 3.0};
      const LogitVector b{oracle::random_matrix(gen, 20, 1).col(0) * 3.0};
      const double d = kl_divergence(a, b);
      CHECK(d > 0.0);
      CHECK(std::abs(d - oracle::kl(oracle::probs(a), oracle::probs(b))) <= 1e-9);
      CHECK(kl_divergence(a, a) == 0.0);
    }
  }

  TEST_CASE("kl_specificity: zero for identical models, mismatch and empty errors") {
    const auto qs = fixture_queries();
    CHECK(kl_specificity(model(), model(), qs) == 0.0);
    const ToyTransformer other(model().config(),
                               Vocab([] {
                                 auto t = toy_vocab().tokens();
                                 std::swap(t[5], t[6]);
                                 return t;
                               }()),
                               model().token_embedding(), model().position_embedding(),
                               model().layers(), model().unembedding());
    CHECK_THROWS_AS(kl_specificity(model(), other, qs), Error);
    CHECK_THROWS_AS(kl_specificity(model(), model(), std::vector<std::string>{}), Error);
  }
}

TEST_SUITE("top-k overlap") {
  TEST_CASE("identical models and full-support k") {
    const auto qs = fixture_queries();
    for (std::size_t k : {1u, 5u, 10u}) CHECK(topk_overlap(model(), model(), qs, k) == 100.0);
    const auto edited = apply_delta(model(), 1, Mat::Ones(16, 32));
    CHECK(topk_overlap(model(), edited, qs, model().vocab().size()) == 100.0);
    CHECK_THROWS_AS(topk_overlap(model(), model(), qs, 0), Error);
    CHECK_THROWS_AS(topk_overlap(model(), model(), qs, model().vocab().size() + 1), Error);
  }

  TEST_CASE("indicator forms: identical, disjoint, bad popcount") {
    const std::vector<std::uint8_t> a{1, 1, 0, 0, 0, 0};
    const std::vector<std::uint8_t> b{0, 0, 0, 0, 1, 1};
    const auto same = overlap_from_indicators(a, a, 2);
    CHECK(same.set_form == 1.0);
    CHECK(same.l1_form == 1.0);
    const auto disjoint = overlap_from_indicators(a, b, 2);
    CHECK(disjoint.set_form == 0.0);
    CHECK(disjoint.l1_form == 0.0);
    CHECK_THROWS_AS(overlap_from_indicators(a, b, 3), Error);
    const std::vector<std::uint8_t> two{2, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(overlap_from_indicators(two, a, 2), Error);
  }

  TEST_CASE("exhaustive indicator pairs at dim 8, k 3") {
    std::vector<std::vector<std::uint8_t>> supports;
    for (int mask = 0; mask < 256; ++mask) {
      if (__builtin_popcount(static_cast<unsigned>(mask)) != 3) continue;
      std::vector<std::uint8_t> ind(8);
      for (int i = 0; i < 8; ++i) ind[i] = static_cast<std::uint8_t>((mask >> i) & 1);
      supports.push_back(ind);
    }
    REQUIRE(supports.size() == 56);
    std::size_t checked = 0;
    for (const auto& a : supports) {
      for (const auto& b : supports) {
        int inter = 0;
        int l1 = 0;
        for (int i = 0; i < 8; ++i) {
          inter += a[i] && b[i];
          l1 += a[i] != b[i];
        }
        const auto f = overlap_from_indicators(a, b, 3);
        CHECK(f.set_form == f.l1_form);
        CHECK(f.set_form == static_cast<double>(inter) / 3.0);
        CHECK(f.l1_distance == l1);
        CHECK(l1 == 6 - 2 * inter);
        ++checked;
      }
    }
    CHECK(checked == 3136);
  }

  TEST_CASE("random logit pairs: set and L1 forms agree for k in {1,5,10}") {
    std::mt19937_64 gen(23);
    const long v = static_cast<long>(toy_vocab().size());
    for (int trial = 0; trial < 500; ++trial) {
      const LogitVector a{oracle::random_matrix(gen, v, 1).col(0)};
      const LogitVector b{oracle::random_matrix(gen, v, 1).col(0)};
      for (std::size_t k : {1u, 5u, 10u}) {
        const auto f = overlap_from_indicators(topk_indicator(a, k), topk_indicator(b, k), k);
        auto sa = oracle::selection_topk(a, static_cast<int>(k));
        auto sb = oracle::selection_topk(b, static_cast<int>(k));
        int inter = 0;
        for (int x : sa) inter += std::count(sb.begin(), sb.end(), x) > 0;
        CHECK(f.set_form == f.l1_form);
        CHECK(f.intersection == inter);
      }
    }
  }
}

TEST_SUITE("consistency split") {
  TEST_CASE("judge normalization") {
    CHECK(containment_judge("Halia Jelia", "halia"));
    CHECK(containment_judge("the  HALIA.", " Halia! "));
    CHECK_FALSE(containment_judge("Jelia", "Halia"));
    CHECK_FALSE(containment_judge("Jelia", "?!"));
  }

  TEST_CASE("exact decode is consistent, unknown answer is inconsistent") {
    const auto qs = fixture_queries();
    std::vector<PreservationQuery> queries{
        {"a", qs[0], std::nullopt, decode_text(model(), qs[0], kJudgeDecodeTokens)},
        {"b", qs[1], std::nullopt, "Zzqqx"}};
    const auto split = split_by_consistency(model(), queries);
    REQUIRE(split.consistent.size() == 1);
    REQUIRE(split.inconsistent.size() == 1);
    CHECK(split.consistent[0].id == "a");
    CHECK(split.inconsistent[0].id == "b");
    queries[0].gt_answer.reset();
    CHECK_THROWS_AS(split_by_consistency(model(), queries), Error);
  }

  TEST_CASE("pluggable judge") {
    const auto qs = fixture_queries();
    const std::vector<PreservationQuery> queries{{"a", qs[0], std::nullopt, "x"},
                                                 {"b", qs[1], std::nullopt, "y"}};
    const auto split = split_by_consistency(
        model(), queries, [](std::string_view, std::string_view answer) { return answer == "y"; });
    CHECK(split.consistent.size() == 1);
    CHECK(split.consistent[0].id == "b");
  }

  TEST_CASE("inconsistency fixture: split as constructed, token accuracy survives") {
    const auto fx = make_inconsistency_fixture(model(), 4);
    const auto split = split_by_consistency(model(), fx.dataset.preservation_queries);
    std::vector<std::string> consistent;
    std::vector<std::string> inconsistent;
    for (const auto& q : split.consistent) consistent.push_back(q.id);
    for (const auto& q : split.inconsistent) inconsistent.push_back(q.id);
    CHECK(consistent == fx.consistent_ids);
    CHECK(inconsistent == fx.inconsistent_ids);
    CHECK(fx.inconsistent_ids.size() == 2 * fx.consistent_ids.size());
    std::vector<GroundTruthItem> gt;
    for (const auto& q : split.inconsistent) gt.push_back({q.query, *q.gt_answer});
    CHECK(s_accuracy(model(), gt) == 0.0);
    CHECK(t_accuracy(model(), gt) > 30.0);
  }
}
