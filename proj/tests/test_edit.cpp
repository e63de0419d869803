#include <doctest.h>

#include <random>

#include "editlab/edit.hpp"
#include "editlab/error.hpp"
#include "editlab/fixtures.hpp"
#include "editlab/stats.hpp"
#include "oracles.hpp"

using namespace editlab;

namespace {

struct Instance {
  Mat w, k_edit, m_edit, k_keep;
};

Instance random_instance(std::mt19937_64& gen, long d_ff, long d_model, long n, long u) {
  return {oracle::random_matrix(gen, d_model, d_ff), oracle::random_matrix(gen, d_ff, n),
          oracle::random_matrix(gen, d_model, n), oracle::random_matrix(gen, d_ff, u)};
}

DeltaSolve solve(const Instance& in, double lambda) {
  return solve_delta(in.w, KeyMatrix{0, in.k_edit}, TargetMatrix{0, in.m_edit},
                     KeyMatrix{0, in.k_keep}, lambda);
}

double objective(const Instance& in, const Mat& delta, double lambda) {
  return objective_value(in.w, delta, KeyMatrix{0, in.k_edit}, TargetMatrix{0, in.m_edit},
                         KeyMatrix{0, in.k_keep}, lambda);
}

const ToyTransformer& model() {
  static const ToyTransformer m = ToyTransformer::initialize(ModelConfig{}, toy_vocab());
  return m;
}

const Dataset& fixture() {
  static const Dataset ds = make_counterfactual_fixture(model(), FixtureOptions{});
  return ds;
}

}  // namespace

TEST_SUITE("solve_delta") {
  TEST_CASE("zero residual gives a zero delta") {
    std::mt19937_64 gen(1);
    Instance in = random_instance(gen, 8, 6, 3, 16);
    in.m_edit = in.w * in.k_edit;
    CHECK(solve(in, 10.0).delta.cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("no preservation keys and square invertible K_I interpolate exactly") {
    std::mt19937_64 gen(2);
    Instance in = random_instance(gen, 6, 4, 6, 0);
    const Mat delta = solve(in, 1.0).delta;
    CHECK(((in.w + delta) * in.k_edit - in.m_edit).norm() <= 1e-8);
  }

  TEST_CASE("matches the gradient-descent minimizer on the documented instance") {
    std::mt19937_64 gen(3);
    const Instance in = random_instance(gen, 8, 6, 3, 16);
    const Mat closed = solve(in, 10.0).delta;
    const Mat gd = oracle::gd_minimize(in.w, in.k_edit, in.m_edit, in.k_keep, 10.0, 5000);
    CHECK((closed - gd).norm() / gd.norm() <= 1e-5);
    CHECK(oracle::objective(in.w, closed, in.k_edit, in.m_edit, in.k_keep, 10.0) <=
          oracle::objective(in.w, gd, in.k_edit, in.m_edit, in.k_keep, 10.0) + 1e-8);
  }

  TEST_CASE("singular Gram matrix triggers the documented jitter") {
    std::mt19937_64 gen(4);
    Instance in = random_instance(gen, 8, 3, 2, 0);
    const DeltaSolve out = solve(in, 1.0);
    CHECK(out.jitter_applied);
    CHECK(out.jitter > 0.0);
    const Mat gram = in.k_edit * in.k_edit.transpose();
    CHECK(out.jitter == doctest::Approx(1e-10 * gram.trace() / 8.0));
    CHECK(out.delta.allFinite());
    CHECK_FALSE(solve(random_instance(gen, 8, 3, 2, 20), 1.0).jitter_applied);
  }

  TEST_CASE("shape and finiteness errors") {
    std::mt19937_64 gen(5);
    const Instance in = random_instance(gen, 8, 6, 3, 16);
    auto code = [](auto&& fn) {
      try {
        fn();
      } catch (const Error& e) {
        return e.code();
      }
      return ErrorCode::kIoError;
    };
    CHECK(code([&] {
            solve_delta(in.w, KeyMatrix{0, in.k_edit.topRows(7)}, TargetMatrix{0, in.m_edit},
                        KeyMatrix{0, in.k_keep}, 1.0);
          }) == ErrorCode::kShapeError);
    CHECK(code([&] {
            solve_delta(in.w, KeyMatrix{0, in.k_edit}, TargetMatrix{0, in.m_edit.leftCols(2)},
                        KeyMatrix{0, in.k_keep}, 1.0);
          }) == ErrorCode::kShapeError);
    Instance bad = in;
    bad.k_keep(0, 0) = std::numeric_limits<double>::infinity();
    CHECK(code([&] { solve(bad, 1.0); }) == ErrorCode::kNumericalError);
    CHECK(code([&] { solve(in, -1.0); }) == ErrorCode::kNumericalError);
  }

  TEST_CASE("property: Gram matrix is symmetric positive semidefinite") {
    std::mt19937_64 gen(6);
    for (int trial = 0; trial < 20; ++trial) {
      const Instance in = random_instance(gen, 10, 4, 3, 12);
      const Mat g = regularized_gram(in.k_edit, in.k_keep, 0.5 + trial);
      CHECK((g - g.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
      Eigen::SelfAdjointEigenSolver<Mat> eig(g);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * eig.eigenvalues().maxCoeff());
    }
  }

  TEST_CASE("property: regularizer norm is non-increasing in lambda (tau = -1)") {
    std::mt19937_64 gen(7);
    for (int trial = 0; trial < 10; ++trial) {
      const Instance in = random_instance(gen, 12, 5, 3, 20);
      std::vector<double> lambdas;
      std::vector<double> norms;
      for (double lambda = 1e-3; lambda <= 1e6; lambda *= 10.0) {
        lambdas.push_back(lambda);
        norms.push_back(regularizer_norms(solve(in, lambda).delta, KeyMatrix{0, in.k_keep}));
      }
      for (std::size_t i = 1; i < norms.size(); ++i) CHECK(norms[i] <= norms[i - 1]);
      CHECK(kendall_tau(lambdas, norms).value == -1.0);
    }
  }

  TEST_CASE("property: delta vanishes as lambda grows") {
    std::mt19937_64 gen(8);
    const Instance in = random_instance(gen, 8, 6, 3, 16);
    CHECK(solve(in, 1e12).delta.norm() <= 1e-6 * in.w.norm());
  }
}

TEST_SUITE("objective and norms") {
  TEST_CASE("zero delta and zero lambda limits") {
    std::mt19937_64 gen(9);
    const Instance in = random_instance(gen, 8, 6, 3, 16);
    const Mat zero = Mat::Zero(6, 8);
    CHECK(objective(in, zero, 3.0) == doctest::Approx((in.w * in.k_edit - in.m_edit).squaredNorm()));
    const Mat d = oracle::random_matrix(gen, 6, 8);
    CHECK(objective(in, d, 0.0) ==
          doctest::Approx(((in.w + d) * in.k_edit - in.m_edit).squaredNorm()));
    CHECK(objective(in, d, 2.0) ==
          doctest::Approx(oracle::objective(in.w, d, in.k_edit, in.m_edit, in.k_keep, 2.0)));
  }

  TEST_CASE("closed form is a strict local minimum under random perturbations") {
    std::mt19937_64 gen(10);
    const Instance in = random_instance(gen, 8, 6, 3, 16);
    const Mat best = solve(in, 10.0).delta;
    const double at_best = objective(in, best, 10.0);
    for (int trial = 0; trial < 20; ++trial) {
      Mat p = oracle::random_matrix(gen, 6, 8);
      p *= 1e-2 / p.norm();
      CHECK(objective(in, best + p, 10.0) > at_best);
    }
  }

  TEST_CASE("regularizer norms: zero, rank-one, and the naive loop") {
    std::mt19937_64 gen(11);
    const Mat k = oracle::random_matrix(gen, 8, 5);
    CHECK(regularizer_norms(Mat::Zero(4, 8), KeyMatrix{0, k}) == 0.0);
    CHECK(regularizer_norms(Mat::Ones(4, 8), KeyMatrix{0, Mat(8, 0)}) == 0.0);
    const Vec kj = k.col(0);
    const Vec v = oracle::random_matrix(gen, 4, 1).col(0);
    const Mat rank1 = v * kj.transpose() / kj.squaredNorm();
    CHECK(regularizer_norms(rank1, KeyMatrix{0, k.leftCols(1)}) == doctest::Approx(v.norm()).epsilon(1e-12));
    for (int trial = 0; trial < 20; ++trial) {
      const Mat d = oracle::random_matrix(gen, 4, 8);
      CHECK(regularizer_norms(d, KeyMatrix{0, k}) ==
            doctest::Approx(oracle::loop_reg_norm(d, k)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(regularizer_norms(Mat::Zero(4, 7), KeyMatrix{0, k}), Error);
  }
}

TEST_SUITE("keys and targets") {
  TEST_CASE("collect_keys: single item, duplicates, permutation") {
    const auto& items = fixture().edit_items;
    const std::vector<EditItem> one{items[0]};
    const KeyMatrix k1 = collect_keys(model(), one, 2);
    CHECK(k1.columns.cols() == 1);
    CHECK(k1.columns.col(0) == extract_key(model(), tokenize(items[0].query, model().vocab()), 2));

    const std::vector<EditItem> dup{items[0], items[0]};
    const KeyMatrix kd = collect_keys(model(), dup, 2);
    CHECK(kd.columns.col(0) == kd.columns.col(1));

    const std::vector<EditItem> forward_order{items[0], items[1], items[2], items[3]};
    const std::vector<EditItem> permuted{items[2], items[0], items[3], items[1]};
    const Mat a = collect_keys(model(), forward_order, 3).columns;
    const Mat b = collect_keys(model(), permuted, 3).columns;
    CHECK(b.col(0) == a.col(2));
    CHECK(b.col(1) == a.col(0));
    CHECK(b.col(2) == a.col(3));
    CHECK(b.col(3) == a.col(1));
  }

  TEST_CASE("decisive index override and bad locations") {
    EditItem item = fixture().edit_items[0];
    item.decisive_index = 1;
    const std::vector<EditItem> one{item};
    CHECK(collect_keys(model(), one, 1).columns.col(0) ==
          extract_key(model(), tokenize(item.query, model().vocab()), 1, 1));
    item.decisive_index = 40;
    const std::vector<EditItem> bad{item};
    CHECK_THROWS_AS(collect_keys(model(), bad, 1), Error);
  }

  TEST_CASE("zero ascent steps keep the pre-edit activation and give a zero delta") {
    const EditItem& item = fixture().edit_items[0];
    TargetOptions opts;
    opts.max_steps = 0;
    const TargetResult t = compute_target(model(), item, 3, opts);
    CHECK(t.value == t.initial);
    CHECK(t.steps == 0);
    const std::vector<EditItem> one{item};
    const KeyMatrix keys = collect_keys(model(), one, 3);
    const Mat& w = model().w_out(3);
    const Mat targets = t.value;
    const auto solved = solve_delta(w, keys, TargetMatrix{3, targets}, KeyMatrix{3, Mat(128, 0)}, 1.0);
    CHECK(solved.delta.norm() <= 1e-8);
  }

  TEST_CASE("ascent raises the target log-probability") {
    for (std::size_t i = 0; i < 4; ++i) {
      const EditItem& item = fixture().edit_items[i];
      const TargetResult t = compute_target(model(), item, 3);
      CHECK(t.log_prob_after > t.log_prob_before);
      const TokenSeq q = tokenize(item.query, model().vocab());
      const TokenSeq a = encode(item.target_new, model().vocab());
      const ActivationOverride at{3, t.position, t.value};
      double total = 0.0;
      for (const auto& s : teacher_force_score(model(), q, a, &at)) total += s.log_prob;
      CHECK(total / static_cast<double>(a.size()) == doctest::Approx(t.log_prob_after).epsilon(1e-12));
    }
  }

  TEST_CASE("ascent gradient matches central finite differences") {
    const auto m = oracle::small_model(16, 3, 4, 32, 13);
    const EditItem& item = fixture().edit_items[1];
    const TokenSeq q = tokenize(item.query, m.vocab());
    const TokenSeq a = encode(item.target_new + " " + fixture().edit_items[2].target_new, m.vocab());
    const int pos = static_cast<int>(q.size()) - 1;
    const Vec h0 = forward(m, q).mlp_out[1].col(pos);
    const AnswerGradient g = answer_log_prob_gradient(m, q, a, 1, pos, h0);
    auto f = [&](const Vec& v) {
      const ActivationOverride at{1, pos, v};
      double total = 0.0;
      for (const auto& s : teacher_force_score(m, q, a, &at)) total += s.log_prob;
      return total / static_cast<double>(a.size());
    };
    Vec fd(16);
    const double h = 1e-4;
    for (int i = 0; i < 16; ++i) {
      Vec up = h0;
      Vec down = h0;
      up(i) += h;
      down(i) -= h;
      fd(i) = (f(up) - f(down)) / (2.0 * h);
    }
    CHECK((g.gradient - fd).norm() / fd.norm() <= 1e-4);
    CHECK(g.mean_log_prob == doctest::Approx(f(h0)).epsilon(1e-12));
  }

  TEST_CASE("empty target is rejected") {
    EditItem item = fixture().edit_items[0];
    item.target_new = "";
    CHECK_THROWS_AS(compute_target(model(), item, 2), Error);
  }
}

TEST_SUITE("multi_layer_edit") {
  TEST_CASE("single layer, single item equals a direct solve") {
    // 128 keys in d_ff 32 keep the Gram matrix well conditioned.
    const auto m = oracle::small_model(16, 3, 4, 32, 21, 0.1);
    const EditItem& item = fixture().edit_items[5];
    const std::vector<EditItem> one{item};
    const std::vector<int> layers{2};
    const auto& keep = fixture().preservation_queries;
    const auto outcome = multi_layer_edit(m, one, layers, 100.0, keep);
    const TargetResult t = compute_target(m, item, 2);
    const KeyMatrix k = collect_keys(m, one, 2);
    const KeyMatrix kj = collect_keys(m, keep, 2);
    const Mat& w = m.w_out(2);
    const auto direct = solve_delta(w, k, TargetMatrix{2, t.value}, kj, 100.0);
    CHECK_FALSE(direct.jitter_applied);
    CHECK((outcome.solution.deltas.at(0) - direct.delta).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((outcome.model.w_out(2) - (w + direct.delta)).cwiseAbs().maxCoeff() <= 1e-12);
  }

  TEST_CASE("norms strictly decrease in lambda at every layer; objectives drop") {
    const auto& ds = fixture();
    const std::vector<int> layers{1, 2, 3};
    const EditPlan plan = prepare_edit(model(), ds.edit_items, layers, ds.preservation_queries);
    std::vector<std::vector<double>> norms(3);
    for (double lambda : {1.5e2, 1.5e3, 1.5e4, 1.5e5, 1.5e6}) {
      const auto out = execute_edit(model(), ds.edit_items, plan, lambda);
      for (std::size_t l = 0; l < 3; ++l) {
        norms[l].push_back(out.solution.mean_reg_norm[l]);
        CHECK(out.solution.objective_after[l] <= out.solution.objective_before[l]);
        CHECK(out.solution.mean_reg_norm[l] >= 0.0);
      }
    }
    for (const auto& per_layer : norms) {
      for (std::size_t i = 1; i < per_layer.size(); ++i) CHECK(per_layer[i] < per_layer[i - 1]);
    }
  }

  TEST_CASE("huge lambda leaves preservation logits within 1e-4") {
    const auto& ds = fixture();
    const std::vector<int> layers{1, 2, 3};
    const auto out = multi_layer_edit(model(), ds.edit_items, layers, 1e12, ds.preservation_queries);
    double worst = 0.0;
    for (const auto& q : ds.preservation_queries) {
      const TokenSeq toks = tokenize(q.query, model().vocab());
      worst = std::max(worst, (last_token_logits(out.model, toks).scores -
                               last_token_logits(model(), toks).scores)
                                  .cwiseAbs()
                                  .maxCoeff());
    }
    CHECK(worst <= 1e-4);
  }

  TEST_CASE("input validation") {
    const auto& ds = fixture();
    const std::vector<int> descending{3, 1};
    CHECK_THROWS_AS(prepare_edit(model(), ds.edit_items, descending, ds.preservation_queries), Error);
    const std::vector<int> outside{7};
    CHECK_THROWS_AS(prepare_edit(model(), ds.edit_items, outside, ds.preservation_queries), Error);
    const std::vector<EditItem> none;
    const std::vector<int> ok{1};
    CHECK_THROWS_AS(prepare_edit(model(), none, ok, ds.preservation_queries), Error);
  }
}
