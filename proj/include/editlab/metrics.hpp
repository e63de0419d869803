#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "editlab/edit.hpp"
#include "editlab/model.hpp"

namespace editlab {

// A query paired with its annotated ground-truth answer (y_GT).
struct GroundTruthItem {
  std::string query;
  std::string answer;
};

// Answer token ids as the ground-truth metrics see them: surrounding
// whitespace trimmed, no <bos>.
TokenSeq answer_tokens(std::string_view answer, const Vocab& vocab);

// Percentage of items whose greedy decode starts with exactly the answer's
// tokens. One wrong token fails the item.
double s_accuracy(const ToyTransformer& model, std::span<const GroundTruthItem> items);

// Percentage of all answer tokens, pooled across items, that are top-1 under
// teacher forcing.
double t_accuracy(const ToyTransformer& model, std::span<const GroundTruthItem> items);

// Mean per-token log-probability of `answer` after `query` under teacher
// forcing.
double mean_answer_log_prob(const ToyTransformer& model, std::string_view query,
                            std::string_view answer);

// Percentage of (item, neighborhood query) pairs where target_old scores a
// strictly higher mean per-token log-probability than target_new. Items
// without neighborhood queries are skipped; ties fail.
double c_accuracy(const ToyTransformer& model, std::span<const EditItem> items);

// KL(p || q) in nats, from the two log-softmax vectors.
double kl_divergence(const LogitVector& p_logits, const LogitVector& q_logits);

// Mean over queries of KL(pre || post) between last-token distributions.
double kl_specificity(const ToyTransformer& pre, const ToyTransformer& post,
                      std::span<const std::string> queries);

// Mean over queries of |S_k(pre) ∩ S_k(post)| / k, as a percentage.
double topk_overlap(const ToyTransformer& pre, const ToyTransformer& post,
                    std::span<const std::string> queries, std::size_t k);

struct OverlapForms {
  int intersection = 0;
  int l1_distance = 0;
  double set_form = 0.0;  // |A ∩ B| / k
  double l1_form = 0.0;   // 1 - ||1_A - 1_B||_1 / (2k), evaluated as (2k - L1) / (2k)
};

// Both forms of the top-k overlap from 0/1 indicator vectors that each hold
// exactly k ones (BadIndicator otherwise). The two doubles are bit-identical.
OverlapForms overlap_from_indicators(std::span<const std::uint8_t> a,
                                     std::span<const std::uint8_t> b, std::size_t k);

std::vector<std::uint8_t> topk_indicator(const LogitVector& logits, std::size_t k);

struct MetricReport {
  std::optional<double> s_accuracy;
  std::optional<double> t_accuracy;
  std::optional<double> c_accuracy;
  std::optional<double> kl_mean;
  std::map<int, double> topk_overlap;
  std::size_t n_queries = 0;
};

}  // namespace editlab
