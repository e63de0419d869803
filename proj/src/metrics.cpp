#include "editlab/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "editlab/error.hpp"

namespace editlab {
namespace {

std::string_view trim(std::string_view s) {
  auto space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && space(s.front())) s.remove_prefix(1);
  while (!s.empty() && space(s.back())) s.remove_suffix(1);
  return s;
}

void require_same_vocab(const ToyTransformer& a, const ToyTransformer& b) {
  if (!(a.vocab() == b.vocab())) {
    throw Error(ErrorCode::kModelMismatch, "pre- and post-edit models use different vocabularies");
  }
}

}  // namespace

TokenSeq answer_tokens(std::string_view answer, const Vocab& vocab) {
  return encode(trim(answer), vocab);
}

double s_accuracy(const ToyTransformer& model, std::span<const GroundTruthItem> items) {
  if (items.empty()) throw Error(ErrorCode::kEmptyDataset, "s_accuracy needs items");
  std::size_t hits = 0;
  for (const GroundTruthItem& item : items) {
    const TokenSeq expected = answer_tokens(item.answer, model.vocab());
    const TokenSeq decoded = greedy_decode(model, tokenize(item.query, model.vocab()),
                                           static_cast<int>(expected.size()));
    if (decoded == expected) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(items.size());
}

double t_accuracy(const ToyTransformer& model, std::span<const GroundTruthItem> items) {
  if (items.empty()) throw Error(ErrorCode::kEmptyDataset, "t_accuracy needs items");
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const GroundTruthItem& item : items) {
    const auto scores = teacher_force_score(model, tokenize(item.query, model.vocab()),
                                            answer_tokens(item.answer, model.vocab()));
    for (const TokenScore& s : scores) correct += s.is_top1 ? 1 : 0;
    total += scores.size();
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

double mean_answer_log_prob(const ToyTransformer& model, std::string_view query,
                            std::string_view answer) {
  const auto scores = teacher_force_score(model, tokenize(query, model.vocab()),
                                          answer_tokens(answer, model.vocab()));
  double sum = 0.0;
  for (const TokenScore& s : scores) sum += s.log_prob;
  return sum / static_cast<double>(scores.size());
}

double c_accuracy(const ToyTransformer& model, std::span<const EditItem> items) {
  std::size_t pairs = 0;
  std::size_t wins = 0;
  for (const EditItem& item : items) {
    if (item.neighborhood_queries.empty()) continue;
    if (!item.target_old) {
      throw Error(ErrorCode::kMissingCounterfactual, "item '" + item.id + "' has no target_old");
    }
    for (const std::string& q : item.neighborhood_queries) {
      const double old_lp = mean_answer_log_prob(model, q, *item.target_old);
      const double new_lp = mean_answer_log_prob(model, q, item.target_new);
      if (old_lp > new_lp) ++wins;
      ++pairs;
    }
  }
  if (pairs == 0) throw Error(ErrorCode::kEmptyDataset, "no neighborhood queries to score");
  return 100.0 * static_cast<double>(wins) / static_cast<double>(pairs);
}

double kl_divergence(const LogitVector& p_logits, const LogitVector& q_logits) {
  if (p_logits.scores.size() != q_logits.scores.size()) {
    throw Error(ErrorCode::kModelMismatch, "logit vectors differ in length");
  }
  const Vec log_p = log_softmax(p_logits);
  const Vec log_q = log_softmax(q_logits);
  double kl = 0.0;
  for (Eigen::Index v = 0; v < log_p.size(); ++v) {
    kl += std::exp(log_p(v)) * (log_p(v) - log_q(v));
  }
  // Rounding can leave a tiny negative residue for nearly equal inputs.
  return std::max(kl, 0.0);
}

double kl_specificity(const ToyTransformer& pre, const ToyTransformer& post,
                      std::span<const std::string> queries) {
  require_same_vocab(pre, post);
  if (queries.empty()) throw Error(ErrorCode::kEmptyDataset, "kl_specificity needs queries");
  double total = 0.0;
  for (const std::string& q : queries) {
    const TokenSeq tokens = tokenize(q, pre.vocab());
    total += kl_divergence(last_token_logits(pre, tokens), last_token_logits(post, tokens));
  }
  return total / static_cast<double>(queries.size());
}

double topk_overlap(const ToyTransformer& pre, const ToyTransformer& post,
                    std::span<const std::string> queries, std::size_t k) {
  require_same_vocab(pre, post);
  if (k < 1 || k > pre.vocab().size()) {
    throw Error(ErrorCode::kBadK, "k=" + std::to_string(k));
  }
  if (queries.empty()) throw Error(ErrorCode::kEmptyDataset, "topk_overlap needs queries");
  double total = 0.0;
  for (const std::string& q : queries) {
    const TokenSeq tokens = tokenize(q, pre.vocab());
    std::vector<TokenId> a = top_k(last_token_logits(pre, tokens), k);
    std::vector<TokenId> b = top_k(last_token_logits(post, tokens), k);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<TokenId> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
    total += static_cast<double>(common.size()) / static_cast<double>(k);
  }
  return 100.0 * total / static_cast<double>(queries.size());
}

OverlapForms overlap_from_indicators(std::span<const std::uint8_t> a,
                                     std::span<const std::uint8_t> b, std::size_t k) {
  if (a.size() != b.size()) throw Error(ErrorCode::kBadIndicator, "indicator lengths differ");
  if (k == 0) throw Error(ErrorCode::kBadIndicator, "k must be positive");
  std::size_t ones_a = 0;
  std::size_t ones_b = 0;
  OverlapForms out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] > 1 || b[i] > 1) throw Error(ErrorCode::kBadIndicator, "entries must be 0 or 1");
    ones_a += a[i];
    ones_b += b[i];
    out.intersection += (a[i] & b[i]);
    out.l1_distance += (a[i] != b[i]) ? 1 : 0;
  }
  if (ones_a != k || ones_b != k) {
    throw Error(ErrorCode::kBadIndicator, "each indicator must hold exactly k ones");
  }
  const auto kd = static_cast<double>(k);
  out.set_form = static_cast<double>(out.intersection) / kd;
  out.l1_form = static_cast<double>(2 * static_cast<int>(k) - out.l1_distance) / (2.0 * kd);
  return out;
}

std::vector<std::uint8_t> topk_indicator(const LogitVector& logits, std::size_t k) {
  std::vector<std::uint8_t> ind(static_cast<std::size_t>(logits.scores.size()), 0);
  for (TokenId id : top_k(logits, k)) ind[static_cast<std::size_t>(id)] = 1;
  return ind;
}

}  // namespace editlab
