#include "editlab/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "editlab/error.hpp"
#include "editlab/metrics.hpp"

namespace editlab {
namespace {

bool decode_starts_with(const ToyTransformer& model, std::string_view query,
                        std::string_view target) {
  const TokenSeq expected = answer_tokens(target, model.vocab());
  const TokenSeq decoded = greedy_decode(model, tokenize(query, model.vocab()),
                                         static_cast<int>(expected.size()));
  return decoded == expected;
}

std::string normalize(std::string_view text) {
  std::string out;
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u) || std::ispunct(u)) continue;
    out += static_cast<char>(std::tolower(u));
  }
  return out;
}

}  // namespace

double efficacy(const ToyTransformer& model, std::span<const EditItem> items) {
  if (items.empty()) throw Error(ErrorCode::kEmptyDataset, "efficacy needs items");
  const auto hits = std::count_if(items.begin(), items.end(), [&](const EditItem& item) {
    return decode_starts_with(model, item.query, item.target_new);
  });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(items.size());
}

double efficacy_by_probability(const ToyTransformer& model, std::span<const EditItem> items) {
  if (items.empty()) throw Error(ErrorCode::kEmptyDataset, "efficacy needs items");
  std::size_t hits = 0;
  for (const EditItem& item : items) {
    if (!item.target_old) {
      throw Error(ErrorCode::kMissingCounterfactual, "item '" + item.id + "' has no target_old");
    }
    if (mean_answer_log_prob(model, item.query, item.target_new) >
        mean_answer_log_prob(model, item.query, *item.target_old)) {
      ++hits;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(items.size());
}

double generalization(const ToyTransformer& model, std::span<const EditItem> items) {
  if (items.empty()) throw Error(ErrorCode::kEmptyDataset, "generalization needs items");
  std::size_t hits = 0;
  std::size_t total = 0;
  for (const EditItem& item : items) {
    if (item.paraphrases.empty()) {
      throw Error(ErrorCode::kMissingParaphrases, "item '" + item.id + "' has no paraphrases");
    }
    for (const std::string& p : item.paraphrases) {
      hits += decode_starts_with(model, p, item.target_new) ? 1 : 0;
      ++total;
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

bool containment_judge(std::string_view response, std::string_view answer) {
  const std::string needle = normalize(answer);
  if (needle.empty()) return false;
  return normalize(response).find(needle) != std::string::npos;
}

ConsistencySplit split_by_consistency(const ToyTransformer& pre_model,
                                      std::span<const PreservationQuery> queries,
                                      const ConsistencyJudge& judge, int decode_tokens) {
  ConsistencySplit split;
  for (const PreservationQuery& q : queries) {
    if (!q.gt_answer) {
      throw Error(ErrorCode::kMissingGroundTruth, "query '" + q.id + "' has no gt_answer");
    }
  }
  for (const PreservationQuery& q : queries) {
    const TokenSeq decoded =
        greedy_decode(pre_model, tokenize(q.query, pre_model.vocab()), decode_tokens);
    const std::string response = detokenize(decoded, pre_model.vocab());
    (judge(response, *q.gt_answer) ? split.consistent : split.inconsistent).push_back(q);
  }
  return split;
}

}  // namespace editlab
