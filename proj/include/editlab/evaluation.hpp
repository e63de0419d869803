#pragma once

#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "editlab/edit.hpp"
#include "editlab/model.hpp"

namespace editlab {

// Percentage of edit items whose greedy decode on the edit query starts with
// the target_new tokens.
double efficacy(const ToyTransformer& model, std::span<const EditItem> items);

// Counterfactual variant: percentage of items where target_new outscores
// target_old (mean per-token log-probability under teacher forcing).
double efficacy_by_probability(const ToyTransformer& model, std::span<const EditItem> items);

// efficacy() over every (item, paraphrase) pair. MissingParaphrases if an
// item has none.
double generalization(const ToyTransformer& model, std::span<const EditItem> items);

// Decides whether a model response agrees with a ground-truth answer.
using ConsistencyJudge = std::function<bool(std::string_view response, std::string_view answer)>;

// Lowercases, drops punctuation and whitespace from both sides, then tests
// whether the answer is contained in the response.
bool containment_judge(std::string_view response, std::string_view answer);

struct ConsistencySplit {
  std::vector<PreservationQuery> consistent;
  std::vector<PreservationQuery> inconsistent;
};

inline constexpr int kJudgeDecodeTokens = 4;

// Greedy-decodes each query on the pre-edit model and routes it by the
// judge's verdict. MissingGroundTruth if any query lacks gt_answer.
ConsistencySplit split_by_consistency(const ToyTransformer& pre_model,
                                      std::span<const PreservationQuery> queries,
                                      const ConsistencyJudge& judge = containment_judge,
                                      int decode_tokens = kJudgeDecodeTokens);

}  // namespace editlab
