#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "editlab/dataset.hpp"
#include "editlab/model.hpp"

namespace editlab {

// Built-in toy lexicon: special markers, relation template words, subject
// names and object names. Every fixture and default model uses it.
Vocab toy_vocab();

struct Relation {
  std::vector<std::string> prompt;      // query = prompt words + subject
  std::vector<std::string> paraphrase;  // paraphrase = these words + subject
  std::vector<std::string> objects;     // admissible answers
};

const std::vector<Relation>& toy_relations();
const std::vector<std::string>& toy_subjects();

struct FixtureOptions {
  std::uint64_t seed = 7;
  std::size_t n_edits = 32;
  std::size_t n_preserve = 128;  // matches the default d_ff, see README
  std::size_t neighbors_per_edit = 2;
  // Share of preservation queries whose gt_answer is the pre-edit model's own
  // greedy answer; the rest get a random admissible object.
  double consistent_fraction = 0.25;
};

// Counterfactual (MCF-like): every edit carries target_old, paraphrases and
// neighborhood queries; preservation queries carry gt answers.
Dataset make_counterfactual_fixture(const ToyTransformer& model, const FixtureOptions& options);

// Factual (ZsRE-like): no target_old, no neighborhood queries.
Dataset make_factual_fixture(const ToyTransformer& model, const FixtureOptions& options);

// Preservation-only dataset for the consistency-split protocol: one third of
// the queries get the model's own greedy answer (consistent); the rest get a
// two-token answer whose first token is not what the model says but whose
// second token is the model's teacher-forced top-1 continuation, so
// token-level accuracy stays positive while sample accuracy is zero.
struct InconsistencyFixture {
  Dataset dataset;
  std::vector<std::string> consistent_ids;
  std::vector<std::string> inconsistent_ids;
};

InconsistencyFixture make_inconsistency_fixture(const ToyTransformer& model,
                                                std::uint64_t seed, std::size_t n_queries = 30);

}  // namespace editlab
