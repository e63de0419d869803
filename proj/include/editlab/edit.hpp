#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "editlab/model.hpp"

namespace editlab {

// One piece of knowledge to write into the model.
struct EditItem {
  std::string id;
  std::string query;
  std::string target_new;
  std::optional<std::string> target_old;
  std::optional<int> decisive_index;  // index into tokenize(query); default last
  std::vector<std::string> paraphrases;
  std::vector<std::string> neighborhood_queries;
};

// A query whose behaviour the edit should leave alone. Its key enters the
// regularizer; gt_answer, when present, feeds the ground-truth metrics.
struct PreservationQuery {
  std::string id;
  std::string query;
  std::optional<int> decisive_index;
  std::optional<std::string> gt_answer;
};

struct KeyMatrix {
  int layer = 0;
  Mat columns;  // d_ff x count
};

struct TargetMatrix {
  int layer = 0;
  Mat columns;  // d_model x count
};

KeyMatrix collect_keys(const ToyTransformer& model, std::span<const EditItem> items,
                       int layer);
KeyMatrix collect_keys(const ToyTransformer& model,
                       std::span<const PreservationQuery> queries, int layer);

struct TargetOptions {
  double learning_rate = 1.0;
  int max_steps = 50;
  bool early_stop = true;  // stop once every target token is top-1
};

struct TargetResult {
  Vec value;    // z: the post-W_out activation to aim for
  Vec initial;  // pre-edit activation at the same site
  int position = 0;
  int steps = 0;
  double log_prob_before = 0.0;  // mean per-token log-prob of target_new
  double log_prob_after = 0.0;
  bool all_top1 = false;
};

// Gradient ascent on the post-W_out activation of the decisive token at
// `layer`, maximizing the teacher-forced mean log-probability of target_new.
// Throws OptimizationDiverged if the objective becomes non-finite.
TargetResult compute_target(const ToyTransformer& model, const EditItem& item, int layer,
                            const TargetOptions& options = {});

// K_I K_I^T + lambda K_J K_J^T, symmetric by construction.
Mat regularized_gram(const Mat& keys_edit, const Mat& keys_preserve, double lambda);

struct DeltaSolve {
  Mat delta;
  bool jitter_applied = false;
  double jitter = 0.0;
};

// Delta = (M_I - W K_I) K_I^T (K_I K_I^T + lambda K_J K_J^T)^{-1} by Cholesky
// on the symmetric Gram matrix; no explicit inverse is formed. When the Gram
// matrix is singular to working precision, eps*I with
// eps = 1e-10 * trace / dim is added and reported.
DeltaSolve solve_delta(const Mat& w, const KeyMatrix& keys_edit, const TargetMatrix& targets,
                       const KeyMatrix& keys_preserve, double lambda);

// sum_i ||(W + Delta) k_i - m_i||^2 + lambda sum_j ||Delta k_j||^2
double objective_value(const Mat& w, const Mat& delta, const KeyMatrix& keys_edit,
                       const TargetMatrix& targets, const KeyMatrix& keys_preserve,
                       double lambda);

// Mean over columns j of ||Delta k_j||; 0 for an empty key set.
double regularizer_norms(const Mat& delta, const KeyMatrix& keys_preserve);

struct EditSolution {
  double lambda = 0.0;
  std::vector<int> layers;
  std::vector<Mat> deltas;
  std::vector<double> mean_reg_norm;
  std::vector<double> objective_before;
  std::vector<double> objective_after;
  std::vector<bool> jitter_applied;

  // Arithmetic mean of mean_reg_norm across layers.
  double mean_norm_across_layers() const;
};

// Everything about a batch edit that does not depend on lambda: the
// preservation keys (computed once on the pre-edit model) and the per-item
// residual z - h at the last edited layer.
struct EditPlan {
  std::vector<int> layers;
  std::vector<KeyMatrix> preservation_keys;  // one per layer
  Mat residuals;                             // d_model x n_items
  std::vector<TargetResult> targets;
};

EditPlan prepare_edit(const ToyTransformer& model, std::span<const EditItem> items,
                      std::span<const int> layers,
                      std::span<const PreservationQuery> preservation,
                      const TargetOptions& options = {});

struct EditOutcome {
  ToyTransformer model;
  EditSolution solution;
};

// Spreads the residual equally over the layers and solves the closed form per
// layer in ascending order, re-keying the edit items against the partially
// edited model. All items are edited jointly.
EditOutcome execute_edit(const ToyTransformer& model, std::span<const EditItem> items,
                         const EditPlan& plan, double lambda);

EditOutcome multi_layer_edit(const ToyTransformer& model, std::span<const EditItem> items,
                             std::span<const int> layers, double lambda,
                             std::span<const PreservationQuery> preservation,
                             const TargetOptions& options = {});

}  // namespace editlab
