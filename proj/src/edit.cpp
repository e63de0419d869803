#include "editlab/edit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "editlab/error.hpp"

namespace editlab {
namespace {

int resolve_index(std::optional<int> decisive, const TokenSeq& tokens) {
  const int index = decisive.value_or(static_cast<int>(tokens.size()) - 1);
  if (index < 0 || static_cast<std::size_t>(index) >= tokens.size()) {
    throw Error(ErrorCode::kBadLocation, "decisive index " + std::to_string(index) +
                                             " outside query of " +
                                             std::to_string(tokens.size()) + " tokens");
  }
  return index;
}

template <typename Record>
KeyMatrix collect(const ToyTransformer& model, std::span<const Record> records, int layer) {
  if (layer < 0 || layer >= model.config().n_layers) {
    throw Error(ErrorCode::kBadLocation, "layer " + std::to_string(layer));
  }
  KeyMatrix keys{layer, Mat(model.config().d_ff, static_cast<Eigen::Index>(records.size()))};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const TokenSeq tokens = tokenize(records[i].query, model.vocab());
    const int index = resolve_index(records[i].decisive_index, tokens);
    keys.columns.col(static_cast<Eigen::Index>(i)) = extract_key(model, tokens, layer, index);
  }
  return keys;
}

void check_solve_shapes(const Mat& w, const KeyMatrix& keys_edit, const TargetMatrix& targets,
                        const KeyMatrix& keys_preserve) {
  const auto d_ff = w.cols();
  const auto d_model = w.rows();
  if (keys_edit.columns.rows() != d_ff || keys_preserve.columns.rows() != d_ff) {
    throw Error(ErrorCode::kShapeError, "key length must equal W's column count");
  }
  if (targets.columns.rows() != d_model) {
    throw Error(ErrorCode::kShapeError, "target length must equal W's row count");
  }
  if (targets.columns.cols() != keys_edit.columns.cols()) {
    throw Error(ErrorCode::kShapeError, "targets and edit keys differ in count");
  }
}

}  // namespace

KeyMatrix collect_keys(const ToyTransformer& model, std::span<const EditItem> items,
                       int layer) {
  return collect(model, items, layer);
}

KeyMatrix collect_keys(const ToyTransformer& model,
                       std::span<const PreservationQuery> queries, int layer) {
  return collect(model, queries, layer);
}

TargetResult compute_target(const ToyTransformer& model, const EditItem& item, int layer,
                            const TargetOptions& options) {
  if (item.target_new.empty()) {
    throw Error(ErrorCode::kEmptyInput, "item '" + item.id + "' has empty target_new");
  }
  const TokenSeq query = tokenize(item.query, model.vocab());
  const TokenSeq answer = encode(item.target_new, model.vocab());
  const int position = resolve_index(item.decisive_index, query);

  TargetResult result;
  result.position = position;
  result.initial = forward(model, query).mlp_out.at(static_cast<std::size_t>(layer)).col(position);
  result.value = result.initial;

  auto all_top1 = [&](const Vec& value) {
    const ActivationOverride at{layer, position, value};
    const auto scores = teacher_force_score(model, query, answer, &at);
    return std::all_of(scores.begin(), scores.end(),
                       [](const TokenScore& s) { return s.is_top1; });
  };

  AnswerGradient step = answer_log_prob_gradient(model, query, answer, layer, position,
                                                 result.value);
  result.log_prob_before = step.mean_log_prob;
  while (result.steps < options.max_steps) {
    if (options.early_stop && all_top1(result.value)) break;
    result.value += options.learning_rate * step.gradient;
    ++result.steps;
    step = answer_log_prob_gradient(model, query, answer, layer, position, result.value);
    if (!std::isfinite(step.mean_log_prob) || !result.value.allFinite()) {
      throw Error(ErrorCode::kOptimizationDiverged,
                  "target ascent for '" + item.id + "' became non-finite");
    }
  }
  result.log_prob_after = step.mean_log_prob;
  result.all_top1 = all_top1(result.value);
  return result;
}

Mat regularized_gram(const Mat& keys_edit, const Mat& keys_preserve, double lambda) {
  const auto dim = keys_edit.rows();
  Mat gram = Mat::Zero(dim, dim);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(keys_edit);
  if (keys_preserve.cols() > 0 && lambda != 0.0) {
    gram.selfadjointView<Eigen::Lower>().rankUpdate(keys_preserve, lambda);
  }
  return gram.selfadjointView<Eigen::Lower>();
}

DeltaSolve solve_delta(const Mat& w, const KeyMatrix& keys_edit, const TargetMatrix& targets,
                       const KeyMatrix& keys_preserve, double lambda) {
  check_solve_shapes(w, keys_edit, targets, keys_preserve);
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::kNumericalError, "lambda must be finite and non-negative");
  }
  if (!w.allFinite() || !keys_edit.columns.allFinite() || !targets.columns.allFinite() ||
      !keys_preserve.columns.allFinite()) {
    throw Error(ErrorCode::kNumericalError, "non-finite solve input");
  }

  const Mat& k = keys_edit.columns;
  const Mat residual = targets.columns - w * k;
  // Delta A = R K^T with A symmetric, so A Delta^T = K R^T.
  const Mat rhs = k * residual.transpose();
  Mat gram = regularized_gram(k, keys_preserve.columns, lambda);

  DeltaSolve out;
  const auto dim = static_cast<double>(gram.rows());
  Eigen::LLT<Mat> chol(gram);
  const double tiny = dim * std::numeric_limits<double>::epsilon();
  if (chol.info() != Eigen::Success || !(chol.rcond() > tiny)) {
    const double trace = gram.trace();
    out.jitter = 1e-10 * (trace > 0.0 ? trace : 1.0) / dim;
    out.jitter_applied = true;
    gram.diagonal().array() += out.jitter;
    chol.compute(gram);
    if (chol.info() != Eigen::Success) {
      throw Error(ErrorCode::kNumericalError, "Gram matrix not positive definite after jitter");
    }
  }
  out.delta = chol.solve(rhs).transpose();
  if (!out.delta.allFinite()) {
    throw Error(ErrorCode::kNumericalError, "closed-form delta is non-finite");
  }
  return out;
}

double objective_value(const Mat& w, const Mat& delta, const KeyMatrix& keys_edit,
                       const TargetMatrix& targets, const KeyMatrix& keys_preserve,
                       double lambda) {
  check_solve_shapes(w, keys_edit, targets, keys_preserve);
  if (delta.rows() != w.rows() || delta.cols() != w.cols()) {
    throw Error(ErrorCode::kShapeError, "delta shape must match W");
  }
  const double fit = ((w + delta) * keys_edit.columns - targets.columns).squaredNorm();
  const double reg = (delta * keys_preserve.columns).squaredNorm();
  return fit + lambda * reg;
}

double regularizer_norms(const Mat& delta, const KeyMatrix& keys_preserve) {
  if (keys_preserve.columns.rows() != delta.cols()) {
    throw Error(ErrorCode::kShapeError, "key length must equal delta's column count");
  }
  const auto count = keys_preserve.columns.cols();
  if (count == 0) return 0.0;
  const Mat moved = delta * keys_preserve.columns;
  double total = 0.0;
  for (Eigen::Index j = 0; j < count; ++j) total += moved.col(j).norm();
  return total / static_cast<double>(count);
}

double EditSolution::mean_norm_across_layers() const {
  if (mean_reg_norm.empty()) return 0.0;
  return std::accumulate(mean_reg_norm.begin(), mean_reg_norm.end(), 0.0) /
         static_cast<double>(mean_reg_norm.size());
}

EditPlan prepare_edit(const ToyTransformer& model, std::span<const EditItem> items,
                      std::span<const int> layers,
                      std::span<const PreservationQuery> preservation,
                      const TargetOptions& options) {
  if (items.empty()) throw Error(ErrorCode::kEmptyDataset, "no edit items");
  if (layers.empty()) throw Error(ErrorCode::kBadLocation, "no edited layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] < 0 || layers[i] >= model.config().n_layers) {
      throw Error(ErrorCode::kBadLocation, "layer " + std::to_string(layers[i]));
    }
    if (i > 0 && layers[i] <= layers[i - 1]) {
      throw Error(ErrorCode::kBadLocation, "edited layers must be strictly ascending");
    }
  }

  EditPlan plan;
  plan.layers.assign(layers.begin(), layers.end());
  for (int layer : layers) plan.preservation_keys.push_back(collect_keys(model, preservation, layer));

  const int last = layers.back();
  plan.residuals.resize(model.config().d_model, static_cast<Eigen::Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) {
    TargetResult target = compute_target(model, items[i], last, options);
    plan.residuals.col(static_cast<Eigen::Index>(i)) = target.value - target.initial;
    plan.targets.push_back(std::move(target));
  }
  return plan;
}

EditOutcome execute_edit(const ToyTransformer& model, std::span<const EditItem> items,
                         const EditPlan& plan, double lambda) {
  if (static_cast<Eigen::Index>(items.size()) != plan.residuals.cols()) {
    throw Error(ErrorCode::kShapeError, "plan was prepared for a different item count");
  }
  EditOutcome out{model, EditSolution{}};
  out.solution.lambda = lambda;
  out.solution.layers = plan.layers;
  const Mat share = plan.residuals / static_cast<double>(plan.layers.size());

  for (std::size_t j = 0; j < plan.layers.size(); ++j) {
    const int layer = plan.layers[j];
    const KeyMatrix keys = collect_keys(out.model, items, layer);
    const Mat& w = out.model.w_out(layer);
    const TargetMatrix targets{layer, w * keys.columns + share};
    const KeyMatrix& preserve = plan.preservation_keys[j];

    DeltaSolve solved = solve_delta(w, keys, targets, preserve, lambda);
    const Mat zero = Mat::Zero(w.rows(), w.cols());
    out.solution.objective_before.push_back(
        objective_value(w, zero, keys, targets, preserve, lambda));
    out.solution.objective_after.push_back(
        objective_value(w, solved.delta, keys, targets, preserve, lambda));
    out.solution.mean_reg_norm.push_back(regularizer_norms(solved.delta, preserve));
    out.solution.jitter_applied.push_back(solved.jitter_applied);
    out.model = apply_delta(out.model, layer, solved.delta);
    out.solution.deltas.push_back(std::move(solved.delta));
  }
  return out;
}

EditOutcome multi_layer_edit(const ToyTransformer& model, std::span<const EditItem> items,
                             std::span<const int> layers, double lambda,
                             std::span<const PreservationQuery> preservation,
                             const TargetOptions& options) {
  const EditPlan plan = prepare_edit(model, items, layers, preservation, options);
  return execute_edit(model, items, plan, lambda);
}

}  // namespace editlab
