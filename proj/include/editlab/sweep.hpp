#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "editlab/dataset.hpp"
#include "editlab/edit.hpp"
#include "editlab/fixtures.hpp"
#include "editlab/metrics.hpp"
#include "editlab/model.hpp"

namespace editlab {

// Column names as they appear in output tables.
inline constexpr const char* kColSAcc = "S-acc";
inline constexpr const char* kColTAcc = "T-acc";
inline constexpr const char* kColCAcc = "C-acc";
inline constexpr const char* kColKl = "D_KL";
inline constexpr const char* kColEfficacy = "Efficacy";
inline constexpr const char* kColGeneralization = "Generalization";

struct MetricToggles {
  bool s_acc = true;
  bool t_acc = true;
  bool c_acc = true;
  bool kl = true;
  bool topk = true;

  // S-acc, C-acc, D_KL, Top-k for counterfactual data; S-acc, T-acc, D_KL,
  // Top-k for factual data.
  static MetricToggles defaults_for(DatasetKind kind);
};

struct ExperimentConfig {
  // Model: a checkpoint, or a fresh initialization from `model` (whose seed
  // defaults to `seed`).
  std::optional<std::filesystem::path> model_path;
  ModelConfig model;
  bool model_seed_set = false;

  // Dataset: a JSONL file, or a bundled fixture generated from the model.
  std::optional<std::filesystem::path> dataset_path;
  DatasetKind fixture_kind = DatasetKind::kCounterfactual;
  FixtureOptions fixture;
  bool fixture_seed_set = false;

  std::vector<int> layers{1, 2, 3};
  std::vector<double> lambda_grid{1.5e2, 1.5e3, 1.5e4, 1.5e5, 1.5e6};
  std::vector<int> topk{1, 5, 10};
  std::optional<MetricToggles> metrics;  // unset: defaults for the dataset kind
  TargetOptions target;
  std::filesystem::path output_dir = "editlab-out";
  std::uint64_t seed = 0;

  // Grid non-empty, positive and strictly increasing; layers ascending and
  // inside the model; top-k values inside the vocabulary.
  void validate(const ToyTransformer& model) const;

  // Seeds after applying the global seed to whatever was not set explicitly.
  std::uint64_t effective_model_seed() const;
  std::uint64_t effective_fixture_seed() const;
};

inline constexpr const char* kOutputDirEnv = "EDITLAB_OUTPUT_DIR";

ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

// Output directory after the environment override.
std::filesystem::path resolve_output_dir(const ExperimentConfig& config);

ToyTransformer materialize_model(const ExperimentConfig& config);
Dataset materialize_dataset(const ExperimentConfig& config, const ToyTransformer& model);

struct SweepRow {
  std::string label;
  std::optional<double> lambda;  // unset for the pre-edit row
  std::vector<double> layer_norms;
  MetricReport metrics;
  double efficacy = 0.0;
  std::optional<double> efficacy_probability;
  std::optional<double> generalization;
  std::optional<std::string> error;

  double mean_norm() const;
};

struct SummaryEntry {
  std::string column;
  std::optional<double> tau_abs;  // |Kendall tau| against the mean-norm column
  bool percentage = false;        // range 0~100; coverage and std reported
  std::optional<double> coverage;
  std::optional<double> std_dev;
};

struct SweepResult {
  std::string dataset;
  std::vector<int> layers;
  std::vector<std::string> metric_columns;
  bool has_generalization = false;
  std::vector<SweepRow> rows;  // pre-edit row first, then grid order
  std::vector<SummaryEntry> summary;

  bool all_rows_ok() const;
  // Every table column, in output order, after "row" and "lambda".
  std::vector<std::string> value_columns() const;
  std::optional<double> value(const SweepRow& row, const std::string& column) const;
};

std::vector<std::string> metric_columns(const MetricToggles& toggles, std::span<const int> topk);

MetricReport evaluate_metrics(const ToyTransformer& pre, const ToyTransformer& post,
                              const Dataset& dataset, const MetricToggles& toggles,
                              std::span<const int> topk);

// Pre-edit row, then one independent edit of the pre-edit model per lambda,
// then the summary block. A failing row records its error and the sweep moves
// on.
SweepResult run_sweep(const ExperimentConfig& config, const Dataset& dataset,
                      const ToyTransformer& pre_model);

// Six significant digits, "%.6g".
std::string format_number(double value);

std::string emit_csv(const SweepResult& result);
nlohmann::json emit_json(const SweepResult& result);

enum class TableFormat { kCsv, kJson };
void emit_table(const SweepResult& result, TableFormat format,
                const std::filesystem::path& path);

inline constexpr int kSweepSchemaVersion = 1;

}  // namespace editlab
