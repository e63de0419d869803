#include "editlab/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <numeric>
#include <sstream>

#include "editlab/checkpoint.hpp"
#include "editlab/error.hpp"
#include "editlab/evaluation.hpp"
#include "editlab/stats.hpp"

namespace editlab {
namespace {

using nlohmann::json;

std::string topk_column(int k) { return "Top-" + std::to_string(k); }

std::string norm_column(int layer) { return "norm_L" + std::to_string(layer); }

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  return obj.at(key).get<T>();
}

MetricToggles toggles_from_json(const json& list) {
  if (!list.is_array()) throw Error(ErrorCode::kConfigError, "'metrics' must be an array");
  MetricToggles t{false, false, false, false, false};
  for (const json& item : list) {
    const std::string name = item.get<std::string>();
    if (name == kColSAcc) {
      t.s_acc = true;
    } else if (name == kColTAcc) {
      t.t_acc = true;
    } else if (name == kColCAcc) {
      t.c_acc = true;
    } else if (name == kColKl) {
      t.kl = true;
    } else if (name == "Top-k") {
      t.topk = true;
    } else {
      throw Error(ErrorCode::kConfigError, "unknown metric '" + name + "'");
    }
  }
  return t;
}

std::vector<std::string> preservation_texts(const Dataset& dataset) {
  std::vector<std::string> out;
  out.reserve(dataset.preservation_queries.size());
  for (const auto& q : dataset.preservation_queries) out.push_back(q.query);
  return out;
}

std::vector<GroundTruthItem> ground_truth(const Dataset& dataset) {
  std::vector<GroundTruthItem> out;
  for (const auto& q : dataset.preservation_queries) {
    if (q.gt_answer) out.push_back({q.query, *q.gt_answer});
  }
  return out;
}

bool has_paraphrases(const Dataset& dataset) {
  return !dataset.edit_items.empty() &&
         std::all_of(dataset.edit_items.begin(), dataset.edit_items.end(),
                     [](const EditItem& item) { return !item.paraphrases.empty(); });
}

void score_edit_set(SweepRow& row, const ToyTransformer& post, const Dataset& dataset) {
  row.efficacy = efficacy(post, dataset.edit_items);
  if (dataset.kind == DatasetKind::kCounterfactual) {
    row.efficacy_probability = efficacy_by_probability(post, dataset.edit_items);
  }
  if (has_paraphrases(dataset)) row.generalization = generalization(post, dataset.edit_items);
}

// The rounding every emitted number goes through, so CSV and JSON agree.
double rounded(double value) { return std::strtod(format_number(value).c_str(), nullptr); }

json optional_number(const std::optional<double>& value) {
  return value ? json(rounded(*value)) : json(nullptr);
}

}  // namespace

MetricToggles MetricToggles::defaults_for(DatasetKind kind) {
  MetricToggles t;
  t.t_acc = kind == DatasetKind::kFactual;
  t.c_acc = kind == DatasetKind::kCounterfactual;
  return t;
}

void ExperimentConfig::validate(const ToyTransformer& model) const {
  if (lambda_grid.empty()) throw Error(ErrorCode::kConfigError, "lambda grid is empty");
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] > 0.0) || !std::isfinite(lambda_grid[i])) {
      throw Error(ErrorCode::kConfigError, "lambda values must be positive and finite");
    }
    if (i > 0 && lambda_grid[i] <= lambda_grid[i - 1]) {
      throw Error(ErrorCode::kConfigError, "lambda grid must be strictly increasing");
    }
  }
  if (layers.empty()) throw Error(ErrorCode::kConfigError, "no edited layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] < 0 || layers[i] >= model.config().n_layers) {
      throw Error(ErrorCode::kConfigError, "layer " + std::to_string(layers[i]) +
                                               " outside a " +
                                               std::to_string(model.config().n_layers) +
                                               "-layer model");
    }
    if (i > 0 && layers[i] <= layers[i - 1]) {
      throw Error(ErrorCode::kConfigError, "layers must be strictly ascending");
    }
  }
  for (int k : topk) {
    if (k < 1 || static_cast<std::size_t>(k) > model.vocab().size()) {
      throw Error(ErrorCode::kConfigError, "top-k value " + std::to_string(k) +
                                               " outside [1, vocab size]");
    }
  }
}

std::uint64_t ExperimentConfig::effective_model_seed() const {
  return model_seed_set ? model.seed : seed;
}

std::uint64_t ExperimentConfig::effective_fixture_seed() const {
  return fixture_seed_set ? fixture.seed : seed;
}

ExperimentConfig config_from_json(const json& doc) {
  if (!doc.is_object()) throw Error(ErrorCode::kConfigError, "config must be a JSON object");
  ExperimentConfig c;
  try {
    c.seed = get_or<std::uint64_t>(doc, "seed", c.seed);
    if (doc.contains("model")) {
      const json& m = doc.at("model");
      if (m.contains("path")) c.model_path = m.at("path").get<std::string>();
      c.model.d_model = get_or(m, "d_model", c.model.d_model);
      c.model.n_layers = get_or(m, "n_layers", c.model.n_layers);
      c.model.n_heads = get_or(m, "n_heads", c.model.n_heads);
      c.model.d_ff = get_or(m, "d_ff", c.model.d_ff);
      c.model.max_seq = get_or(m, "max_seq", c.model.max_seq);
      c.model.init_std = get_or(m, "init_std", c.model.init_std);
      if (m.contains("seed")) {
        c.model.seed = m.at("seed").get<std::uint64_t>();
        c.model_seed_set = true;
      }
    }
    if (doc.contains("dataset")) {
      const json& d = doc.at("dataset");
      if (d.contains("path")) c.dataset_path = d.at("path").get<std::string>();
      if (d.contains("fixture")) {
        c.fixture_kind = dataset_kind_from_string(d.at("fixture").get<std::string>());
      }
      c.fixture.n_edits = get_or(d, "n_edits", c.fixture.n_edits);
      c.fixture.n_preserve = get_or(d, "n_preserve", c.fixture.n_preserve);
      c.fixture.neighbors_per_edit = get_or(d, "neighbors_per_edit", c.fixture.neighbors_per_edit);
      c.fixture.consistent_fraction =
          get_or(d, "consistent_fraction", c.fixture.consistent_fraction);
      if (d.contains("seed")) {
        c.fixture.seed = d.at("seed").get<std::uint64_t>();
        c.fixture_seed_set = true;
      }
    }
    if (doc.contains("layers")) c.layers = doc.at("layers").get<std::vector<int>>();
    if (doc.contains("lambda_grid")) {
      c.lambda_grid = doc.at("lambda_grid").get<std::vector<double>>();
    }
    if (doc.contains("topk")) c.topk = doc.at("topk").get<std::vector<int>>();
    if (doc.contains("metrics")) c.metrics = toggles_from_json(doc.at("metrics"));
    if (doc.contains("target")) {
      const json& t = doc.at("target");
      c.target.learning_rate = get_or(t, "learning_rate", c.target.learning_rate);
      c.target.max_steps = get_or(t, "max_steps", c.target.max_steps);
      c.target.early_stop = get_or(t, "early_stop", c.target.early_stop);
    }
    if (doc.contains("output_dir")) c.output_dir = doc.at("output_dir").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open config " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfigError, path.string() + ": " + e.what());
  }
  return config_from_json(doc);
}

std::filesystem::path resolve_output_dir(const ExperimentConfig& config) {
  if (const char* env = std::getenv(kOutputDirEnv); env != nullptr && *env != '\0') return env;
  return config.output_dir;
}

ToyTransformer materialize_model(const ExperimentConfig& config) {
  if (config.model_path) return load_checkpoint(*config.model_path);
  ModelConfig mc = config.model;
  mc.seed = config.effective_model_seed();
  return ToyTransformer::initialize(mc, toy_vocab());
}

Dataset materialize_dataset(const ExperimentConfig& config, const ToyTransformer& model) {
  if (config.dataset_path) return load_dataset(*config.dataset_path);
  FixtureOptions opts = config.fixture;
  opts.seed = config.effective_fixture_seed();
  return config.fixture_kind == DatasetKind::kCounterfactual
             ? make_counterfactual_fixture(model, opts)
             : make_factual_fixture(model, opts);
}

double SweepRow::mean_norm() const {
  if (layer_norms.empty()) return 0.0;
  return std::accumulate(layer_norms.begin(), layer_norms.end(), 0.0) /
         static_cast<double>(layer_norms.size());
}

bool SweepResult::all_rows_ok() const {
  return std::none_of(rows.begin(), rows.end(), [](const SweepRow& r) { return r.error; });
}

std::vector<std::string> SweepResult::value_columns() const {
  std::vector<std::string> cols;
  for (int layer : layers) cols.push_back(norm_column(layer));
  cols.insert(cols.end(), metric_columns.begin(), metric_columns.end());
  cols.emplace_back(kColEfficacy);
  cols.emplace_back(kColGeneralization);
  return cols;
}

std::optional<double> SweepResult::value(const SweepRow& row, const std::string& column) const {
  if (row.error) return std::nullopt;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (column == norm_column(layers[i])) return row.layer_norms.at(i);
  }
  const MetricReport& m = row.metrics;
  if (column == kColSAcc) return m.s_accuracy;
  if (column == kColTAcc) return m.t_accuracy;
  if (column == kColCAcc) return m.c_accuracy;
  if (column == kColKl) return m.kl_mean;
  if (column == kColEfficacy) return row.efficacy;
  if (column == kColGeneralization) return row.generalization;
  if (column.rfind("Top-", 0) == 0) {
    const int k = std::stoi(column.substr(4));
    if (auto it = m.topk_overlap.find(k); it != m.topk_overlap.end()) return it->second;
    return std::nullopt;
  }
  throw Error(ErrorCode::kConfigError, "unknown column '" + column + "'");
}

std::vector<std::string> metric_columns(const MetricToggles& toggles, std::span<const int> topk) {
  std::vector<std::string> cols;
  if (toggles.s_acc) cols.emplace_back(kColSAcc);
  if (toggles.t_acc) cols.emplace_back(kColTAcc);
  if (toggles.c_acc) cols.emplace_back(kColCAcc);
  if (toggles.kl) cols.emplace_back(kColKl);
  if (toggles.topk) {
    for (int k : topk) cols.push_back(topk_column(k));
  }
  return cols;
}

MetricReport evaluate_metrics(const ToyTransformer& pre, const ToyTransformer& post,
                              const Dataset& dataset, const MetricToggles& toggles,
                              std::span<const int> topk) {
  MetricReport report;
  const auto texts = preservation_texts(dataset);
  report.n_queries = texts.size();
  if (toggles.s_acc || toggles.t_acc) {
    const auto gt = ground_truth(dataset);
    if (toggles.s_acc) report.s_accuracy = s_accuracy(post, gt);
    if (toggles.t_acc) report.t_accuracy = t_accuracy(post, gt);
  }
  if (toggles.c_acc) report.c_accuracy = c_accuracy(post, dataset.edit_items);
  if (toggles.kl) report.kl_mean = kl_specificity(pre, post, texts);
  if (toggles.topk) {
    for (int k : topk) {
      report.topk_overlap[k] = topk_overlap(pre, post, texts, static_cast<std::size_t>(k));
    }
  }
  return report;
}

SweepResult run_sweep(const ExperimentConfig& config, const Dataset& dataset,
                      const ToyTransformer& pre_model) {
  config.validate(pre_model);
  const MetricToggles toggles = config.metrics.value_or(MetricToggles::defaults_for(dataset.kind));

  SweepResult result;
  result.dataset = dataset.name;
  result.layers = config.layers;
  result.metric_columns = metric_columns(toggles, config.topk);
  result.has_generalization = has_paraphrases(dataset);

  SweepRow pre_row;
  pre_row.label = "pre-edit";
  pre_row.layer_norms.assign(config.layers.size(), 0.0);
  try {
    pre_row.metrics = evaluate_metrics(pre_model, pre_model, dataset, toggles, config.topk);
    score_edit_set(pre_row, pre_model, dataset);
  } catch (const Error& e) {
    pre_row.error = e.what();
  }
  result.rows.push_back(std::move(pre_row));

  // The plan (targets and preservation keys) is shared by every lambda. If it
  // cannot be built, every lambda row carries the same error.
  std::optional<EditPlan> plan;
  std::string plan_error;
  try {
    plan = prepare_edit(pre_model, dataset.edit_items, config.layers,
                        dataset.preservation_queries, config.target);
  } catch (const Error& e) {
    plan_error = e.what();
  }

  auto run_row = [&](double lambda) {
    SweepRow row;
    row.label = "lambda=" + format_number(lambda);
    row.lambda = lambda;
    if (!plan) {
      row.error = plan_error;
      return row;
    }
    try {
      const EditOutcome outcome = execute_edit(pre_model, dataset.edit_items, *plan, lambda);
      row.layer_norms = outcome.solution.mean_reg_norm;
      row.metrics = evaluate_metrics(pre_model, outcome.model, dataset, toggles, config.topk);
      score_edit_set(row, outcome.model, dataset);
    } catch (const Error& e) {
      row.error = e.what();
    }
    return row;
  };

  // Rows are independent; collecting futures in grid order keeps the output
  // order fixed. Displayed order is largest lambda first.
  std::vector<std::future<SweepRow>> pending;
  for (auto it = config.lambda_grid.rbegin(); it != config.lambda_grid.rend(); ++it) {
    pending.push_back(std::async(std::launch::async, run_row, *it));
  }
  for (auto& f : pending) result.rows.push_back(f.get());

  // Summary over rows that succeeded.
  std::vector<const SweepRow*> ok;
  for (const SweepRow& r : result.rows) {
    if (!r.error) ok.push_back(&r);
  }
  std::vector<double> reference;
  for (const SweepRow* r : ok) reference.push_back(r->mean_norm());

  for (const std::string& column : result.value_columns()) {
    SummaryEntry entry;
    entry.column = column;
    entry.percentage = column != kColKl && column.rfind("norm_L", 0) != 0;
    std::vector<double> values;
    std::vector<double> ref;
    for (std::size_t i = 0; i < ok.size(); ++i) {
      if (auto v = result.value(*ok[i], column)) {
        values.push_back(*v);
        ref.push_back(reference[i]);
      }
    }
    if (values.size() >= 2) {
      const TauResult tau = kendall_tau(values, ref);
      if (!tau.degenerate) entry.tau_abs = std::fabs(tau.value);
      if (entry.percentage) {
        entry.coverage = coverage_proportion(values, 0.0, 100.0);
        entry.std_dev = std_dev(values);
      }
    }
    result.summary.push_back(std::move(entry));
  }
  return result;
}

std::string format_number(double value) {
  if (std::isnan(value)) return "nan";
  if (value == 0.0) return "0";  // folds -0
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return buf;
}

std::string emit_csv(const SweepResult& result) {
  const auto columns = result.value_columns();
  std::ostringstream out;
  out << "row,lambda";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (const SweepRow& row : result.rows) {
    out << row.label << ',' << (row.lambda ? format_number(*row.lambda) : "n/a");
    for (const auto& c : columns) {
      if (row.error) {
        out << ",error";
      } else {
        const auto v = result.value(row, c);
        out << ',' << (v ? format_number(*v) : "n/a");
      }
    }
    out << '\n';
  }

  auto summary_line = [&](const char* label, auto&& cell) {
    out << label << ",n/a";
    for (const SummaryEntry& e : result.summary) out << ',' << cell(e);
    out << '\n';
  };
  auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : "n/a"; };
  summary_line("|tau|", [&](const SummaryEntry& e) { return opt(e.tau_abs); });
  summary_line("range", [](const SummaryEntry& e) {
    return e.percentage ? std::string("0~100") : std::string("n/a");
  });
  summary_line("coverage", [&](const SummaryEntry& e) { return opt(e.coverage); });
  summary_line("std", [&](const SummaryEntry& e) { return opt(e.std_dev); });
  return out.str();
}

json emit_json(const SweepResult& result) {
  json doc;
  doc["schema"] = "editlab-sweep";
  doc["schema_version"] = kSweepSchemaVersion;
  doc["dataset"] = result.dataset;
  doc["layers"] = result.layers;
  doc["columns"] = result.value_columns();
  json rows = json::array();
  for (const SweepRow& row : result.rows) {
    json r;
    r["label"] = row.label;
    r["lambda"] = optional_number(row.lambda);
    if (row.error) {
      r["error"] = *row.error;
      rows.push_back(std::move(r));
      continue;
    }
    json norms = json::array();
    for (double n : row.layer_norms) norms.push_back(rounded(n));
    r["layer_norms"] = std::move(norms);
    r["mean_norm"] = rounded(row.mean_norm());
    json metrics = json::object();
    for (const std::string& c : result.metric_columns) {
      metrics[c] = optional_number(result.value(row, c));
    }
    r["metrics"] = std::move(metrics);
    r["efficacy"] = rounded(row.efficacy);
    r["efficacy_probability"] = optional_number(row.efficacy_probability);
    r["generalization"] = optional_number(row.generalization);
    r["n_queries"] = row.metrics.n_queries;
    rows.push_back(std::move(r));
  }
  doc["rows"] = std::move(rows);
  json summary = json::array();
  for (const SummaryEntry& e : result.summary) {
    summary.push_back({{"column", e.column},
                       {"tau_abs", optional_number(e.tau_abs)},
                       {"range", e.percentage ? json("0~100") : json(nullptr)},
                       {"coverage", optional_number(e.coverage)},
                       {"std", optional_number(e.std_dev)}});
  }
  doc["summary"] = std::move(summary);
  doc["all_rows_ok"] = result.all_rows_ok();
  return doc;
}

void emit_table(const SweepResult& result, TableFormat format,
                const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  if (format == TableFormat::kCsv) {
    out << emit_csv(result);
  } else {
    out << emit_json(result).dump(2) << '\n';
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

}  // namespace editlab
