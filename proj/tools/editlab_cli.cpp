// editlab: generate toy models and datasets, run edits, evaluate, sweep.
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "editlab/checkpoint.hpp"
#include "editlab/dataset.hpp"
#include "editlab/edit.hpp"
#include "editlab/error.hpp"
#include "editlab/evaluation.hpp"
#include "editlab/fixtures.hpp"
#include "editlab/metrics.hpp"
#include "editlab/sweep.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Global {
  std::optional<std::uint64_t> seed;
};

json report_json(const editlab::MetricReport& r) {
  json out;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) out[key] = *v;
  };
  put(editlab::kColSAcc, r.s_accuracy);
  put(editlab::kColTAcc, r.t_accuracy);
  put(editlab::kColCAcc, r.c_accuracy);
  put(editlab::kColKl, r.kl_mean);
  for (const auto& [k, v] : r.topk_overlap) out["Top-" + std::to_string(k)] = v;
  out["n_queries"] = r.n_queries;
  return out;
}

void add_gen_model(CLI::App& app, Global& g) {
  auto* cmd = app.add_subcommand("gen-model", "Initialize a toy transformer and save it");
  auto cfg = std::make_shared<editlab::ModelConfig>();
  auto out = std::make_shared<std::string>();
  cmd->add_option("-o,--out", *out, "Checkpoint path")->required();
  cmd->add_option("--d-model", cfg->d_model);
  cmd->add_option("--layers", cfg->n_layers);
  cmd->add_option("--heads", cfg->n_heads);
  cmd->add_option("--d-ff", cfg->d_ff);
  cmd->add_option("--max-seq", cfg->max_seq);
  cmd->add_option("--init-std", cfg->init_std);
  cmd->callback([&g, cfg, out] {
    editlab::ModelConfig c = *cfg;
    c.seed = g.seed.value_or(0);
    const auto model = editlab::ToyTransformer::initialize(c, editlab::toy_vocab());
    editlab::save_checkpoint(model, *out);
    std::cout << "wrote " << *out << '\n';
  });
}

void add_gen_dataset(CLI::App& app, Global& g) {
  auto* cmd = app.add_subcommand("gen-dataset", "Generate a bundled fixture dataset");
  auto model_path = std::make_shared<std::string>();
  auto kind = std::make_shared<std::string>("counterfactual");
  auto out = std::make_shared<std::string>();
  auto opts = std::make_shared<editlab::FixtureOptions>();
  cmd->add_option("-m,--model", *model_path, "Checkpoint the fixture is built against")
      ->required();
  cmd->add_option("-k,--kind", *kind, "counterfactual | factual | inconsistency")
      ->check(CLI::IsMember({"counterfactual", "factual", "inconsistency"}));
  cmd->add_option("-o,--out", *out, "JSONL output path")->required();
  cmd->add_option("--n-edits", opts->n_edits);
  cmd->add_option("--n-preserve", opts->n_preserve);
  cmd->callback([&g, model_path, kind, out, opts] {
    const auto model = editlab::load_checkpoint(*model_path);
    editlab::FixtureOptions o = *opts;
    if (g.seed) o.seed = *g.seed;
    editlab::Dataset ds;
    if (*kind == "inconsistency") {
      ds = editlab::make_inconsistency_fixture(model, o.seed, o.n_preserve).dataset;
    } else {
      ds = *kind == "counterfactual" ? editlab::make_counterfactual_fixture(model, o)
                                     : editlab::make_factual_fixture(model, o);
    }
    editlab::save_dataset(ds, *out);
    std::cout << "wrote " << *out << " (" << ds.edit_items.size() << " edits, "
              << ds.preservation_queries.size() << " preservation queries)\n";
  });
}

void add_edit(CLI::App& app) {
  auto* cmd = app.add_subcommand("edit", "Apply one batch edit and save the edited model");
  auto model_path = std::make_shared<std::string>();
  auto data_path = std::make_shared<std::string>();
  auto out = std::make_shared<std::string>();
  auto layers = std::make_shared<std::vector<int>>(std::vector<int>{1, 2, 3});
  auto lambda = std::make_shared<double>(1.5e4);
  cmd->add_option("-m,--model", *model_path)->required();
  cmd->add_option("-d,--dataset", *data_path)->required();
  cmd->add_option("-o,--out", *out, "Edited checkpoint path")->required();
  cmd->add_option("-l,--layers", *layers)->delimiter(',');
  cmd->add_option("--lambda", *lambda);
  cmd->callback([model_path, data_path, out, layers, lambda] {
    const auto model = editlab::load_checkpoint(*model_path);
    const auto ds = editlab::load_dataset(*data_path);
    const auto outcome = editlab::multi_layer_edit(model, ds.edit_items, *layers, *lambda,
                                                   ds.preservation_queries);
    editlab::save_checkpoint(outcome.model, *out);
    json summary = editlab::edit_solution_to_json(outcome.solution);
    summary["efficacy"] = editlab::efficacy(outcome.model, ds.edit_items);
    std::cout << summary.dump(2) << '\n';
  });
}

void add_evaluate(CLI::App& app) {
  auto* cmd = app.add_subcommand("evaluate", "Compare an edited model against its original");
  auto pre_path = std::make_shared<std::string>();
  auto post_path = std::make_shared<std::string>();
  auto data_path = std::make_shared<std::string>();
  auto topk = std::make_shared<std::vector<int>>(std::vector<int>{1, 5, 10});
  cmd->add_option("--pre", *pre_path)->required();
  cmd->add_option("--post", *post_path)->required();
  cmd->add_option("-d,--dataset", *data_path)->required();
  cmd->add_option("--topk", *topk)->delimiter(',');
  cmd->callback([pre_path, post_path, data_path, topk] {
    const auto pre = editlab::load_checkpoint(*pre_path);
    const auto post = editlab::load_checkpoint(*post_path);
    const auto ds = editlab::load_dataset(*data_path);
    const auto report = editlab::evaluate_metrics(
        pre, post, ds, editlab::MetricToggles::defaults_for(ds.kind), *topk);
    json out = report_json(report);
    out["Efficacy"] = editlab::efficacy(post, ds.edit_items);
    std::cout << out.dump(2) << '\n';
  });
}

void add_sweep(CLI::App& app, Global& g, int& exit_code) {
  auto* cmd = app.add_subcommand("sweep", "Run a lambda sweep and write CSV and JSON tables");
  auto config_path = std::make_shared<std::string>();
  auto output_dir = std::make_shared<std::string>();
  auto layers = std::make_shared<std::vector<int>>();
  auto grid = std::make_shared<std::vector<double>>();
  cmd->add_option("-c,--config", *config_path, "JSON config file");
  cmd->add_option("--output-dir", *output_dir);
  cmd->add_option("-l,--layers", *layers)->delimiter(',');
  cmd->add_option("--lambda-grid", *grid)->delimiter(',');
  cmd->callback([&g, &exit_code, config_path, output_dir, layers, grid] {
    editlab::ExperimentConfig config =
        config_path->empty() ? editlab::ExperimentConfig{} : editlab::load_config(*config_path);
    if (g.seed) config.seed = *g.seed;
    if (!output_dir->empty()) config.output_dir = *output_dir;
    if (!layers->empty()) config.layers = *layers;
    if (!grid->empty()) config.lambda_grid = *grid;

    const auto model = editlab::materialize_model(config);
    const auto dataset = editlab::materialize_dataset(config, model);
    const auto result = editlab::run_sweep(config, dataset, model);
    const fs::path dir = editlab::resolve_output_dir(config);
    editlab::emit_table(result, editlab::TableFormat::kCsv, dir / "sweep.csv");
    editlab::emit_table(result, editlab::TableFormat::kJson, dir / "sweep.json");
    std::cout << editlab::emit_csv(result);
    if (!result.all_rows_ok()) {
      for (const auto& row : result.rows) {
        if (row.error) std::cerr << row.label << ": " << *row.error << '\n';
      }
      exit_code = 2;
    }
  });
}

void add_split(CLI::App& app) {
  auto* cmd = app.add_subcommand("split", "Split preservation queries by answer consistency");
  auto model_path = std::make_shared<std::string>();
  auto data_path = std::make_shared<std::string>();
  cmd->add_option("-m,--model", *model_path)->required();
  cmd->add_option("-d,--dataset", *data_path)->required();
  cmd->callback([model_path, data_path] {
    const auto model = editlab::load_checkpoint(*model_path);
    const auto ds = editlab::load_dataset(*data_path);
    const auto split = editlab::split_by_consistency(model, ds.preservation_queries);
    auto describe = [&](const std::vector<editlab::PreservationQuery>& part) {
      std::vector<editlab::GroundTruthItem> gt;
      std::vector<std::string> ids;
      for (const auto& q : part) {
        gt.push_back({q.query, q.gt_answer.value_or("")});
        ids.push_back(q.id);
      }
      json j{{"size", part.size()}, {"ids", ids}};
      if (!gt.empty()) {
        j["S-acc"] = editlab::s_accuracy(model, gt);
        j["T-acc"] = editlab::t_accuracy(model, gt);
      }
      return j;
    };
    json out{{"consistent", describe(split.consistent)},
             {"inconsistent", describe(split.inconsistent)}};
    std::cout << out.dump(2) << '\n';
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-editing evaluation harness on a toy transformer"};
  app.require_subcommand(1);
  Global global;
  app.add_option("--seed", global.seed, "Global RNG seed");
  int exit_code = 0;
  add_gen_model(app, global);
  add_gen_dataset(app, global);
  add_edit(app);
  add_evaluate(app);
  add_sweep(app, global, exit_code);
  add_split(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const editlab::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return exit_code;
}
