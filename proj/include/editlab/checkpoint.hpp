#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "editlab/edit.hpp"
#include "editlab/model.hpp"

namespace editlab {

inline constexpr int kCheckpointFormatVersion = 1;

// Self-describing JSON checkpoint: format tag, format_version, config, vocab,
// and every weight matrix as {rows, cols, data} with data in row-major order.
// Doubles are written with round-trip precision, so save/load is lossless.
nlohmann::json checkpoint_to_json(const ToyTransformer& model);
ToyTransformer checkpoint_from_json(const nlohmann::json& doc);

void save_checkpoint(const ToyTransformer& model, const std::filesystem::path& path);
ToyTransformer load_checkpoint(const std::filesystem::path& path);

nlohmann::json matrix_to_json(const Mat& m);
Mat matrix_from_json(const nlohmann::json& doc);

// lambda, layers, per-layer mean_reg_norm and objective values; the deltas
// themselves (in the matrix format above) only when asked.
nlohmann::json edit_solution_to_json(const EditSolution& solution, bool include_deltas = false);

}  // namespace editlab
