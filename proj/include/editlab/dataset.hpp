#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "editlab/edit.hpp"

namespace editlab {

enum class DatasetKind { kCounterfactual, kFactual };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& text);

inline constexpr int kDatasetFormatVersion = 1;

struct Dataset {
  std::string name;
  DatasetKind kind = DatasetKind::kFactual;
  std::vector<EditItem> edit_items;
  std::vector<PreservationQuery> preservation_queries;
};

// JSON-lines: a header record {"record":"header", name, kind, version}
// followed by "edit" and "preserve" records. Errors carry the 1-based line
// number of the offending record.
Dataset parse_dataset(std::istream& in);
Dataset load_dataset(const std::filesystem::path& path);

// Canonical serialization: header first, then edits, then preservation
// queries, keys sorted, absent optionals omitted. load(save(d)) == d.
std::string serialize_dataset(const Dataset& dataset);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace editlab
