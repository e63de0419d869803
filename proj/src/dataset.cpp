#include "editlab/dataset.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "editlab/error.hpp"

namespace editlab {
namespace {

using nlohmann::json;

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kDatasetError, "line " + std::to_string(line) + ": " + what);
}

std::string required_string(const json& rec, const char* field, std::size_t line) {
  if (!rec.contains(field)) fail(line, std::string("missing field '") + field + "'");
  if (!rec.at(field).is_string()) fail(line, std::string("field '") + field + "' must be a string");
  std::string value = rec.at(field).get<std::string>();
  if (value.find_first_not_of(" \t\r\n") == std::string::npos) {
    fail(line, std::string("field '") + field + "' is empty");
  }
  return value;
}

std::optional<std::string> optional_string(const json& rec, const char* field, std::size_t line) {
  if (!rec.contains(field) || rec.at(field).is_null()) return std::nullopt;
  return required_string(rec, field, line);
}

std::optional<int> optional_index(const json& rec, std::size_t line) {
  if (!rec.contains("decisive_index") || rec.at("decisive_index").is_null()) return std::nullopt;
  if (!rec.at("decisive_index").is_number_integer() || rec.at("decisive_index").get<int>() < 0) {
    fail(line, "field 'decisive_index' must be a non-negative integer");
  }
  return rec.at("decisive_index").get<int>();
}

std::vector<std::string> string_list(const json& rec, const char* field, std::size_t line) {
  if (!rec.contains(field)) return {};
  const json& list = rec.at(field);
  if (!list.is_array()) fail(line, std::string("field '") + field + "' must be a list");
  std::vector<std::string> out;
  for (const json& entry : list) {
    if (!entry.is_string() || entry.get<std::string>().empty()) {
      fail(line, std::string("field '") + field + "' must hold non-empty strings");
    }
    out.push_back(entry.get<std::string>());
  }
  return out;
}

}  // namespace

std::string to_string(DatasetKind kind) {
  return kind == DatasetKind::kCounterfactual ? "counterfactual" : "factual";
}

DatasetKind dataset_kind_from_string(const std::string& text) {
  if (text == "counterfactual") return DatasetKind::kCounterfactual;
  if (text == "factual") return DatasetKind::kFactual;
  throw Error(ErrorCode::kDatasetError, "unknown dataset kind '" + text + "'");
}

Dataset parse_dataset(std::istream& in) {
  Dataset ds;
  bool have_header = false;
  std::set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(text);
    } catch (const json::parse_error& e) {
      fail(line, std::string("invalid JSON: ") + e.what());
    }
    if (!rec.is_object()) fail(line, "record must be a JSON object");
    const std::string kind = required_string(rec, "record", line);

    if (kind == "header") {
      if (have_header) fail(line, "duplicate header");
      ds.name = required_string(rec, "name", line);
      try {
        ds.kind = dataset_kind_from_string(required_string(rec, "kind", line));
      } catch (const Error&) {
        fail(line, "field 'kind' must be counterfactual or factual");
      }
      if (!rec.contains("version") || !rec.at("version").is_number_integer() ||
          rec.at("version").get<int>() != kDatasetFormatVersion) {
        fail(line, "field 'version' must be " + std::to_string(kDatasetFormatVersion));
      }
      have_header = true;
      continue;
    }
    if (!have_header) fail(line, "first record must be the header");

    const std::string id = required_string(rec, "id", line);
    if (!ids.insert(id).second) fail(line, "duplicate id '" + id + "'");

    if (kind == "edit") {
      EditItem item;
      item.id = id;
      item.query = required_string(rec, "query", line);
      item.target_new = required_string(rec, "target_new", line);
      item.target_old = optional_string(rec, "target_old", line);
      item.decisive_index = optional_index(rec, line);
      item.paraphrases = string_list(rec, "paraphrases", line);
      item.neighborhood_queries = string_list(rec, "neighborhood_queries", line);
      if (ds.kind == DatasetKind::kCounterfactual && !item.target_old) {
        fail(line, "counterfactual edit '" + id + "' is missing field 'target_old'");
      }
      ds.edit_items.push_back(std::move(item));
    } else if (kind == "preserve") {
      PreservationQuery q;
      q.id = id;
      q.query = required_string(rec, "query", line);
      q.decisive_index = optional_index(rec, line);
      q.gt_answer = optional_string(rec, "gt_answer", line);
      ds.preservation_queries.push_back(std::move(q));
    } else {
      fail(line, "unknown record type '" + kind + "'");
    }
  }
  if (!have_header) fail(line == 0 ? 1 : line, "dataset is empty or has no header");
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  return parse_dataset(in);
}

std::string serialize_dataset(const Dataset& ds) {
  std::ostringstream out;
  out << json{{"record", "header"},
              {"name", ds.name},
              {"kind", to_string(ds.kind)},
              {"version", kDatasetFormatVersion}}
             .dump()
      << '\n';
  for (const EditItem& item : ds.edit_items) {
    json rec{{"record", "edit"},
             {"id", item.id},
             {"query", item.query},
             {"target_new", item.target_new},
             {"paraphrases", item.paraphrases},
             {"neighborhood_queries", item.neighborhood_queries}};
    if (item.target_old) rec["target_old"] = *item.target_old;
    if (item.decisive_index) rec["decisive_index"] = *item.decisive_index;
    out << rec.dump() << '\n';
  }
  for (const PreservationQuery& q : ds.preservation_queries) {
    json rec{{"record", "preserve"}, {"id", q.id}, {"query", q.query}};
    if (q.gt_answer) rec["gt_answer"] = *q.gt_answer;
    if (q.decisive_index) rec["decisive_index"] = *q.decisive_index;
    out << rec.dump() << '\n';
  }
  return out.str();
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << serialize_dataset(dataset);
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

}  // namespace editlab
