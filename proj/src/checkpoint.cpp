#include "editlab/checkpoint.hpp"

#include <fstream>

#include "editlab/error.hpp"

namespace editlab {

using nlohmann::json;

json matrix_to_json(const Mat& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Mat matrix_from_json(const json& doc) {
  const auto rows = doc.at("rows").get<Eigen::Index>();
  const auto cols = doc.at("cols").get<Eigen::Index>();
  const auto& data = doc.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
    throw Error(ErrorCode::kCheckpointError, "matrix data length does not match shape");
  }
  Mat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = data[k++].get<double>();
  }
  return m;
}

json checkpoint_to_json(const ToyTransformer& model) {
  const ModelConfig& c = model.config();
  json layers = json::array();
  for (const LayerWeights& w : model.layers()) {
    layers.push_back(json{{"w_q", matrix_to_json(w.w_q)},
                          {"w_k", matrix_to_json(w.w_k)},
                          {"w_v", matrix_to_json(w.w_v)},
                          {"w_o", matrix_to_json(w.w_o)},
                          {"w_in", matrix_to_json(w.w_in)},
                          {"w_out", matrix_to_json(w.w_out)}});
  }
  return json{
      {"format", "editlab-checkpoint"},
      {"format_version", kCheckpointFormatVersion},
      {"config",
       {{"d_model", c.d_model},
        {"n_layers", c.n_layers},
        {"n_heads", c.n_heads},
        {"d_ff", c.d_ff},
        {"max_seq", c.max_seq},
        {"seed", c.seed},
        {"init_std", c.init_std}}},
      {"vocab", model.vocab().tokens()},
      {"weights",
       {{"token_embedding", matrix_to_json(model.token_embedding())},
        {"position_embedding", matrix_to_json(model.position_embedding())},
        {"layers", std::move(layers)},
        {"unembedding", matrix_to_json(model.unembedding())}}},
  };
}

ToyTransformer checkpoint_from_json(const json& doc) {
  try {
    if (doc.at("format").get<std::string>() != "editlab-checkpoint") {
      throw Error(ErrorCode::kCheckpointError, "not an editlab checkpoint");
    }
    const int version = doc.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw Error(ErrorCode::kCheckpointError,
                  "unsupported format_version " + std::to_string(version));
    }
    const json& jc = doc.at("config");
    ModelConfig c;
    c.d_model = jc.at("d_model").get<int>();
    c.n_layers = jc.at("n_layers").get<int>();
    c.n_heads = jc.at("n_heads").get<int>();
    c.d_ff = jc.at("d_ff").get<int>();
    c.max_seq = jc.at("max_seq").get<int>();
    c.seed = jc.at("seed").get<std::uint64_t>();
    c.init_std = jc.at("init_std").get<double>();

    const json& jw = doc.at("weights");
    std::vector<LayerWeights> layers;
    for (const json& jl : jw.at("layers")) {
      layers.push_back(LayerWeights{matrix_from_json(jl.at("w_q")),
                                    matrix_from_json(jl.at("w_k")),
                                    matrix_from_json(jl.at("w_v")),
                                    matrix_from_json(jl.at("w_o")),
                                    matrix_from_json(jl.at("w_in")),
                                    matrix_from_json(jl.at("w_out"))});
    }
    return ToyTransformer(c, Vocab(doc.at("vocab").get<std::vector<std::string>>()),
                          matrix_from_json(jw.at("token_embedding")),
                          matrix_from_json(jw.at("position_embedding")), std::move(layers),
                          matrix_from_json(jw.at("unembedding")));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointError, e.what());
  }
}

void save_checkpoint(const ToyTransformer& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << checkpoint_to_json(model).dump() << '\n';
  if (!out) throw Error(ErrorCode::kIoError, "write failed for " + path.string());
}

ToyTransformer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kCheckpointError, path.string() + ": " + e.what());
  }
  return checkpoint_from_json(doc);
}

json edit_solution_to_json(const EditSolution& solution, bool include_deltas) {
  json out{{"lambda", solution.lambda},
           {"layers", solution.layers},
           {"mean_reg_norm", solution.mean_reg_norm},
           {"objective_before", solution.objective_before},
           {"objective_after", solution.objective_after},
           {"jitter_applied", solution.jitter_applied}};
  if (include_deltas) {
    json deltas = json::array();
    for (const Mat& d : solution.deltas) deltas.push_back(matrix_to_json(d));
    out["deltas"] = std::move(deltas);
  }
  return out;
}

}  // namespace editlab
