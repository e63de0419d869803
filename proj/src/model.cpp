#include "editlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "editlab/error.hpp"
#include "editlab/rng.hpp"

namespace editlab {
namespace {

constexpr double kLayerNormEps = 1e-5;

void require_shape(const Mat& m, Eigen::Index rows, Eigen::Index cols,
                   const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorCode::kShapeError,
                std::string(name) + " is " + std::to_string(m.rows()) + "x" +
                    std::to_string(m.cols()) + ", expected " +
                    std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void require_finite(const Mat& m, const char* name) {
  if (!m.allFinite()) {
    throw Error(ErrorCode::kNumericalError, std::string(name) + " has non-finite entries");
  }
}

Mat gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols, double std_dev) {
  Mat m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = std_dev * rng.normal();
  }
  return m;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// Column-wise layer norm without affine parameters.
Mat layer_norm(const Mat& x, Vec& inv_std) {
  const auto n = static_cast<double>(x.rows());
  Mat y(x.rows(), x.cols());
  inv_std.resize(x.cols());
  for (Eigen::Index t = 0; t < x.cols(); ++t) {
    const double mean = x.col(t).sum() / n;
    const Vec centered = x.col(t).array() - mean;
    const double var = centered.squaredNorm() / n;
    inv_std(t) = 1.0 / std::sqrt(var + kLayerNormEps);
    y.col(t) = centered * inv_std(t);
  }
  return y;
}

Mat layer_norm_backward(const Mat& y, const Vec& inv_std, const Mat& dy) {
  const auto n = static_cast<double>(y.rows());
  Mat dx(y.rows(), y.cols());
  for (Eigen::Index t = 0; t < y.cols(); ++t) {
    const double mean_dy = dy.col(t).sum() / n;
    const double mean_dy_y = dy.col(t).dot(y.col(t)) / n;
    dx.col(t) = inv_std(t) *
                (dy.col(t).array() - mean_dy - y.col(t).array() * mean_dy_y).matrix();
  }
  return dx;
}

struct LayerCache {
  Mat x_in;
  Mat ln1;
  Vec inv_std1;
  Mat q, k, v;
  std::vector<Mat> probs;  // per head, T x T (row = query position)
  Mat heads;               // d x T, concatenated head outputs before w_o
  Mat x_mid;
  Mat ln2;
  Vec inv_std2;
  Mat pre;
  Mat act;
  Mat mlp;
  Mat x_out;
};

struct FullCache {
  std::vector<LayerCache> layers;
  Mat ln_final;
  Vec inv_std_final;
  Mat logits;  // V x T
};

void check_tokens(const ToyTransformer& model, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw Error(ErrorCode::kEmptyInput, "empty token sequence");
  if (tokens.size() > static_cast<std::size_t>(model.config().max_seq)) {
    throw Error(ErrorCode::kSeqTooLong, std::to_string(tokens.size()) + " > max_seq " +
                                            std::to_string(model.config().max_seq));
  }
  const auto vocab_size = static_cast<TokenId>(model.vocab().size());
  for (TokenId id : tokens) {
    if (id < 0 || id >= vocab_size) {
      throw Error(ErrorCode::kBadToken, "token id " + std::to_string(id));
    }
  }
}

FullCache run(const ToyTransformer& model, std::span<const TokenId> tokens,
              const ActivationOverride* override_at) {
  check_tokens(model, tokens);
  const ModelConfig& cfg = model.config();
  const auto seq = static_cast<Eigen::Index>(tokens.size());
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  if (override_at != nullptr) {
    if (override_at->layer < 0 || override_at->layer >= cfg.n_layers ||
        override_at->position < 0 || override_at->position >= seq) {
      throw Error(ErrorCode::kBadLocation, "activation override out of range");
    }
    if (override_at->value.size() != cfg.d_model) {
      throw Error(ErrorCode::kShapeError, "override value must have length d_model");
    }
  }

  Mat x(cfg.d_model, seq);
  for (Eigen::Index t = 0; t < seq; ++t) {
    x.col(t) = model.token_embedding().col(tokens[static_cast<std::size_t>(t)]) +
               model.position_embedding().col(t);
  }

  FullCache cache;
  cache.layers.resize(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& w = model.layer(l);
    LayerCache& c = cache.layers[static_cast<std::size_t>(l)];
    c.x_in = x;
    c.ln1 = layer_norm(x, c.inv_std1);
    c.q = w.w_q * c.ln1;
    c.k = w.w_k * c.ln1;
    c.v = w.w_v * c.ln1;
    c.heads = Mat::Zero(cfg.d_model, seq);
    c.probs.assign(static_cast<std::size_t>(cfg.n_heads), Mat::Zero(seq, seq));
    for (int h = 0; h < cfg.n_heads; ++h) {
      const auto qh = c.q.middleRows(h * hd, hd);
      const auto kh = c.k.middleRows(h * hd, hd);
      const auto vh = c.v.middleRows(h * hd, hd);
      Mat& a = c.probs[static_cast<std::size_t>(h)];
      for (Eigen::Index t = 0; t < seq; ++t) {
        double max_score = -INFINITY;
        for (Eigen::Index s = 0; s <= t; ++s) {
          a(t, s) = scale * qh.col(t).dot(kh.col(s));
          max_score = std::max(max_score, a(t, s));
        }
        double total = 0.0;
        for (Eigen::Index s = 0; s <= t; ++s) {
          a(t, s) = std::exp(a(t, s) - max_score);
          total += a(t, s);
        }
        for (Eigen::Index s = 0; s <= t; ++s) a(t, s) /= total;
        Vec out = Vec::Zero(hd);
        for (Eigen::Index s = 0; s <= t; ++s) out += a(t, s) * vh.col(s);
        c.heads.block(h * hd, t, hd, 1) = out;
      }
    }
    c.x_mid = x + w.w_o * c.heads;
    c.ln2 = layer_norm(c.x_mid, c.inv_std2);
    c.pre = w.w_in * c.ln2;
    c.act = c.pre.unaryExpr([](double v) { return gelu(v); });
    c.mlp = w.w_out * c.act;
    if (override_at != nullptr && override_at->layer == l) {
      c.mlp.col(override_at->position) = override_at->value;
    }
    c.x_out = c.x_mid + c.mlp;
    x = c.x_out;
  }
  cache.ln_final = layer_norm(x, cache.inv_std_final);
  cache.logits = model.unembedding() * cache.ln_final;
  return cache;
}

// Gradient w.r.t. the layer's input given the gradient w.r.t. its output.
Mat layer_backward(const LayerWeights& w, const LayerCache& c, const ModelConfig& cfg,
                   const Mat& d_out) {
  const Eigen::Index seq = c.x_in.cols();
  const int hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  // MLP branch.
  const Mat d_act = w.w_out.transpose() * d_out;
  const Mat d_pre =
      d_act.cwiseProduct(c.pre.unaryExpr([](double v) { return gelu_grad(v); }));
  const Mat d_ln2 = w.w_in.transpose() * d_pre;
  const Mat d_mid = d_out + layer_norm_backward(c.ln2, c.inv_std2, d_ln2);

  // Attention branch.
  const Mat d_heads = w.w_o.transpose() * d_mid;
  Mat dq = Mat::Zero(cfg.d_model, seq);
  Mat dk = Mat::Zero(cfg.d_model, seq);
  Mat dv = Mat::Zero(cfg.d_model, seq);
  for (int h = 0; h < cfg.n_heads; ++h) {
    const Mat& a = c.probs[static_cast<std::size_t>(h)];
    const auto qh = c.q.middleRows(h * hd, hd);
    const auto kh = c.k.middleRows(h * hd, hd);
    const auto vh = c.v.middleRows(h * hd, hd);
    const auto dh = d_heads.middleRows(h * hd, hd);
    for (Eigen::Index t = 0; t < seq; ++t) {
      Vec da(t + 1);
      for (Eigen::Index s = 0; s <= t; ++s) {
        da(s) = dh.col(t).dot(vh.col(s));
        dv.block(h * hd, s, hd, 1) += a(t, s) * dh.col(t);
      }
      double weighted = 0.0;
      for (Eigen::Index s = 0; s <= t; ++s) weighted += a(t, s) * da(s);
      for (Eigen::Index s = 0; s <= t; ++s) {
        const double d_score = a(t, s) * (da(s) - weighted) * scale;
        dq.block(h * hd, t, hd, 1) += d_score * kh.col(s);
        dk.block(h * hd, s, hd, 1) += d_score * qh.col(t);
      }
    }
  }
  const Mat d_ln1 =
      w.w_q.transpose() * dq + w.w_k.transpose() * dk + w.w_v.transpose() * dv;
  return d_mid + layer_norm_backward(c.ln1, c.inv_std1, d_ln1);
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_seq <= 0) {
    throw Error(ErrorCode::kShapeError, "model dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw Error(ErrorCode::kShapeError, "n_heads must divide d_model");
  }
  if (!(init_std > 0.0) || !std::isfinite(init_std)) {
    throw Error(ErrorCode::kShapeError, "init_std must be positive and finite");
  }
}

ProbDist softmax(const LogitVector& logits) {
  const double max_score = logits.scores.maxCoeff();
  Vec e = (logits.scores.array() - max_score).exp();
  return ProbDist{e / e.sum()};
}

Vec log_softmax(const LogitVector& logits) {
  const double max_score = logits.scores.maxCoeff();
  const Vec shifted = logits.scores.array() - max_score;
  const double log_total = std::log(shifted.array().exp().sum());
  return shifted.array() - log_total;
}

TokenId argmax(const LogitVector& logits) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.scores.size(); ++i) {
    if (logits.scores(i) > logits.scores(best)) best = i;
  }
  return static_cast<TokenId>(best);
}

std::vector<TokenId> top_k(const LogitVector& logits, std::size_t k) {
  const auto n = static_cast<std::size_t>(logits.scores.size());
  if (k == 0 || k > n) {
    throw Error(ErrorCode::kBadK, "k=" + std::to_string(k) + " for vocab " + std::to_string(n));
  }
  std::vector<TokenId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  auto better = [&](TokenId a, TokenId b) {
    const double sa = logits.scores(a);
    const double sb = logits.scores(b);
    return sa > sb || (sa == sb && a < b);
  };
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    better);
  ids.resize(k);
  return ids;
}

ToyTransformer::ToyTransformer(ModelConfig config, Vocab vocab, Mat token_embedding,
                               Mat position_embedding, std::vector<LayerWeights> layers,
                               Mat unembedding)
    : config_(config),
      vocab_(std::move(vocab)),
      token_embedding_(std::move(token_embedding)),
      position_embedding_(std::move(position_embedding)),
      layers_(std::move(layers)),
      unembedding_(std::move(unembedding)) {
  config_.validate();
  const auto d = config_.d_model;
  const auto v = static_cast<Eigen::Index>(vocab_.size());
  require_shape(token_embedding_, d, v, "token_embedding");
  require_shape(position_embedding_, d, config_.max_seq, "position_embedding");
  require_shape(unembedding_, v, d, "unembedding");
  if (layers_.size() != static_cast<std::size_t>(config_.n_layers)) {
    throw Error(ErrorCode::kShapeError, "layer count does not match config");
  }
  require_finite(token_embedding_, "token_embedding");
  require_finite(position_embedding_, "position_embedding");
  require_finite(unembedding_, "unembedding");
  for (const LayerWeights& w : layers_) {
    require_shape(w.w_q, d, d, "w_q");
    require_shape(w.w_k, d, d, "w_k");
    require_shape(w.w_v, d, d, "w_v");
    require_shape(w.w_o, d, d, "w_o");
    require_shape(w.w_in, config_.d_ff, d, "w_in");
    require_shape(w.w_out, d, config_.d_ff, "w_out");
    for (const Mat* m : {&w.w_q, &w.w_k, &w.w_v, &w.w_o, &w.w_in, &w.w_out}) {
      require_finite(*m, "layer weight");
    }
  }
}

ToyTransformer ToyTransformer::initialize(const ModelConfig& config, Vocab vocab) {
  config.validate();
  Rng rng(config.seed);
  const auto d = config.d_model;
  const auto v = static_cast<Eigen::Index>(vocab.size());
  const double s = config.init_std;
  Mat tok = gaussian(rng, d, v, s);
  Mat pos = gaussian(rng, d, config.max_seq, s);
  std::vector<LayerWeights> layers;
  layers.reserve(static_cast<std::size_t>(config.n_layers));
  for (int l = 0; l < config.n_layers; ++l) {
    LayerWeights w;
    w.w_q = gaussian(rng, d, d, s);
    w.w_k = gaussian(rng, d, d, s);
    w.w_v = gaussian(rng, d, d, s);
    w.w_o = gaussian(rng, d, d, s);
    w.w_in = gaussian(rng, config.d_ff, d, s);
    w.w_out = gaussian(rng, d, config.d_ff, s);
    layers.push_back(std::move(w));
  }
  Mat unembed = gaussian(rng, v, d, s);
  return ToyTransformer(config, std::move(vocab), std::move(tok), std::move(pos),
                        std::move(layers), std::move(unembed));
}

const LayerWeights& ToyTransformer::layer(int index) const {
  if (index < 0 || index >= config_.n_layers) {
    throw Error(ErrorCode::kBadLocation, "layer " + std::to_string(index));
  }
  return layers_[static_cast<std::size_t>(index)];
}

ToyTransformer ToyTransformer::with_layer(int index, LayerWeights weights) const {
  (void)layer(index);
  std::vector<LayerWeights> layers = layers_;
  layers[static_cast<std::size_t>(index)] = std::move(weights);
  return ToyTransformer(config_, vocab_, token_embedding_, position_embedding_,
                        std::move(layers), unembedding_);
}

bool ToyTransformer::weights_equal(const ToyTransformer& other) const {
  if (!(config_ == other.config_) || !(vocab_ == other.vocab_)) return false;
  if (token_embedding_ != other.token_embedding_ ||
      position_embedding_ != other.position_embedding_ ||
      unembedding_ != other.unembedding_) {
    return false;
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const LayerWeights& a = layers_[l];
    const LayerWeights& b = other.layers_[l];
    if (a.w_q != b.w_q || a.w_k != b.w_k || a.w_v != b.w_v || a.w_o != b.w_o ||
        a.w_in != b.w_in || a.w_out != b.w_out) {
      return false;
    }
  }
  return true;
}

ForwardTrace forward(const ToyTransformer& model, std::span<const TokenId> tokens,
                     const ActivationOverride* override_at) {
  FullCache cache = run(model, tokens, override_at);
  ForwardTrace trace;
  trace.logits.reserve(tokens.size());
  for (Eigen::Index t = 0; t < cache.logits.cols(); ++t) {
    trace.logits.push_back(LogitVector{cache.logits.col(t)});
  }
  for (LayerCache& c : cache.layers) {
    trace.hidden_pre_wout.push_back(std::move(c.act));
    trace.mlp_out.push_back(std::move(c.mlp));
    trace.hidden_post_layer.push_back(std::move(c.x_out));
  }
  return trace;
}

LogitVector last_token_logits(const ToyTransformer& model, std::span<const TokenId> tokens) {
  FullCache cache = run(model, tokens, nullptr);
  return LogitVector{cache.logits.col(cache.logits.cols() - 1)};
}

Vec extract_key(const ToyTransformer& model, std::span<const TokenId> tokens, int layer,
                std::optional<int> token_index) {
  if (layer < 0 || layer >= model.config().n_layers) {
    throw Error(ErrorCode::kBadLocation, "layer " + std::to_string(layer));
  }
  const int index = token_index.value_or(static_cast<int>(tokens.size()) - 1);
  if (index < 0 || static_cast<std::size_t>(index) >= tokens.size()) {
    throw Error(ErrorCode::kBadLocation, "token index " + std::to_string(index));
  }
  FullCache cache = run(model, tokens, nullptr);
  return cache.layers[static_cast<std::size_t>(layer)].act.col(index);
}

std::vector<TokenScore> teacher_force_score(const ToyTransformer& model,
                                            std::span<const TokenId> query,
                                            std::span<const TokenId> answer,
                                            const ActivationOverride* override_at) {
  if (query.empty() || answer.empty()) {
    throw Error(ErrorCode::kEmptyInput, "query and answer must be non-empty");
  }
  TokenSeq joined(query.begin(), query.end());
  joined.insert(joined.end(), answer.begin(), answer.end());
  FullCache cache = run(model, joined, override_at);

  std::vector<TokenScore> scores;
  scores.reserve(answer.size());
  for (std::size_t t = 0; t < answer.size(); ++t) {
    const auto pos = static_cast<Eigen::Index>(query.size() + t - 1);
    const LogitVector logits{cache.logits.col(pos)};
    const Vec log_probs = log_softmax(logits);
    const TokenId target = answer[t];
    scores.push_back(TokenScore{std::exp(log_probs(target)), log_probs(target),
                                argmax(logits) == target});
  }
  return scores;
}

TokenSeq greedy_decode(const ToyTransformer& model, std::span<const TokenId> query,
                       int max_new) {
  if (max_new < 1) throw Error(ErrorCode::kEmptyInput, "max_new must be >= 1");
  TokenSeq context(query.begin(), query.end());
  check_tokens(model, context);
  TokenSeq generated;
  const auto capacity = static_cast<std::size_t>(model.config().max_seq);
  const auto stop = model.vocab().eos();
  for (int i = 0; i < max_new && context.size() < capacity; ++i) {
    const TokenId next = argmax(last_token_logits(model, context));
    if (stop && next == *stop) break;
    generated.push_back(next);
    context.push_back(next);
  }
  return generated;
}

ToyTransformer apply_delta(const ToyTransformer& model, int layer, const Mat& delta) {
  LayerWeights w = model.layer(layer);
  require_shape(delta, w.w_out.rows(), w.w_out.cols(), "delta");
  require_finite(delta, "delta");
  w.w_out += delta;
  return model.with_layer(layer, std::move(w));
}

AnswerGradient answer_log_prob_gradient(const ToyTransformer& model,
                                        std::span<const TokenId> query,
                                        std::span<const TokenId> answer, int layer,
                                        int position, const Vec& value) {
  if (query.empty() || answer.empty()) {
    throw Error(ErrorCode::kEmptyInput, "query and answer must be non-empty");
  }
  TokenSeq joined(query.begin(), query.end());
  joined.insert(joined.end(), answer.begin(), answer.end());
  const ActivationOverride override_at{layer, position, value};
  FullCache cache = run(model, joined, &override_at);

  const ModelConfig& cfg = model.config();
  const auto seq = static_cast<Eigen::Index>(joined.size());
  const double weight = 1.0 / static_cast<double>(answer.size());
  Mat d_logits = Mat::Zero(cache.logits.rows(), seq);
  double total = 0.0;
  for (std::size_t t = 0; t < answer.size(); ++t) {
    const auto pos = static_cast<Eigen::Index>(query.size() + t - 1);
    const ProbDist p = softmax(LogitVector{cache.logits.col(pos)});
    const Vec log_probs = log_softmax(LogitVector{cache.logits.col(pos)});
    total += log_probs(answer[t]);
    d_logits.col(pos) = -weight * p.probs;
    d_logits(answer[t], pos) += weight;
  }

  const Mat d_ln_final = model.unembedding().transpose() * d_logits;
  Mat d_x = layer_norm_backward(cache.ln_final, cache.inv_std_final, d_ln_final);
  for (int l = cfg.n_layers - 1; l > layer; --l) {
    d_x = layer_backward(model.layer(l), cache.layers[static_cast<std::size_t>(l)], cfg, d_x);
  }
  if (!std::isfinite(total) || !d_x.allFinite()) {
    throw Error(ErrorCode::kNumericalError, "non-finite answer log-probability");
  }
  return AnswerGradient{total * weight, d_x.col(position)};
}

}  // namespace editlab
