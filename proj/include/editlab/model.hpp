#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "editlab/vocab.hpp"

namespace editlab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct ModelConfig {
  int d_model = 32;
  int n_layers = 6;
  int n_heads = 4;
  int d_ff = 128;
  int max_seq = 32;
  std::uint64_t seed = 0;
  double init_std = 0.02;

  // Throws ShapeError unless every dimension is positive and n_heads divides
  // d_model.
  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

// Column-vector convention throughout: activations are columns, so the
// editable MLP output projection is stored as W with shape d_model x d_ff and
// maps a key k (length d_ff) to W k.
struct LayerWeights {
  Mat w_q, w_k, w_v, w_o;  // d_model x d_model
  Mat w_in;                // d_ff x d_model
  Mat w_out;               // d_model x d_ff, the editable matrix
};

struct LogitVector {
  Vec scores;
};

struct ProbDist {
  Vec probs;
};

// Max-subtracted softmax; the same routine feeds every probability in the
// library so KL values reproduce exactly.
ProbDist softmax(const LogitVector& logits);
Vec log_softmax(const LogitVector& logits);

// Lowest id wins ties.
TokenId argmax(const LogitVector& logits);

// The k highest-scoring ids ordered by (score desc, id asc); |result| == k.
std::vector<TokenId> top_k(const LogitVector& logits, std::size_t k);

// Pre-LayerNorm decoder-only transformer with causal multi-head attention and
// a bias-free GELU MLP. Values are immutable: editing produces a new model.
class ToyTransformer {
 public:
  ToyTransformer(ModelConfig config, Vocab vocab, Mat token_embedding,
                 Mat position_embedding, std::vector<LayerWeights> layers,
                 Mat unembedding);

  // Scaled-Gaussian initialization (std = config.init_std) drawn from Rng
  // seeded with config.seed, in a fixed parameter order.
  static ToyTransformer initialize(const ModelConfig& config, Vocab vocab);

  const ModelConfig& config() const { return config_; }
  const Vocab& vocab() const { return vocab_; }
  const Mat& token_embedding() const { return token_embedding_; }        // d x V
  const Mat& position_embedding() const { return position_embedding_; }  // d x max_seq
  const std::vector<LayerWeights>& layers() const { return layers_; }
  const LayerWeights& layer(int index) const;
  const Mat& unembedding() const { return unembedding_; }  // V x d
  const Mat& w_out(int layer) const { return this->layer(layer).w_out; }

  // Copy with one layer's weights replaced; used by tests that build oracle
  // models and by apply_delta.
  ToyTransformer with_layer(int index, LayerWeights weights) const;

  bool weights_equal(const ToyTransformer& other) const;

 private:
  ModelConfig config_;
  Vocab vocab_;
  Mat token_embedding_;
  Mat position_embedding_;
  std::vector<LayerWeights> layers_;
  Mat unembedding_;
};

// Replaces the post-W_out activation (the MLP output added to the residual
// stream) of one layer at one position.
struct ActivationOverride {
  int layer = 0;
  int position = 0;
  Vec value;
};

struct ForwardTrace {
  std::vector<LogitVector> logits;     // per position
  std::vector<Mat> hidden_pre_wout;    // per layer, d_ff x T (the keys)
  std::vector<Mat> mlp_out;            // per layer, d_model x T (W_out * key)
  std::vector<Mat> hidden_post_layer;  // per layer, d_model x T residual
};

ForwardTrace forward(const ToyTransformer& model, std::span<const TokenId> tokens,
                     const ActivationOverride* override_at = nullptr);

LogitVector last_token_logits(const ToyTransformer& model,
                              std::span<const TokenId> tokens);

// Key entering W_out of `layer` at `token_index` (default: last position).
Vec extract_key(const ToyTransformer& model, std::span<const TokenId> tokens,
                int layer, std::optional<int> token_index = std::nullopt);

struct TokenScore {
  double prob = 0.0;
  double log_prob = 0.0;
  bool is_top1 = false;
};

// One forward pass over query||answer. Entry t scores answer[t] given the
// query and answer[0..t).
std::vector<TokenScore> teacher_force_score(
    const ToyTransformer& model, std::span<const TokenId> query,
    std::span<const TokenId> answer,
    const ActivationOverride* override_at = nullptr);

// Argmax decoding. Stops after max_new tokens, at the vocab's <eos> (not
// emitted), or when the context is full.
TokenSeq greedy_decode(const ToyTransformer& model, std::span<const TokenId> query,
                       int max_new);

ToyTransformer apply_delta(const ToyTransformer& model, int layer, const Mat& delta);

struct AnswerGradient {
  double mean_log_prob = 0.0;
  Vec gradient;  // d mean_log_prob / d (substituted activation), length d_model
};

// Mean teacher-forced log-probability of `answer` after `query` with the
// post-W_out activation at (layer, position) replaced by `value`, and its
// analytic gradient with respect to that activation (reverse mode through the
// layers above `layer` and the final norm/unembedding).
AnswerGradient answer_log_prob_gradient(const ToyTransformer& model,
                                        std::span<const TokenId> query,
                                        std::span<const TokenId> answer,
                                        int layer, int position, const Vec& value);

}  // namespace editlab
