#pragma once

// Reference implementations used only as test oracles. Each one is written
// without calling the library routine it checks.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "editlab/model.hpp"
#include "editlab/vocab.hpp"

namespace oracle {

// Longest match by scanning every vocab entry at every cursor.
editlab::TokenSeq brute_tokenize(const std::string& text, const std::vector<std::string>& vocab,
                                 bool with_bos);

// Last-position logits of a one-layer model whose attention output is zero,
// written as plain loops over std::vector.
std::vector<double> one_layer_mlp_logits(const editlab::ToyTransformer& model,
                                         const editlab::TokenSeq& tokens);

struct Scored {
  double prob;
  bool top1;
};

// Scores answer[t] with a fresh forward over query || answer[0..t) for each t.
std::vector<Scored> autoregressive_scores(const editlab::ToyTransformer& model,
                                          const editlab::TokenSeq& query,
                                          const editlab::TokenSeq& answer);

// Softmax in long double by direct summation.
std::vector<long double> probs(const editlab::LogitVector& logits);

double kl(const std::vector<long double>& p, const std::vector<long double>& q);

// Minimizes sum ||(W+D)k_i - m_i||^2 + lambda sum ||D k_j||^2 by Nesterov
// accelerated gradient descent with step 1/L.
editlab::Mat gd_minimize(const editlab::Mat& w, const editlab::Mat& k_edit,
                         const editlab::Mat& m_edit, const editlab::Mat& k_keep, double lambda,
                         int steps);

double objective(const editlab::Mat& w, const editlab::Mat& delta, const editlab::Mat& k_edit,
                 const editlab::Mat& m_edit, const editlab::Mat& k_keep, double lambda);

// Mean of ||D k_j|| with explicit index loops.
double loop_reg_norm(const editlab::Mat& delta, const editlab::Mat& k_keep);

// (concordant - discordant) / (n choose 2), tie-free input.
double pair_count_tau(const std::vector<double>& x, const std::vector<double>& y);

double two_pass_std(const std::vector<double>& v);

// Top-k ids by repeated selection of the max, ties to the lowest id.
std::vector<int> selection_topk(const editlab::LogitVector& logits, int k);

// Header a sweep CSV must have.
std::vector<std::string> sweep_header(const std::vector<int>& layers,
                                      const std::vector<std::string>& metrics);

std::vector<std::string> split_csv_line(const std::string& line);

editlab::Mat random_matrix(std::mt19937_64& gen, long rows, long cols);

// Small fully random model for oracle checks (attention and MLP active).
editlab::ToyTransformer small_model(int d_model, int n_layers, int n_heads, int d_ff,
                                    std::uint64_t seed, double init_std = 0.3);

}  // namespace oracle
