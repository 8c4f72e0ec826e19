#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mess3/common.hpp"
#include "mess3/linalg.hpp"
#include "mess3/rng.hpp"

namespace mess3 {

// Mess3 family parameters. alpha controls how strongly each hidden state
// prefers its own emission symbol, x the state transition rate.
struct Mess3Params {
  double alpha = 0.0;
  double x = 0.0;
  double beta() const { return (1.0 - alpha) / 2.0; }
  double y() const { return 1.0 - 2.0 * x; }
};

// A 3-state, 3-token edge-emitting HMM: labeled substochastic matrices
// T^(z), their row-stochastic sum T, the row-normalized conditionals T^{|z},
// and the stationary distribution pi.
struct HmmSpec {
  double alpha = std::numeric_limits<double>::quiet_NaN();  // NaN for non-Mess3 specs
  double x = std::numeric_limits<double>::quiet_NaN();
  std::array<Mat3, kVocab> labeled{};
  Mat3 marginal{};
  std::array<Mat3, kVocab> conditional{};
  Vec3 pi{};

  nlohmann::json to_json() const;
  static HmmSpec from_json(const nlohmann::json& j);
};

HmmSpec build_mess3(double alpha, double x);

// Generic construction from labeled matrices: validates nonnegativity and
// row-stochasticity of the sum, solves pi and row-normalizes conditionals.
HmmSpec hmm_from_labeled(const std::array<Mat3, kVocab>& labeled);

// Left fixed vector of T by power iteration from uniform (tol 1e-14,
// max 1e5 iterations). Throws on non-convergence with the residual.
Vec3 stationary_distribution(const Mat3& marginal);
inline Vec3 stationary_distribution(const HmmSpec& spec) { return spec.pi; }

// Row-normalized T^{|z}. Throws for a zero row sum, naming row and token.
Mat3 conditional_matrix(const Mat3& labeled, Token z);
inline const Mat3& conditional_matrix(const HmmSpec& spec, Token z) {
  return spec.conditional[z];
}

// pi T^(z_1) ... T^(z_d) 1; the empty sequence has probability 1.
double sequence_probability(const HmmSpec& spec, const TokenSeq& seq);

// All contexts of lengths 1..max_len with their probabilities, ordered by
// length then lexicographically.
std::vector<std::pair<TokenSeq, double>> enumerate_contexts(const HmmSpec& spec, int max_len);

// Number of contexts enumerate_contexts(max_len) returns.
std::size_t context_count(int max_len);

// Hidden state drawn from pi, then joint (token, next state) transitions.
TokenSeq sample_sequence(const HmmSpec& spec, Rng& rng, int len);

std::string contexts_to_csv(const std::vector<std::pair<TokenSeq, double>>& contexts);

}  // namespace mess3
