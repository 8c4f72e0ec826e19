#pragma once

#include <cstddef>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mess3/common.hpp"
#include "mess3/linalg.hpp"
#include "mess3/rng.hpp"

namespace mess3::nn {

struct ModelConfig {
  int d_model = 64;
  int d_ff = 256;
  int n_heads = 1;
  int n_layers = 1;
  int vocab = kVocab;
  int max_ctx = 10;
  bool layer_norm = false;  // theory assumes a linear residual readout; off by default

  int head_dim() const { return d_model / n_heads; }
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// One named tensor inside the flat parameter buffer.
struct ParamEntry {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;  // cols == 0 for vectors
  std::size_t size() const { return rows * (cols ? cols : 1); }
};

// All weights in one flat vector with a name registry; Adam, checkpointing
// and gradient checks all index the same layout.
struct ModelParams {
  ModelConfig config;
  std::vector<double> data;
  std::vector<ParamEntry> entries;

  double* tensor(const std::string& name);
  const double* tensor(const std::string& name) const;
  const ParamEntry& entry(const std::string& name) const;

  // layout helpers (row-major)
  double* embed_tokens() { return tensor("embed.tokens"); }
  double* embed_positions() { return tensor("embed.positions"); }
};

ModelParams zero_params(const ModelConfig& config);

// uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) for weight matrices,
// zeros for biases, layer-norm shifts and positional embeddings.
ModelParams init_model(const ModelConfig& config, std::uint64_t seed);

struct HeadTrace {
  Matrix attention;       // T x T, causal, rows sum to 1
  Matrix value_contrib;   // T x d_model: v_s = W_O W_V (attention input at s)
};

struct LayerTrace {
  Matrix x_pre;   // T x d_model, residual entering the layer
  Matrix x_mid;   // residual after attention
  Matrix x_post;  // residual after the MLP
  std::vector<HeadTrace> heads;
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Matrix logits;  // T x vocab
};

ForwardTrace forward(const ModelParams& params, const TokenSeq& tokens);

// Reusable forward pass for hot loops (KL evaluation, activation collection);
// buffers persist across calls. Pointers stay valid until the next run().
class ForwardPass {
 public:
  ForwardPass();
  ~ForwardPass();
  ForwardPass(ForwardPass&&) noexcept;
  ForwardPass& operator=(ForwardPass&&) noexcept;

  void run(const ModelParams& params, const TokenSeq& tokens);
  std::size_t seq_len() const;
  const double* logits() const;                        // T x vocab
  const double* x_pre(int layer) const;                // T x d_model
  const double* x_mid(int layer) const;
  const double* x_post(int layer) const;
  const double* attention(int layer, int head) const;  // T x T

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Mean over positions of -log softmax(logits)[target].
double loss_from_logits(const Matrix& logits, const TokenSeq& targets);
double loss(const ForwardTrace& trace, const TokenSeq& targets);

// Exact reverse-mode gradients of loss(tokens, targets), accumulated into
// grads (same layout as params; call zero_params first or reuse buffers).
double backward(const ModelParams& params, const TokenSeq& tokens, const TokenSeq& targets,
                std::vector<double>& grads);

// Max relative error between analytic gradients and central finite
// differences over n_coords randomly sampled coordinates.
double grad_check(const ModelParams& params, const TokenSeq& tokens, const TokenSeq& targets,
                  double eps, int n_coords, std::uint64_t seed = 7);

// Checkpoint file: JSON with config, seed, step, metrics, and parameter
// arrays as base64 little-endian doubles keyed by name.
void save_checkpoint(const ModelParams& params, std::uint64_t seed, std::int64_t step,
                     const nlohmann::json& metrics, const std::filesystem::path& file);
struct Checkpoint {
  ModelParams params;
  std::uint64_t seed = 0;
  std::int64_t step = 0;
  nlohmann::json metrics;
};
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace mess3::nn
