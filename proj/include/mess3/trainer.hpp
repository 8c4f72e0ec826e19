#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mess3/belief.hpp"
#include "mess3/hmm.hpp"
#include "mess3/nn.hpp"

namespace mess3::train {

struct TrainConfig {
  int batch_size = 128;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t total_tokens = 2'000'000;  // desk-scale default
  int seq_len = 10;
  int checkpoint_every = 200;  // steps
  int eval_max_len = 8;        // context length for KL evaluation at checkpoints
  std::uint64_t seed = 1;
  int n_threads = 1;

  // tokens = batch_size * seq_len * steps; steps rounds the budget up
  std::int64_t steps() const;
  void validate() const;
  nlohmann::json to_json() const;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::int64_t t = 0;
};

struct training_divergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Standard Adam with bias correction, no weight decay. Throws on non-finite
// gradients.
void adam_step(nn::ModelParams& params, const std::vector<double>& grads, AdamState& state,
               const TrainConfig& config);

struct CheckpointRecord {
  std::int64_t step = 0;
  nn::ModelParams params;
  double train_loss = 0.0;  // probe-batch loss at this checkpoint
  double eval_kl = 0.0;
};

struct TrainRun {
  nn::ModelConfig model_config;
  TrainConfig train_config;
  std::vector<CheckpointRecord> checkpoints;
  std::vector<std::pair<std::int64_t, double>> step_losses;  // per-step batch loss
};

// Online-sampled next-token training. Sequences are drawn fresh from the HMM
// each step (seq_len + 1 tokens; inputs are the first seq_len, targets the
// shifted suffix). When run_dir is set, writes manifest.json,
// checkpoints/step-<n>.ckpt and metrics.csv.
TrainRun train(const HmmSpec& spec, const nn::ModelConfig& mconfig, const TrainConfig& tconfig,
               const std::optional<std::filesystem::path>& run_dir = std::nullopt);

// Probability-weighted mean over all contexts up to max_len of
// KL(optimal next-token distribution || model next-token distribution).
double evaluate_kl(const nn::ModelParams& params, const HmmSpec& spec, int max_len,
                   int n_threads = 1);

// Same traversal for an arbitrary predictor (tests inject oracles here).
using Predictor = std::function<Vec3(const TokenSeq&)>;
double evaluate_kl_against(const Predictor& predict, const HmmSpec& spec, int max_len);

// Exact optimal cross-entropy: probability-weighted mean over contexts of the
// entropy of the true next-token distribution derived from full beliefs.
double optimal_cross_entropy(const HmmSpec& spec, int max_len);

// Exact expected next-token loss of the model over the enumerated context
// distribution; equals optimal_cross_entropy + evaluate_kl.
double exact_expected_loss(const nn::ModelParams& params, const HmmSpec& spec, int max_len,
                           int n_threads = 1);

// Next-token distribution given a context, from the full belief:
// p(z) = eta T^(z) 1.
Vec3 optimal_next_token(const HmmSpec& spec, const TokenSeq& context);

}  // namespace mess3::train
