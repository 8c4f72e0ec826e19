#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mess3/belief.hpp"
#include "mess3/nn.hpp"
#include "mess3/spectral.hpp"

namespace mess3::analysis {

enum class Stage { pre, mid, post };
std::string stage_name(Stage s);

enum class Weighting { uniform, probability };
std::string weighting_name(Weighting w);

// Final-position residual-stream vectors for every context up to max_len,
// one row per context per stage, aligned with enumerate_contexts order.
struct ActivationSet {
  int max_len = 0;
  int layer = 0;
  std::vector<TokenSeq> contexts;
  std::vector<double> probs;
  Matrix pre;   // n_contexts x d_model
  Matrix mid;
  Matrix post;

  const Matrix& stage(Stage s) const;
};

ActivationSet collect_activations(const nn::ModelParams& params, const HmmSpec& spec, int max_len,
                                  int layer = 0, int n_threads = 1);

struct PcaResult {
  std::vector<double> singular_values;
  std::vector<double> explained_ratio;       // per component
  std::vector<double> cumulative_ratio;
  Matrix components;   // k x d_model, orthonormal rows
  Matrix projected;    // n x k
  std::vector<double> mean;
  bool degenerate = false;
};

PcaResult pca(const ActivationSet& acts, Stage stage, int k);

// Affine map from activation space to the simplex plane, the fitted stand-in
// for the theory's linear readout f.
struct SimplexMap {
  Matrix W;  // 3 x d_model
  Vec3 b{};

  Vec3 map_point(const double* x, std::size_t d) const;   // W x + b
  Vec3 map_vector(const double* x, std::size_t d) const;  // W x (directions)
};

struct RegressionFit {
  SimplexMap map;
  double mse = 0.0;
  double baseline_mse = 0.0;
  double normalized_mse = 0.0;
  Weighting weighting = Weighting::probability;
  bool ridge_applied = false;
};

// Weighted affine least squares of stage activations onto target cloud
// coordinates; ridge lambda = 1e-8 only on detected rank deficiency.
// baseline_acts supplies the same-stage activations of a fresh-init model.
RegressionFit regress_to_geometry(const ActivationSet& acts, Stage stage,
                                  const GeometryCloud& target, Weighting weighting,
                                  const ActivationSet& baseline_acts);

// Fit without the baseline (mse only; normalized_mse = NaN).
RegressionFit fit_affine(const ActivationSet& acts, Stage stage, const GeometryCloud& target,
                         Weighting weighting);

// Mean attention per (dest, source) over all contexts up to max_len
// (uniform over contexts), per head.
std::vector<Matrix> average_attention(const nn::ModelParams& params, const HmmSpec& spec,
                                      int max_len, int layer = 0);

struct DecayFit {
  double zeta_hat = 0.0;
  double r2 = 0.0;
  std::vector<double> lag_means;       // raw mean attention per lag, lag >= 1
  int excluded_nonpositive = 0;
  int points = 0;
};

// Log-linear fit of averaged off-diagonal attention against lag, with a free
// intercept per destination row (the row intercepts absorb softmax
// normalization, so the estimated ratio is offset-invariant).
DecayFit attention_decay_fit(const nn::ModelParams& params, const HmmSpec& spec, int max_len,
                             int layer = 0, int head = 0);
DecayFit decay_fit_from_pattern(const Matrix& mean_attention);

struct OvReport {
  // per head: cosine stats of same-token OV pairs (positions >= 3) and
  // angles (degrees) between mapped OV directions and pi T^{|z} - pi.
  struct HeadStats {
    double median_within_token_cosine = 0.0;
    double min_within_token_cosine = 0.0;
    double median_angle_to_theory_deg = 0.0;
    double max_angle_to_theory_deg = 0.0;
  };
  std::vector<HeadStats> heads;
  nlohmann::json detail;
};

OvReport ov_geometry_check(const nn::ModelParams& params, const HmmSpec& spec,
                           const SimplexMap& map, int layer = 0);

struct EmbedReport {
  double median_abs_cosine_late = 0.0;  // positions >= 3, |cos| to same-token OV direction
  double min_abs_cosine_late = 0.0;
  std::vector<double> early_cosines;    // signed cosines at positions 1..2
  nlohmann::json detail;
};

EmbedReport embedding_geometry_check(const nn::ModelParams& params, const HmmSpec& spec,
                                     const SimplexMap& map, int layer = 0);

struct ParityReport {
  // mean off-diagonal attention mass per head on even vs odd lags
  std::vector<double> even_mass;
  std::vector<double> odd_mass;
  bool complementary = false;  // one head favors even, the other odd
};

ParityReport two_head_parity_report(const nn::ModelParams& params, const HmmSpec& spec,
                                    int max_len, int layer = 0);

// Synthetic single-head model built from the spectral predictions: QK logits
// are lag-linear (softmax reproduces the canonical pattern exactly), the OV
// circuit writes pi T^{|z} - pi scaled by kappa, and the token embedding
// carries gamma (pi T^{|z} - pi) in the readout channels. Requires zeta > 0,
// one layer, one head. The encoded mid-stream geometry is
// pi + gamma delta_{z_d} + kappa sum_s A_{d,s} delta_{z_s}.
struct TheoryModel {
  nn::ModelParams params;
  double gamma = 0.25;
  double kappa = 1.0;
};

TheoryModel build_theory_model(const HmmSpec& spec, const nn::ModelConfig& config);

// The geometry a TheoryModel encodes, built from the predicted pattern.
GeometryCloud theory_model_cloud(const HmmSpec& spec, const TheoryModel& model, int max_len);

}  // namespace mess3::analysis
