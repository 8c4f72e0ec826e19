#pragma once

#include <string>
#include <vector>

#include "mess3/hmm.hpp"

namespace mess3 {

enum class BeliefRole { full_belief, constrained_belief };

// A point in (or near) the probability simplex over hidden states.
// Constrained beliefs stay in the simplex hyperplane (coordinates sum to 1)
// but individual coordinates may be negative.
struct SimplexPoint {
  Vec3 coords{};
  BeliefRole role = BeliefRole::full_belief;
};

enum class ConstrainedVariant { bayes, rownorm };

enum class CloudVariant { full, constrained_bayes, constrained_rownorm, constrained_spectral };

std::string cloud_variant_name(CloudVariant v);

struct GeometryCloudEntry {
  TokenSeq seq;
  SimplexPoint point;
  Vec3 rgb{};
  double prob = 0.0;
};

struct GeometryCloud {
  std::vector<GeometryCloudEntry> entries;
  int max_len = 0;
  CloudVariant variant = CloudVariant::full;
};

// One Bayes step: eta T^(z) / (eta T^(z) 1).
SimplexPoint update_belief(const HmmSpec& spec, const SimplexPoint& eta, Token z);

// Posterior over hidden states after the whole sequence, starting from pi.
SimplexPoint full_belief(const HmmSpec& spec, const TokenSeq& seq);

// Parallel approximation: stationary prior plus independent per-source
// corrections. rownorm uses pi T^{|z_s} T^{d-s} - pi; bayes uses the
// normalized labeled form pi T^(z_s) T^{d-s} / (pi T^(z_s) 1) - pi.
SimplexPoint constrained_belief(const HmmSpec& spec, const TokenSeq& seq, ConstrainedVariant variant);

GeometryCloud build_geometry_cloud(const HmmSpec& spec, int max_len, CloudVariant variant);

// Barycentric plotting coordinates: vertices at (0,0), (1,0), (1/2, sqrt(3)/2).
std::pair<double, double> simplex_coords(const SimplexPoint& p);

std::string cloud_to_csv(const GeometryCloud& cloud);

}  // namespace mess3
