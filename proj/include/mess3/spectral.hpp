#pragma once

#include <complex>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "mess3/belief.hpp"
#include "mess3/hmm.hpp"

namespace mess3 {

struct Eigenvalue {
  std::complex<double> value;
  int multiplicity = 1;
};

// Spectral decomposition of the marginal transition matrix: eigenvalues with
// multiplicities and the projector T_lambda per distinct real eigenvalue.
// For Mess3 the spectrum is {1, zeta = 1 - 3x (x2)} with T_1 = 1 pi and
// T_zeta = I - 1 pi.
struct SpectralDecomp {
  std::vector<Eigenvalue> eigenvalues;      // distinct, 1 first
  std::vector<Mat3> projectors;             // aligned with eigenvalues (real case)
  Mat3 simplex_projector{};                 // I - 1 pi
  Vec3 pi{};
  bool has_complex = false;

  double zeta() const;  // the non-unit eigenvalue; throws if complex
};

SpectralDecomp decompose(const HmmSpec& spec);

// pi + sum_s sum_{lambda != 1} lambda^{d-s} pi T^{|z_s} T_lambda.
// Algebraically identical to constrained_belief(seq, rownorm).
SimplexPoint spectral_constrained_belief(const HmmSpec& spec, const TokenSeq& seq);
SimplexPoint spectral_constrained_belief(const HmmSpec& spec, const SpectralDecomp& sd,
                                         const TokenSeq& seq);

// Predicted attention pattern(s). Destinations and sources are 1-indexed.
//
// Single head (zeta >= 0): the canonical pattern is the geometric lag profile
// zeta^{d-s} row-normalized, A_{d,s} = zeta^{d-s} / Z_d with
// Z_d = sum_{n<d} zeta^n; this is exactly the softmax of lag-linear logits.
// The raw recurrence A_{d+m,s} = zeta^m A_{d,s} holds on the unnormalized
// profile (rows * Z_d); within a row consecutive sources keep the exact
// ratio zeta.
//
// Two heads (zeta < 0): head 1 carries even lags, head 2 odd lags, both with
// unit profile scale: A^(h)_{d,s} = |zeta|^{d-s} on the head's parity for
// s < d, and the diagonal absorbs the row slack so each row sums to 1 (a
// softmax row has nowhere else to put its mass; for head 2 the d=1 row is
// forced entirely onto the diagonal). Off-diagonal entries then satisfy
// A^(h)_{d+2m,s} = zeta^{2m} A^(h)_{d,s} exactly, and the signed combination
// A^(1) - A^(2) equals zeta^{d-s} off the diagonal.
struct AttentionPrediction {
  double zeta = 0.0;
  int max_len = 0;
  int head_count = 1;
  std::vector<Matrix> pattern;        // per head, max_len x max_len, lower triangular
  std::vector<double> signed_profile; // zeta^n for n = 0..max_len-1

  double anchor(int head, int source) const;    // A_{s+1,s}
  double diagonal(int head, int dest) const;    // A_{d,d}
};

AttentionPrediction predict_attention(const HmmSpec& spec, int max_len);
AttentionPrediction predict_two_heads(const HmmSpec& spec, int max_len);

// true iff zeta = 1 - 3x < 0, i.e. x > 1/3.
bool requires_two_heads(double x);

// Predicted OV vector f(v_m) and embedding f(x_m^pre) per (token, position),
// in simplex-plane coordinates (zero-sum 3-vectors). Positions run 1..L-1
// (each needs the anchor A_{m+1,m}).
struct OvEmbedEntry {
  Token token = 0;
  int position = 1;
  int head = 1;
  Vec3 ov{};
  Vec3 embedding{};
  double ov_scale = 0.0;     // coefficient on (pi T^{|z} - pi)
  double embed_scale = 0.0;
};

struct OvEmbedPrediction {
  double zeta = 0.0;
  int head_count = 1;
  std::vector<OvEmbedEntry> entries;

  nlohmann::json to_json() const;
};

OvEmbedPrediction predict_ov_and_embeddings(const HmmSpec& spec, const AttentionPrediction& anchors);

std::string attention_to_csv(const AttentionPrediction& pred);

}  // namespace mess3
