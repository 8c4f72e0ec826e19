#include "mess3/spectral.hpp"

#include <cmath>
#include <sstream>

#include "mess3/io.hpp"

namespace mess3 {

namespace {

double trace3(const Mat3& m) { return m[0] + m[4] + m[8]; }

double det3(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

void validate_projectors(const SpectralDecomp& sd, const Mat3& marginal) {
  Mat3 sum = mat3_zero();
  Mat3 recon = mat3_zero();
  for (std::size_t i = 0; i < sd.projectors.size(); ++i) {
    sum = mat3_add(sum, sd.projectors[i]);
    recon = mat3_add(recon, mat3_scale(sd.projectors[i], sd.eigenvalues[i].value.real()));
  }
  const double completeness = max_abs_diff(sum, mat3_identity());
  const double reconstruction = max_abs_diff(recon, marginal);
  double algebra = 0;
  for (std::size_t i = 0; i < sd.projectors.size(); ++i)
    for (std::size_t j = 0; j < sd.projectors.size(); ++j) {
      const Mat3 prod = mat3_mul(sd.projectors[i], sd.projectors[j]);
      const Mat3 expect = (i == j) ? sd.projectors[i] : mat3_zero();
      algebra = std::max(algebra, max_abs_diff(prod, expect));
    }
  if (completeness > 1e-10 || reconstruction > 1e-10 || algebra > 1e-9) {
    std::ostringstream msg;
    msg << "spectral decomposition failed validation (matrix may be defective): "
        << "completeness residual " << io::format_double(completeness) << ", reconstruction residual "
        << io::format_double(reconstruction) << ", projector algebra residual "
        << io::format_double(algebra);
    throw std::runtime_error(msg.str());
  }
}

}  // namespace

double SpectralDecomp::zeta() const {
  if (has_complex) throw std::domain_error("spectrum has complex eigenvalues; no real zeta");
  for (const auto& ev : eigenvalues)
    if (std::abs(ev.value.real() - 1.0) > 1e-9) return ev.value.real();
  // fully mixing in one step: T = 1 pi, only eigenvalue 1 plus zeros
  return 0.0;
}

SpectralDecomp decompose(const HmmSpec& spec) {
  const Mat3& T = spec.marginal;
  SpectralDecomp sd;
  sd.pi = spec.pi;
  sd.simplex_projector = mat3_sub(mat3_identity(), ones_outer(spec.pi));

  // A row-stochastic matrix always has eigenvalue 1; deflating it leaves a
  // quadratic lambda^2 + b lambda + c with b = 1 - tr(T), c = det(T).
  const double b = 1.0 - trace3(T);
  const double c = det3(T);
  const double disc = b * b - 4.0 * c;
  const double cluster_tol = 1e-9;

  if (!std::isnan(spec.x) && !std::isnan(spec.alpha)) {
    // Mess3: zeta = 1 - 3x with multiplicity 2, exact projectors.
    const double zeta = 1.0 - 3.0 * spec.x;
    sd.eigenvalues = {{{1.0, 0.0}, 1}, {{zeta, 0.0}, 2}};
    sd.projectors = {ones_outer(spec.pi), sd.simplex_projector};
    validate_projectors(sd, T);
    return sd;
  }

  if (disc < -cluster_tol) {
    sd.has_complex = true;
    const double re = -b / 2.0;
    const double im = std::sqrt(-disc) / 2.0;
    sd.eigenvalues = {{{1.0, 0.0}, 1}, {{re, im}, 1}, {{re, -im}, 1}};
    // complex pair: projectors are not real; prediction operations reject this regime
    return sd;
  }

  const double sq = std::sqrt(std::max(0.0, disc));
  const double l2 = (-b + sq) / 2.0;
  const double l3 = (-b - sq) / 2.0;
  const Mat3 I = mat3_identity();

  auto lagrange2 = [&](double li, double lj) {
    // projector for li among distinct {li, lj}: (T - lj I) / (li - lj)
    return mat3_scale(mat3_sub(T, mat3_scale(I, lj)), 1.0 / (li - lj));
  };

  if (std::abs(l2 - l3) <= cluster_tol) {
    const double mu = (l2 + l3) / 2.0;
    if (std::abs(mu - 1.0) <= cluster_tol) {
      // eigenvalue 1 with multiplicity 3: T = I within tolerance
      sd.eigenvalues = {{{1.0, 0.0}, 3}};
      sd.projectors = {I};
    } else {
      sd.eigenvalues = {{{1.0, 0.0}, 1}, {{mu, 0.0}, 2}};
      sd.projectors = {lagrange2(1.0, mu), lagrange2(mu, 1.0)};
    }
  } else if (std::abs(l2 - 1.0) <= cluster_tol || std::abs(l3 - 1.0) <= cluster_tol) {
    // eigenvalue 1 doubled with one other eigenvalue
    const double mu = (std::abs(l2 - 1.0) <= cluster_tol) ? l3 : l2;
    sd.eigenvalues = {{{1.0, 0.0}, 2}, {{mu, 0.0}, 1}};
    sd.projectors = {lagrange2(1.0, mu), lagrange2(mu, 1.0)};
  } else {
    // three distinct eigenvalues: full Lagrange interpolation
    auto lagrange3 = [&](double li, double lj, double lk) {
      const Mat3 m1 = mat3_sub(T, mat3_scale(I, lj));
      const Mat3 m2 = mat3_sub(T, mat3_scale(I, lk));
      return mat3_scale(mat3_mul(m1, m2), 1.0 / ((li - lj) * (li - lk)));
    };
    sd.eigenvalues = {{{1.0, 0.0}, 1}, {{l2, 0.0}, 1}, {{l3, 0.0}, 1}};
    sd.projectors = {lagrange3(1.0, l2, l3), lagrange3(l2, 1.0, l3), lagrange3(l3, 1.0, l2)};
  }
  validate_projectors(sd, T);
  return sd;
}

SimplexPoint spectral_constrained_belief(const HmmSpec& spec, const TokenSeq& seq) {
  const SpectralDecomp sd = decompose(spec);
  return spectral_constrained_belief(spec, sd, seq);
}

SimplexPoint spectral_constrained_belief(const HmmSpec& spec, const SpectralDecomp& sd,
                                         const TokenSeq& seq) {
  check_tokens(seq);
  if (seq.empty()) throw std::invalid_argument("spectral_constrained_belief: sequence must be nonempty");
  if (sd.has_complex)
    throw std::domain_error("complex eigenvalues are outside the prediction regime");
  const int d = int(seq.size());
  Vec3 r = spec.pi;
  for (int s = 1; s <= d; ++s) {
    const Token z = seq[std::size_t(s - 1)];
    const Vec3 row = vec_mat(spec.pi, spec.conditional[z]);
    for (std::size_t e = 0; e < sd.eigenvalues.size(); ++e) {
      const double lambda = sd.eigenvalues[e].value.real();
      if (std::abs(lambda - 1.0) <= 1e-12) continue;
      const double w = (d - s == 0) ? 1.0 : std::pow(lambda, d - s);
      r = vec_add(r, vec_scale(vec_mat(row, sd.projectors[e]), w));
    }
  }
  return SimplexPoint{r, BeliefRole::constrained_belief};
}

bool requires_two_heads(double x) {
  if (!(x > 0.0 && x <= 0.5)) throw std::domain_error("x must be in (0, 0.5], got " + std::to_string(x));
  return 1.0 - 3.0 * x < 0.0;
}

double AttentionPrediction::anchor(int head, int source) const {
  return pattern[std::size_t(head)](std::size_t(source), std::size_t(source - 1));
}

double AttentionPrediction::diagonal(int head, int dest) const {
  return pattern[std::size_t(head)](std::size_t(dest - 1), std::size_t(dest - 1));
}

AttentionPrediction predict_attention(const HmmSpec& spec, int max_len) {
  const SpectralDecomp sd = decompose(spec);
  const double zeta = sd.zeta();
  if (zeta < 0.0)
    throw std::domain_error("zeta = " + io::format_double(zeta) +
                            " < 0: oscillatory regime, use predict_two_heads");
  AttentionPrediction pred;
  pred.zeta = zeta;
  pred.max_len = max_len;
  pred.head_count = 1;
  Matrix A{std::size_t(max_len), std::size_t(max_len)};
  pred.signed_profile.resize(std::size_t(max_len));
  for (int n = 0; n < max_len; ++n)
    pred.signed_profile[std::size_t(n)] = (n == 0) ? 1.0 : std::pow(zeta, n);
  for (int d = 1; d <= max_len; ++d) {
    double Z = 0;
    for (int s = 1; s <= d; ++s) Z += pred.signed_profile[std::size_t(d - s)];
    for (int s = 1; s <= d; ++s)
      A(std::size_t(d - 1), std::size_t(s - 1)) = pred.signed_profile[std::size_t(d - s)] / Z;
  }
  pred.pattern = {std::move(A)};
  return pred;
}

AttentionPrediction predict_two_heads(const HmmSpec& spec, int max_len) {
  const SpectralDecomp sd = decompose(spec);
  const double zeta = sd.zeta();
  if (zeta >= 0.0)
    throw std::domain_error("zeta = " + io::format_double(zeta) +
                            " >= 0: single-head regime, use predict_attention");
  AttentionPrediction pred;
  pred.zeta = zeta;
  pred.max_len = max_len;
  pred.head_count = 2;
  pred.signed_profile.resize(std::size_t(max_len));
  for (int n = 0; n < max_len; ++n)
    pred.signed_profile[std::size_t(n)] = (n == 0) ? 1.0 : std::pow(zeta, n);
  const double mag = -zeta;
  Matrix even{std::size_t(max_len), std::size_t(max_len)};
  Matrix odd{std::size_t(max_len), std::size_t(max_len)};
  for (int d = 1; d <= max_len; ++d) {
    double even_off = 0, odd_off = 0;
    for (int s = 1; s < d; ++s) {
      const int lag = d - s;
      const double w = std::pow(mag, lag);
      if (lag % 2 == 0) {
        even(std::size_t(d - 1), std::size_t(s - 1)) = w;
        even_off += w;
      } else {
        odd(std::size_t(d - 1), std::size_t(s - 1)) = w;
        odd_off += w;
      }
    }
    // softmax rows must sum to 1; the diagonal takes the remaining mass
    // (for head 2 at d=1 that is the entire row)
    even(std::size_t(d - 1), std::size_t(d - 1)) = 1.0 - even_off;
    odd(std::size_t(d - 1), std::size_t(d - 1)) = 1.0 - odd_off;
  }
  pred.pattern = {std::move(even), std::move(odd)};
  return pred;
}

OvEmbedPrediction predict_ov_and_embeddings(const HmmSpec& spec, const AttentionPrediction& anchors) {
  OvEmbedPrediction out;
  out.zeta = anchors.zeta;
  out.head_count = anchors.head_count;
  const double zeta = anchors.zeta;

  std::array<Vec3, kVocab> delta;
  for (Token z = 0; z < kVocab; ++z)
    delta[z] = vec_sub(vec_mat(spec.pi, spec.conditional[z]), spec.pi);

  for (int m = 1; m < anchors.max_len; ++m) {
    if (anchors.head_count == 1) {
      const double a_next = anchors.anchor(0, m);
      if (a_next == 0.0)
        throw std::domain_error("anchor A_{m+1,m} = 0 at position " + std::to_string(m) +
                                "; OV prediction undefined in this regime");
      const double ov_scale = zeta / a_next;
      const double embed_scale = 1.0 - zeta * anchors.diagonal(0, m) / a_next;
      for (Token z = 0; z < kVocab; ++z) {
        OvEmbedEntry e;
        e.token = z;
        e.position = m;
        e.head = 1;
        e.ov_scale = ov_scale;
        e.embed_scale = embed_scale;
        e.ov = vec_scale(delta[z], ov_scale);
        e.embedding = vec_scale(delta[z], embed_scale);
        out.entries.push_back(e);
      }
    } else {
      // head 1 carries +|zeta|^{even lag}, head 2 carries -|zeta|^{odd lag};
      // OV directions are opposite. Scales follow from the parity anchors:
      // head 2 at lag 1, head 1 at lag 2 (available for m <= L-2).
      const double a_odd = anchors.anchor(1, m);
      const double ov1 = (m + 2 <= anchors.max_len)
                             ? (zeta * zeta) / anchors.pattern[0](std::size_t(m + 1), std::size_t(m - 1))
                             : 1.0;
      const double ov2 = (a_odd == 0.0) ? 0.0 : -(-zeta) / a_odd;
      const double embed_scale =
          1.0 - anchors.diagonal(0, m) * ov1 - anchors.diagonal(1, m) * ov2;
      for (Token z = 0; z < kVocab; ++z) {
        for (int h = 1; h <= 2; ++h) {
          OvEmbedEntry e;
          e.token = z;
          e.position = m;
          e.head = h;
          e.ov_scale = (h == 1) ? ov1 : ov2;
          e.embed_scale = embed_scale;
          e.ov = vec_scale(delta[z], e.ov_scale);
          e.embedding = vec_scale(delta[z], embed_scale);
          out.entries.push_back(e);
        }
      }
    }
  }
  return out;
}

nlohmann::json OvEmbedPrediction::to_json() const {
  nlohmann::json j;
  j["zeta"] = zeta;
  j["head_count"] = head_count;
  j["entries"] = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json je;
    je["token"] = int(e.token);
    je["position"] = e.position;
    je["head"] = e.head;
    je["ov"] = {e.ov[0], e.ov[1], e.ov[2]};
    je["embedding"] = {e.embedding[0], e.embedding[1], e.embedding[2]};
    je["ov_scale"] = e.ov_scale;
    je["embed_scale"] = e.embed_scale;
    j["entries"].push_back(je);
  }
  return j;
}

std::string attention_to_csv(const AttentionPrediction& pred) {
  std::ostringstream out;
  out << "dest,src,head,value\n";
  for (int h = 0; h < pred.head_count; ++h)
    for (int d = 1; d <= pred.max_len; ++d)
      for (int s = 1; s <= d; ++s)
        out << d << ',' << s << ',' << (h + 1) << ','
            << io::format_double(pred.pattern[std::size_t(h)](std::size_t(d - 1), std::size_t(s - 1)))
            << '\n';
  return out.str();
}

}  // namespace mess3
