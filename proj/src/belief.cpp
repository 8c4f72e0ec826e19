#include "mess3/belief.hpp"

#include <cmath>
#include <sstream>

#include "mess3/io.hpp"
#include "mess3/spectral.hpp"

namespace mess3 {

std::string cloud_variant_name(CloudVariant v) {
  switch (v) {
    case CloudVariant::full: return "full";
    case CloudVariant::constrained_bayes: return "constrained_bayes";
    case CloudVariant::constrained_rownorm: return "constrained_rownorm";
    case CloudVariant::constrained_spectral: return "constrained_spectral";
  }
  return "?";
}

SimplexPoint update_belief(const HmmSpec& spec, const SimplexPoint& eta, Token z) {
  check_tokens({z});
  Vec3 num = vec_mat(eta.coords, spec.labeled[z]);
  const double norm = vec_sum(num);
  if (norm <= 0.0)
    throw std::domain_error("impossible observation: token " + std::to_string(int(z)) +
                            " has zero probability under the current belief");
  for (auto& v : num) v /= norm;
  return SimplexPoint{num, BeliefRole::full_belief};
}

SimplexPoint full_belief(const HmmSpec& spec, const TokenSeq& seq) {
  check_tokens(seq);
  Vec3 b = spec.pi;
  for (Token z : seq) b = vec_mat(b, spec.labeled[z]);
  const double norm = vec_sum(b);
  if (norm <= 0.0) throw std::domain_error("impossible observation: sequence has zero probability");
  for (auto& v : b) v /= norm;
  return SimplexPoint{b, BeliefRole::full_belief};
}

SimplexPoint constrained_belief(const HmmSpec& spec, const TokenSeq& seq, ConstrainedVariant variant) {
  check_tokens(seq);
  if (seq.empty()) throw std::invalid_argument("constrained_belief: sequence must be nonempty");
  const int d = int(seq.size());
  Vec3 r = spec.pi;
  // powers of the marginal matrix, T^0 .. T^{d-1}
  Mat3 power = mat3_identity();
  for (int n = 0; n < d; ++n) {
    const Token z = seq[std::size_t(d - 1 - n)];  // token n places back from the destination
    Vec3 term;
    if (variant == ConstrainedVariant::rownorm) {
      term = vec_mat(vec_mat(spec.pi, spec.conditional[z]), power);
    } else {
      Vec3 head = vec_mat(spec.pi, spec.labeled[z]);
      const double norm = vec_sum(head);
      for (auto& v : head) v /= norm;
      term = vec_mat(head, power);
    }
    r = vec_add(r, vec_sub(term, spec.pi));
    power = mat3_mul(power, spec.marginal);
  }
  return SimplexPoint{r, BeliefRole::constrained_belief};
}

GeometryCloud build_geometry_cloud(const HmmSpec& spec, int max_len, CloudVariant variant) {
  GeometryCloud cloud;
  cloud.max_len = max_len;
  cloud.variant = variant;
  const auto contexts = enumerate_contexts(spec, max_len);
  cloud.entries.reserve(contexts.size());
  for (const auto& [seq, prob] : contexts) {
    GeometryCloudEntry e;
    e.seq = seq;
    e.prob = prob;
    const SimplexPoint full = full_belief(spec, seq);
    switch (variant) {
      case CloudVariant::full: e.point = full; break;
      case CloudVariant::constrained_bayes:
        e.point = constrained_belief(spec, seq, ConstrainedVariant::bayes);
        break;
      case CloudVariant::constrained_rownorm:
        e.point = constrained_belief(spec, seq, ConstrainedVariant::rownorm);
        break;
      case CloudVariant::constrained_spectral:
        e.point = spectral_constrained_belief(spec, seq);
        break;
    }
    for (int c = 0; c < 3; ++c)
      e.rgb[std::size_t(c)] = std::min(1.0, std::max(0.0, full.coords[std::size_t(c)]));
    cloud.entries.push_back(std::move(e));
  }
  return cloud;
}

std::pair<double, double> simplex_coords(const SimplexPoint& p) {
  // vertices (0,0), (1,0), (1/2, sqrt(3)/2)
  const double x = p.coords[1] + 0.5 * p.coords[2];
  const double y = 0.5 * std::sqrt(3.0) * p.coords[2];
  return {x, y};
}

std::string cloud_to_csv(const GeometryCloud& cloud) {
  std::ostringstream out;
  out << "seq,length,prob,b0,b1,b2,x2d,y2d,r,g,b\n";
  for (const auto& e : cloud.entries) {
    const auto [x2d, y2d] = simplex_coords(e.point);
    out << seq_to_string(e.seq) << ',' << e.seq.size() << ',' << io::format_double(e.prob);
    for (double c : e.point.coords) out << ',' << io::format_double(c);
    out << ',' << io::format_double(x2d) << ',' << io::format_double(y2d);
    for (double c : e.rgb) out << ',' << io::format_double(c);
    out << '\n';
  }
  return out.str();
}

}  // namespace mess3
