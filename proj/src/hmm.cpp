#include "mess3/hmm.hpp"

#include <cmath>
#include <sstream>

#include "mess3/io.hpp"

namespace mess3 {

namespace {

void validate_spec(const HmmSpec& spec) {
  for (int z = 0; z < kVocab; ++z)
    for (int i = 0; i < 9; ++i)
      if (spec.labeled[std::size_t(z)][std::size_t(i)] < 0)
        throw std::domain_error("labeled matrix T^(" + std::to_string(z) + ") has a negative entry");
  for (int i = 0; i < 3; ++i) {
    double row = 0;
    for (int j = 0; j < 3; ++j) row += at(spec.marginal, i, j);
    if (std::abs(row - 1.0) > 1e-12)
      throw std::domain_error("marginal T row " + std::to_string(i) + " does not sum to 1");
  }
  const Vec3 piT = vec_mat(spec.pi, spec.marginal);
  if (max_abs_diff(piT, spec.pi) > 1e-12) throw std::runtime_error("stationary residual exceeds 1e-12");
}

}  // namespace

HmmSpec build_mess3(double alpha, double x) {
  if (!(alpha >= 0.0 && alpha <= 1.0))
    throw std::domain_error("alpha must be in [0, 1], got " + std::to_string(alpha));
  if (!(x > 0.0 && x <= 0.5))
    throw std::domain_error("x must be in (0, 0.5], got " + std::to_string(x));

  const Mess3Params p{alpha, x};
  const double a = p.alpha, b = p.beta(), y = p.y();

  // Labeled matrix for token z: transitions into state z carry the preferred
  // coefficient a, all others b; diagonal transitions keep weight y.
  std::array<Mat3, kVocab> labeled;
  for (int z = 0; z < kVocab; ++z) {
    Mat3 m = mat3_zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double emit = (j == z) ? a : b;
        at(m, i, j) = emit * ((i == j) ? y : x);
      }
    labeled[std::size_t(z)] = m;
  }

  HmmSpec spec = hmm_from_labeled(labeled);
  spec.alpha = alpha;
  spec.x = x;
  return spec;
}

HmmSpec hmm_from_labeled(const std::array<Mat3, kVocab>& labeled) {
  HmmSpec spec;
  spec.labeled = labeled;
  spec.marginal = mat3_zero();
  for (const Mat3& m : labeled) spec.marginal = mat3_add(spec.marginal, m);
  spec.pi = stationary_distribution(spec.marginal);
  for (int z = 0; z < kVocab; ++z)
    spec.conditional[std::size_t(z)] = conditional_matrix(labeled[std::size_t(z)], Token(z));
  validate_spec(spec);
  return spec;
}

Vec3 stationary_distribution(const Mat3& marginal) {
  Vec3 pi{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const int max_iters = 100000;
  const double tol = 1e-14;
  for (int it = 0; it < max_iters; ++it) {
    Vec3 next = vec_mat(pi, marginal);
    const double s = vec_sum(next);
    for (auto& v : next) v /= s;
    if (max_abs_diff(next, pi) <= tol) {
      pi = next;
      // polish once more; keeps the fixed-point residual at rounding level
      Vec3 polished = vec_mat(pi, marginal);
      const double ps = vec_sum(polished);
      for (auto& v : polished) v /= ps;
      return polished;
    }
    pi = next;
  }
  const Vec3 piT = vec_mat(pi, marginal);
  throw std::runtime_error("stationary distribution did not converge; residual " +
                           io::format_double(max_abs_diff(piT, pi)));
}

Mat3 conditional_matrix(const Mat3& labeled, Token z) {
  Mat3 out = mat3_zero();
  for (int i = 0; i < 3; ++i) {
    double row_sum = 0;
    for (int j = 0; j < 3; ++j) row_sum += at(labeled, i, j);
    if (row_sum <= 0.0)
      throw std::domain_error("degenerate process: row " + std::to_string(i) + " of T^(" +
                              std::to_string(int(z)) + ") has zero sum");
    for (int j = 0; j < 3; ++j) at(out, i, j) = at(labeled, i, j) / row_sum;
  }
  return out;
}

double sequence_probability(const HmmSpec& spec, const TokenSeq& seq) {
  check_tokens(seq);
  Vec3 b = spec.pi;
  for (Token z : seq) b = vec_mat(b, spec.labeled[z]);
  return vec_sum(b);
}

std::size_t context_count(int max_len) {
  std::size_t total = 0, p = 1;
  for (int d = 1; d <= max_len; ++d) {
    p *= 3;
    total += p;
  }
  return total;
}

std::vector<std::pair<TokenSeq, double>> enumerate_contexts(const HmmSpec& spec, int max_len) {
  if (max_len < 1 || max_len > kEnumerationCap)
    throw std::length_error("max_len must be in [1, " + std::to_string(kEnumerationCap) +
                            "], got " + std::to_string(max_len));
  std::vector<std::pair<TokenSeq, double>> out;
  out.reserve(context_count(max_len));

  // Belief rows for every prefix of the previous length avoid recomputing
  // the whole product per context.
  std::vector<Vec3> prev{spec.pi};
  std::vector<TokenSeq> prev_seqs{TokenSeq{}};
  for (int d = 1; d <= max_len; ++d) {
    std::vector<Vec3> cur;
    std::vector<TokenSeq> cur_seqs;
    cur.reserve(prev.size() * 3);
    cur_seqs.reserve(prev.size() * 3);
    for (std::size_t i = 0; i < prev.size(); ++i) {
      for (Token z = 0; z < kVocab; ++z) {
        Vec3 b = vec_mat(prev[i], spec.labeled[z]);
        TokenSeq seq = prev_seqs[i];
        seq.push_back(z);
        out.emplace_back(seq, vec_sum(b));
        cur.push_back(b);
        cur_seqs.push_back(std::move(seq));
      }
    }
    prev = std::move(cur);
    prev_seqs = std::move(cur_seqs);
  }
  return out;
}

TokenSeq sample_sequence(const HmmSpec& spec, Rng& rng, int len) {
  if (len < 1) throw std::invalid_argument("sample_sequence: len must be >= 1");
  // initial hidden state from pi
  int state = 2;
  {
    const double u = rng.uniform();
    double acc = 0;
    for (int i = 0; i < 3; ++i) {
      acc += spec.pi[std::size_t(i)];
      if (u < acc) {
        state = i;
        break;
      }
    }
  }
  TokenSeq seq;
  seq.reserve(std::size_t(len));
  for (int t = 0; t < len; ++t) {
    const double u = rng.uniform();
    double acc = 0;
    int z_pick = kVocab - 1, next_state = 2;
    bool done = false;
    for (int z = 0; z < kVocab && !done; ++z) {
      for (int j = 0; j < 3 && !done; ++j) {
        acc += at(spec.labeled[std::size_t(z)], state, j);
        if (u < acc) {
          z_pick = z;
          next_state = j;
          done = true;
        }
      }
    }
    seq.push_back(Token(z_pick));
    state = next_state;
  }
  return seq;
}

std::string contexts_to_csv(const std::vector<std::pair<TokenSeq, double>>& contexts) {
  std::ostringstream out;
  out << "seq,length,probability\n";
  for (const auto& [seq, prob] : contexts)
    out << seq_to_string(seq) << ',' << seq.size() << ',' << io::format_double(prob) << '\n';
  return out.str();
}

nlohmann::json HmmSpec::to_json() const {
  nlohmann::json j;
  if (!std::isnan(alpha)) j["alpha"] = alpha;
  if (!std::isnan(x)) j["x"] = x;
  auto mat = [](const Mat3& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int jj = 0; jj < 3; ++jj) row.push_back(at(m, i, jj));
      rows.push_back(row);
    }
    return rows;
  };
  j["labeled"] = nlohmann::json::array();
  for (const Mat3& m : labeled) j["labeled"].push_back(mat(m));
  j["marginal"] = mat(marginal);
  j["conditional"] = nlohmann::json::array();
  for (const Mat3& m : conditional) j["conditional"].push_back(mat(m));
  j["pi"] = {pi[0], pi[1], pi[2]};
  return j;
}

HmmSpec HmmSpec::from_json(const nlohmann::json& j) {
  std::array<Mat3, kVocab> labeled;
  for (int z = 0; z < kVocab; ++z)
    for (int i = 0; i < 3; ++i)
      for (int jj = 0; jj < 3; ++jj)
        at(labeled[std::size_t(z)], i, jj) =
            j.at("labeled").at(std::size_t(z)).at(std::size_t(i)).at(std::size_t(jj)).get<double>();
  HmmSpec spec = hmm_from_labeled(labeled);
  if (j.contains("alpha")) spec.alpha = j["alpha"].get<double>();
  if (j.contains("x")) spec.x = j["x"].get<double>();
  return spec;
}

}  // namespace mess3
