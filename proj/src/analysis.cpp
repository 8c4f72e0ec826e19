#include "mess3/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace mess3::analysis {

namespace {

constexpr double kRidgeLambda = 1e-8;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double cosine(const Vec3& a, const Vec3& b) {
  const double na = vec_norm(a), nb = vec_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return vec_dot(a, b) / (na * nb);
}

double angle_deg(const Vec3& a, const Vec3& b) {
  const double c = std::clamp(cosine(a, b), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

// row index of a context in enumerate_contexts order (length-major, lex)
std::size_t context_row(const TokenSeq& seq) {
  std::size_t rank = 0;
  for (Token z : seq) rank = rank * 3 + z;
  return (seq.size() > 1 ? context_count(int(seq.size()) - 1) : 0) + rank;
}

// visit every full sequence of length max_len in lexicographic order
template <typename Visit>
void for_each_full_sequence(int max_len, Visit&& visit) {
  TokenSeq seq(std::size_t(max_len), 0);
  while (true) {
    visit(seq);
    int pos = max_len - 1;
    while (pos >= 0 && seq[std::size_t(pos)] == kVocab - 1) {
      seq[std::size_t(pos)] = 0;
      --pos;
    }
    if (pos < 0) return;
    ++seq[std::size_t(pos)];
  }
}

// positions d+1..max_len of a full sequence all zero => the length-d prefix
// appears here for the first time in lexicographic order
bool suffix_all_zero(const TokenSeq& seq, int d) {
  for (std::size_t i = std::size_t(d); i < seq.size(); ++i)
    if (seq[i] != 0) return false;
  return true;
}

Vec3 token_delta(const HmmSpec& spec, Token z) {
  return vec_sub(vec_mat(spec.pi, spec.conditional[z]), spec.pi);
}

// projection onto the simplex hyperplane's tangent space (zero-sum vectors);
// the theory's readout f lands there, the fitted affine map need not
Vec3 to_plane(const Vec3& u) {
  const double m = vec_sum(u) / 3.0;
  return Vec3{u[0] - m, u[1] - m, u[2] - m};
}

}  // namespace

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::pre: return "pre";
    case Stage::mid: return "mid";
    case Stage::post: return "post";
  }
  return "?";
}

std::string weighting_name(Weighting w) {
  return w == Weighting::uniform ? "uniform" : "probability";
}

const Matrix& ActivationSet::stage(Stage s) const {
  switch (s) {
    case Stage::pre: return pre;
    case Stage::mid: return mid;
    case Stage::post: return post;
  }
  return post;
}

ActivationSet collect_activations(const nn::ModelParams& params, const HmmSpec& spec, int max_len,
                                  int layer, int n_threads) {
  if (max_len > params.config.max_ctx)
    throw std::length_error("collect_activations: max_len exceeds model context");
  if (layer >= params.config.n_layers)
    throw std::invalid_argument("collect_activations: no such layer");

  ActivationSet acts;
  acts.max_len = max_len;
  acts.layer = layer;
  const auto contexts = enumerate_contexts(spec, max_len);
  acts.contexts.reserve(contexts.size());
  acts.probs.reserve(contexts.size());
  for (const auto& [seq, prob] : contexts) {
    acts.contexts.push_back(seq);
    acts.probs.push_back(prob);
  }
  const std::size_t n = contexts.size();
  const std::size_t D = std::size_t(params.config.d_model);
  acts.pre = Matrix(n, D);
  acts.mid = Matrix(n, D);
  acts.post = Matrix(n, D);

  std::vector<TokenSeq> fulls;
  fulls.reserve(std::size_t(std::pow(3.0, max_len)));
  for_each_full_sequence(max_len, [&](const TokenSeq& s) { fulls.push_back(s); });

  const int threads = std::max(1, n_threads);
  auto work = [&](int ti) {
    nn::ForwardPass fp;
    const std::size_t lo = fulls.size() * std::size_t(ti) / std::size_t(threads);
    const std::size_t hi = fulls.size() * std::size_t(ti + 1) / std::size_t(threads);
    for (std::size_t i = lo; i < hi; ++i) {
      const TokenSeq& seq = fulls[i];
      fp.run(params, seq);
      for (int d = 1; d <= max_len; ++d) {
        if (!suffix_all_zero(seq, d)) continue;
        const TokenSeq prefix(seq.begin(), seq.begin() + d);
        const std::size_t row = context_row(prefix);
        const std::size_t t = std::size_t(d - 1);
        std::copy(fp.x_pre(layer) + t * D, fp.x_pre(layer) + (t + 1) * D, acts.pre.row(row));
        std::copy(fp.x_mid(layer) + t * D, fp.x_mid(layer) + (t + 1) * D, acts.mid.row(row));
        std::copy(fp.x_post(layer) + t * D, fp.x_post(layer) + (t + 1) * D, acts.post.row(row));
      }
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  return acts;
}

PcaResult pca(const ActivationSet& acts, Stage stage, int k) {
  const Matrix& X = acts.stage(stage);
  const std::size_t n = X.rows, D = X.cols;
  if (n < 2) throw std::invalid_argument("pca: need at least 2 rows");
  if (k < 1 || std::size_t(k) > D) throw std::invalid_argument("pca: k out of range");

  PcaResult res;
  res.mean.assign(D, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < D; ++j) res.mean[j] += X(i, j);
  for (double& m : res.mean) m /= double(n);

  Matrix cov(D, D);
  std::vector<double> centered(D);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < D; ++j) centered[j] = X(i, j) - res.mean[j];
    for (std::size_t a = 0; a < D; ++a) {
      const double ca = centered[a];
      if (ca == 0.0) continue;
      double* row = cov.row(a);
      for (std::size_t b = a; b < D; ++b) row[b] += ca * centered[b];
    }
  }
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = a; b < D; ++b) {
      cov(a, b) /= double(n);
      cov(b, a) = cov(a, b);
    }

  std::vector<double> eigvals;
  Matrix eigvecs;
  symmetric_eigen(cov, eigvals, eigvecs);

  double total = 0;
  for (double v : eigvals) total += std::max(0.0, v);
  res.degenerate = total <= 1e-300;

  res.components = Matrix(std::size_t(k), D);
  res.singular_values.resize(std::size_t(k));
  res.explained_ratio.resize(std::size_t(k));
  res.cumulative_ratio.resize(std::size_t(k));
  double cum = 0;
  for (int c = 0; c < k; ++c) {
    // deterministic sign: largest-magnitude coordinate positive
    std::size_t arg = 0;
    for (std::size_t j = 1; j < D; ++j)
      if (std::abs(eigvecs(std::size_t(c), j)) > std::abs(eigvecs(std::size_t(c), arg))) arg = j;
    const double sign = eigvecs(std::size_t(c), arg) < 0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < D; ++j) res.components(std::size_t(c), j) = sign * eigvecs(std::size_t(c), j);
    const double lam = std::max(0.0, eigvals[std::size_t(c)]);
    res.singular_values[std::size_t(c)] = std::sqrt(lam * double(n));
    res.explained_ratio[std::size_t(c)] = res.degenerate ? 0.0 : lam / total;
    cum += res.explained_ratio[std::size_t(c)];
    res.cumulative_ratio[std::size_t(c)] = cum;
  }

  res.projected = Matrix(n, std::size_t(k));
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < D; ++j)
        s += (X(i, j) - res.mean[j]) * res.components(std::size_t(c), j);
      res.projected(i, std::size_t(c)) = s;
    }
  return res;
}

Vec3 SimplexMap::map_point(const double* x, std::size_t d) const {
  Vec3 out = b;
  for (int r = 0; r < 3; ++r) {
    const double* wrow = W.row(std::size_t(r));
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += wrow[j] * x[j];
    out[std::size_t(r)] += s;
  }
  return out;
}

Vec3 SimplexMap::map_vector(const double* x, std::size_t d) const {
  Vec3 out{0, 0, 0};
  for (int r = 0; r < 3; ++r) {
    const double* wrow = W.row(std::size_t(r));
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += wrow[j] * x[j];
    out[std::size_t(r)] = s;
  }
  return out;
}

RegressionFit fit_affine(const ActivationSet& acts, Stage stage, const GeometryCloud& target,
                         Weighting weighting) {
  const Matrix& X = acts.stage(stage);
  const std::size_t n = X.rows, D = X.cols;
  if (target.entries.size() != n)
    throw std::invalid_argument("regression: context sets of activations and target differ");
  for (std::size_t i = 0; i < n; ++i)
    if (target.entries[i].seq != acts.contexts[i])
      throw std::invalid_argument("regression: context order mismatch at row " + std::to_string(i));

  std::vector<double> w(n);
  double wsum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = weighting == Weighting::uniform ? 1.0 : acts.probs[i];
    wsum += w[i];
  }
  for (double& wi : w) wi /= wsum;

  std::vector<double> xbar(D, 0.0);
  Vec3 ybar{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < D; ++j) xbar[j] += w[i] * X(i, j);
    ybar = vec_add(ybar, vec_scale(target.entries[i].point.coords, w[i]));
  }

  Matrix gram(D, D);
  Matrix cross(D, 3);
  std::vector<double> xc(D);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < D; ++j) xc[j] = X(i, j) - xbar[j];
    const Vec3 yc = vec_sub(target.entries[i].point.coords, ybar);
    for (std::size_t a = 0; a < D; ++a) {
      const double wxa = w[i] * xc[a];
      if (wxa == 0.0) continue;
      double* grow = gram.row(a);
      for (std::size_t b = a; b < D; ++b) grow[b] += wxa * xc[b];
      double* crow = cross.row(a);
      for (int c = 0; c < 3; ++c) crow[std::size_t(c)] += wxa * yc[std::size_t(c)];
    }
  }
  for (std::size_t a = 0; a < D; ++a)
    for (std::size_t b = a + 1; b < D; ++b) gram(b, a) = gram(a, b);

  RegressionFit fit;
  fit.weighting = weighting;
  Matrix lower;
  if (!cholesky(gram, lower)) {
    fit.ridge_applied = true;
    for (std::size_t a = 0; a < D; ++a) gram(a, a) += kRidgeLambda;
    if (!cholesky(gram, lower))
      throw std::runtime_error("regression: normal equations unsolvable even with ridge");
  }

  fit.map.W = Matrix(3, D);
  std::vector<double> rhs(D);
  for (int c = 0; c < 3; ++c) {
    for (std::size_t a = 0; a < D; ++a) rhs[a] = cross(a, std::size_t(c));
    const auto sol = cholesky_solve(lower, rhs);
    for (std::size_t j = 0; j < D; ++j) fit.map.W(std::size_t(c), j) = sol[j];
  }
  Vec3 wx{0, 0, 0};
  for (int c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t j = 0; j < D; ++j) s += fit.map.W(std::size_t(c), j) * xbar[j];
    wx[std::size_t(c)] = s;
  }
  fit.map.b = vec_sub(ybar, wx);

  double mse = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 pred = fit.map.map_point(X.row(i), D);
    const Vec3 err = vec_sub(target.entries[i].point.coords, pred);
    mse += w[i] * vec_dot(err, err);
  }
  fit.mse = mse / 3.0;  // per coordinate
  fit.baseline_mse = std::numeric_limits<double>::quiet_NaN();
  fit.normalized_mse = std::numeric_limits<double>::quiet_NaN();
  return fit;
}

RegressionFit regress_to_geometry(const ActivationSet& acts, Stage stage,
                                  const GeometryCloud& target, Weighting weighting,
                                  const ActivationSet& baseline_acts) {
  RegressionFit fit = fit_affine(acts, stage, target, weighting);
  const RegressionFit base = fit_affine(baseline_acts, stage, target, weighting);
  fit.baseline_mse = base.mse;
  fit.normalized_mse = fit.mse / base.mse;
  return fit;
}

std::vector<Matrix> average_attention(const nn::ModelParams& params, const HmmSpec& spec,
                                      int max_len, int layer) {
  (void)spec;
  if (max_len > params.config.max_ctx)
    throw std::length_error("average_attention: max_len exceeds model context");
  const int H = params.config.n_heads;
  const std::size_t L = std::size_t(max_len);
  std::vector<Matrix> sums(std::size_t(H), Matrix(L, L));
  std::vector<double> counts(L, 0.0);

  nn::ForwardPass fp;
  for_each_full_sequence(max_len, [&](const TokenSeq& seq) {
    fp.run(params, seq);
    for (int d = 1; d <= max_len; ++d) {
      if (!suffix_all_zero(seq, d)) continue;
      counts[std::size_t(d - 1)] += 1.0;
      for (int h = 0; h < H; ++h) {
        const double* A = fp.attention(layer, h);
        for (int s = 0; s < d; ++s)
          sums[std::size_t(h)](std::size_t(d - 1), std::size_t(s)) +=
              A[std::size_t(d - 1) * L + std::size_t(s)];
      }
    }
  });
  for (int h = 0; h < H; ++h)
    for (std::size_t d = 0; d < L; ++d)
      for (std::size_t s = 0; s <= d; ++s) sums[std::size_t(h)](d, s) /= counts[d];
  return sums;
}

DecayFit decay_fit_from_pattern(const Matrix& mean_attention) {
  const std::size_t L = mean_attention.rows;
  DecayFit fit;

  fit.lag_means.assign(L > 1 ? L - 1 : 0, 0.0);
  std::vector<double> lag_counts(fit.lag_means.size(), 0.0);

  // log A with a free intercept per destination row and a common slope on lag
  struct Point {
    std::size_t row;
    double lag;
    double y;
  };
  std::vector<Point> pts;
  for (std::size_t d = 1; d < L; ++d) {
    for (std::size_t s = 0; s < d; ++s) {
      const double v = mean_attention(d, s);
      const double lag = double(d - s);
      fit.lag_means[std::size_t(lag) - 1] += v;
      lag_counts[std::size_t(lag) - 1] += 1.0;
      if (v <= 0.0) {
        ++fit.excluded_nonpositive;
        continue;
      }
      pts.push_back({d, lag, std::log(v)});
    }
  }
  for (std::size_t n = 0; n < fit.lag_means.size(); ++n)
    if (lag_counts[n] > 0) fit.lag_means[n] /= lag_counts[n];
  fit.points = int(pts.size());
  if (pts.empty()) return fit;

  std::vector<double> row_lag_mean(L, 0.0), row_y_mean(L, 0.0), row_count(L, 0.0);
  for (const auto& p : pts) {
    row_lag_mean[p.row] += p.lag;
    row_y_mean[p.row] += p.y;
    row_count[p.row] += 1.0;
  }
  for (std::size_t d = 0; d < L; ++d)
    if (row_count[d] > 0) {
      row_lag_mean[d] /= row_count[d];
      row_y_mean[d] /= row_count[d];
    }

  double sxx = 0, sxy = 0;
  for (const auto& p : pts) {
    const double dx = p.lag - row_lag_mean[p.row];
    sxx += dx * dx;
    sxy += dx * (p.y - row_y_mean[p.row]);
  }
  if (sxx == 0.0) return fit;
  const double slope = sxy / sxx;
  fit.zeta_hat = std::exp(slope);

  double ss_tot = 0, ss_res = 0;
  for (const auto& p : pts) {
    const double dy = p.y - row_y_mean[p.row];
    const double resid = dy - slope * (p.lag - row_lag_mean[p.row]);
    ss_tot += dy * dy;
    ss_res += resid * resid;
  }
  fit.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : (ss_res == 0 ? 1.0 : 0.0);
  return fit;
}

DecayFit attention_decay_fit(const nn::ModelParams& params, const HmmSpec& spec, int max_len,
                             int layer, int head) {
  const auto mean = average_attention(params, spec, max_len, layer);
  return decay_fit_from_pattern(mean[std::size_t(head)]);
}

namespace {

std::vector<double> x_pre_vector(const nn::ModelParams& params, Token z, int position) {
  const std::size_t D = std::size_t(params.config.d_model);
  const double* tok = params.tensor("embed.tokens");
  const double* pos = params.tensor("embed.positions");
  std::vector<double> x(D);
  for (std::size_t j = 0; j < D; ++j)
    x[j] = tok[std::size_t(z) * D + j] + pos[std::size_t(position - 1) * D + j];
  return x;
}

std::vector<double> ov_vector(const nn::ModelParams& params, int layer, int head, Token z,
                              int position) {
  const std::size_t D = std::size_t(params.config.d_model);
  const std::size_t dh = std::size_t(params.config.head_dim());
  const std::string hp =
      "layers." + std::to_string(layer) + ".heads." + std::to_string(head) + ".";
  const double* wv = params.tensor(hp + "wv");
  const double* wo = params.tensor(hp + "wo");
  const auto x = x_pre_vector(params, z, position);
  std::vector<double> u(dh, 0.0), v(D, 0.0);
  for (std::size_t r = 0; r < dh; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < D; ++c) s += wv[r * D + c] * x[c];
    u[r] = s;
  }
  for (std::size_t r = 0; r < D; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < dh; ++c) s += wo[r * dh + c] * u[c];
    v[r] = s;
  }
  return v;
}

}  // namespace

OvReport ov_geometry_check(const nn::ModelParams& params, const HmmSpec& spec,
                           const SimplexMap& map, int layer) {
  const std::size_t D = std::size_t(params.config.d_model);
  const int M = params.config.max_ctx;
  OvReport report;
  report.detail = nlohmann::json::object();
  report.detail["per_head"] = nlohmann::json::array();

  for (int h = 0; h < params.config.n_heads; ++h) {
    std::vector<std::vector<Vec3>> mapped(kVocab);  // [token][position index]
    nlohmann::json jhead;
    jhead["head"] = h;
    jhead["vectors"] = nlohmann::json::array();
    for (Token z = 0; z < kVocab; ++z) {
      for (int m = 1; m <= M; ++m) {
        const auto v = ov_vector(params, layer, h, z, m);
        const Vec3 u = to_plane(map.map_vector(v.data(), D));
        mapped[z].push_back(u);
        jhead["vectors"].push_back(
            {{"token", int(z)}, {"position", m}, {"mapped", {u[0], u[1], u[2]}}});
      }
    }
    std::vector<double> cosines, angles;
    for (Token z = 0; z < kVocab; ++z) {
      const Vec3 delta = token_delta(spec, z);
      for (int m = 3; m <= M; ++m) {
        angles.push_back(angle_deg(mapped[z][std::size_t(m - 1)], delta));
        for (int m2 = m + 1; m2 <= M; ++m2)
          cosines.push_back(cosine(mapped[z][std::size_t(m - 1)], mapped[z][std::size_t(m2 - 1)]));
      }
    }
    OvReport::HeadStats stats;
    stats.median_within_token_cosine = median(cosines);
    stats.min_within_token_cosine = cosines.empty() ? 0.0 : *std::min_element(cosines.begin(), cosines.end());
    stats.median_angle_to_theory_deg = median(angles);
    stats.max_angle_to_theory_deg = angles.empty() ? 0.0 : *std::max_element(angles.begin(), angles.end());
    report.heads.push_back(stats);
    jhead["median_within_token_cosine"] = stats.median_within_token_cosine;
    jhead["median_angle_to_theory_deg"] = stats.median_angle_to_theory_deg;
    report.detail["per_head"].push_back(jhead);
  }
  return report;
}

EmbedReport embedding_geometry_check(const nn::ModelParams& params, const HmmSpec& spec,
                                     const SimplexMap& map, int layer) {
  const std::size_t D = std::size_t(params.config.d_model);
  const int M = params.config.max_ctx;
  EmbedReport report;
  report.detail = nlohmann::json::object();
  report.detail["entries"] = nlohmann::json::array();

  // reference direction per token: mean mapped OV over positions >= 3, head 0
  std::array<Vec3, kVocab> ref{};
  for (Token z = 0; z < kVocab; ++z) {
    Vec3 acc{0, 0, 0};
    for (int m = 3; m <= M; ++m) {
      const auto v = ov_vector(params, layer, 0, z, m);
      acc = vec_add(acc, to_plane(map.map_vector(v.data(), D)));
    }
    const double norm = vec_norm(acc);
    ref[z] = norm > 0 ? vec_scale(acc, 1.0 / norm) : acc;
  }

  std::vector<double> late_abs;
  for (Token z = 0; z < kVocab; ++z) {
    for (int m = 1; m <= M; ++m) {
      const auto x = x_pre_vector(params, z, m);
      Vec3 f = map.map_point(x.data(), D);
      f = to_plane(vec_sub(f, spec.pi));  // displacement in the simplex plane
      const double c = cosine(f, ref[z]);
      report.detail["entries"].push_back({{"token", int(z)},
                                          {"position", m},
                                          {"cosine_to_ov", c},
                                          {"mapped", {f[0], f[1], f[2]}}});
      if (m >= 3)
        late_abs.push_back(std::abs(c));
      else
        report.early_cosines.push_back(c);
    }
  }
  report.median_abs_cosine_late = median(late_abs);
  report.min_abs_cosine_late =
      late_abs.empty() ? 0.0 : *std::min_element(late_abs.begin(), late_abs.end());
  return report;
}

ParityReport two_head_parity_report(const nn::ModelParams& params, const HmmSpec& spec,
                                    int max_len, int layer) {
  if (params.config.n_heads != 2)
    throw std::invalid_argument("parity report: model must have two heads");
  const auto mean = average_attention(params, spec, max_len, layer);
  ParityReport rep;
  for (const Matrix& A : mean) {
    double even = 0, odd = 0, n_even = 0, n_odd = 0;
    for (std::size_t d = 1; d < A.rows; ++d)
      for (std::size_t s = 0; s < d; ++s) {
        const std::size_t lag = d - s;
        if (lag % 2 == 0) {
          even += A(d, s);
          n_even += 1;
        } else {
          odd += A(d, s);
          n_odd += 1;
        }
      }
    rep.even_mass.push_back(n_even > 0 ? even / n_even : 0.0);
    rep.odd_mass.push_back(n_odd > 0 ? odd / n_odd : 0.0);
  }
  const bool h0_even = rep.even_mass[0] > rep.odd_mass[0];
  const bool h1_even = rep.even_mass[1] > rep.odd_mass[1];
  rep.complementary = h0_even != h1_even;
  return rep;
}

TheoryModel build_theory_model(const HmmSpec& spec, const nn::ModelConfig& config) {
  config.validate();
  if (config.n_layers != 1 || config.n_heads != 1)
    throw std::invalid_argument("theory model: requires one layer and one head");
  if (config.d_model < 16) throw std::invalid_argument("theory model: d_model must be >= 16");
  const SpectralDecomp sd = decompose(spec);
  const double zeta = sd.zeta();
  if (zeta <= 0.0)
    throw std::domain_error("theory model: requires zeta > 0 (lag-linear logits take log zeta)");

  TheoryModel tm;
  tm.params = nn::zero_params(config);
  nn::ModelParams& p = tm.params;
  const std::size_t D = std::size_t(config.d_model);
  const std::size_t dh = std::size_t(config.head_dim());

  // channel layout: 0..2 simplex readout, 4 position ramp, 5 constant,
  // 8..10 token displacement block read by W_V
  double* tok = p.tensor("embed.tokens");
  for (Token z = 0; z < kVocab; ++z) {
    const Vec3 delta = token_delta(spec, z);
    for (int c = 0; c < 3; ++c) {
      tok[std::size_t(z) * D + std::size_t(c)] = tm.gamma * delta[std::size_t(c)];
      tok[std::size_t(z) * D + std::size_t(8 + c)] = delta[std::size_t(c)];
    }
  }
  double* pos = p.tensor("embed.positions");
  for (int m = 0; m < config.max_ctx; ++m) {
    pos[std::size_t(m) * D + 4] = double(m + 1);
    pos[std::size_t(m) * D + 5] = 1.0;
  }

  const double scale = std::sqrt(double(dh)) * std::log(zeta);
  double* wq = p.tensor("layers.0.heads.0.wq");
  double* wk = p.tensor("layers.0.heads.0.wk");
  // q_d . k_s / sqrt(dh) = log(zeta) * (d - s)
  wq[0 * D + 4] = scale;  // q[0] = scale * position
  wq[1 * D + 5] = 1.0;    // q[1] = 1
  wk[0 * D + 5] = 1.0;    // k[0] = 1
  wk[1 * D + 4] = -scale; // k[1] = -scale * position

  double* wv = p.tensor("layers.0.heads.0.wv");
  double* wo = p.tensor("layers.0.heads.0.wo");
  for (int c = 0; c < 3; ++c) {
    wv[std::size_t(c) * D + std::size_t(8 + c)] = 1.0;       // head dims 0..2 read token block
    wo[std::size_t(c) * dh + std::size_t(c)] = tm.kappa;     // write channels 0..2
  }
  // MLP and unembedding stay zero: x_post == x_mid, uniform predictions
  return tm;
}

GeometryCloud theory_model_cloud(const HmmSpec& spec, const TheoryModel& model, int max_len) {
  const AttentionPrediction pred = predict_attention(spec, max_len);
  const Matrix& A = pred.pattern[0];
  GeometryCloud cloud;
  cloud.max_len = max_len;
  cloud.variant = CloudVariant::constrained_spectral;  // closest tag: attention-weighted constrained

  std::array<Vec3, kVocab> delta;
  for (Token z = 0; z < kVocab; ++z) delta[z] = token_delta(spec, z);

  for (const auto& [seq, prob] : enumerate_contexts(spec, max_len)) {
    const int d = int(seq.size());
    Vec3 coords = vec_add(spec.pi, vec_scale(delta[seq.back()], model.gamma));
    for (int s = 1; s <= d; ++s)
      coords = vec_add(coords, vec_scale(delta[seq[std::size_t(s - 1)]],
                                         model.kappa * A(std::size_t(d - 1), std::size_t(s - 1))));
    GeometryCloudEntry e;
    e.seq = seq;
    e.prob = prob;
    e.point = SimplexPoint{coords, BeliefRole::constrained_belief};
    const Vec3 full = full_belief(spec, seq).coords;
    for (int c = 0; c < 3; ++c)
      e.rgb[std::size_t(c)] = std::min(1.0, std::max(0.0, full[std::size_t(c)]));
    cloud.entries.push_back(std::move(e));
  }
  return cloud;
}

}  // namespace mess3::analysis
