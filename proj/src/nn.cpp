#include "mess3/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mess3/io.hpp"

namespace mess3::nn {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
double gelu_grad(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  return phi + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// y += W x  (W: rows x cols, x: cols, y: rows)
void matvec_acc(const double* W, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wrow = W + r * cols;
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += wrow[c] * x[c];
    y[r] += s;
  }
}

// y += W^T x  (W: rows x cols, x: rows, y: cols)
void matvec_t_acc(const double* W, std::size_t rows, std::size_t cols, const double* x, double* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* wrow = W + r * cols;
    for (std::size_t c = 0; c < cols; ++c) y[c] += xr * wrow[c];
  }
}

// dW += a b^T  (dW: rows x cols, a: rows, b: cols)
void outer_acc(double* dW, std::size_t rows, std::size_t cols, const double* a, const double* b) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double ar = a[r];
    if (ar == 0.0) continue;
    double* drow = dW + r * cols;
    for (std::size_t c = 0; c < cols; ++c) drow[c] += ar * b[c];
  }
}

struct LayerWs {
  std::vector<double> x;       // T x D layer input
  std::vector<double> h;       // T x D attention input (post-LN1 when enabled)
  std::vector<double> ln1_mean, ln1_rstd;
  std::vector<double> q, k, u;         // H x T x dh
  std::vector<double> attn;            // H x T x T
  std::vector<double> head_out;        // H x T x dh
  std::vector<double> x_mid;           // T x D
  std::vector<double> m;               // T x D MLP input (post-LN2 when enabled)
  std::vector<double> ln2_mean, ln2_rstd;
  std::vector<double> a, g;            // T x F
  std::vector<double> x_post;          // T x D
};

struct Workspace {
  std::vector<LayerWs> layers;
  std::vector<double> logits;  // T x V
};

void layer_norm_forward(const double* x, std::size_t n, const double* scale, const double* shift,
                        double* y, double& mean_out, double& rstd_out) {
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += x[i];
  mean /= double(n);
  double var = 0;
  for (std::size_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= double(n);
  const double rstd = 1.0 / std::sqrt(var + kLnEps);
  for (std::size_t i = 0; i < n; ++i) y[i] = scale[i] * (x[i] - mean) * rstd + shift[i];
  mean_out = mean;
  rstd_out = rstd;
}

void layer_norm_backward(const double* x, std::size_t n, const double* scale, double mean,
                         double rstd, const double* dy, double* dx_acc, double* dscale,
                         double* dshift) {
  double mean_dxhat = 0, mean_dxhat_xhat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double xhat = (x[i] - mean) * rstd;
    const double dxhat = dy[i] * scale[i];
    mean_dxhat += dxhat;
    mean_dxhat_xhat += dxhat * xhat;
    dscale[i] += dy[i] * xhat;
    dshift[i] += dy[i];
  }
  mean_dxhat /= double(n);
  mean_dxhat_xhat /= double(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double xhat = (x[i] - mean) * rstd;
    dx_acc[i] += rstd * (dy[i] * scale[i] - mean_dxhat - xhat * mean_dxhat_xhat);
  }
}

void run_forward(const ModelParams& params, const TokenSeq& tokens, Workspace& ws) {
  const ModelConfig& cfg = params.config;
  check_tokens(tokens);
  if (tokens.empty()) throw std::length_error("forward: empty sequence");
  if (int(tokens.size()) > cfg.max_ctx)
    throw std::length_error("forward: sequence length " + std::to_string(tokens.size()) +
                            " exceeds max context " + std::to_string(cfg.max_ctx));

  const std::size_t T = tokens.size();
  const std::size_t D = std::size_t(cfg.d_model);
  const std::size_t F = std::size_t(cfg.d_ff);
  const std::size_t H = std::size_t(cfg.n_heads);
  const std::size_t dh = std::size_t(cfg.head_dim());
  const std::size_t V = std::size_t(cfg.vocab);
  const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));

  ws.layers.resize(std::size_t(cfg.n_layers));
  ws.logits.assign(T * V, 0.0);

  const double* emb_tok = params.tensor("embed.tokens");
  const double* emb_pos = params.tensor("embed.positions");

  std::vector<double> x(T * D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < D; ++i)
      x[t * D + i] = emb_tok[std::size_t(tokens[t]) * D + i] + emb_pos[t * D + i];

  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerWs& lw = ws.layers[std::size_t(l)];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    lw.x = x;
    lw.q.assign(H * T * dh, 0.0);
    lw.k.assign(H * T * dh, 0.0);
    lw.u.assign(H * T * dh, 0.0);
    lw.attn.assign(H * T * T, 0.0);
    lw.head_out.assign(H * T * dh, 0.0);
    lw.x_mid.assign(T * D, 0.0);
    lw.a.assign(T * F, 0.0);
    lw.g.assign(T * F, 0.0);
    lw.x_post.assign(T * D, 0.0);

    if (cfg.layer_norm) {
      lw.h.assign(T * D, 0.0);
      lw.ln1_mean.assign(T, 0.0);
      lw.ln1_rstd.assign(T, 0.0);
      const double* scale = params.tensor(prefix + "ln1.scale");
      const double* shift = params.tensor(prefix + "ln1.shift");
      for (std::size_t t = 0; t < T; ++t)
        layer_norm_forward(&lw.x[t * D], D, scale, shift, &lw.h[t * D], lw.ln1_mean[t], lw.ln1_rstd[t]);
    } else {
      lw.h = lw.x;
    }

    for (std::size_t h = 0; h < H; ++h) {
      const std::string hp = prefix + "heads." + std::to_string(h) + ".";
      const double* wq = params.tensor(hp + "wq");
      const double* wk = params.tensor(hp + "wk");
      const double* wv = params.tensor(hp + "wv");
      double* q = &lw.q[h * T * dh];
      double* k = &lw.k[h * T * dh];
      double* u = &lw.u[h * T * dh];
      for (std::size_t t = 0; t < T; ++t) {
        matvec_acc(wq, dh, D, &lw.h[t * D], q + t * dh);
        matvec_acc(wk, dh, D, &lw.h[t * D], k + t * dh);
        matvec_acc(wv, dh, D, &lw.h[t * D], u + t * dh);
      }
      double* A = &lw.attn[h * T * T];
      for (std::size_t d = 0; d < T; ++d) {
        double maxs = -1e300;
        for (std::size_t s = 0; s <= d; ++s) {
          double sc = 0;
          for (std::size_t c = 0; c < dh; ++c) sc += q[d * dh + c] * k[s * dh + c];
          sc *= inv_sqrt_dh;
          A[d * T + s] = sc;
          maxs = std::max(maxs, sc);
        }
        double zsum = 0;
        for (std::size_t s = 0; s <= d; ++s) {
          A[d * T + s] = std::exp(A[d * T + s] - maxs);
          zsum += A[d * T + s];
        }
        for (std::size_t s = 0; s <= d; ++s) A[d * T + s] /= zsum;
      }
      double* ho = &lw.head_out[h * T * dh];
      for (std::size_t d = 0; d < T; ++d)
        for (std::size_t s = 0; s <= d; ++s) {
          const double w = A[d * T + s];
          for (std::size_t c = 0; c < dh; ++c) ho[d * dh + c] += w * u[s * dh + c];
        }
      const double* wo = params.tensor(hp + "wo");
      for (std::size_t t = 0; t < T; ++t) matvec_acc(wo, D, dh, ho + t * dh, &lw.x_mid[t * D]);
    }
    for (std::size_t i = 0; i < T * D; ++i) lw.x_mid[i] += lw.x[i];

    if (cfg.layer_norm) {
      lw.m.assign(T * D, 0.0);
      lw.ln2_mean.assign(T, 0.0);
      lw.ln2_rstd.assign(T, 0.0);
      const double* scale = params.tensor(prefix + "ln2.scale");
      const double* shift = params.tensor(prefix + "ln2.shift");
      for (std::size_t t = 0; t < T; ++t)
        layer_norm_forward(&lw.x_mid[t * D], D, scale, shift, &lw.m[t * D], lw.ln2_mean[t],
                           lw.ln2_rstd[t]);
    } else {
      lw.m = lw.x_mid;
    }

    const double* w1 = params.tensor(prefix + "mlp.w1");
    const double* b1 = params.tensor(prefix + "mlp.b1");
    const double* w2 = params.tensor(prefix + "mlp.w2");
    const double* b2 = params.tensor(prefix + "mlp.b2");
    for (std::size_t t = 0; t < T; ++t) {
      double* arow = &lw.a[t * F];
      std::memcpy(arow, b1, F * sizeof(double));
      matvec_acc(w1, F, D, &lw.m[t * D], arow);
      double* grow = &lw.g[t * F];
      for (std::size_t f = 0; f < F; ++f) grow[f] = gelu(arow[f]);
      double* prow = &lw.x_post[t * D];
      std::memcpy(prow, b2, D * sizeof(double));
      matvec_acc(w2, D, F, grow, prow);
      for (std::size_t i = 0; i < D; ++i) prow[i] += lw.x_mid[t * D + i];
    }
    x = lw.x_post;
  }

  const double* unembed = params.tensor("unembed");
  for (std::size_t t = 0; t < T; ++t) matvec_acc(unembed, V, D, &x[t * D], &ws.logits[t * V]);
}

}  // namespace

struct ForwardPass::Impl {
  Workspace ws;
  std::size_t T = 0;
  std::size_t heads = 0;
};

ForwardPass::ForwardPass() : impl_(std::make_unique<Impl>()) {}
ForwardPass::~ForwardPass() = default;
ForwardPass::ForwardPass(ForwardPass&&) noexcept = default;
ForwardPass& ForwardPass::operator=(ForwardPass&&) noexcept = default;

void ForwardPass::run(const ModelParams& params, const TokenSeq& tokens) {
  run_forward(params, tokens, impl_->ws);
  impl_->T = tokens.size();
  impl_->heads = std::size_t(params.config.n_heads);
}

std::size_t ForwardPass::seq_len() const { return impl_->T; }
const double* ForwardPass::logits() const { return impl_->ws.logits.data(); }
const double* ForwardPass::x_pre(int layer) const { return impl_->ws.layers[std::size_t(layer)].x.data(); }
const double* ForwardPass::x_mid(int layer) const {
  return impl_->ws.layers[std::size_t(layer)].x_mid.data();
}
const double* ForwardPass::x_post(int layer) const {
  return impl_->ws.layers[std::size_t(layer)].x_post.data();
}
const double* ForwardPass::attention(int layer, int head) const {
  const LayerWs& lw = impl_->ws.layers[std::size_t(layer)];
  return lw.attn.data() + std::size_t(head) * impl_->T * impl_->T;
}

void ModelConfig::validate() const {
  if (d_model < 1 || d_ff < 1 || n_heads < 1 || n_layers < 1 || max_ctx < 1)
    throw std::invalid_argument("model config: all dimensions must be >= 1");
  if (vocab != kVocab) throw std::invalid_argument("model config: vocab is fixed at 3");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("model config: d_model must be divisible by n_heads");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model}, {"d_ff", d_ff},       {"n_heads", n_heads}, {"n_layers", n_layers},
          {"vocab", vocab},     {"max_ctx", max_ctx}, {"layer_norm", layer_norm}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.n_layers = j.at("n_layers").get<int>();
  c.vocab = j.at("vocab").get<int>();
  c.max_ctx = j.at("max_ctx").get<int>();
  c.layer_norm = j.at("layer_norm").get<bool>();
  c.validate();
  return c;
}

double* ModelParams::tensor(const std::string& name) { return data.data() + entry(name).offset; }
const double* ModelParams::tensor(const std::string& name) const {
  return data.data() + entry(name).offset;
}

const ParamEntry& ModelParams::entry(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return e;
  throw std::out_of_range("no parameter named " + name);
}

ModelParams zero_params(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  const std::size_t D = std::size_t(config.d_model);
  const std::size_t F = std::size_t(config.d_ff);
  const std::size_t dh = std::size_t(config.head_dim());
  std::size_t offset = 0;
  auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    p.entries.push_back({name, offset, rows, cols});
    offset += rows * (cols ? cols : 1);
  };
  add("embed.tokens", std::size_t(config.vocab), D);
  add("embed.positions", std::size_t(config.max_ctx), D);
  for (int l = 0; l < config.n_layers; ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    if (config.layer_norm) {
      add(prefix + "ln1.scale", D, 0);
      add(prefix + "ln1.shift", D, 0);
    }
    for (int h = 0; h < config.n_heads; ++h) {
      const std::string hp = prefix + "heads." + std::to_string(h) + ".";
      add(hp + "wq", dh, D);
      add(hp + "wk", dh, D);
      add(hp + "wv", dh, D);
      add(hp + "wo", D, dh);
    }
    if (config.layer_norm) {
      add(prefix + "ln2.scale", D, 0);
      add(prefix + "ln2.shift", D, 0);
    }
    add(prefix + "mlp.w1", F, D);
    add(prefix + "mlp.b1", F, 0);
    add(prefix + "mlp.w2", D, F);
    add(prefix + "mlp.b2", D, 0);
  }
  add("unembed", std::size_t(config.vocab), D);
  p.data.assign(offset, 0.0);
  return p;
}

constexpr double kPosInitScale = 0.02;

ModelParams init_model(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = zero_params(config);
  Rng rng(seed);
  for (const auto& e : p.entries) {
    double* w = p.data.data() + e.offset;
    if (e.name == "embed.positions") {
      // small but nonzero: zero-initialized positions leave queries and keys
      // blind to position and stall the attention-decay structure, while
      // embedding-scale positions pollute the OV circuit with position
      // components that must be unlearned
      for (std::size_t i = 0; i < e.size(); ++i) w[i] = rng.uniform(-kPosInitScale, kPosInitScale);
    } else if (e.cols != 0) {
      const double a = std::sqrt(6.0 / double(e.rows + e.cols));
      for (std::size_t i = 0; i < e.size(); ++i) w[i] = rng.uniform(-a, a);
    } else if (e.name.ends_with("ln1.scale") || e.name.ends_with("ln2.scale")) {
      for (std::size_t i = 0; i < e.size(); ++i) w[i] = 1.0;
    }
    // biases and layer-norm shifts stay zero
  }
  return p;
}

ForwardTrace forward(const ModelParams& params, const TokenSeq& tokens) {
  Workspace ws;
  run_forward(params, tokens, ws);
  const ModelConfig& cfg = params.config;
  const std::size_t T = tokens.size();
  const std::size_t D = std::size_t(cfg.d_model);
  const std::size_t H = std::size_t(cfg.n_heads);
  const std::size_t dh = std::size_t(cfg.head_dim());

  ForwardTrace trace;
  trace.layers.resize(std::size_t(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWs& lw = ws.layers[std::size_t(l)];
    LayerTrace& lt = trace.layers[std::size_t(l)];
    auto to_matrix = [&](const std::vector<double>& v, std::size_t rows, std::size_t cols) {
      Matrix m(rows, cols);
      std::copy(v.begin(), v.end(), m.data.begin());
      return m;
    };
    lt.x_pre = to_matrix(lw.x, T, D);
    lt.x_mid = to_matrix(lw.x_mid, T, D);
    lt.x_post = to_matrix(lw.x_post, T, D);
    lt.heads.resize(H);
    const std::string prefix = "layers." + std::to_string(l) + ".";
    for (std::size_t h = 0; h < H; ++h) {
      HeadTrace& ht = lt.heads[h];
      ht.attention = Matrix(T, T);
      std::copy(lw.attn.begin() + long(h * T * T), lw.attn.begin() + long((h + 1) * T * T),
                ht.attention.data.begin());
      const double* wo = params.tensor(prefix + "heads." + std::to_string(h) + ".wo");
      ht.value_contrib = Matrix(T, D);
      for (std::size_t t = 0; t < T; ++t)
        matvec_acc(wo, D, dh, &lw.u[h * T * dh + t * dh], ht.value_contrib.row(t));
    }
  }
  trace.logits = Matrix(T, std::size_t(cfg.vocab));
  std::copy(ws.logits.begin(), ws.logits.end(), trace.logits.data.begin());
  return trace;
}

double loss_from_logits(const Matrix& logits, const TokenSeq& targets) {
  if (targets.size() != logits.rows)
    throw std::invalid_argument("loss: targets must match sequence length");
  check_tokens(targets);
  double total = 0;
  for (std::size_t t = 0; t < logits.rows; ++t) {
    const double* row = logits.row(t);
    double maxv = row[0];
    for (std::size_t v = 1; v < logits.cols; ++v) maxv = std::max(maxv, row[v]);
    double zsum = 0;
    for (std::size_t v = 0; v < logits.cols; ++v) zsum += std::exp(row[v] - maxv);
    total += std::log(zsum) + maxv - row[targets[t]];
  }
  return total / double(logits.rows);
}

double loss(const ForwardTrace& trace, const TokenSeq& targets) {
  return loss_from_logits(trace.logits, targets);
}

double backward(const ModelParams& params, const TokenSeq& tokens, const TokenSeq& targets,
                std::vector<double>& grads) {
  const ModelConfig& cfg = params.config;
  if (grads.size() != params.data.size()) grads.assign(params.data.size(), 0.0);
  Workspace ws;
  run_forward(params, tokens, ws);

  const std::size_t T = tokens.size();
  if (targets.size() != T) throw std::invalid_argument("backward: targets must match sequence length");
  check_tokens(targets);
  const std::size_t D = std::size_t(cfg.d_model);
  const std::size_t F = std::size_t(cfg.d_ff);
  const std::size_t H = std::size_t(cfg.n_heads);
  const std::size_t dh = std::size_t(cfg.head_dim());
  const std::size_t V = std::size_t(cfg.vocab);
  const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));

  auto grad_of = [&](const std::string& name) { return grads.data() + params.entry(name).offset; };

  // loss and dlogits
  double loss_val = 0;
  std::vector<double> dlogits(T * V);
  for (std::size_t t = 0; t < T; ++t) {
    const double* row = &ws.logits[t * V];
    double maxv = row[0];
    for (std::size_t v = 1; v < V; ++v) maxv = std::max(maxv, row[v]);
    double zsum = 0;
    for (std::size_t v = 0; v < V; ++v) zsum += std::exp(row[v] - maxv);
    loss_val += std::log(zsum) + maxv - row[targets[t]];
    for (std::size_t v = 0; v < V; ++v) {
      const double p = std::exp(row[v] - maxv) / zsum;
      dlogits[t * V + v] = (p - (v == targets[t] ? 1.0 : 0.0)) / double(T);
    }
  }
  loss_val /= double(T);

  // unembedding
  const double* unembed = params.tensor("unembed");
  double* d_unembed = grad_of("unembed");
  const std::vector<double>& x_top = ws.layers.back().x_post;
  std::vector<double> dx(T * D, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    outer_acc(d_unembed, V, D, &dlogits[t * V], &x_top[t * D]);
    matvec_t_acc(unembed, V, D, &dlogits[t * V], &dx[t * D]);
  }

  std::vector<double> dmid(T * D), dm(T * D), da(F), dg(F), dh_buf(T * D), dho(T * dh), du(T * dh),
      dq(T * dh), dk(T * dh), dattn(T), dprev(T * D);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerWs& lw = ws.layers[std::size_t(l)];
    const std::string prefix = "layers." + std::to_string(l) + ".";

    // MLP backward: dx holds d(x_post)
    std::fill(dmid.begin(), dmid.end(), 0.0);
    std::fill(dm.begin(), dm.end(), 0.0);
    const double* w1 = params.tensor(prefix + "mlp.w1");
    const double* w2 = params.tensor(prefix + "mlp.w2");
    double* dw1 = grad_of(prefix + "mlp.w1");
    double* db1 = grad_of(prefix + "mlp.b1");
    double* dw2 = grad_of(prefix + "mlp.w2");
    double* db2 = grad_of(prefix + "mlp.b2");
    for (std::size_t t = 0; t < T; ++t) {
      const double* dp = &dx[t * D];
      for (std::size_t i = 0; i < D; ++i) {
        db2[i] += dp[i];
        dmid[t * D + i] += dp[i];  // residual branch
      }
      outer_acc(dw2, D, F, dp, &lw.g[t * F]);
      std::fill(dg.begin(), dg.end(), 0.0);
      matvec_t_acc(w2, D, F, dp, dg.data());
      for (std::size_t f = 0; f < F; ++f) da[f] = dg[f] * gelu_grad(lw.a[t * F + f]);
      for (std::size_t f = 0; f < F; ++f) db1[f] += da[f];
      outer_acc(dw1, F, D, da.data(), &lw.m[t * D]);
      matvec_t_acc(w1, F, D, da.data(), &dm[t * D]);
    }
    if (cfg.layer_norm) {
      const double* scale = params.tensor(prefix + "ln2.scale");
      double* dscale = grad_of(prefix + "ln2.scale");
      double* dshift = grad_of(prefix + "ln2.shift");
      for (std::size_t t = 0; t < T; ++t)
        layer_norm_backward(&lw.x_mid[t * D], D, scale, lw.ln2_mean[t], lw.ln2_rstd[t], &dm[t * D],
                            &dmid[t * D], dscale, dshift);
    } else {
      for (std::size_t i = 0; i < T * D; ++i) dmid[i] += dm[i];
    }

    // attention backward: dmid holds d(x_mid)
    std::fill(dprev.begin(), dprev.end(), 0.0);
    std::fill(dh_buf.begin(), dh_buf.end(), 0.0);
    for (std::size_t i = 0; i < T * D; ++i) dprev[i] += dmid[i];  // residual branch
    for (std::size_t h = 0; h < H; ++h) {
      const std::string hp = prefix + "heads." + std::to_string(h) + ".";
      const double* wq = params.tensor(hp + "wq");
      const double* wk = params.tensor(hp + "wk");
      const double* wv = params.tensor(hp + "wv");
      const double* wo = params.tensor(hp + "wo");
      double* dwq = grad_of(hp + "wq");
      double* dwk = grad_of(hp + "wk");
      double* dwv = grad_of(hp + "wv");
      double* dwo = grad_of(hp + "wo");
      const double* q = &lw.q[h * T * dh];
      const double* k = &lw.k[h * T * dh];
      const double* u = &lw.u[h * T * dh];
      const double* A = &lw.attn[h * T * T];
      const double* ho = &lw.head_out[h * T * dh];

      std::fill(dho.begin(), dho.end(), 0.0);
      std::fill(du.begin(), du.end(), 0.0);
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        outer_acc(dwo, D, dh, &dmid[t * D], ho + t * dh);
        matvec_t_acc(wo, D, dh, &dmid[t * D], &dho[t * dh]);
      }
      for (std::size_t d = 0; d < T; ++d) {
        // dA over row d, then softmax backward to scores
        double dot = 0;
        for (std::size_t s = 0; s <= d; ++s) {
          double v = 0;
          for (std::size_t c = 0; c < dh; ++c) v += dho[d * dh + c] * u[s * dh + c];
          dattn[s] = v;
          dot += A[d * T + s] * v;
        }
        for (std::size_t s = 0; s <= d; ++s) {
          const double w = A[d * T + s];
          const double dscore = w * (dattn[s] - dot) * inv_sqrt_dh;
          for (std::size_t c = 0; c < dh; ++c) {
            dq[d * dh + c] += dscore * k[s * dh + c];
            dk[s * dh + c] += dscore * q[d * dh + c];
            du[s * dh + c] += w * dho[d * dh + c];
          }
        }
      }
      for (std::size_t t = 0; t < T; ++t) {
        outer_acc(dwq, dh, D, &dq[t * dh], &lw.h[t * D]);
        outer_acc(dwk, dh, D, &dk[t * dh], &lw.h[t * D]);
        outer_acc(dwv, dh, D, &du[t * dh], &lw.h[t * D]);
        matvec_t_acc(wq, dh, D, &dq[t * dh], &dh_buf[t * D]);
        matvec_t_acc(wk, dh, D, &dk[t * dh], &dh_buf[t * D]);
        matvec_t_acc(wv, dh, D, &du[t * dh], &dh_buf[t * D]);
      }
    }
    if (cfg.layer_norm) {
      const double* scale = params.tensor(prefix + "ln1.scale");
      double* dscale = grad_of(prefix + "ln1.scale");
      double* dshift = grad_of(prefix + "ln1.shift");
      for (std::size_t t = 0; t < T; ++t)
        layer_norm_backward(&lw.x[t * D], D, scale, lw.ln1_mean[t], lw.ln1_rstd[t], &dh_buf[t * D],
                            &dprev[t * D], dscale, dshift);
    } else {
      for (std::size_t i = 0; i < T * D; ++i) dprev[i] += dh_buf[i];
    }
    dx = dprev;
  }

  double* d_emb_tok = grad_of("embed.tokens");
  double* d_emb_pos = grad_of("embed.positions");
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < D; ++i) {
      d_emb_tok[std::size_t(tokens[t]) * D + i] += dx[t * D + i];
      d_emb_pos[t * D + i] += dx[t * D + i];
    }
  return loss_val;
}

double grad_check(const ModelParams& params, const TokenSeq& tokens, const TokenSeq& targets,
                  double eps, int n_coords, std::uint64_t seed) {
  if (eps < 1e-7 || eps > 1e-3) throw std::invalid_argument("grad_check: eps must be in [1e-7, 1e-3]");
  if (n_coords <= 0) throw std::invalid_argument("grad_check: empty coordinate sample");

  std::vector<double> grads(params.data.size(), 0.0);
  backward(params, tokens, targets, grads);

  Rng rng(seed);
  ModelParams probe = params;
  Workspace ws;
  double max_rel = 0;
  for (int i = 0; i < n_coords; ++i) {
    const std::size_t idx = std::size_t(rng.below(params.data.size()));
    const double saved = probe.data[idx];
    probe.data[idx] = saved + eps;
    run_forward(probe, tokens, ws);
    Matrix logits_p(tokens.size(), std::size_t(params.config.vocab));
    std::copy(ws.logits.begin(), ws.logits.end(), logits_p.data.begin());
    const double lp = loss_from_logits(logits_p, targets);
    probe.data[idx] = saved - eps;
    run_forward(probe, tokens, ws);
    std::copy(ws.logits.begin(), ws.logits.end(), logits_p.data.begin());
    const double lm = loss_from_logits(logits_p, targets);
    probe.data[idx] = saved;
    const double fd = (lp - lm) / (2 * eps);
    const double g = grads[idx];
    const double rel = std::abs(fd - g) / std::max({std::abs(fd) + std::abs(g), 1e-5});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

void save_checkpoint(const ModelParams& params, std::uint64_t seed, std::int64_t step,
                     const nlohmann::json& metrics, const std::filesystem::path& file) {
  nlohmann::json j;
  j["config"] = params.config.to_json();
  j["seed"] = seed;
  j["step"] = step;
  j["metrics"] = metrics;
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& e : params.entries) {
    std::vector<double> values(params.data.begin() + long(e.offset),
                               params.data.begin() + long(e.offset + e.size()));
    tensors[e.name] = io::doubles_to_base64(values);
  }
  j["params"] = std::move(tensors);
  io::write_file(file, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  const nlohmann::json j = nlohmann::json::parse(io::read_file(file));
  Checkpoint ckpt;
  ckpt.params = zero_params(ModelConfig::from_json(j.at("config")));
  ckpt.seed = j.at("seed").get<std::uint64_t>();
  ckpt.step = j.at("step").get<std::int64_t>();
  ckpt.metrics = j.value("metrics", nlohmann::json::object());
  for (const auto& e : ckpt.params.entries) {
    const auto values = io::doubles_from_base64(j.at("params").at(e.name).get<std::string>());
    if (values.size() != e.size())
      throw std::runtime_error("checkpoint tensor " + e.name + " has wrong size");
    std::copy(values.begin(), values.end(), ckpt.params.data.begin() + long(e.offset));
  }
  return ckpt;
}

}  // namespace mess3::nn
