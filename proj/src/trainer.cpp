#include "mess3/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "mess3/io.hpp"

namespace mess3::train {

namespace {

constexpr double kLn3 = 1.0986122886681098;

// independent deterministic streams derived from the run seed
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
  return seed * 0x9e3779b97f4a7c15ULL + stream;
}

double kl_divergence(const Vec3& p, const Vec3& q) {
  double kl = 0;
  for (int z = 0; z < 3; ++z) {
    const double pz = p[std::size_t(z)];
    if (pz <= 0) continue;
    const double qz = std::max(q[std::size_t(z)], 1e-300);
    kl += pz * (std::log(pz) - std::log(qz));
  }
  return kl;
}

Vec3 softmax3(const double* logits) {
  const double m = std::max({logits[0], logits[1], logits[2]});
  Vec3 p{std::exp(logits[0] - m), std::exp(logits[1] - m), std::exp(logits[2] - m)};
  const double s = vec_sum(p);
  return vec_scale(p, 1.0 / s);
}

// Walk every sequence of length max_len; `visit` sees the full sequence, the
// belief row after each prefix and the prefix probabilities.
template <typename Visit>
void walk_full_sequences(const HmmSpec& spec, int max_len, Visit&& visit) {
  TokenSeq seq(std::size_t(max_len), 0);
  std::vector<Vec3> beliefs(std::size_t(max_len) + 1);
  beliefs[0] = spec.pi;
  int depth = 0;
  while (true) {
    while (depth < max_len) {
      beliefs[std::size_t(depth) + 1] =
          vec_mat(beliefs[std::size_t(depth)], spec.labeled[seq[std::size_t(depth)]]);
      ++depth;
    }
    visit(seq, beliefs);
    // lexicographic increment
    int pos = max_len - 1;
    while (pos >= 0 && seq[std::size_t(pos)] == kVocab - 1) {
      seq[std::size_t(pos)] = 0;
      --pos;
    }
    if (pos < 0) break;
    ++seq[std::size_t(pos)];
    depth = pos;
  }
}

}  // namespace

std::int64_t TrainConfig::steps() const {
  const std::int64_t per_step = std::int64_t(batch_size) * seq_len;
  return (total_tokens + per_step - 1) / per_step;
}

void TrainConfig::validate() const {
  if (batch_size < 1 || seq_len < 1 || checkpoint_every < 1 || eval_max_len < 1 || n_threads < 1)
    throw std::invalid_argument("train config: sizes must be positive");
  if (lr <= 0 || beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1 || adam_eps <= 0)
    throw std::invalid_argument("train config: bad optimizer parameters");
  if (total_tokens < 0) throw std::invalid_argument("train config: total_tokens must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"total_tokens", total_tokens},
          {"seq_len", seq_len},
          {"checkpoint_every", checkpoint_every},
          {"eval_max_len", eval_max_len},
          {"seed", seed},
          {"n_threads", n_threads}};
}

void adam_step(nn::ModelParams& params, const std::vector<double>& grads, AdamState& state,
               const TrainConfig& config) {
  const std::size_t n = params.data.size();
  if (grads.size() != n) throw std::invalid_argument("adam_step: gradient size mismatch");
  if (state.m.size() != n) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(grads[i]))
      throw std::runtime_error("adam_step: non-finite gradient at coordinate " + std::to_string(i));
  state.t += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, double(state.t));
  const double bc2 = 1.0 - std::pow(config.beta2, double(state.t));
  for (std::size_t i = 0; i < n; ++i) {
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * grads[i];
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params.data[i] -= config.lr * mhat / (std::sqrt(vhat) + config.adam_eps);
  }
}

Vec3 optimal_next_token(const HmmSpec& spec, const TokenSeq& context) {
  Vec3 b = spec.pi;
  for (Token z : context) b = vec_mat(b, spec.labeled[z]);
  const double norm = vec_sum(b);
  Vec3 p;
  for (Token z = 0; z < kVocab; ++z) p[z] = vec_sum(vec_mat(b, spec.labeled[z])) / norm;
  return p;
}

double evaluate_kl_against(const Predictor& predict, const HmmSpec& spec, int max_len) {
  const auto contexts = enumerate_contexts(spec, max_len);
  double total = 0;
  for (const auto& [seq, prob] : contexts) {
    const Vec3 p_opt = optimal_next_token(spec, seq);
    total += prob * kl_divergence(p_opt, predict(seq));
  }
  return total / double(max_len);
}

double optimal_cross_entropy(const HmmSpec& spec, int max_len) {
  double total = 0;
  walk_full_sequences(spec, max_len, [&](const TokenSeq&, const std::vector<Vec3>& beliefs) {
    const double p_full = vec_sum(beliefs.back());
    if (p_full <= 0) return;
    for (int d = 1; d <= max_len; ++d) {
      const Vec3& b = beliefs[std::size_t(d)];
      const double p_prefix = vec_sum(b);
      double entropy = 0;
      for (Token z = 0; z < kVocab; ++z) {
        const double pz = vec_sum(vec_mat(b, spec.labeled[z])) / p_prefix;
        if (pz > 0) entropy -= pz * std::log(pz);
      }
      total += p_full * entropy;
    }
  });
  return total / double(max_len);
}

namespace {

// Shared traversal for model-based evaluation: per full sequence, per-position
// KL terms weighted by the full-sequence probability.
double model_weighted_kl(const nn::ModelParams& params, const HmmSpec& spec, int max_len,
                         int n_threads) {
  if (max_len > params.config.max_ctx)
    throw std::length_error("evaluate_kl: max_len exceeds model context");
  // collect sequences once; parallel chunks reduce in fixed order
  std::vector<TokenSeq> seqs;
  seqs.reserve(std::size_t(std::pow(3.0, max_len)));
  walk_full_sequences(spec, max_len,
                      [&](const TokenSeq& s, const std::vector<Vec3>&) { seqs.push_back(s); });

  const int threads = std::max(1, n_threads);
  std::vector<double> partial(std::size_t(threads), 0.0);
  auto work = [&](int ti) {
    nn::ForwardPass fp;
    const std::size_t lo = seqs.size() * std::size_t(ti) / std::size_t(threads);
    const std::size_t hi = seqs.size() * std::size_t(ti + 1) / std::size_t(threads);
    double acc = 0;
    for (std::size_t i = lo; i < hi; ++i) {
      const TokenSeq& seq = seqs[i];
      fp.run(params, seq);
      Vec3 b = spec.pi;
      double seq_term = 0;
      for (int d = 1; d <= max_len; ++d) {
        b = vec_mat(b, spec.labeled[seq[std::size_t(d - 1)]]);
        const double p_prefix = vec_sum(b);
        Vec3 p_opt;
        for (Token z = 0; z < kVocab; ++z)
          p_opt[z] = vec_sum(vec_mat(b, spec.labeled[z])) / p_prefix;
        const Vec3 p_model = softmax3(fp.logits() + std::size_t(d - 1) * 3);
        seq_term += kl_divergence(p_opt, p_model);
        // rescale to full-sequence weight below
      }
      const double p_full = vec_sum(b);
      acc += p_full * seq_term;
    }
    partial[std::size_t(ti)] = acc;
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  double total = 0;
  for (double p : partial) total += p;
  return total / double(max_len);
}

}  // namespace

double evaluate_kl(const nn::ModelParams& params, const HmmSpec& spec, int max_len, int n_threads) {
  return model_weighted_kl(params, spec, max_len, n_threads);
}

double exact_expected_loss(const nn::ModelParams& params, const HmmSpec& spec, int max_len,
                           int n_threads) {
  return optimal_cross_entropy(spec, max_len) + evaluate_kl(params, spec, max_len, n_threads);
}

TrainRun train(const HmmSpec& spec, const nn::ModelConfig& mconfig, const TrainConfig& tconfig,
               const std::optional<std::filesystem::path>& run_dir) {
  mconfig.validate();
  tconfig.validate();
  if (tconfig.seq_len > mconfig.max_ctx)
    throw std::invalid_argument("train: seq_len exceeds model context");

  TrainRun run;
  run.model_config = mconfig;
  run.train_config = tconfig;

  nn::ModelParams params = nn::init_model(mconfig, tconfig.seed);
  AdamState adam;
  Rng data_rng(stream_seed(tconfig.seed, 1));
  Rng probe_rng(stream_seed(tconfig.seed, 2));

  // fixed held-out probe batch
  std::vector<TokenSeq> probe;
  for (int i = 0; i < tconfig.batch_size; ++i)
    probe.push_back(sample_sequence(spec, probe_rng, tconfig.seq_len + 1));

  auto probe_loss = [&](const nn::ModelParams& pp) {
    double total = 0;
    for (const TokenSeq& s : probe) {
      TokenSeq inputs(s.begin(), s.end() - 1);
      TokenSeq targets(s.begin() + 1, s.end());
      total += nn::loss(nn::forward(pp, inputs), targets);
    }
    return total / double(probe.size());
  };

  std::ofstream metrics;
  if (run_dir) {
    std::filesystem::create_directories(*run_dir / "checkpoints");
    metrics.open(*run_dir / "metrics.csv");
    metrics << "step,loss,kl\n";
  }

  auto record_checkpoint = [&](std::int64_t step) {
    CheckpointRecord rec;
    rec.step = step;
    rec.params = params;
    rec.train_loss = probe_loss(params);
    rec.eval_kl = evaluate_kl(params, spec, tconfig.eval_max_len, tconfig.n_threads);
    if (run_dir) {
      nlohmann::json m{{"probe_loss", rec.train_loss}, {"eval_kl", rec.eval_kl}};
      nn::save_checkpoint(params, tconfig.seed, step,
                          m, *run_dir / "checkpoints" / ("step-" + std::to_string(step) + ".ckpt"));
      metrics << step << ',' << io::format_double(rec.train_loss) << ','
              << io::format_double(rec.eval_kl) << '\n';
      metrics.flush();
    }
    run.checkpoints.push_back(std::move(rec));
  };

  if (run_dir) {
    nlohmann::json manifest = io::make_manifest("train", {{"model", mconfig.to_json()},
                                                          {"train", tconfig.to_json()},
                                                          {"hmm", spec.to_json()}});
    io::write_manifest(manifest, *run_dir);
  }

  record_checkpoint(0);

  const std::int64_t steps = tconfig.steps();
  const int threads = std::max(1, tconfig.n_threads);
  std::vector<std::vector<double>> grad_bufs;
  grad_bufs.resize(std::size_t(threads));
  std::vector<double> grads(params.data.size(), 0.0);
  int divergent_streak = 0;

  for (std::int64_t step = 1; step <= steps; ++step) {
    // sample the whole batch up front so the data stream is independent of
    // the thread count
    std::vector<TokenSeq> batch;
    batch.reserve(std::size_t(tconfig.batch_size));
    for (int i = 0; i < tconfig.batch_size; ++i)
      batch.push_back(sample_sequence(spec, data_rng, tconfig.seq_len + 1));

    std::vector<double> losses(std::size_t(threads), 0.0);
    auto work = [&](int ti) {
      auto& buf = grad_bufs[std::size_t(ti)];
      buf.assign(params.data.size(), 0.0);
      const std::size_t lo = batch.size() * std::size_t(ti) / std::size_t(threads);
      const std::size_t hi = batch.size() * std::size_t(ti + 1) / std::size_t(threads);
      double acc = 0;
      for (std::size_t i = lo; i < hi; ++i) {
        TokenSeq inputs(batch[i].begin(), batch[i].end() - 1);
        TokenSeq targets(batch[i].begin() + 1, batch[i].end());
        acc += nn::backward(params, inputs, targets, buf);
      }
      losses[std::size_t(ti)] = acc;
    };
    if (threads == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
      for (auto& th : pool) th.join();
    }

    // deterministic reduction: buffers summed in thread order
    std::fill(grads.begin(), grads.end(), 0.0);
    double batch_loss = 0;
    for (int t = 0; t < threads; ++t) {
      batch_loss += losses[std::size_t(t)];
      const auto& buf = grad_bufs[std::size_t(t)];
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i] += buf[i];
    }
    batch_loss /= double(tconfig.batch_size);
    for (double& g : grads) g /= double(tconfig.batch_size);

    adam_step(params, grads, adam, tconfig);
    run.step_losses.emplace_back(step, batch_loss);

    divergent_streak = (batch_loss > 2.0 * kLn3) ? divergent_streak + 1 : 0;
    if (divergent_streak >= 50) {
      std::ostringstream msg;
      msg << "training diverged: batch loss " << batch_loss << " above " << 2.0 * kLn3
          << " for " << divergent_streak << " consecutive steps (step " << step << ")";
      throw training_divergence(msg.str());
    }

    if (step % tconfig.checkpoint_every == 0 || step == steps) record_checkpoint(step);
  }

  return run;
}

}  // namespace mess3::train
