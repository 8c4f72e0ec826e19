// mess3lab: build Mess3 processes, compute belief geometries and spectral
// attention predictions, train small transformers on sampled sequences, and
// compare trained models against the predicted geometries.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "mess3/analysis.hpp"
#include "mess3/belief.hpp"
#include "mess3/hmm.hpp"
#include "mess3/io.hpp"
#include "mess3/nn.hpp"
#include "mess3/spectral.hpp"
#include "mess3/svg.hpp"
#include "mess3/trainer.hpp"

namespace fs = std::filesystem;
using namespace mess3;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitMissingArtifact = 4;

struct GlobalOpts {
  std::uint64_t seed = 1;
  int threads = 1;
  bool quiet = false;
};

void note(const GlobalOpts& g, const std::string& msg) {
  if (!g.quiet) std::cout << msg << '\n';
}

std::vector<svg::Point> cloud_points(const GeometryCloud& cloud) {
  std::vector<svg::Point> pts;
  pts.reserve(cloud.entries.size());
  for (const auto& e : cloud.entries) {
    const auto [x, y] = simplex_coords(e.point);
    pts.push_back({x, y, e.rgb});
  }
  return pts;
}

CloudVariant parse_variant(const std::string& name) {
  if (name == "full") return CloudVariant::full;
  if (name == "constrained-bayes") return CloudVariant::constrained_bayes;
  if (name == "constrained-rownorm") return CloudVariant::constrained_rownorm;
  if (name == "spectral") return CloudVariant::constrained_spectral;
  throw CLI::ValidationError("--variant",
                             "must be one of full|constrained-bayes|constrained-rownorm|spectral");
}

int cmd_geometry(const GlobalOpts& g, double alpha, double x, int max_len,
                 const std::string& variant_name, const fs::path& out_dir) {
  const HmmSpec spec = build_mess3(alpha, x);
  const CloudVariant variant = parse_variant(variant_name);
  const GeometryCloud cloud = build_geometry_cloud(spec, max_len, variant);

  fs::create_directories(out_dir);
  const fs::path csv_path = out_dir / "cloud.csv";
  io::write_file(csv_path, cloud_to_csv(cloud));
  const fs::path svg_path = out_dir / "cloud.svg";
  svg::Frame frame;
  frame.title = cloud_variant_name(variant);
  io::write_file(svg_path, svg::render_svg(cloud_points(cloud), frame));

  nlohmann::json cfg{{"alpha", alpha},
                     {"x", x},
                     {"max_len", max_len},
                     {"variant", cloud_variant_name(variant)},
                     {"seed", g.seed},
                     {"hmm", spec.to_json()}};
  nlohmann::json manifest = io::make_manifest("geometry", cfg);
  io::add_output_digest(manifest, csv_path);
  io::add_output_digest(manifest, svg_path);
  io::write_manifest(manifest, out_dir);
  note(g, "wrote " + std::to_string(cloud.entries.size()) + " points to " + csv_path.string());
  return 0;
}

int cmd_theory(const GlobalOpts& g, double alpha, double x, int max_len, const fs::path& out_dir) {
  const HmmSpec spec = build_mess3(alpha, x);
  const bool two_heads = requires_two_heads(x);
  const AttentionPrediction pred =
      two_heads ? predict_two_heads(spec, max_len) : predict_attention(spec, max_len);

  fs::create_directories(out_dir);
  const fs::path attn_path = out_dir / "attention.csv";
  io::write_file(attn_path, attention_to_csv(pred));

  nlohmann::json cfg{{"alpha", alpha},         {"x", x},
                     {"max_len", max_len},     {"zeta", pred.zeta},
                     {"head_count", pred.head_count}, {"seed", g.seed}};
  nlohmann::json manifest = io::make_manifest("theory", cfg);
  io::add_output_digest(manifest, attn_path);

  // OV/embedding predictions are undefined when the relevant anchor is zero
  // (zeta = 0 attends only to itself)
  if (pred.zeta != 0.0) {
    const OvEmbedPrediction ov = predict_ov_and_embeddings(spec, pred);
    const fs::path ov_path = out_dir / "ov_embed.json";
    io::write_file(ov_path, ov.to_json().dump(2) + "\n");
    io::add_output_digest(manifest, ov_path);
  } else {
    manifest["config"]["note"] = "zeta = 0: attention only to self, OV predictions undefined";
  }
  io::write_manifest(manifest, out_dir);
  note(g, std::string("theory regime: ") + (two_heads ? "two heads" : "single head") +
              ", zeta = " + io::format_double(pred.zeta));
  return 0;
}

int cmd_train(const GlobalOpts& g, double alpha, double x, int heads, int layers,
              std::int64_t tokens, const fs::path& out_dir, int batch_size, double lr, int seq_len,
              int checkpoint_every, int eval_max_len) {
  const HmmSpec spec = build_mess3(alpha, x);
  nn::ModelConfig mcfg;
  mcfg.n_heads = heads;
  mcfg.n_layers = layers;
  mcfg.max_ctx = std::max(10, seq_len);
  train::TrainConfig tcfg;
  tcfg.batch_size = batch_size;
  tcfg.lr = lr;
  tcfg.total_tokens = tokens;
  tcfg.seq_len = seq_len;
  tcfg.checkpoint_every = checkpoint_every;
  tcfg.eval_max_len = eval_max_len;
  tcfg.seed = g.seed;
  tcfg.n_threads = g.threads;

  const train::TrainRun run = train::train(spec, mcfg, tcfg, out_dir);
  note(g, "trained " + std::to_string(tcfg.steps()) + " steps; final probe loss " +
              io::format_double(run.checkpoints.back().train_loss) + ", final KL " +
              io::format_double(run.checkpoints.back().eval_kl));
  return 0;
}

int cmd_analyze(const GlobalOpts& g, const fs::path& run_dir, const std::string& checkpoint,
                int max_len, const std::string& weighting_name) {
  if (!fs::exists(run_dir / "manifest.json")) {
    std::cerr << "error: no manifest.json under " << run_dir << '\n';
    return kExitMissingArtifact;
  }
  const nlohmann::json manifest = nlohmann::json::parse(io::read_file(run_dir / "manifest.json"));
  const HmmSpec spec = HmmSpec::from_json(manifest.at("config").at("hmm"));

  fs::path ckpt_path;
  if (checkpoint == "latest") {
    std::int64_t best = -1;
    for (const auto& entry : fs::directory_iterator(run_dir / "checkpoints")) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("step-") && name.ends_with(".ckpt")) {
        const std::int64_t step = std::stoll(name.substr(5, name.size() - 10));
        if (step > best) {
          best = step;
          ckpt_path = entry.path();
        }
      }
    }
    if (best < 0) {
      std::cerr << "error: no checkpoints under " << (run_dir / "checkpoints") << '\n';
      return kExitMissingArtifact;
    }
  } else {
    ckpt_path = run_dir / "checkpoints" / ("step-" + checkpoint + ".ckpt");
    if (!fs::exists(ckpt_path)) {
      std::cerr << "error: missing checkpoint " << ckpt_path << '\n';
      return kExitMissingArtifact;
    }
  }

  const nn::Checkpoint ckpt = nn::load_checkpoint(ckpt_path);
  const analysis::Weighting weighting = weighting_name == "prob"
                                            ? analysis::Weighting::probability
                                            : analysis::Weighting::uniform;

  note(g, "analyzing " + ckpt_path.string());
  const GeometryCloud full_cloud = build_geometry_cloud(spec, max_len, CloudVariant::full);
  const GeometryCloud rownorm_cloud =
      build_geometry_cloud(spec, max_len, CloudVariant::constrained_rownorm);
  const GeometryCloud bayes_cloud =
      build_geometry_cloud(spec, max_len, CloudVariant::constrained_bayes);

  const auto acts = analysis::collect_activations(ckpt.params, spec, max_len, 0, g.threads);
  const nn::ModelParams baseline = nn::init_model(ckpt.params.config, ckpt.seed);
  const auto base_acts = analysis::collect_activations(baseline, spec, max_len, 0, g.threads);

  nlohmann::json report;
  report["checkpoint"] = ckpt.step;
  report["weighting"] = analysis::weighting_name(weighting);

  auto fit_json = [](const analysis::RegressionFit& fit) {
    return nlohmann::json{{"mse", fit.mse},
                          {"baseline_mse", fit.baseline_mse},
                          {"normalized_mse", fit.normalized_mse},
                          {"ridge_applied", fit.ridge_applied},
                          {"weighting", analysis::weighting_name(fit.weighting)}};
  };

  const auto mid_rownorm = analysis::regress_to_geometry(acts, analysis::Stage::mid, rownorm_cloud,
                                                         weighting, base_acts);
  const auto mid_bayes =
      analysis::regress_to_geometry(acts, analysis::Stage::mid, bayes_cloud, weighting, base_acts);
  const auto post_full =
      analysis::regress_to_geometry(acts, analysis::Stage::post, full_cloud, weighting, base_acts);
  report["regressions"]["mid_to_constrained_rownorm"] = fit_json(mid_rownorm);
  report["regressions"]["mid_to_constrained_bayes"] = fit_json(mid_bayes);
  report["regressions"]["post_to_full"] = fit_json(post_full);

  // PCA dimensionality, components 0..6
  for (const auto stage : {analysis::Stage::mid, analysis::Stage::post}) {
    const auto p = analysis::pca(acts, stage, std::min(7, ckpt.params.config.d_model));
    report["pca"][analysis::stage_name(stage)] = {{"cumulative_ratio", p.cumulative_ratio}};
  }

  if (ckpt.params.config.n_heads == 1 && !requires_two_heads(spec.x)) {
    const auto fit = analysis::attention_decay_fit(ckpt.params, spec, max_len);
    report["attention_decay"] = {{"zeta_hat", fit.zeta_hat},
                                 {"r2", fit.r2},
                                 {"lag_means", fit.lag_means},
                                 {"excluded_nonpositive", fit.excluded_nonpositive},
                                 {"zeta_theory", 1.0 - 3.0 * spec.x}};
  }
  if (ckpt.params.config.n_heads == 2) {
    const auto parity = analysis::two_head_parity_report(ckpt.params, spec, max_len);
    report["two_head_parity"] = {{"even_mass", parity.even_mass},
                                 {"odd_mass", parity.odd_mass},
                                 {"complementary", parity.complementary}};
  }

  const auto& ov_map = mid_rownorm.map;
  const auto ov = analysis::ov_geometry_check(ckpt.params, spec, ov_map);
  report["ov_check"] = ov.detail;
  report["ov_check"]["median_within_token_cosine"] = ov.heads[0].median_within_token_cosine;
  report["ov_check"]["median_angle_to_theory_deg"] = ov.heads[0].median_angle_to_theory_deg;
  const auto emb = analysis::embedding_geometry_check(ckpt.params, spec, ov_map);
  report["embedding_check"] = {{"median_abs_cosine_late", emb.median_abs_cosine_late},
                               {"early_cosines", emb.early_cosines}};

  const fs::path out_dir = run_dir / ("analysis-step-" + std::to_string(ckpt.step));
  fs::create_directories(out_dir);
  const fs::path report_path = out_dir / "report.json";
  io::write_file(report_path, report.dump(2) + "\n");

  // model activations mapped into the simplex plane, as clouds
  auto model_cloud = [&](analysis::Stage stage, const analysis::SimplexMap& map) {
    GeometryCloud cloud;
    cloud.max_len = max_len;
    cloud.variant = CloudVariant::full;  // placeholder tag; coordinates are mapped activations
    const Matrix& X = acts.stage(stage);
    for (std::size_t i = 0; i < X.rows; ++i) {
      GeometryCloudEntry e;
      e.seq = acts.contexts[i];
      e.prob = acts.probs[i];
      e.point = SimplexPoint{map.map_point(X.row(i), X.cols), BeliefRole::constrained_belief};
      e.rgb = full_cloud.entries[i].rgb;
      cloud.entries.push_back(std::move(e));
    }
    return cloud;
  };
  const GeometryCloud mid_mapped = model_cloud(analysis::Stage::mid, mid_rownorm.map);
  const GeometryCloud post_mapped = model_cloud(analysis::Stage::post, post_full.map);

  const fs::path mid_csv = out_dir / "model_mid.csv";
  const fs::path post_csv = out_dir / "model_post.csv";
  const fs::path theory_constrained_csv = out_dir / "theory_constrained.csv";
  const fs::path theory_full_csv = out_dir / "theory_full.csv";
  io::write_file(mid_csv, cloud_to_csv(mid_mapped));
  io::write_file(post_csv, cloud_to_csv(post_mapped));
  io::write_file(theory_constrained_csv, cloud_to_csv(rownorm_cloud));
  io::write_file(theory_full_csv, cloud_to_csv(full_cloud));

  // four-column figure: theory constrained, model mid, theory full, model post
  const fs::path fig_path = out_dir / "geometry.svg";
  io::write_file(fig_path,
                 svg::render_panels({cloud_points(rownorm_cloud), cloud_points(mid_mapped),
                                     cloud_points(full_cloud), cloud_points(post_mapped)},
                                    {"theory constrained", "model mid", "theory full",
                                     "model post"}));

  nlohmann::json amanifest = io::make_manifest(
      "analyze", {{"run", run_dir.string()}, {"checkpoint", ckpt.step}, {"max_len", max_len},
                  {"weighting", analysis::weighting_name(weighting)}, {"seed", g.seed}});
  io::add_output_digest(amanifest, report_path);
  io::add_output_digest(amanifest, fig_path);
  for (const auto& p : {mid_csv, post_csv, theory_constrained_csv, theory_full_csv})
    io::add_output_digest(amanifest, p);
  io::write_manifest(amanifest, out_dir);
  note(g, "report written to " + report_path.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mess3 belief-geometry laboratory"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("--seed", g.seed, "global seed");
  app.add_option("--threads", g.threads, "worker threads for batch/analysis loops");
  app.add_flag("--quiet", g.quiet, "suppress progress output");

  double alpha = 0.6, x = 0.15;
  int max_len = 10;
  std::string out_dir;

  auto* geometry = app.add_subcommand("geometry", "compute a belief geometry cloud");
  std::string variant = "full";
  geometry->add_option("--alpha", alpha, "emission fidelity in [0,1]")->required();
  geometry->add_option("--x", x, "transition rate in (0, 0.5]")->required();
  geometry->add_option("--max-len", max_len, "maximum context length");
  geometry->add_option("--variant", variant, "full|constrained-bayes|constrained-rownorm|spectral");
  geometry->add_option("--out", out_dir, "output directory")->required();

  auto* theory = app.add_subcommand("theory", "emit spectral attention/OV/embedding predictions");
  theory->add_option("--alpha", alpha, "emission fidelity in [0,1]")->required();
  theory->add_option("--x", x, "transition rate in (0, 0.5]")->required();
  theory->add_option("--max-len", max_len, "maximum context length");
  theory->add_option("--out", out_dir, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a transformer on sampled sequences");
  int heads = 1, layers = 1, batch_size = 128, seq_len = 10, checkpoint_every = 200,
      eval_max_len = 8;
  std::int64_t tokens = 2'000'000;
  double lr = 1e-4;
  train_cmd->add_option("--alpha", alpha, "emission fidelity in [0,1]")->required();
  train_cmd->add_option("--x", x, "transition rate in (0, 0.5]")->required();
  train_cmd->add_option("--heads", heads, "attention heads");
  train_cmd->add_option("--layers", layers, "transformer layers");
  train_cmd->add_option("--tokens", tokens, "training token budget");
  train_cmd->add_option("--batch", batch_size, "batch size");
  train_cmd->add_option("--lr", lr, "learning rate");
  train_cmd->add_option("--seq-len", seq_len, "training sequence length");
  train_cmd->add_option("--checkpoint-every", checkpoint_every, "steps between checkpoints");
  train_cmd->add_option("--eval-max-len", eval_max_len, "context length for KL evaluation");
  train_cmd->add_option("--out", out_dir, "run directory")->required();

  auto* analyze = app.add_subcommand("analyze", "compare a trained checkpoint against theory");
  std::string run_dir, checkpoint = "latest", weighting = "uniform";
  analyze->add_option("--run", run_dir, "training run directory")->required();
  analyze->add_option("--checkpoint", checkpoint, "checkpoint step number or 'latest'");
  analyze->add_option("--max-len", max_len, "maximum context length");
  analyze->add_option("--weighting", weighting, "uniform|prob (uniform matches a flat dataset regression)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (geometry->parsed())
      return cmd_geometry(g, alpha, x, max_len, variant, out_dir);
    if (theory->parsed()) return cmd_theory(g, alpha, x, max_len, out_dir);
    if (train_cmd->parsed())
      return cmd_train(g, alpha, x, heads, layers, tokens, out_dir, batch_size, lr, seq_len,
                       checkpoint_every, eval_max_len);
    if (analyze->parsed()) return cmd_analyze(g, run_dir, checkpoint, max_len, weighting);
  } catch (const train::training_divergence& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::length_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
