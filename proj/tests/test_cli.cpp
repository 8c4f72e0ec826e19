#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mess3/io.hpp"

namespace fs = std::filesystem;

namespace {

struct CmdResult {
  int exit_code = 0;
  std::string output;
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string(MESS3LAB_BIN) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string output;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) output += buf;
  const int status = pclose(pipe);
  return {WEXITSTATUS(status), output};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mess3lab_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::size_t count_lines(const fs::path& file) {
  std::ifstream f(file);
  REQUIRE(f.good());
  std::size_t n = 0;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  return n;
}

std::vector<std::vector<std::string>> parse_csv(const fs::path& file) {
  std::ifstream f(file);
  REQUIRE(f.good());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line)) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    rows.push_back(fields);
  }
  return rows;
}

}  // namespace

TEST_CASE("geometry command writes cloud, figure and manifest") {
  const fs::path dir = fresh_dir("geometry");
  const auto res =
      run_cli("geometry --alpha 0.6 --x 0.15 --max-len 3 --variant full --out " + dir.string());
  CHECK(res.exit_code == 0);
  CHECK(count_lines(dir / "cloud.csv") == 40);  // header + 3 + 9 + 27
  CHECK(fs::exists(dir / "cloud.svg"));

  const auto manifest = nlohmann::json::parse(mess3::io::read_file(dir / "manifest.json"));
  CHECK(manifest["command"] == "geometry");
  CHECK(manifest["outputs"].contains("cloud.csv"));
  const std::string digest = manifest["outputs"]["cloud.csv"];
  CHECK(digest == mess3::io::sha256_hex(mess3::io::read_file(dir / "cloud.csv")));
  fs::remove_all(dir);
}

TEST_CASE("geometry rejects out-of-range x with a usage error") {
  const fs::path dir = fresh_dir("badx");
  const auto res =
      run_cli("geometry --alpha 0.6 --x 0.6 --max-len 2 --variant full --out " + dir.string());
  CHECK(res.exit_code == 2);
  CHECK(res.output.find("x must be in (0, 0.5]") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("spectral and rownorm variants: different bytes, same numbers") {
  const fs::path dir_a = fresh_dir("spectral");
  const fs::path dir_b = fresh_dir("rownorm");
  REQUIRE(run_cli("geometry --alpha 0.6 --x 0.15 --max-len 6 --variant spectral --out " +
                  dir_a.string())
              .exit_code == 0);
  REQUIRE(run_cli("geometry --alpha 0.6 --x 0.15 --max-len 6 --variant constrained-rownorm --out " +
                  dir_b.string())
              .exit_code == 0);
  const std::string bytes_a = mess3::io::read_file(dir_a / "cloud.csv");
  const std::string bytes_b = mess3::io::read_file(dir_b / "cloud.csv");
  CHECK(bytes_a != bytes_b);

  const auto rows_a = parse_csv(dir_a / "cloud.csv");
  const auto rows_b = parse_csv(dir_b / "cloud.csv");
  REQUIRE(rows_a.size() == rows_b.size());
  double max_diff = 0;
  for (std::size_t i = 1; i < rows_a.size(); ++i)
    for (std::size_t c = 3; c < 6; ++c)
      max_diff = std::max(max_diff, std::abs(std::stod(rows_a[i][c]) - std::stod(rows_b[i][c])));
  CHECK(max_diff <= 1e-10);
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("geometry output is byte-deterministic across reruns") {
  const fs::path dir_a = fresh_dir("det_a");
  const fs::path dir_b = fresh_dir("det_b");
  REQUIRE(run_cli("geometry --alpha 0.3 --x 0.2 --max-len 4 --variant constrained-bayes --out " +
                  dir_a.string())
              .exit_code == 0);
  REQUIRE(run_cli("geometry --alpha 0.3 --x 0.2 --max-len 4 --variant constrained-bayes --out " +
                  dir_b.string())
              .exit_code == 0);
  CHECK(mess3::io::read_file(dir_a / "cloud.csv") == mess3::io::read_file(dir_b / "cloud.csv"));
  CHECK(mess3::io::read_file(dir_a / "cloud.svg") == mess3::io::read_file(dir_b / "cloud.svg"));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("theory command selects the regime from x") {
  const fs::path one = fresh_dir("theory1");
  REQUIRE(run_cli("theory --alpha 0.6 --x 0.15 --max-len 6 --out " + one.string()).exit_code == 0);
  auto manifest = nlohmann::json::parse(mess3::io::read_file(one / "manifest.json"));
  CHECK(manifest["config"]["head_count"] == 1);
  CHECK(fs::exists(one / "ov_embed.json"));

  const fs::path two = fresh_dir("theory2");
  REQUIRE(run_cli("theory --alpha 0.6 --x 0.5 --max-len 6 --out " + two.string()).exit_code == 0);
  manifest = nlohmann::json::parse(mess3::io::read_file(two / "manifest.json"));
  CHECK(manifest["config"]["head_count"] == 2);

  const fs::path boundary = fresh_dir("theory3");
  REQUIRE(run_cli("theory --alpha 0.6 --x 0.333333333333333315 --max-len 4 --out " +
                  boundary.string())
              .exit_code == 0);
  manifest = nlohmann::json::parse(mess3::io::read_file(boundary / "manifest.json"));
  CHECK(manifest["config"]["head_count"] == 1);
  // zeta = 0: all off-diagonal predictions are zero
  const auto rows = parse_csv(boundary / "attention.csv");
  for (std::size_t i = 1; i < rows.size(); ++i)
    if (rows[i][0] != rows[i][1]) CHECK(std::stod(rows[i][3]) == 0.0);
  fs::remove_all(one);
  fs::remove_all(two);
  fs::remove_all(boundary);
}

TEST_CASE("train and analyze round trip at toy scale") {
  const fs::path run = fresh_dir("train");
  const auto train_res = run_cli(
      "--seed 3 train --alpha 0.6 --x 0.15 --heads 1 --layers 1 --tokens 12000 --batch 16 "
      "--seq-len 5 --checkpoint-every 100 --eval-max-len 3 --out " +
      run.string());
  REQUIRE(train_res.exit_code == 0);
  CHECK(fs::exists(run / "metrics.csv"));
  CHECK(fs::exists(run / "checkpoints" / "step-0.ckpt"));

  // metrics.csv: strictly increasing step column
  const auto rows = parse_csv(run / "metrics.csv");
  REQUIRE(rows.size() >= 3);
  CHECK(rows[0] == std::vector<std::string>{"step", "loss", "kl"});
  long prev = -1;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const long step = std::stol(rows[i][0]);
    CHECK(step > prev);
    prev = step;
  }

  // init-only run via --tokens 0
  const fs::path zero = fresh_dir("train0");
  REQUIRE(run_cli("train --alpha 0.6 --x 0.15 --tokens 0 --batch 8 --seq-len 5 --eval-max-len 2 "
                  "--out " +
                  zero.string())
              .exit_code == 0);
  CHECK(count_lines(zero / "metrics.csv") == 2);  // header + step 0

  // identical invocation reproduces identical metrics bytes
  const fs::path run_b = fresh_dir("train_b");
  REQUIRE(run_cli("--seed 3 train --alpha 0.6 --x 0.15 --heads 1 --layers 1 --tokens 12000 "
                  "--batch 16 --seq-len 5 --checkpoint-every 100 --eval-max-len 3 --out " +
                  run_b.string())
              .exit_code == 0);
  CHECK(mess3::io::read_file(run / "metrics.csv") == mess3::io::read_file(run_b / "metrics.csv"));

  // analyze the final checkpoint
  const auto analyze_res = run_cli("analyze --run " + run.string() + " --max-len 3");
  REQUIRE(analyze_res.exit_code == 0);
  fs::path report_path;
  for (const auto& entry : fs::directory_iterator(run))
    if (entry.path().filename().string().starts_with("analysis-step-"))
      report_path = entry.path() / "report.json";
  REQUIRE(fs::exists(report_path));
  const auto report = nlohmann::json::parse(mess3::io::read_file(report_path));
  CHECK(report.contains("regressions"));
  CHECK(report["regressions"].contains("mid_to_constrained_rownorm"));
  CHECK(report["regressions"].contains("post_to_full"));
  CHECK(report["pca"]["mid"]["cumulative_ratio"].size() == 7);
  CHECK(fs::exists(report_path.parent_path() / "geometry.svg"));
  // projected model clouds and theory clouds share the geometry CSV schema
  for (const char* name : {"model_mid.csv", "model_post.csv", "theory_constrained.csv",
                           "theory_full.csv"}) {
    const auto cloud_rows = parse_csv(report_path.parent_path() / name);
    REQUIRE(cloud_rows.size() == 40);  // header + contexts up to length 3
    CHECK(cloud_rows[0][0] == "seq");
    CHECK(cloud_rows[0].size() == 11);
  }

  // analyzing checkpoint 0 gives normalized MSE exactly 1 at both stages
  const auto zero_res = run_cli("analyze --run " + run.string() + " --checkpoint 0 --max-len 3");
  REQUIRE(zero_res.exit_code == 0);
  const auto zero_report =
      nlohmann::json::parse(mess3::io::read_file(run / "analysis-step-0" / "report.json"));
  CHECK(zero_report["regressions"]["mid_to_constrained_rownorm"]["normalized_mse"] == 1.0);
  CHECK(zero_report["regressions"]["post_to_full"]["normalized_mse"] == 1.0);

  // missing checkpoint -> exit 4
  CHECK(run_cli("analyze --run " + run.string() + " --checkpoint 99999 --max-len 3").exit_code == 4);
  CHECK(run_cli("analyze --run /nonexistent-run-dir --max-len 3").exit_code == 4);

  fs::remove_all(run);
  fs::remove_all(run_b);
  fs::remove_all(zero);
}

TEST_CASE("full-length cloud: 88572 rows, figure under 10 MB") {
  const fs::path dir = fresh_dir("full10");
  REQUIRE(run_cli("geometry --alpha 0.6 --x 0.15 --max-len 10 --variant full --out " + dir.string())
              .exit_code == 0);
  CHECK(count_lines(dir / "cloud.csv") == 88573);  // header + all contexts
  CHECK(fs::file_size(dir / "cloud.svg") < 10 * 1024 * 1024);
  fs::remove_all(dir);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run_cli("geometry").exit_code == 2);        // missing required flags
  CHECK(run_cli("no-such-command").exit_code == 2);
  CHECK(run_cli("").exit_code == 2);                // subcommand required
}
