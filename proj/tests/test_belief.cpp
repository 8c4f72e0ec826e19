#include <doctest.h>

#include <cmath>

#include "mess3/belief.hpp"

using namespace mess3;

namespace {

const HmmSpec& spec615() {
  static const HmmSpec spec = build_mess3(0.6, 0.15);
  return spec;
}

SimplexPoint uniform_point() {
  return SimplexPoint{{1.0 / 3, 1.0 / 3, 1.0 / 3}, BeliefRole::full_belief};
}

// oracle for pi T^{|z}: average the rows of the row-normalized labeled matrix
Vec3 pi_conditional_oracle(const HmmSpec& spec, Token z) {
  Vec3 out{0, 0, 0};
  for (int i = 0; i < 3; ++i) {
    double row_sum = 0;
    for (int j = 0; j < 3; ++j) row_sum += at(spec.labeled[z], i, j);
    for (int j = 0; j < 3; ++j)
      out[std::size_t(j)] += spec.pi[std::size_t(i)] * at(spec.labeled[z], i, j) / row_sum;
  }
  return out;
}

}  // namespace

TEST_CASE("single Bayes update from the stationary prior") {
  const SimplexPoint updated = update_belief(spec615(), uniform_point(), 0);
  CHECK(updated.coords[0] == doctest::Approx(0.6).epsilon(1e-13));
  CHECK(updated.coords[1] == doctest::Approx(0.2).epsilon(1e-13));
  CHECK(updated.coords[2] == doctest::Approx(0.2).epsilon(1e-13));
}

TEST_CASE("averaging updates over emissions recovers stationarity") {
  const HmmSpec& spec = spec615();
  Vec3 mix{0, 0, 0};
  for (Token z = 0; z < 3; ++z) {
    const double pz = vec_sum(vec_mat(spec.pi, spec.labeled[z]));
    mix = vec_add(mix, vec_scale(update_belief(spec, uniform_point(), z).coords, pz));
  }
  CHECK(max_abs_diff(mix, spec.pi) <= 1e-14);
}

TEST_CASE("alpha=1 concentrates belief after the preferred token") {
  const HmmSpec spec = build_mess3(1.0, 0.15);
  const SimplexPoint updated = update_belief(spec, uniform_point(), 0);
  CHECK(updated.coords[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(updated.coords[1]) <= 1e-12);
  CHECK(std::abs(updated.coords[2]) <= 1e-12);
}

TEST_CASE("full belief: empty context, one token, product vs fold") {
  const HmmSpec& spec = spec615();
  const SimplexPoint empty = full_belief(spec, {});
  CHECK(max_abs_diff(empty.coords, spec.pi) == 0.0);

  const SimplexPoint one = full_belief(spec, {0});
  CHECK(one.coords[0] == doctest::Approx(0.6).epsilon(1e-13));

  // product form vs recursive fold over every context of length <= 8
  for (const auto& [seq, prob] : enumerate_contexts(spec, 8)) {
    SimplexPoint folded = SimplexPoint{spec.pi, BeliefRole::full_belief};
    for (Token z : seq) folded = update_belief(spec, folded, z);
    CHECK(max_abs_diff(full_belief(spec, seq).coords, folded.coords) <= 1e-12);
  }
}

TEST_CASE("constrained belief variants at a single token") {
  const HmmSpec& spec = spec615();
  const SimplexPoint bayes = constrained_belief(spec, {0}, ConstrainedVariant::bayes);
  const SimplexPoint full = full_belief(spec, {0});
  CHECK(max_abs_diff(bayes.coords, full.coords) <= 1e-14);

  const SimplexPoint rownorm = constrained_belief(spec, {0}, ConstrainedVariant::rownorm);
  const Vec3 oracle = pi_conditional_oracle(spec, 0);
  CHECK(max_abs_diff(rownorm.coords, oracle) <= 1e-14);
  // frozen oracle values (exact arithmetic: (0.875 + 2 * 0.09/0.26) / 3, ...)
  CHECK(rownorm.coords[0] == doctest::Approx(0.52243589743589747).epsilon(1e-12));
  CHECK(rownorm.coords[1] == doctest::Approx(0.23878205128205127).epsilon(1e-12));
  CHECK(rownorm.coords[2] == doctest::Approx(0.23878205128205127).epsilon(1e-12));

  // the two variants genuinely differ for Mess3 at these parameters
  CHECK(max_abs_diff(bayes.coords, rownorm.coords) > 1e-3);
}

TEST_CASE("constrained beliefs stay in the simplex hyperplane") {
  const HmmSpec& spec = spec615();
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    TokenSeq seq;
    const int len = 1 + int(rng.below(8));
    for (int i = 0; i < len; ++i) seq.push_back(Token(rng.below(3)));
    for (auto variant : {ConstrainedVariant::bayes, ConstrainedVariant::rownorm}) {
      const SimplexPoint p = constrained_belief(spec, seq, variant);
      CHECK(std::abs(vec_sum(p.coords) - 1.0) <= 1e-10);
    }
  }
  CHECK_THROWS_AS(constrained_belief(spec, {}, ConstrainedVariant::bayes), std::invalid_argument);
}

TEST_CASE("token relabeling permutes belief coordinates identically") {
  const HmmSpec spec = build_mess3(0.45, 0.3);
  Rng rng(23);
  auto cycle_token = [](Token z) { return Token((z + 1) % 3); };
  for (int trial = 0; trial < 50; ++trial) {
    TokenSeq seq, cycled;
    const int len = 1 + int(rng.below(6));
    for (int i = 0; i < len; ++i) {
      const Token z = Token(rng.below(3));
      seq.push_back(z);
      cycled.push_back(cycle_token(z));
    }
    const Vec3 a = full_belief(spec, seq).coords;
    const Vec3 b = full_belief(spec, cycled).coords;
    for (int i = 0; i < 3; ++i)
      CHECK(a[std::size_t(i)] == doctest::Approx(b[std::size_t((i + 1) % 3)]).epsilon(1e-12));

    const Vec3 ca = constrained_belief(spec, seq, ConstrainedVariant::rownorm).coords;
    const Vec3 cb = constrained_belief(spec, cycled, ConstrainedVariant::rownorm).coords;
    for (int i = 0; i < 3; ++i)
      CHECK(ca[std::size_t(i)] == doctest::Approx(cb[std::size_t((i + 1) % 3)]).epsilon(1e-12));
  }
}

TEST_CASE("geometry clouds: counts, coloring, containment") {
  const HmmSpec& spec = spec615();
  const GeometryCloud tiny = build_geometry_cloud(spec, 1, CloudVariant::full);
  REQUIRE(tiny.entries.size() == 3);
  for (const auto& e : tiny.entries) {
    const SimplexPoint direct = update_belief(spec, uniform_point(), e.seq[0]);
    CHECK(max_abs_diff(e.point.coords, direct.coords) <= 1e-13);
    CHECK(max_abs_diff(e.rgb, e.point.coords) <= 1e-15);  // rgb from full beliefs
  }

  for (double alpha : {0.2, 0.6}) {
    const GeometryCloud cloud = build_geometry_cloud(build_mess3(alpha, 0.15), 6, CloudVariant::full);
    CHECK(cloud.entries.size() == context_count(6));
    for (const auto& e : cloud.entries)
      for (double c : e.point.coords) {
        CHECK(c > 0.0);
        CHECK(c < 1.0);
      }
  }

  // rgb always taken from the full beliefs, whatever the variant
  const GeometryCloud constrained = build_geometry_cloud(spec, 3, CloudVariant::constrained_rownorm);
  const GeometryCloud full = build_geometry_cloud(spec, 3, CloudVariant::full);
  for (std::size_t i = 0; i < constrained.entries.size(); ++i)
    CHECK(max_abs_diff(constrained.entries[i].rgb, full.entries[i].rgb) == 0.0);
}

TEST_CASE("barycentric plotting coordinates") {
  auto coords = [](Vec3 v) { return simplex_coords(SimplexPoint{v, BeliefRole::full_belief}); };
  const auto [vx, vy] = coords({1, 0, 0});
  CHECK(vx == 0.0);
  CHECK(vy == 0.0);
  const auto [cx, cy] = coords({1.0 / 3, 1.0 / 3, 1.0 / 3});
  CHECK(cx == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(cy == doctest::Approx(std::sqrt(3.0) / 6).epsilon(1e-15));
  const auto [px, py] = coords({0.6, 0.2, 0.2});
  CHECK(px == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(py == doctest::Approx(0.17320508075688773).epsilon(1e-14));
}

TEST_CASE("cloud CSV round-trips doubles at 17 significant digits") {
  const GeometryCloud cloud = build_geometry_cloud(spec615(), 2, CloudVariant::full);
  const std::string csv = cloud_to_csv(cloud);
  CHECK(csv.starts_with("seq,length,prob,b0,b1,b2,x2d,y2d,r,g,b\n"));
  // parse one value back and compare bit-for-bit
  const std::size_t line_start = csv.find("\n00,");
  REQUIRE(line_start != std::string::npos);
  std::size_t field_start = line_start + 1;
  for (int commas = 0; commas < 3; ++commas) field_start = csv.find(',', field_start) + 1;
  const double parsed = std::stod(csv.substr(field_start));
  CHECK(parsed == full_belief(spec615(), {0, 0}).coords[0]);
}
