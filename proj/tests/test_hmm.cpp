#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "mess3/hmm.hpp"

using namespace mess3;

namespace {

// Independent oracle: direct substitution into the labeled matrix formulas,
// e.g. T^(0) = [[ay, bx, bx], [ax, by, bx], [ax, bx, by]].
std::array<Mat3, 3> reference_mess3_matrices(double alpha, double x) {
  const double beta = (1 - alpha) / 2, y = 1 - 2 * x;
  auto entry = [&](int z, int i, int j) {
    const double emit = (j == z) ? alpha : beta;
    return emit * ((i == j) ? y : x);
  };
  std::array<Mat3, 3> ms;
  for (int z = 0; z < 3; ++z)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) at(ms[std::size_t(z)], i, j) = entry(z, i, j);
  return ms;
}

}  // namespace

TEST_CASE("mess3 labeled matrices match direct substitution") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  const auto ref = reference_mess3_matrices(0.6, 0.15);
  for (int z = 0; z < 3; ++z) CHECK(max_abs_diff(spec.labeled[std::size_t(z)], ref[std::size_t(z)]) == 0.0);

  // spot values: alpha*y = 0.42, beta*x = 0.03, alpha*x = 0.09, beta*y = 0.14
  CHECK(at(spec.labeled[0], 0, 0) == doctest::Approx(0.42).epsilon(1e-15));
  CHECK(at(spec.labeled[0], 0, 1) == doctest::Approx(0.03).epsilon(1e-15));
  CHECK(at(spec.labeled[0], 0, 2) == doctest::Approx(0.03).epsilon(1e-15));
  CHECK(at(spec.labeled[0], 1, 0) == doctest::Approx(0.09).epsilon(1e-15));
  CHECK(at(spec.labeled[0], 1, 1) == doctest::Approx(0.14).epsilon(1e-15));
  CHECK(at(spec.labeled[0], 1, 2) == doctest::Approx(0.03).epsilon(1e-15));
}

TEST_CASE("mess3 column-permutation symmetry between labeled matrices") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const double alpha = rng.uniform(0.0, 1.0);
    const double x = rng.uniform(1e-3, 0.5);
    const HmmSpec spec = build_mess3(alpha, x);
    // T^(1) equals T^(0) with states 0 and 1 swapped in both rows and columns
    auto swap01 = [](int i) { return i == 0 ? 1 : (i == 1 ? 0 : 2); };
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(at(spec.labeled[1], i, j) ==
              doctest::Approx(at(spec.labeled[0], swap01(i), swap01(j))).epsilon(1e-14));
  }
}

TEST_CASE("parameter validation names the offending parameter") {
  CHECK_THROWS_WITH_AS(build_mess3(-0.1, 0.15), doctest::Contains("alpha"), std::domain_error);
  CHECK_THROWS_WITH_AS(build_mess3(1.1, 0.15), doctest::Contains("alpha"), std::domain_error);
  CHECK_THROWS_WITH_AS(build_mess3(0.5, 0.0), doctest::Contains("x must"), std::domain_error);
  CHECK_THROWS_WITH_AS(build_mess3(0.5, 0.6), doctest::Contains("x must"), std::domain_error);
}

TEST_CASE("stationary distribution is uniform for mess3") {
  for (const auto& [alpha, x] : std::vector<std::pair<double, double>>{
           {0.6, 0.15}, {0.2, 0.5}, {0.2, 0.15}, {0.6, 0.5}}) {
    const HmmSpec spec = build_mess3(alpha, x);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(spec.pi[std::size_t(i)] - 1.0 / 3) <= 1e-12);
  }
}

TEST_CASE("stationary residual is tiny for random parameters") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const HmmSpec spec = build_mess3(rng.uniform(0.0, 1.0), rng.uniform(1e-3, 0.5));
    const Vec3 piT = vec_mat(spec.pi, spec.marginal);
    CHECK(max_abs_diff(piT, spec.pi) <= 1e-12);
    CHECK(vec_sum(spec.pi) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("conditional matrices are row-normalized labeled matrices") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  const Mat3& c0 = conditional_matrix(spec, 0);
  // row 0: [0.42, 0.03, 0.03] / 0.48
  CHECK(at(c0, 0, 0) == doctest::Approx(0.875).epsilon(1e-14));
  CHECK(at(c0, 0, 1) == doctest::Approx(0.0625).epsilon(1e-14));
  CHECK(at(c0, 0, 2) == doctest::Approx(0.0625).epsilon(1e-14));
  // row 1: [0.09, 0.14, 0.03] / 0.26
  CHECK(at(c0, 1, 0) == doctest::Approx(0.09 / 0.26).epsilon(1e-14));
  CHECK(at(c0, 1, 1) == doctest::Approx(0.14 / 0.26).epsilon(1e-14));
  CHECK(at(c0, 1, 2) == doctest::Approx(0.03 / 0.26).epsilon(1e-14));

  for (Token z = 0; z < 3; ++z)
    for (int i = 0; i < 3; ++i) {
      double row = 0;
      for (int j = 0; j < 3; ++j) row += at(spec.conditional[z], i, j);
      CHECK(row == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("degenerate zero-row labeled matrix raises an identifying error") {
  Mat3 zero = mat3_zero();
  CHECK_THROWS_WITH_AS(conditional_matrix(zero, 1), doctest::Contains("T^(1)"), std::domain_error);
  CHECK_THROWS_WITH_AS(conditional_matrix(zero, 1), doctest::Contains("row 0"), std::domain_error);
}

TEST_CASE("sequence probabilities") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  CHECK(sequence_probability(spec, {}) == 1.0);
  CHECK(sequence_probability(spec, {0}) == doctest::Approx(1.0 / 3).epsilon(1e-14));

  // law of total probability per length
  for (int d = 1; d <= 8; ++d) {
    double total = 0;
    TokenSeq seq(std::size_t(d), 0);
    while (true) {
      total += sequence_probability(spec, seq);
      int pos = d - 1;
      while (pos >= 0 && seq[std::size_t(pos)] == 2) seq[std::size_t(pos--)] = 0;
      if (pos < 0) break;
      ++seq[std::size_t(pos)];
    }
    CHECK(std::abs(total - 1.0) <= 1e-10);
  }
}

TEST_CASE("token permutation equivariance of sequence probabilities") {
  const HmmSpec spec = build_mess3(0.35, 0.22);
  // relabel tokens and states by the cycle 0 -> 1 -> 2 -> 0
  auto cycled = [&](const TokenSeq& seq) {
    TokenSeq out;
    for (Token z : seq) out.push_back(Token((z + 1) % 3));
    return out;
  };
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    TokenSeq seq;
    const int len = 1 + int(rng.below(7));
    for (int i = 0; i < len; ++i) seq.push_back(Token(rng.below(3)));
    CHECK(sequence_probability(spec, seq) ==
          doctest::Approx(sequence_probability(spec, cycled(seq))).epsilon(1e-12));
  }
}

TEST_CASE("context enumeration counts, order, and per-length completeness") {
  const HmmSpec spec = build_mess3(0.6, 0.15);

  const auto one = enumerate_contexts(spec, 1);
  REQUIRE(one.size() == 3);
  CHECK(one[0].first == TokenSeq{0});
  CHECK(one[1].first == TokenSeq{1});
  CHECK(one[2].first == TokenSeq{2});

  CHECK(context_count(10) == 88572);
  const auto all = enumerate_contexts(spec, 6);
  CHECK(all.size() == context_count(6));

  std::map<std::size_t, double> totals;
  for (const auto& [seq, prob] : all) totals[seq.size()] += prob;
  for (const auto& [len, total] : totals) CHECK(std::abs(total - 1.0) <= 1e-10);

  // lexicographic within each length
  CHECK(all[3].first == TokenSeq{0, 0});
  CHECK(all[4].first == TokenSeq{0, 1});
  CHECK(all[11].first == TokenSeq{2, 2});

  CHECK_THROWS_AS(enumerate_contexts(spec, 13), std::length_error);
  CHECK_THROWS_AS(enumerate_contexts(spec, 0), std::length_error);
}

TEST_CASE("sampling is deterministic per seed and token-uniform on average") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  Rng a(42), b(42);
  const TokenSeq s1 = sample_sequence(spec, a, 10);
  const TokenSeq s2 = sample_sequence(spec, b, 10);
  CHECK(s1 == s2);
  CHECK(s1.size() == 10);

  Rng c(7);
  CHECK(sample_sequence(spec, c, 1).size() == 1);

  Rng mc(123);
  std::array<int, 3> counts{0, 0, 0};
  const int n = 100000;
  const TokenSeq big = sample_sequence(spec, mc, n);
  for (Token z : big) counts[z]++;
  for (int z = 0; z < 3; ++z)
    CHECK(std::abs(double(counts[std::size_t(z)]) / n - 1.0 / 3) <= 0.01);
}

TEST_CASE("spec JSON round trip and CSV export") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  const HmmSpec back = HmmSpec::from_json(spec.to_json());
  CHECK(back.alpha == spec.alpha);
  CHECK(back.x == spec.x);
  for (int z = 0; z < 3; ++z)
    CHECK(max_abs_diff(back.labeled[std::size_t(z)], spec.labeled[std::size_t(z)]) <= 1e-15);

  const auto csv = contexts_to_csv(enumerate_contexts(spec, 2));
  CHECK(csv.starts_with("seq,length,probability\n"));
  CHECK(csv.find("\n00,2,") != std::string::npos);
}
