#include <doctest.h>

#include <cmath>

#include "mess3/spectral.hpp"

using namespace mess3;

namespace {

void check_projector_algebra(const SpectralDecomp& sd, const Mat3& marginal) {
  Mat3 sum = mat3_zero(), recon = mat3_zero();
  for (std::size_t i = 0; i < sd.projectors.size(); ++i) {
    sum = mat3_add(sum, sd.projectors[i]);
    recon = mat3_add(recon, mat3_scale(sd.projectors[i], sd.eigenvalues[i].value.real()));
  }
  CHECK(max_abs_diff(sum, mat3_identity()) <= 1e-10);
  CHECK(max_abs_diff(recon, marginal) <= 1e-10);
  for (std::size_t i = 0; i < sd.projectors.size(); ++i)
    for (std::size_t j = 0; j < sd.projectors.size(); ++j) {
      const Mat3 prod = mat3_mul(sd.projectors[i], sd.projectors[j]);
      const Mat3 expect = (i == j) ? sd.projectors[i] : mat3_zero();
      CHECK(max_abs_diff(prod, expect) <= 1e-9);
    }
}

}  // namespace

TEST_CASE("mess3 spectrum: zeta = 1 - 3x with multiplicity 2") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  const SpectralDecomp sd = decompose(spec);
  REQUIRE(sd.eigenvalues.size() == 2);
  CHECK(sd.eigenvalues[0].value.real() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sd.eigenvalues[0].multiplicity == 1);
  CHECK(sd.eigenvalues[1].value.real() == doctest::Approx(0.55).epsilon(1e-12));
  CHECK(sd.eigenvalues[1].multiplicity == 2);
  CHECK(sd.zeta() == doctest::Approx(0.55).epsilon(1e-12));

  // T_1 = 1 pi and T_zeta = I - 1 pi
  CHECK(max_abs_diff(sd.projectors[0], ones_outer(spec.pi)) <= 1e-12);
  CHECK(max_abs_diff(sd.projectors[1], mat3_sub(mat3_identity(), ones_outer(spec.pi))) <= 1e-12);
  check_projector_algebra(sd, spec.marginal);

  CHECK(decompose(build_mess3(0.6, 1.0 / 3)).zeta() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(decompose(build_mess3(0.6, 0.5)).zeta() == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("pi annihilates every non-unit projector") {
  for (const auto& [alpha, x] :
       std::vector<std::pair<double, double>>{{0.2, 0.15}, {0.6, 0.15}, {0.2, 0.5}, {0.6, 0.5}}) {
    const HmmSpec spec = build_mess3(alpha, x);
    const SpectralDecomp sd = decompose(spec);
    for (std::size_t i = 0; i < sd.eigenvalues.size(); ++i) {
      if (std::abs(sd.eigenvalues[i].value.real() - 1.0) <= 1e-12) continue;
      const Vec3 v = vec_mat(spec.pi, sd.projectors[i]);
      CHECK(vec_norm(v) <= 1e-10);
    }
  }
}

TEST_CASE("generic eigen path handles non-mess3 stochastic matrices") {
  // build an asymmetric labeled family: perturb mess3 rows and renormalize
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    std::array<Mat3, 3> labeled;
    for (int z = 0; z < 3; ++z)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) at(labeled[std::size_t(z)], i, j) = rng.uniform(0.01, 1.0);
    // normalize so the marginal is row-stochastic
    for (int i = 0; i < 3; ++i) {
      double row = 0;
      for (int z = 0; z < 3; ++z)
        for (int j = 0; j < 3; ++j) row += at(labeled[std::size_t(z)], i, j);
      for (int z = 0; z < 3; ++z)
        for (int j = 0; j < 3; ++j) at(labeled[std::size_t(z)], i, j) /= row;
    }
    const HmmSpec spec = hmm_from_labeled(labeled);
    const SpectralDecomp sd = decompose(spec);
    if (sd.has_complex) continue;  // projector algebra only defined for real spectra here
    check_projector_algebra(sd, spec.marginal);
  }
}

TEST_CASE("spectral constrained form equals the direct rownorm form") {
  for (const auto& [alpha, x] : std::vector<std::pair<double, double>>{{0.6, 0.15}, {0.6, 0.5}}) {
    const HmmSpec spec = build_mess3(alpha, x);
    const SpectralDecomp sd = decompose(spec);
    double max_diff = 0;
    for (const auto& [seq, prob] : enumerate_contexts(spec, 8)) {
      const Vec3 spectral = spectral_constrained_belief(spec, sd, seq).coords;
      const Vec3 direct = constrained_belief(spec, seq, ConstrainedVariant::rownorm).coords;
      max_diff = std::max(max_diff, max_abs_diff(spectral, direct));
    }
    CHECK(max_diff <= 1e-10);
  }
}

TEST_CASE("spectral constrained belief at one token and at zeta = 0") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  const Vec3 one = spectral_constrained_belief(spec, {0}).coords;
  CHECK(one[0] == doctest::Approx(0.52243589743589747).epsilon(1e-12));
  CHECK(one[1] == doctest::Approx(0.23878205128205127).epsilon(1e-12));

  // x = 1/3: zeta = 0, only the last token matters
  const HmmSpec boundary = build_mess3(0.6, 1.0 / 3);
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSeq seq;
    const int len = 2 + int(rng.below(6));
    for (int i = 0; i < len; ++i) seq.push_back(Token(rng.below(3)));
    const Vec3 full_ctx = spectral_constrained_belief(boundary, seq).coords;
    const Vec3 last_only = spectral_constrained_belief(boundary, {seq.back()}).coords;
    CHECK(max_abs_diff(full_ctx, last_only) <= 1e-12);
  }
}

TEST_CASE("single-head attention prediction") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  const AttentionPrediction pred = predict_attention(spec, 10);
  CHECK(pred.head_count == 1);
  CHECK(pred.zeta == doctest::Approx(0.55).epsilon(1e-12));
  const Matrix& A = pred.pattern[0];

  // rows are distributions; d = 1 attends only to itself
  CHECK(A(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  for (int d = 1; d <= 10; ++d) {
    double row = 0;
    for (int s = 1; s <= d; ++s) {
      CHECK(A(std::size_t(d - 1), std::size_t(s - 1)) >= 0.0);
      row += A(std::size_t(d - 1), std::size_t(s - 1));
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    for (int s = d + 1; s <= 10; ++s) CHECK(A(std::size_t(d - 1), std::size_t(s - 1)) == 0.0);
  }

  // within a row, consecutive sources keep the exact ratio zeta
  for (int d = 2; d <= 10; ++d)
    for (int s = 1; s < d; ++s)
      CHECK(A(std::size_t(d - 1), std::size_t(s - 1)) /
                A(std::size_t(d - 1), std::size_t(s)) ==
            doctest::Approx(0.55).epsilon(1e-12));

  // the geometric recurrence holds exactly on the unnormalized profile
  auto Z = [&](int d) {
    double z = 0;
    for (int n = 0; n < d; ++n) z += std::pow(0.55, n);
    return z;
  };
  for (int s = 1; s <= 8; ++s)
    for (int d = s + 1; d <= 9; ++d)
      CHECK(A(std::size_t(d), std::size_t(s - 1)) * Z(d + 1) ==
            doctest::Approx(0.55 * A(std::size_t(d - 1), std::size_t(s - 1)) * Z(d)).epsilon(1e-12));

  CHECK_THROWS_AS(predict_attention(build_mess3(0.6, 0.5), 10), std::domain_error);

  // zeta = 0 boundary: attention collapses onto the diagonal
  const AttentionPrediction boundary = predict_attention(build_mess3(0.6, 1.0 / 3), 5);
  for (int d = 1; d <= 5; ++d) {
    CHECK(boundary.pattern[0](std::size_t(d - 1), std::size_t(d - 1)) == 1.0);
    for (int s = 1; s < d; ++s) CHECK(boundary.pattern[0](std::size_t(d - 1), std::size_t(s - 1)) == 0.0);
  }
}

TEST_CASE("OV and embedding predictions, single head") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  const AttentionPrediction anchors = predict_attention(spec, 10);
  const OvEmbedPrediction pred = predict_ov_and_embeddings(spec, anchors);
  CHECK(pred.head_count == 1);

  for (const auto& e : pred.entries) {
    CHECK(std::abs(vec_sum(e.ov)) <= 1e-12);         // zero-sum: stays in the simplex plane
    CHECK(std::abs(vec_sum(e.embedding)) <= 1e-12);
  }

  // same-token OV vectors at different positions are parallel
  for (Token z = 0; z < 3; ++z) {
    Vec3 first{};
    bool have_first = false;
    for (const auto& e : pred.entries) {
      if (e.token != z) continue;
      if (!have_first) {
        first = e.ov;
        have_first = true;
        continue;
      }
      const double cos = vec_dot(first, e.ov) / (vec_norm(first) * vec_norm(e.ov));
      CHECK(std::abs(cos) == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  // direction for token 0 is proportional to (2, -1, -1)
  const auto& e0 = pred.entries.front();
  REQUIRE(e0.token == 0);
  CHECK(e0.ov[0] / e0.ov[1] == doctest::Approx(-2.0).epsilon(1e-10));
  CHECK(e0.ov[1] == doctest::Approx(e0.ov[2]).epsilon(1e-12));
  CHECK(e0.ov[0] > 0.0);

  // zeta = 0: anchor is zero, prediction must refuse
  const HmmSpec boundary = build_mess3(0.6, 1.0 / 3);
  CHECK_THROWS_AS(predict_ov_and_embeddings(boundary, predict_attention(boundary, 5)),
                  std::domain_error);
}

TEST_CASE("two-head prediction in the oscillatory regime") {
  const HmmSpec spec = build_mess3(0.6, 0.5);
  CHECK_THROWS_AS(predict_two_heads(build_mess3(0.6, 0.15), 10), std::domain_error);
  const AttentionPrediction pred = predict_two_heads(spec, 10);
  CHECK(pred.head_count == 2);
  CHECK(pred.zeta == doctest::Approx(-0.5).epsilon(1e-12));

  // signed lag profile is zeta^n
  for (int n = 0; n < 4; ++n)
    CHECK(pred.signed_profile[std::size_t(n)] == doctest::Approx(std::pow(-0.5, n)).epsilon(1e-12));

  for (int h = 0; h < 2; ++h) {
    const Matrix& A = pred.pattern[std::size_t(h)];
    for (int d = 1; d <= 10; ++d) {
      double row = 0;
      for (int s = 1; s <= d; ++s) {
        CHECK(A(std::size_t(d - 1), std::size_t(s - 1)) >= 0.0);
        row += A(std::size_t(d - 1), std::size_t(s - 1));
      }
      CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  // off-diagonal parity masks are complementary
  for (int d = 2; d <= 10; ++d)
    for (int s = 1; s < d; ++s) {
      const int lag = d - s;
      const double head1 = pred.pattern[0](std::size_t(d - 1), std::size_t(s - 1));
      const double head2 = pred.pattern[1](std::size_t(d - 1), std::size_t(s - 1));
      if (lag % 2 == 0) {
        CHECK(head1 > 0.0);
        CHECK(head2 == 0.0);
      } else {
        CHECK(head2 > 0.0);
        CHECK(head1 == 0.0);
      }
      // the signed combination reproduces zeta^{d-s} exactly off the diagonal
      CHECK(head1 - head2 == doctest::Approx(std::pow(-0.5, lag)).epsilon(1e-12));
    }

  // per-head recurrence A_{d+2m,s} = zeta^{2m} A_{d,s} holds exactly off-diagonal
  for (int h = 0; h < 2; ++h)
    for (int s = 1; s <= 6; ++s)
      for (int d = s + 1; d + 2 <= 10; ++d) {
        const double lhs = pred.pattern[std::size_t(h)](std::size_t(d + 1), std::size_t(s - 1));
        const double rhs = 0.25 * pred.pattern[std::size_t(h)](std::size_t(d - 1), std::size_t(s - 1));
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
      }

  // opposite OV directions with matching magnitudes
  const OvEmbedPrediction ov = predict_ov_and_embeddings(spec, pred);
  for (std::size_t i = 0; i + 1 < ov.entries.size(); i += 2) {
    const auto& h1 = ov.entries[i];
    const auto& h2 = ov.entries[i + 1];
    REQUIRE(h1.head == 1);
    REQUIRE(h2.head == 2);
    CHECK(h1.token == h2.token);
    const double cos = vec_dot(h1.ov, h2.ov) / (vec_norm(h1.ov) * vec_norm(h2.ov));
    CHECK(cos == doctest::Approx(-1.0).epsilon(1e-9));
  }
}

TEST_CASE("two-head regime boundary") {
  CHECK_FALSE(requires_two_heads(0.15));
  CHECK(requires_two_heads(0.5));
  CHECK_FALSE(requires_two_heads(1.0 / 3));
  CHECK_THROWS_AS(requires_two_heads(0.0), std::domain_error);
}

TEST_CASE("attention CSV schema") {
  const HmmSpec spec = build_mess3(0.6, 0.15);
  const std::string csv = attention_to_csv(predict_attention(spec, 3));
  CHECK(csv.starts_with("dest,src,head,value\n"));
  CHECK(csv.find("1,1,1,1\n") != std::string::npos);
}
