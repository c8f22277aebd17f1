#include "deptharb/gradcheck.hpp"
#include "deptharb/surrogate.hpp"

#include "support/reference.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace deptharb;

namespace {

// Test-local renderer, written from the blob formula.
ref::Maps reference_render(const LatentStateXd& z, const SceneSpec& s, Eigen::Index perturbed = -1,
                           long double delta = 0) {
  ref::Maps m;
  m.h = s.grid_height;
  m.w = s.grid_width;
  auto param = [&](Eigen::Index k) {
    return static_cast<long double>(z.param(k)) + (k == perturbed ? delta : 0.0L);
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::vector<ref::Real> v(static_cast<std::size_t>(m.h * m.w));
    for (int y = 0; y < m.h; ++y)
      for (int x = 0; x < m.w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y * m.w + x);
        if (z.mode == LatentMode::raster) {
          v[p] = std::exp(param(static_cast<Eigen::Index>(i * v.size() + p)));
        } else {
          const Eigen::Index b = static_cast<Eigen::Index>(i) * 5;
          const long double u = (x + 0.5L) / m.w - param(b + 0), w = (y + 0.5L) / m.h - param(b + 1);
          const long double sx = std::exp(param(b + 2)), sy = std::exp(param(b + 3));
          v[p] = std::exp(param(b + 4)) * std::exp(-(u * u / (2 * sx * sx) + w * w / (2 * sy * sy)));
        }
      }
    m.a.push_back(std::move(v));
  }
  return m;
}

SceneSpec one_box(int h, int w, const BBox& b) {
  SceneSpec s;
  s.grid_height = h;
  s.grid_width = w;
  s.objects = {{0, "o", b, 0.5}};
  return s;
}

}  // namespace

TEST_CASE("init_latent") {
  const SceneSpec s = random_scene(1, 2, 8, 8);
  for (LatentMode mode : {LatentMode::raster, LatentMode::blob}) {
    CHECK(init_latent(s, mode, 17) == init_latent(s, mode, 17));
    CHECK(!(init_latent(s, mode, 17) == init_latent(s, mode, 18)));
  }

  const LatentStateXd r = init_latent(s, LatentMode::raster, 3);
  REQUIRE(r.logits.size() == 2);
  CHECK(r.parameter_count() == 128);
  for (const auto& l : r.logits) {
    CHECK(l.minCoeff() >= -1.0);
    CHECK(l.maxCoeff() <= 1.0);
  }

  const LatentStateXd b = init_latent(one_box(8, 8, {0.2, 0.2, 0.6, 0.6}), LatentMode::blob, std::nullopt);
  CHECK(b.blobs(0, center_x) == doctest::Approx(0.4));
  CHECK(b.blobs(0, center_y) == doctest::Approx(0.4));
  CHECK(std::exp(b.blobs(0, log_sigma_x)) == doctest::Approx(0.1));
  CHECK(std::exp(b.blobs(0, log_sigma_y)) == doctest::Approx(0.1));
  CHECK(b.blobs(0, log_amplitude) == 0.0);

  const LatentStateXd j = init_latent(one_box(8, 8, {0.2, 0.2, 0.6, 0.6}), LatentMode::blob, 99);
  CHECK(std::abs(j.blobs(0, center_x) - 0.4) <= 0.05);
  CHECK(std::abs(j.blobs(0, center_y) - 0.4) <= 0.05);
}

TEST_CASE("render_attention") {
  const SceneSpec s = one_box(9, 9, {0.1, 0.1, 0.9, 0.9});
  LatentStateXd z = init_latent(s, LatentMode::blob, std::nullopt);
  z.blobs.row(0) << 0.5, 0.5, std::log(0.1), std::log(0.1), 0.0;
  const AttentionFieldXd f = render_attention(z, s);
  CHECK(f.maps[0](4, 4) == doctest::Approx(1.0).epsilon(1e-15));
  // Oracle: exp(-(5.5/9 - 0.5)^2 / (2 * 0.01)) in long double.
  const long double u = 5.5L / 9.0L - 0.5L;
  const double oracle = double(std::exp(-(u * u) / 0.02L));
  CHECK(f.maps[0](4, 5) == doctest::Approx(oracle).epsilon(1e-14));
  CHECK(std::abs(f.maps[0](4, 5) - 0.53941) < 1e-5);

  LatentStateXd r = init_latent(s, LatentMode::raster, std::nullopt);
  CHECK((render_attention(r, s).maps[0].array() == 1.0).all());

  const SceneSpec two = random_scene(2, 2, 9, 9);
  CHECK_THROWS_AS(render_attention(r, two), InputError);
}

TEST_CASE("rendered maps are strictly positive and finite") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 3.0);
  const SceneSpec s = random_scene(4, 3, 16, 16);
  for (LatentMode mode : {LatentMode::raster, LatentMode::blob}) {
    for (int trial = 0; trial < 5; ++trial) {
      LatentStateXd z = init_latent(s, mode, 5);
      for (Eigen::Index k = 0; k < z.parameter_count(); ++k) z.param(k) += mode == LatentMode::raster ? n(rng) : 0.1 * n(rng);
      for (const auto& m : render_attention(z, s).maps) {
        CHECK(m.allFinite());
        CHECK(m.minCoeff() > 0.0);
      }
    }
  }
}

TEST_CASE("backprop_to_latent") {
  const SceneSpec s = random_scene(6, 2, 8, 8);
  for (LatentMode mode : {LatentMode::raster, LatentMode::blob}) {
    const LatentStateXd z = init_latent(s, mode, 1);
    GradField<double> zero{GridXd::Zero(8, 8), GridXd::Zero(8, 8)};
    const LatentStateXd g = backprop_to_latent(z, s, zero);
    for (Eigen::Index k = 0; k < g.parameter_count(); ++k) CHECK(g.param(k) == 0.0);
  }

  const LatentStateXd z = init_latent(s, LatentMode::raster, 1);
  GradField<double> one{GridXd::Zero(8, 8), GridXd::Zero(8, 8)};
  one[1](2, 5) = 0.7;
  const LatentStateXd g = backprop_to_latent(z, s, one);
  CHECK(g.logits[1](2, 5) == doctest::Approx(0.7 * std::exp(z.logits[1](2, 5))).epsilon(1e-15));
  CHECK(g.logits[1].cwiseAbs().sum() == doctest::Approx(std::abs(g.logits[1](2, 5))));
  CHECK(g.logits[0].isZero(0.0));

  CHECK_THROWS_AS(backprop_to_latent(z, s, GradField<double>{GridXd::Zero(8, 8)}), InputError);
}

TEST_CASE("blob backprop matches finite differences on all parameters") {
  const SceneSpec s = one_box(20, 20, {0.2, 0.3, 0.7, 0.8});
  const LatentStateXd z = init_latent(s, LatentMode::blob, 4);
  // phi(z) = sum G * A(z) for a fixed random G, so d phi / dz = backprop(G).
  GridXd G = random_field(s, 8).maps[0].array() - 1.0;
  const LatentStateXd analytic = backprop_to_latent(z, s, GradField<double>{G});
  auto phi = [&](Eigen::Index k, long double d) {
    const ref::Maps m = reference_render(z, s, k, d);
    long double acc = 0;
    for (std::size_t p = 0; p < m.a[0].size(); ++p) acc += static_cast<long double>(G.data()[p]) * m.a[0][p];
    return acc;
  };
  for (Eigen::Index k = 0; k < 5; ++k) {
    const double numeric = double((phi(k, 1e-6L) - phi(k, -1e-6L)) / 2e-6L);
    const double a = analytic.param(k);
    CHECK(std::abs(a - numeric) <= 1e-5 * std::max(std::abs(a), std::abs(numeric)));
  }
}

TEST_CASE("end-to-end latent gradient matches finite differences") {
  std::mt19937_64 rng(77);
  for (LatentMode mode : {LatentMode::raster, LatentMode::blob}) {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      GuidanceConfig cfg;
      const SceneSpec s = random_scene(seed + 60, 3, 12, 12);
      const auto pairs = derive_occlusion_pairs(s);
      const LossContext<double> ctx(s, pairs);
      const LatentStateXd z = init_latent(s, mode, seed);
      const ref::Params rp{cfg.lambda0, cfg.alpha, cfg.tau, cfg.lambda_ortho, cfg.lambda_compact, cfg.epsilon};
      for (Stage st : {Stage::one, Stage::two}) {
        const AttentionFieldXd f = render_attention(z, s);
        const LatentStateXd g = backprop_to_latent(z, s, f, grad_staged_loss(f, ctx, cfg, st));
        std::uniform_int_distribution<Eigen::Index> pick(0, z.parameter_count() - 1);
        const int n = mode == LatentMode::blob ? static_cast<int>(z.parameter_count()) : 60;
        for (int t = 0; t < n; ++t) {
          const Eigen::Index k = mode == LatentMode::blob ? t : pick(rng);
          // Five-point stencil: log-amplitude gradients are ~1e-10 (the losses are
          // nearly scale invariant), below the noise floor of a 1e-6 central difference.
          auto L = [&](long double d) {
            return ref::total_loss(s, reference_render(z, s, k, d), rp, static_cast<int>(st));
          };
          const long double h = 1e-3L;
          const double numeric = double((L(-2 * h) - 8 * L(-h) + 8 * L(h) - L(2 * h)) / (12 * h));
          const double a = g.param(k);
          const double scale = std::max(std::abs(a), std::abs(numeric));
          CAPTURE(k);
          if (scale > 1e-10)
            CHECK(std::abs(a - numeric) <= 1e-5 * scale);
          else
            CHECK(std::abs(a - numeric) <= 1e-9);
        }
      }
    }
  }
}

TEST_CASE("blob translation shifts the spatial mean") {
  const SceneSpec s = one_box(64, 64, {0.3, 0.3, 0.7, 0.7});
  LatentStateXd z = init_latent(s, LatentMode::blob, std::nullopt);
  z.blobs(0, log_sigma_x) = std::log(0.06);
  z.blobs(0, log_sigma_y) = std::log(0.06);
  const CoordGrid<double> c(64, 64);
  auto mean_x = [&](const LatentStateXd& state) {
    return spatial_mean(normalize_map(render_attention(state, s).maps[0], 1e-8), c).x;
  };
  const double base = mean_x(z);
  for (double delta : {-0.1, -0.03, 0.05, 0.12}) {
    LatentStateXd moved = z;
    moved.blobs(0, center_x) += delta;
    CHECK(std::abs(mean_x(moved) - base - delta) <= 1.0 / 64);
  }
}
