#include "deptharb/gradcheck.hpp"
#include "deptharb/losses.hpp"

#include "support/reference.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace deptharb;

namespace {

SceneSpec single(const BBox& box, double depth, int h, int w) {
  SceneSpec s;
  s.grid_height = h;
  s.grid_width = w;
  s.objects = {{0, "obj", box, depth}};
  return s;
}

ref::Maps to_reference(const AttentionFieldXd& f) {
  ref::Maps m;
  m.h = static_cast<int>(f.height());
  m.w = static_cast<int>(f.width());
  for (const auto& g : f.maps) {
    std::vector<ref::Real> v(static_cast<std::size_t>(g.size()));
    for (Eigen::Index k = 0; k < g.size(); ++k) v[static_cast<std::size_t>(k)] = g.data()[k];
    m.a.push_back(std::move(v));
  }
  return m;
}

ref::Params to_reference(const GuidanceConfig& c) {
  return {c.lambda0, c.alpha, c.tau, c.lambda_ortho, c.lambda_compact, c.epsilon};
}

}  // namespace

TEST_CASE("attention_energies") {
  const MaskGrid box = rasterize_mask({0, 0, 0.5, 0.5}, 4, 4);
  const auto e = attention_energies<double>(GridXd::Ones(4, 4), box);
  CHECK(e.e_in == 4.0);
  CHECK(e.e_out == 12.0);

  const auto z = attention_energies<double>(GridXd::Zero(4, 4), box);
  CHECK(z.e_in == 0.0);
  CHECK(z.e_out == 0.0);

  GridXd delta = GridXd::Zero(4, 4);
  delta(1, 1) = 3.0;
  const auto d = attention_energies(delta, box);
  CHECK(d.e_in == 3.0);
  CHECK(d.e_out == 0.0);

  CHECK_THROWS_AS(attention_energies<double>(GridXd::Ones(3, 4), box), InputError);
}

TEST_CASE("energies sum to the total mass") {
  const SceneSpec s = random_scene(4, 3, 32, 32);
  const auto masks = scene_masks(s);
  // Multiples of 1/1024 keep every partial sum exact.
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> q(0, 2048);
  for (int trial = 0; trial < 10; ++trial) {
    GridXd a(32, 32);
    for (Eigen::Index k = 0; k < a.size(); ++k) a.data()[k] = q(rng) / 1024.0;
    const auto e = attention_energies(a, masks[trial % 3]);
    CHECK(e.e_in + e.e_out == ordered_sum(a));
  }
  const AttentionFieldXd f = random_field(s, 2);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const auto e = attention_energies(f.maps[i], masks[i]);
    const double total = ordered_sum(f.maps[i]);
    CHECK(std::abs(e.e_in + e.e_out - total) <= 1e-14 * total);
  }
}

TEST_CASE("alignment_ratio") {
  CHECK(alignment_ratio(4.0, 12.0, 1e-8) == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(alignment_ratio(0.0, 7.0, 1e-8) == 0.0);
  const double near_one = alignment_ratio(16.0, 0.0, 1e-8);
  CHECK(near_one < 1.0);
  CHECK(std::abs(near_one - 0.9999999994) < 1e-10);
}

TEST_CASE("loss_align") {
  GuidanceConfig cfg;
  // Uniform 4x4 with a 2x2 box gives f = 0.25.
  const SceneSpec s = single({0, 0, 0.5, 0.5}, 1.0, 4, 4);
  const AttentionFieldXd u{{GridXd::Ones(4, 4)}};
  CHECK(loss_align(u, s, cfg) == doctest::Approx(0.5625).epsilon(1e-9));

  const SceneSpec zero_depth = single({0, 0, 0.5, 0.5}, 0.0, 4, 4);
  CHECK(loss_align(u, zero_depth, cfg) == 0.0);

  // Two objects with f = 0.5 and d = 0.5.
  SceneSpec two;
  two.grid_height = 2;
  two.grid_width = 4;
  two.objects = {{0, "l", {0, 0, 0.5, 1}, 0.5}, {1, "r", {0.5, 0, 1, 1}, 0.5}};
  const AttentionFieldXd half{{GridXd::Ones(2, 4), GridXd::Ones(2, 4)}};
  CHECK(loss_align(half, two, cfg) == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("interference") {
  const MaskGrid m = rasterize_mask({0, 0, 0.5, 0.5}, 4, 4);
  CHECK(interference<double>(GridXd::Ones(4, 4), m, 1e-8) == doctest::Approx(4.0 / (4.0 + 1e-8)).epsilon(1e-15));
  CHECK(interference<double>(GridXd::Zero(4, 4), m, 1e-8) == 0.0);
  GridXd inside = GridXd::Zero(4, 4);
  inside.topLeftCorner(2, 2).setConstant(0.5);
  CHECK(interference(inside, m, 1e-8) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK_THROWS_AS(interference<double>(GridXd::Ones(4, 5), m, 1e-8), InputError);
}

TEST_CASE("arbitration_weight") {
  GuidanceConfig cfg;
  CHECK(arbitration_weight(0.3, 0.3, cfg) == 0.5);
  // Oracle: long double exp.
  const long double e = std::exp(1.0L);
  CHECK(arbitration_weight(0.0, 1.0, cfg) == doctest::Approx(double(0.5L * e)).epsilon(1e-15));
  CHECK(arbitration_weight(1.0, 0.0, cfg) == doctest::Approx(double(0.5L / e)).epsilon(1e-15));
  CHECK(std::abs(arbitration_weight(0.0, 1.0, cfg) - 1.359141) < 1e-6);
  CHECK(std::abs(arbitration_weight(1.0, 0.0, cfg) - 0.183940) < 1e-6);
}

TEST_CASE("arbitration_weight is strictly increasing in the depth gap") {
  GuidanceConfig cfg;
  cfg.alpha = 1.7;
  cfg.tau = 0.6;
  double prev = 0.0;
  for (int k = -10; k <= 10; ++k) {
    const double w = arbitration_weight(0.5, 0.5 + k * 0.05, cfg);
    CHECK(w > prev);
    prev = w;
  }
  CHECK(arbitration_weight(0.42, 0.42, cfg) == cfg.lambda0);
}

TEST_CASE("loss_ortho") {
  GuidanceConfig cfg;
  SceneSpec s;
  s.grid_height = s.grid_width = 8;
  s.objects = {{0, "fg", {0, 0, 0.5, 0.5}, 0.2}, {1, "bg", {0.25, 0.25, 1, 1}, 0.8}};
  const auto pairs = derive_occlusion_pairs(s);
  REQUIRE(pairs.size() == 1);

  const AttentionFieldXd bg_ones{{GridXd::Zero(8, 8), GridXd::Ones(8, 8)}};
  CHECK(loss_ortho(bg_ones, s, {}, cfg) == 0.0);

  // I = 16 / (16 + eps); oracle for the weight is 0.5 e^0.6 in long double.
  const double expected = double(0.5L * std::exp(0.6L) * (16.0L / (16.0L + 1e-8L)));
  CHECK(loss_ortho(bg_ones, s, pairs, cfg) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(std::abs(loss_ortho(bg_ones, s, pairs, cfg) - 0.911059) < 1e-6);

  const AttentionFieldXd bg_zero{{GridXd::Ones(8, 8), GridXd::Zero(8, 8)}};
  CHECK(loss_ortho(bg_zero, s, pairs, cfg) == 0.0);

  CHECK_THROWS_AS(loss_ortho(bg_ones, s, {{0, 7}}, cfg), InputError);
}

TEST_CASE("spatial_mean and spatial_variance") {
  const CoordGrid<double> c8(8, 8);
  GridXd delta = GridXd::Zero(8, 8);
  delta(1, 2) = 1.0;
  const GridXd nd = normalize_map(delta, 1e-8);
  const auto mu = spatial_mean(nd, c8);
  CHECK(mu.x == doctest::Approx(0.3125).epsilon(1e-8));
  CHECK(mu.y == doctest::Approx(0.1875).epsilon(1e-8));
  CHECK(spatial_variance(nd, c8, mu) == doctest::Approx(0.0).epsilon(1e-12));

  const GridXd nu = normalize_map<double>(GridXd::Ones(8, 8), 1e-8);
  const auto mu_u = spatial_mean(nu, c8);
  CHECK(mu_u.x == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(mu_u.y == doctest::Approx(0.5).epsilon(1e-8));

  // Brute-force oracle: Var = 1/(2N^2) sum_a sum_b |p_a - p_b|^2 over all pixel pairs.
  long double pairwise = 0;
  for (int a = 0; a < 64; ++a)
    for (int b = 0; b < 64; ++b) {
      const long double dx = ((a % 8) - (b % 8)) / 8.0L, dy = ((a / 8) - (b / 8)) / 8.0L;
      pairwise += dx * dx + dy * dy;
    }
  const long double oracle = pairwise / (2.0L * 64 * 64);
  const double var_u = spatial_variance(nu, c8, mu_u);
  CHECK(std::abs(var_u - double(oracle)) < 1e-6);
  CHECK(std::abs(var_u - 0.16406) < 1e-5);

  const auto mu0 = spatial_mean<double>(GridXd::Zero(8, 8), c8);
  CHECK(mu0.x == 0.0);
  CHECK(mu0.y == 0.0);

  // Two equal deltas at x = 0.25 and x = 0.75 on a 1x2 grid: each sits
  // 0.25 from the mean with weight 1/2, so Var = 0.0625.
  const CoordGrid<double> c12(1, 2);
  const GridXd two = normalize_map<double>(GridXd::Ones(1, 2), 1e-8);
  const auto mu2 = spatial_mean(two, c12);
  long double brute = 0;
  for (int k = 0; k < 2; ++k) brute += 0.5L * (0.25L + 0.5L * k - 0.5L) * (0.25L + 0.5L * k - 0.5L);
  CHECK(spatial_variance(two, c12, mu2) == doctest::Approx(double(brute)).epsilon(1e-7));
  CHECK(double(brute) == 0.0625);
}

TEST_CASE("loss_compact") {
  GuidanceConfig cfg;
  // Uniform 2x2 has Var = 0.0625 + 0.0625 = 0.125.
  const SceneSpec s = single({0, 0, 1, 1}, 0.5, 2, 2);
  const AttentionFieldXd u{{GridXd::Ones(2, 2)}};
  CHECK(loss_compact(u, s, cfg) == doctest::Approx(0.0625).epsilon(1e-7));

  GridXd delta = GridXd::Zero(2, 2);
  delta(0, 1) = 4.0;
  CHECK(loss_compact(AttentionFieldXd{{delta}}, s, cfg) == doctest::Approx(0.0).epsilon(1e-12));

  const SceneSpec zero_depth = single({0, 0, 1, 1}, 0.0, 2, 2);
  CHECK(loss_compact(u, zero_depth, cfg) == 0.0);
}

TEST_CASE("staged totals") {
  GuidanceConfig cfg;
  CHECK(staged_total(0.5625, 1.0, 0.0625, cfg, Stage::one) == doctest::Approx(1.075).epsilon(1e-14));
  CHECK(staged_total(0.5625, 1.0, 0.0625, cfg, Stage::two) == doctest::Approx(0.575).epsilon(1e-14));

  SceneSpec s = random_scene(3, 3, 8, 8);
  const auto pairs = derive_occlusion_pairs(s);
  AttentionFieldXd zero{{GridXd::Zero(8, 8), GridXd::Zero(8, 8), GridXd::Zero(8, 8)}};
  const auto b = staged_loss(zero, s, pairs, cfg, Stage::one);
  double depth_sum = 0;
  for (const auto& o : s.objects) depth_sum += o.depth;
  CHECK(b.align == doctest::Approx(depth_sum).epsilon(1e-15));
  CHECK(b.ortho == 0.0);
  CHECK(b.compact == 0.0);
}

TEST_CASE("breakdown totals and ranges on random inputs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    GuidanceConfig cfg;
    const SceneSpec s = random_scene(seed, 2 + static_cast<int>(seed % 3), 16, 16);
    const auto pairs = derive_occlusion_pairs(s);
    const AttentionFieldXd f = random_field(s, seed + 100);
    for (Stage st : {Stage::one, Stage::two}) {
      const auto b = staged_loss(f, s, pairs, cfg, st);
      const double expected = st == Stage::one ? b.align + cfg.lambda_ortho * b.ortho + cfg.lambda_compact * b.compact
                                               : b.align + cfg.lambda_compact * b.compact;
      CHECK(std::abs(b.total - expected) <= 1e-12);
      CHECK(b.align >= 0.0);
      CHECK(b.ortho >= 0.0);
      CHECK(b.compact >= 0.0);
      for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(b.f[i] >= 0.0);
        CHECK(b.f[i] < 1.0);
        CHECK(b.var[i] >= 0.0);
        CHECK(b.e_in[i] >= 0.0);
        CHECK(b.e_out[i] >= 0.0);
      }
      CHECK(b.interference.size() == pairs.size());
    }
  }
}

TEST_CASE("scaling a map by c") {
  GuidanceConfig cfg;
  const SceneSpec s = random_scene(21, 3, 24, 24);
  const auto pairs = derive_occlusion_pairs(s);
  REQUIRE(!pairs.empty());
  const AttentionFieldXd f = random_field(s, 4);
  for (double c : {0.5, 3.0, 40.0}) {
    AttentionFieldXd scaled = f;
    for (auto& m : scaled.maps) m *= c;
    const auto b0 = staged_loss(f, s, pairs, cfg, Stage::one);
    const auto b1 = staged_loss(scaled, s, pairs, cfg, Stage::one);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double bound = cfg.epsilon / std::min(ordered_sum(f.maps[i]), ordered_sum(scaled.maps[i]));
      CHECK(std::abs(b1.f[i] - b0.f[i]) <= bound);
      CHECK(std::abs(b1.var[i] - b0.var[i]) <= bound);
    }
    for (std::size_t k = 0; k < pairs.size(); ++k)
      CHECK(std::abs(b1.interference[k] - c * b0.interference[k]) <= 1e-14 * c * b0.interference[k]);
    CHECK(std::abs(b1.ortho - c * b0.ortho) <= 1e-14 * c * b0.ortho);
  }
}

TEST_CASE("worked gradient entries") {
  GuidanceConfig cfg;
  const SceneSpec s = single({0, 0, 0.5, 0.5}, 1.0, 4, 4);
  const LossContext<double> ctx(s, {});
  const AttentionFieldXd u{{GridXd::Ones(4, 4)}};
  const auto g = grad_align(u, ctx, cfg);
  CHECK(g[0](0, 0) == doctest::Approx(-0.0703125).epsilon(1e-8));

  // Central difference with h = 1e-6 on the in-box entry.
  AttentionFieldXd up = u, down = u;
  up.maps[0](0, 0) += 1e-6;
  down.maps[0](0, 0) -= 1e-6;
  const double fd = (loss_align(up, ctx, cfg) - loss_align(down, ctx, cfg)) / 2e-6;
  CHECK(fd == doctest::Approx(-0.0703125).epsilon(1e-6));

  SceneSpec pair;
  pair.grid_height = pair.grid_width = 4;
  pair.objects = {{0, "fg", {0, 0, 0.5, 0.5}, 0.2}, {1, "bg", {0.25, 0.25, 1, 1}, 0.8}};
  GuidanceConfig unit = cfg;
  unit.lambda0 = 1.0;
  unit.alpha = 0.0;
  const LossContext<double> pctx(pair, derive_occlusion_pairs(pair));
  const auto go = grad_ortho(AttentionFieldXd{{GridXd::Ones(4, 4), GridXd::Ones(4, 4)}}, pctx, unit);
  CHECK(go[1](0, 0) == doctest::Approx(0.25).epsilon(1e-8));
  CHECK(go[1](3, 3) == 0.0);
  CHECK(go[0].isZero(0.0));
}

TEST_CASE("stage two gradient has no ortho contribution") {
  GuidanceConfig cfg;
  const SceneSpec s = random_scene(8, 3, 16, 16);
  const LossContext<double> ctx(s, derive_occlusion_pairs(s));
  const AttentionFieldXd f = random_field(s, 1);
  const auto g2 = grad_staged_loss(f, ctx, cfg, Stage::two);
  auto expected = grad_align(f, ctx, cfg);
  const auto gc = grad_compact(f, ctx, cfg);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    expected[i] += cfg.lambda_compact * gc[i];
    CHECK(expected[i] == g2[i]);
  }
}

TEST_CASE("gradient is linear in the components") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    GuidanceConfig cfg;
    cfg.lambda_ortho = 0.3 + 0.2 * seed;
    cfg.lambda_compact = 0.9 - 0.1 * seed;
    const SceneSpec s = random_scene(seed, 3, 16, 16);
    const LossContext<double> ctx(s, derive_occlusion_pairs(s));
    const AttentionFieldXd f = random_field(s, seed);
    const auto ga = grad_align(f, ctx, cfg);
    const auto go = grad_ortho(f, ctx, cfg);
    const auto gc = grad_compact(f, ctx, cfg);
    for (Stage st : {Stage::one, Stage::two}) {
      const auto g = grad_staged_loss(f, ctx, cfg, st);
      const double wo = st == Stage::one ? cfg.lambda_ortho : 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const GridXd sum = ga[i] + wo * go[i] + cfg.lambda_compact * gc[i];
        CHECK((g[i] - sum).cwiseAbs().maxCoeff() <= 1e-12);
      }
    }
  }
}

TEST_CASE("analytic gradients match finite differences of the reference objective") {
  // Finite differences of an independent long double implementation; entries
  // of the random fields are U[0, 2]. 3 scenes x 2 stages x 200 samples.
  std::mt19937_64 rng(2024);
  std::size_t sampled = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    GuidanceConfig cfg;
    const SceneSpec s = random_scene(seed + 40, 2 + static_cast<int>(seed), 12, 12);
    const LossContext<double> ctx(s, derive_occlusion_pairs(s));
    const AttentionFieldXd f = random_field(s, seed + 7);
    const ref::Maps rm = to_reference(f);
    const ref::Params rp = to_reference(cfg);
    for (Stage st : {Stage::one, Stage::two}) {
      const auto g = grad_staged_loss(f, ctx, cfg, st);
      std::uniform_int_distribution<std::size_t> obj(0, s.size() - 1);
      std::uniform_int_distribution<Eigen::Index> pix(0, 12 * 12 - 1);
      for (int n = 0; n < 200; ++n) {
        const std::size_t i = obj(rng);
        const Eigen::Index k = pix(rng);
        const double analytic = g[i].data()[k];
        const double numeric =
            double(ref::central_difference(s, rm, rp, static_cast<int>(st), i, static_cast<std::size_t>(k), 1e-6L));
        const double scale = std::max(std::abs(analytic), std::abs(numeric));
        if (scale > 1e-10) {
          const double rel = std::abs(analytic - numeric) / scale;
          worst = std::max(worst, rel);
          CHECK(rel <= 1e-5);
        } else {
          CHECK(std::abs(analytic - numeric) <= 1e-9);
        }
        ++sampled;
      }
    }
  }
  CHECK(sampled >= 1000);
  MESSAGE("worst relative error " << worst);
}

TEST_CASE("zero maps flow through the epsilon-guarded gradient") {
  GuidanceConfig cfg;
  const SceneSpec s = single({0, 0, 0.5, 0.5}, 0.6, 4, 4);
  const LossContext<double> ctx(s, {});
  const AttentionFieldXd z{{GridXd::Zero(4, 4)}};
  const auto g = grad_staged_loss(z, ctx, cfg, Stage::one);
  CHECK(g[0].allFinite());
  // f = 0 and e_in = 0: d f / d A = M / eps inside the box.
  CHECK(grad_align(z, ctx, cfg)[0](0, 0) == doctest::Approx(-2 * 0.6 / cfg.epsilon).epsilon(1e-12));
}
