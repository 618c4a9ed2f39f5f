#include <cmath>
#include <complex>
#include <limits>
#include <random>

#include "doctest.h"
#include "dydiff/diffusion.hpp"
#include "dydiff/error.hpp"

using namespace dydiff;

namespace {

// E[y | x] = x + sigma^2 d/dx log p_sigma(x) for a 1-D point mixture, with
// the derivative taken by complex step (exact to round-off).
double tweedie_posterior_mean(const std::vector<double>& pts, double x, double sigma) {
  const double h = 1e-30;
  std::complex<double> z(x, h), density(0.0, 0.0);
  double shift = -std::numeric_limits<double>::infinity();
  for (double p : pts) shift = std::max(shift, -(x - p) * (x - p) / (2 * sigma * sigma));
  for (double p : pts) density += std::exp(-(z - p) * (z - p) / (2 * sigma * sigma) - shift);
  const double dlog = std::imag(std::log(density)) / h;
  return x + sigma * sigma * dlog;
}

// Returns NaN for one chosen row; identity elsewhere.
class PoisonedDenoiser final : public DenoisingFunction {
 public:
  PoisonedDenoiser(std::size_t width, std::size_t bad_row) : width_(width), bad_(bad_row) {}
  std::size_t width() const override { return width_; }
  Matrix denoise(ConstMatrixRef x, std::span<const double>) const override {
    Matrix out(x);
    if (bad_ < out.rows()) out(bad_, out.cols() - 1) = NAN;
    return out;
  }

 private:
  std::size_t width_, bad_;
};

}  // namespace

TEST_SUITE("diffusion") {

TEST_CASE("karras timesteps") {
  NoiseSchedule s;
  auto t = karras_timesteps(s);
  REQUIRE(t.size() == 35);
  CHECK(t[0] == 80.0);
  CHECK(t[33] == 0.002);
  CHECK(t[34] == 0.0);
  for (std::size_t i = 0; i + 1 < t.size(); ++i) CHECK(t[i] > t[i + 1]);
  // interior points follow the rho-interpolation formula
  const double lo = std::pow(0.002, 1 / 7.0), hi = std::pow(80.0, 1 / 7.0);
  CHECK(t[10] == doctest::Approx(std::pow(hi + 10.0 / 33.0 * (lo - hi), 7.0)).epsilon(1e-14));

  s.n_steps = 1;
  CHECK(karras_timesteps(s) == std::vector<double>{80.0, 0.0});
  s.n_steps = 0;
  CHECK_THROWS_AS(karras_timesteps(s), ConfigError);
  NoiseSchedule bad;
  bad.sigma_min = 100.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("churn gamma and loss weight") {
  NoiseSchedule s;
  SamplerConfig c;
  CHECK(churn_gamma(s, c, 1.0) == std::sqrt(2.0) - 1.0);
  CHECK(churn_gamma(s, c, 0.370) == std::sqrt(2.0) - 1.0);
  CHECK(churn_gamma(s, c, 52.212) == std::sqrt(2.0) - 1.0);
  CHECK(churn_gamma(s, c, 0.3699) == 0.0);
  CHECK(churn_gamma(s, c, 80.0) == 0.0);
  c.s_churn = 3.4;
  CHECK(churn_gamma(s, c, 1.0) == doctest::Approx(0.1).epsilon(1e-15));

  CHECK(edm_loss_weight(0.5, 0.5) == 8.0);
  CHECK(edm_loss_weight(1.0, 0.5) == 5.0);
  CHECK(edm_loss_weight(1e8, 0.5) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_THROWS_AS(edm_loss_weight(0.0, 0.5), ConfigError);
}

TEST_CASE("training sigma distribution") {
  NoiseSchedule s;
  CHECK(training_sigma_from_normal(s, 0.0) == doctest::Approx(0.301194211912).epsilon(1e-10));
  CHECK(training_sigma_from_normal(s, 1.0) == 1.0);
  Rng rng(123);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += std::log(sample_training_sigma(s, rng));
  CHECK(std::abs(sum / n + 1.2) <= 0.02);
}

TEST_CASE("preconditioning") {
  auto p = edm_preconditioning(1e-6, 0.5);
  CHECK(p.c_skip == doctest::Approx(1.0).epsilon(1e-11));
  CHECK(p.c_out < 1.01e-6);
  auto q = edm_preconditioning(0.5, 0.5);
  CHECK(q.c_skip == doctest::Approx(0.5));
  CHECK(q.c_out == doctest::Approx(0.25 / std::sqrt(0.5)));
  CHECK(q.c_in == doctest::Approx(1.0 / std::sqrt(0.5)));
  CHECK(q.c_noise == doctest::Approx(std::log(0.5) / 4));
  // lambda * c_out^2 == 1: unit effective weight on the raw net
  for (double s : {0.01, 0.3, 2.0, 50.0})
    CHECK(edm_loss_weight(s, 0.5) * std::pow(edm_preconditioning(s, 0.5).c_out, 2) == doctest::Approx(1.0));

  TrajectoryLayout layout{3, 2, 1};
  EdmDenoiser d = EdmDenoiser::init(layout, NoiseSchedule{}, {32, 32}, 7);
  Matrix x(4, layout.width());
  Rng rng(1);
  for (double& v : x.flat()) v = rng.normal();
  Matrix out = d.denoise(x, std::vector<double>(4, 1e-6));
  for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(out.flat()[k] - x.flat()[k]) <= 1e-5);
}

TEST_CASE("trajectory layout") {
  TrajectoryLayout l{2, 1, 1};
  CHECK(l.width() == 5);
  TrajectoryLayout big{7, 4, 2};
  CHECK(big.width() == 8 * 4 + 7 * 2);
  // every slot is hit exactly once by the index maps, in interleaved order
  std::vector<int> hits(big.width(), 0);
  for (std::size_t i = 0; i <= 7; ++i)
    for (std::size_t d = 0; d < 4; ++d) {
      const auto slot = big.state_index(i, d);
      ++hits[slot];
      CHECK(big.is_state_slot(slot));
      CHECK(big.position_of(slot) == 2 * i);
    }
  for (std::size_t i = 0; i < 7; ++i)
    for (std::size_t d = 0; d < 2; ++d) {
      const auto slot = big.action_index(i, d);
      ++hits[slot];
      CHECK_FALSE(big.is_state_slot(slot));
      CHECK(big.position_of(slot) == 2 * i + 1);
    }
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("apply_conditions") {
  TrajectoryLayout l{2, 1, 1};
  std::vector<double> traj(5, 9.0);
  std::vector<double> s0{1.0};
  Matrix acts{{2.0}, {3.0}};
  apply_conditions(l, traj, s0, acts);
  CHECK(traj == std::vector<double>{1, 2, 9, 3, 9});
  auto again = traj;
  apply_conditions(l, again, s0, acts);
  CHECK(again == traj);
  CHECK_THROWS_AS(apply_conditions(l, traj, std::vector<double>{1.0, 2.0}, acts), DimensionError);
  CHECK_THROWS_AS(apply_conditions(l, traj, s0, Matrix{{2.0}}), DimensionError);

  // identity case through the batched conditioning path
  Matrix batch{{1, 2, 9, 3, 9}, {4, 5, 6, 7, 8}};
  Matrix copy = batch;
  Conditioning c = make_conditioning(l, Matrix{{1.0}, {4.0}}, Matrix{{2.0, 3.0}, {5.0, 7.0}});
  c.apply(batch.view());
  CHECK(batch == copy);
}

TEST_CASE("window tensors and the loss mask") {
  TrajectoryLayout l{2, 1, 1};
  CHECK(loss_mask(l, {false, false, false, false, false}) == std::vector<double>{0, 0, 1, 0, 1});
  CHECK(loss_mask(l, {false, false, false, true, true}) == std::vector<double>{0, 0, 1, 0, 0});

  Normalizer n;
  n.defined = true;
  n.state_mean = {1.0};
  n.state_std = {2.0};
  n.action_mean = {0.0};
  n.action_std = {0.5};
  Window w;
  w.states = Matrix{{3.0}, {5.0}, {0.0}};
  w.actions = Matrix{{1.0}, {0.0}};
  w.pad_mask = {false, false, false, true, true};
  auto t = window_to_tensor(l, w, n);
  CHECK(t == std::vector<double>{1.0, 2.0, 2.0, 0.0, 0.0});
  Matrix s, a;
  tensor_to_trajectory(l, t, n, s, a);
  CHECK(s(1, 0) == 5.0);
  CHECK(a(0, 0) == 1.0);
}

TEST_CASE("analytic denoiser") {
  Matrix pts{{-1.0}, {1.0}};
  for (double s : {0.01, 0.5, 3.0, 100.0}) CHECK(analytic_denoise(pts, std::vector<double>{0.0}, s)[0] == 0.0);
  CHECK(std::abs(analytic_denoise(pts, std::vector<double>{0.5}, 0.01)[0] - 1.0) <= 1e-6);
  CHECK_THROWS_AS(analytic_denoise(Matrix(0, 1), std::vector<double>{0.0}, 1.0), ConfigError);

  std::mt19937_64 gen(99);
  std::uniform_real_distribution<double> u(-2.0, 2.0), ls(-3.0, 1.5);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p(1 + gen() % 6);
    for (double& v : p) v = u(gen);
    Matrix m(p.size(), 1);
    for (std::size_t i = 0; i < p.size(); ++i) m(i, 0) = p[i];
    const double x = u(gen), sigma = std::exp(ls(gen));
    worst = std::max(worst, std::abs(analytic_denoise(m, std::vector<double>{x}, sigma)[0] -
                                     tweedie_posterior_mean(p, x, sigma)));
  }
  CHECK(worst <= 1e-8);
}

TEST_CASE("train_denoiser contracts") {
  TrajectoryLayout l{2, 1, 1};
  Matrix data(6, 5), mask(6, 5, 1.0);
  Rng rng(4);
  for (double& v : data.flat()) v = rng.normal() * 0.5;
  DenoiserTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.hidden = {16};
  cfg.seed = 3;
  EdmDenoiser a = train_denoiser(data, mask, l, NoiseSchedule{}, cfg);
  EdmDenoiser b = train_denoiser(data, mask, l, NoiseSchedule{}, cfg);
  CHECK(std::equal(a.raw().parameters().begin(), a.raw().parameters().end(), b.raw().parameters().begin()));

  // slots outside the mask get no gradient through the output layer
  Matrix zero_mask(6, 5, 0.0);
  EdmDenoiser c = train_denoiser(data, zero_mask, l, NoiseSchedule{}, cfg);
  EdmDenoiser init = EdmDenoiser::init(l, NoiseSchedule{}, cfg.hidden, derive_seed(cfg.seed, {0x3d}));
  CHECK(std::equal(c.raw().parameters().begin(), c.raw().parameters().end(), init.raw().parameters().begin()));

  CHECK_THROWS_AS(train_denoiser(Matrix(3, 4), Matrix(3, 4), l, NoiseSchedule{}, cfg), DimensionError);

  std::vector<Window> windows(2);
  windows[0].states = Matrix(3, 1);
  windows[0].actions = Matrix(2, 1);
  windows[0].pad_mask.assign(5, false);
  windows[1].states = Matrix(4, 1);
  windows[1].actions = Matrix(3, 1);
  windows[1].pad_mask.assign(7, false);
  Normalizer n;
  n.defined = true;
  n.state_mean = {0.0};
  n.state_std = {1.0};
  n.action_mean = {0.0};
  n.action_std = {1.0};
  CHECK_THROWS_AS(train_denoiser(windows, n, NoiseSchedule{}, cfg), DimensionError);
}

TEST_CASE("clean-condition training changes only what the net sees") {
  TrajectoryLayout l{2, 1, 1};
  Matrix data(6, 5), mask(6, 5, 1.0);
  Rng rng(9);
  for (double& v : data.flat()) v = rng.normal() * 0.5;
  DenoiserTrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.hidden = {8};
  cfg.seed = 1;
  EdmDenoiser plain = train_denoiser(data, mask, l, NoiseSchedule{}, cfg);
  cfg.clean_conditions = true;
  EdmDenoiser clean = train_denoiser(data, mask, l, NoiseSchedule{}, cfg);
  EdmDenoiser again = train_denoiser(data, mask, l, NoiseSchedule{}, cfg);
  CHECK_FALSE(std::equal(plain.raw().parameters().begin(), plain.raw().parameters().end(),
                         clean.raw().parameters().begin()));
  CHECK(std::equal(clean.raw().parameters().begin(), clean.raw().parameters().end(),
                   again.raw().parameters().begin()));
}

TEST_CASE("sampler: conditioning invariance and batch independence") {
  TrajectoryLayout l{4, 2, 1};
  EdmDenoiser d = EdmDenoiser::init(l, NoiseSchedule{}, {32, 32}, 11);
  NoiseSchedule sch;
  sch.n_steps = 8;
  SamplerConfig sc;
  const std::size_t B = 5;
  Matrix s0(B, 2), acts(B, 4);
  Rng cond_rng(2);
  for (double& v : s0.flat()) v = cond_rng.normal();
  for (double& v : acts.flat()) v = cond_rng.normal();
  Conditioning cond = make_conditioning(l, s0, acts);
  std::vector<Rng> rngs;
  for (std::size_t b = 0; b < B; ++b) rngs.emplace_back(77, std::initializer_list<std::uint64_t>{b});
  SampleBatch batch = sample_batch(d, cond, sch, sc, rngs);
  CHECK(batch.failures() == 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < 2; ++k) CHECK(batch.trajectories(b, l.state_index(0, k)) == s0(b, k));
    for (std::size_t i = 0; i < 4; ++i) CHECK(batch.trajectories(b, l.action_index(i, 0)) == acts(b, i));
    // the same row sampled alone is bit-identical
    Rng solo(77, {b});
    Matrix a_row(4, 1);
    for (std::size_t i = 0; i < 4; ++i) a_row(i, 0) = acts(b, i);
    auto single = sample_conditional(d, l, s0.row(b), a_row, sch, sc, solo);
    CHECK(std::equal(single.begin(), single.end(), batch.trajectories.row(b).begin()));
  }
}

TEST_CASE("sampler: failures are isolated per row") {
  PoisonedDenoiser d(3, 1);
  std::vector<Rng> rngs{Rng(1), Rng(2), Rng(3)};
  NoiseSchedule sch;
  sch.n_steps = 4;
  SampleBatch b = sample_batch(d, Conditioning{}, sch, SamplerConfig{}, rngs);
  CHECK(b.failed_step == std::vector<int>{-1, 0, -1});
  CHECK(b.failures() == 1);
  CHECK(all_finite(b.trajectories.flat()));

  PoisonedDenoiser single(3, 0);
  TrajectoryLayout l{1, 1, 1};
  Rng rng(5);
  try {
    sample_conditional(single, l, std::vector<double>{0}, Matrix{{0.0}}, sch, SamplerConfig{}, rng);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("sampler driven by the analytic oracle lands on the data") {
  Matrix pts{{0.5, -0.5, 0.3, 0.0}, {-0.6, 0.2, -0.4, 0.5}, {0.1, 0.4, 0.6, -0.5}};
  AnalyticDenoiser oracle(pts);
  std::vector<Rng> rngs;
  for (std::uint64_t i = 0; i < 300; ++i) rngs.emplace_back(2024, std::initializer_list<std::uint64_t>{i});
  SampleBatch b = sample_batch(oracle, Conditioning{}, NoiseSchedule{}, SamplerConfig{}, rngs);
  std::size_t close = 0;
  for (std::size_t r = 0; r < b.trajectories.rows(); ++r) {
    double best = 1e300;
    for (std::size_t p = 0; p < 3; ++p) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < 4; ++c) d2 += std::pow(b.trajectories(r, c) - pts(p, c), 2);
      best = std::min(best, std::sqrt(d2));
    }
    close += best <= 0.1;
  }
  CHECK(close >= 297);
}

TEST_CASE("denoiser checkpoint round trip") {
  TrajectoryLayout l{3, 2, 1};
  NoiseSchedule sch;
  sch.n_steps = 12;
  EdmDenoiser d = EdmDenoiser::init(l, sch, {8}, 1);
  auto doc = nlohmann::json::parse(denoiser_to_json(d).dump());
  CHECK(doc["kind"] == "denoiser");
  CHECK(doc["L"] == 3);
  EdmDenoiser back = denoiser_from_json(doc);
  CHECK(back.schedule().n_steps == 12);
  Matrix x(2, l.width(), 0.3);
  CHECK(back.denoise(x, std::vector<double>{0.5, 2.0}) == d.denoise(x, std::vector<double>{0.5, 2.0}));
  doc["kind"] = "reward";
  CHECK_THROWS_AS(denoiser_from_json(doc), FormatError);
}

}  // TEST_SUITE
