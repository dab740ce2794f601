#include "dyncov/tuning.hpp"

#include "dyncov/metrics.hpp"
#include "dyncov/simulation.hpp"
#include "helpers.hpp"

#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

using namespace dyncov;

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835607;

/// Dense log-likelihood via Cholesky of the full P x P covariance.
double dense_loglik(const FactorEstimate& z, const SampleSet& samples, double ridge) {
  double total = 0.0;
  for (Index j = 0; j < samples.times(); ++j) {
    Matrix sigma = z.v * z.a.col(j).asDiagonal() * z.v.transpose();
    sigma += ridge * Matrix::Identity(samples.vars(), samples.vars());
    Eigen::LLT<Matrix> chol(sigma);
    REQUIRE(chol.info() == Eigen::Success);
    double logdet = 0.0;
    for (Index i = 0; i < samples.vars(); ++i) logdet += 2.0 * std::log(chol.matrixL()(i, i));
    for (Index n = 0; n < samples.subjects(); ++n) {
      const Vector x = samples.observation(n, j);
      total -= 0.5 * (samples.vars() * kLogTwoPi + logdet + x.dot(chol.solve(x)));
    }
  }
  return total;
}

SampleSet fill_random(Index n, Index j, Index p, Rng& rng) {
  SampleSet samples(n, j, p);
  for (double& x : samples.mutable_data()) x = rng.normal();
  return samples;
}

}  // namespace

TEST_CASE("gaussian log-likelihood", "[tuning]") {
  SECTION("scalar case") {
    FactorEstimate z{Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.8)};
    SampleSet samples(1, 1, 1);
    samples.set(0, 0, 0, 0.3);
    const double ridge = 0.2;
    const double variance = 0.8 + ridge;
    const double expected =
        -0.5 * (std::log(2.0 * testing::kPi * variance) + 0.3 * 0.3 / variance);
    CHECK_THAT(gaussian_loglik(z, samples, ridge),
               Catch::Matchers::WithinRel(expected, 1e-12));
  }

  SECTION("zero weights reduce to an isotropic gaussian") {
    Rng rng(3);
    const Index n = 4, j = 3, p = 5;
    SampleSet samples = fill_random(n, j, p, rng);
    FactorEstimate z{testing::random_gaussian(p, 2, rng), Matrix::Zero(2, j)};
    const double ridge = 0.7;
    double expected = 0.0;
    for (Index nn = 0; nn < n; ++nn) {
      for (Index jj = 0; jj < j; ++jj) {
        expected -= 0.5 * (p * kLogTwoPi + p * std::log(ridge) +
                           samples.observation(nn, jj).squaredNorm() / ridge);
      }
    }
    CHECK_THAT(gaussian_loglik(z, samples, ridge),
               Catch::Matchers::WithinRel(expected, 1e-12));
  }

  SECTION("matches the dense Cholesky oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 8; ++trial) {
      SampleSet samples = fill_random(4, 3, 6, rng);
      FactorEstimate z{testing::random_gaussian(6, 2, rng),
                       testing::random_gaussian(2, 3, rng).cwiseAbs()};
      const double ridge = rng.uniform(0.05, 0.5);
      CHECK_THAT(gaussian_loglik(z, samples, ridge),
                 Catch::Matchers::WithinRel(dense_loglik(z, samples, ridge), 1e-8));
    }
  }

  SECTION("ridge must be positive") {
    SampleSet samples(1, 1, 1);
    FactorEstimate z{Matrix::Ones(1, 1), Matrix::Ones(1, 1)};
    CHECK_THROWS_AS(gaussian_loglik(z, samples, 0.0), InvalidParameterError);
  }
}

TEST_CASE("bic formula", "[tuning]") {
  CHECK_THAT(bic_from(0.0, 6, std::exp(1.0)), Catch::Matchers::WithinRel(6.0, 1e-12));
  // equal likelihoods: the sparser support wins
  CHECK(bic_from(-10.0, 4, 20.0) < bic_from(-10.0, 9, 20.0));
  // raising the likelihood by delta lowers BIC by exactly 2 delta
  CHECK_THAT(bic_from(-5.0, 4, 20.0) - bic_from(-4.0, 4, 20.0),
             Catch::Matchers::WithinRel(2.0, 1e-12));

  Matrix v = Matrix::Zero(5, 2);
  v(0, 0) = 1.0;
  v(3, 1) = -0.5;
  v(4, 1) = 0.5;
  CHECK(support_size(v) == 3);
}

TEST_CASE("bic selects the true rank on noiseless low-rank data", "[tuning][slow]") {
  const auto basis =
      truncated_basis(build_kernel({KernelKind::matern_five_half, 10.0, 1.0}, 50), 1e-5);
  int hits = 0;
  const int n_seeds = 10;
  for (std::uint64_t seed = 1; seed <= n_seeds; ++seed) {
    const GroundTruth truth =
        make_ground_truth(20, 4, 50, 5, WaveformKind::mixed, 6, 0.0, basis, seed);
    Rng rng(seed * 17 + 3);
    const SampleSet samples = sample_gaussian(truth, 200, rng);
    const auto& covs = samples.covariances();
    const double ridge = 1e-3 * [&] {
      double trace = 0.0;
      for (const Matrix& s : covs) trace += s.trace();
      return trace / static_cast<double>(covs.size() * 20);
    }();

    double best_bic = std::numeric_limits<double>::infinity();
    Index best_k = 0;
    for (Index k = 2; k <= 6; ++k) {
      ConstraintConfig cfg;
      cfg.n_components = k;
      cfg.sparsity = 5;
      cfg.box_bound = 1.5 * testing::max_spectral_norm(covs);
      cfg.smoothness = 1.2 * std::max(truth.gamma_star, 1e-3);
      cfg.kernel = KernelSpec{KernelKind::matern_five_half, 10.0, 1.0};
      FitOptions opts;
      opts.max_iter = 150;
      double score;
      try {
        score = bic(fit(samples, cfg, opts).estimate, samples, ridge);
      } catch (const RankDeficiencyError&) {
        continue;  // K beyond the positive spectrum of a noiseless pooled matrix
      }
      if (score < best_bic) {
        best_bic = score;
        best_k = k;
      }
    }
    hits += best_k == 4;
  }
  CHECK(hits > n_seeds / 2);
}

TEST_CASE("tune validates its inputs", "[tuning]") {
  Rng rng(7);
  SampleSet samples = fill_random(6, 4, 5, rng);
  ConstraintConfig defaults;
  defaults.box_bound = 5.0;
  defaults.kernel = KernelSpec{KernelKind::gaussian, 3.0, 1.0};

  TuningGrid grid;
  CHECK_THROWS_AS(tune(samples, grid, defaults), InvalidParameterError);

  grid.s_values = {3};
  grid.k_values = {2};
  grid.gamma_values = {10.0};
  grid.l_values = {3.0};
  grid.folds = 7;  // more folds than subjects
  CHECK_THROWS_AS(tune(samples, grid, defaults), InvalidParameterError);
}

TEST_CASE("tune returns the only cell of a single-cell grid", "[tuning]") {
  const auto basis =
      truncated_basis(build_kernel({KernelKind::matern_five_half, 6.0, 1.0}, 20), 1e-5);
  const GroundTruth truth =
      make_ground_truth(10, 2, 20, 3, WaveformKind::mixed, 4, 0.1, basis, 9);
  Rng rng(19);
  const SampleSet samples = sample_gaussian(truth, 10, rng);

  TuningGrid grid;
  grid.s_values = {3};
  grid.k_values = {2};
  grid.gamma_values = {2.0 * std::max(truth.gamma_star, 0.1)};
  grid.l_values = {6.0};
  grid.folds = 5;
  ConstraintConfig defaults;
  defaults.box_bound = 3.0;
  defaults.kernel = KernelSpec{KernelKind::matern_five_half, 6.0, 1.0};
  FitOptions opts;
  opts.max_iter = 40;

  const TuningResult result = tune(samples, grid, defaults, opts);
  CHECK(result.sparsity == 3);
  CHECK(result.n_components == 2);
  CHECK(result.gamma == grid.gamma_values[0]);
  CHECK(result.length_scale == 6.0);
  CHECK(result.stage1.size() == 1);
  CHECK(result.stage2.size() == 1);
  CHECK(result.ridge_abs > 0.0);
}

TEST_CASE("cv folds partition the subjects exactly", "[tuning]") {
  for (const Index n : {10, 11, 23}) {
    for (const int folds : {2, 3, 5}) {
      const auto partition = detail::cv_folds(n, folds, 77);
      std::set<Index> seen;
      for (const auto& fold : partition) {
        for (Index subject : fold) {
          CHECK(seen.insert(subject).second);  // appears exactly once
        }
      }
      CHECK(seen.size() == static_cast<std::size_t>(n));
      // balanced to within one subject
      for (const auto& fold : partition) {
        CHECK(std::abs(static_cast<long>(fold.size()) -
                       static_cast<long>(n / folds)) <= 1);
      }
    }
  }
  // deterministic given the seed
  CHECK(detail::cv_folds(12, 3, 5) == detail::cv_folds(12, 3, 5));
}

TEST_CASE("two-stage selection never under-selects sparsity", "[tuning][slow]") {
  const auto basis =
      truncated_basis(build_kernel({KernelKind::matern_five_half, 10.0, 1.0}, 50), 1e-5);
  int at_least_true = 0;
  double stage1_spread = 0.0;
  double stage2_spread = 0.0;
  const int n_seeds = 5;
  for (std::uint64_t seed = 1; seed <= n_seeds; ++seed) {
    const GroundTruth truth =
        make_ground_truth(20, 4, 50, 5, WaveformKind::mixed, 6, 0.0, basis, seed);
    Rng rng(seed * 23 + 11);
    const SampleSet samples = sample_gaussian(truth, 200, rng);
    const Index s_star = truth.sparsity();

    TuningGrid grid;
    grid.s_values = {s_star, 2 * s_star, 4 * s_star};
    grid.k_values = {3, 4, 5};
    const double energy = 1.2 * std::max(truth.gamma_star, 0.1);
    grid.gamma_values = {energy};
    grid.l_values = {5.0, 10.0, 20.0};
    ConstraintConfig defaults;
    defaults.box_bound = 1.5 * testing::max_spectral_norm(samples.covariances());
    defaults.kernel = KernelSpec{KernelKind::matern_five_half, 10.0, 1.0};
    FitOptions opts;
    opts.max_iter = 120;
    opts.rng_seed = seed;

    const TuningResult result = tune(samples, grid, defaults, opts);
    at_least_true += result.sparsity >= s_star;

    // stage-2 scores vary less across cells than stage-1 BIC does
    std::vector<double> s1, s2;
    for (const auto& cell : result.stage1) {
      if (!cell.failed) s1.push_back(cell.score);
    }
    for (const auto& cell : result.stage2) {
      if (!cell.failed) s2.push_back(cell.score);
    }
    const auto variance = [](const std::vector<double>& xs) {
      double mean = 0.0;
      for (double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double var = 0.0;
      for (double x : xs) var += (x - mean) * (x - mean);
      return var / static_cast<double>(xs.size());
    };
    stage1_spread += variance(s1);
    stage2_spread += variance(s2);
  }
  CHECK(at_least_true > n_seeds / 2);
  CHECK(stage2_spread < stage1_spread);
}

TEST_CASE("selection is deterministic", "[tuning]") {
  const auto basis =
      truncated_basis(build_kernel({KernelKind::matern_five_half, 6.0, 1.0}, 15), 1e-5);
  const GroundTruth truth =
      make_ground_truth(8, 2, 15, 3, WaveformKind::sine_mix, 4, 0.2, basis, 31);
  Rng rng(37);
  const SampleSet samples = sample_gaussian(truth, 8, rng);

  TuningGrid grid;
  grid.s_values = {2, 3};
  grid.k_values = {2};
  grid.gamma_values = {0.5, 5.0};
  grid.l_values = {3.0, 6.0};
  grid.folds = 4;
  ConstraintConfig defaults;
  defaults.box_bound = 4.0;
  defaults.kernel = KernelSpec{KernelKind::matern_five_half, 6.0, 1.0};
  FitOptions opts;
  opts.max_iter = 30;
  opts.rng_seed = 4;

  const TuningResult first = tune(samples, grid, defaults, opts);
  const TuningResult second = tune(samples, grid, defaults, opts);
  CHECK(first.sparsity == second.sparsity);
  CHECK(first.n_components == second.n_components);
  CHECK(first.gamma == second.gamma);
  CHECK(first.length_scale == second.length_scale);
  for (std::size_t i = 0; i < first.stage2.size(); ++i) {
    CHECK(first.stage2[i].score == second.stage2[i].score);
  }
}
