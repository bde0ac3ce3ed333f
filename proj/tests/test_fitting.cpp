#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "fit_recovery.hpp"
#include "purcell/csv.hpp"
#include "purcell/dataset.hpp"
#include "purcell/dynamics.hpp"
#include "purcell/fit_models.hpp"
#include "purcell/least_squares.hpp"

using namespace purcell;

namespace {

constexpr double kTwoRateAnchor = 0.010155197036403982;

std::vector<double> sample(const ModelFunction& f, std::span<const double> x, std::vector<double> p) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i], p);
  return y;
}

std::vector<double> grid(double lo, double hi, int n) { return testsupport::detail::linspace(lo, hi, n); }

}  // namespace

TEST(LeastSquares, ExactDataAtInitialGuessNeedsNoIterations) {
  const auto x = grid(0.0, 10.0, 30);
  const auto y = sample(exponential_model, x, {1.5, 0.3});
  const auto r = least_squares(exponential_model, x, y, {1.5, 0.3}, {"c", "Gamma"});
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.residual_norm, 0.0);
}

TEST(LeastSquares, LinearModelToMachinePrecision) {
  const auto x = grid(-3.0, 7.0, 25);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 2.75 * x[i];
  const auto r = least_squares([](double t, std::span<const double> p) { return p[0] * t; }, x, y, {0.1}, {"p"});
  EXPECT_TRUE(r.converged);
  EXPECT_NEAR(r.parameters[0], 2.75, 4 * std::numeric_limits<double>::epsilon());
}

TEST(LeastSquares, ConvergesQuadraticallyNearOptimum) {
  const auto x = grid(0.0, 20.0, 80);
  const auto y = sample(exponential_model, x, {2.0, 0.15});
  LeastSquaresOptions opts;
  opts.xtol = 0.0;
  opts.gtol = 0.0;
  opts.max_iterations = 20;
  const auto r = least_squares(exponential_model, x, y, {2.3, 0.12}, {"c", "Gamma"}, std::nullopt, opts);
  const auto& h = r.residual_history;
  ASSERT_GE(h.size(), 4u);
  bool quadratic_step = false;
  for (std::size_t k = 0; k + 1 < h.size(); ++k)
    if (h[k] < 1e-2 && h[k] > 1e-7 && h[k + 1] < 10.0 * h[k] * h[k]) quadratic_step = true;
  EXPECT_TRUE(quadratic_step);
  EXPECT_LT(h.back(), 1e-12);
}

TEST(LeastSquares, NonFiniteModelIsDomainError) {
  const auto x = grid(0.0, 1.0, 5);
  const std::vector<double> y(5, 1.0);
  auto bad = [](double, std::span<const double>) { return std::numeric_limits<double>::quiet_NaN(); };
  EXPECT_THROW(least_squares(bad, x, y, {1.0}, {"p"}), std::domain_error);
}

TEST(LeastSquares, SingularNormalEquationsAreFlagged) {
  const auto x = grid(0.0, 1.0, 10);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 3.0 * x[i];
  auto redundant = [](double t, std::span<const double> p) { return (p[0] + p[1]) * t; };
  const auto r = least_squares(redundant, x, y, {1.0, 1.0}, {"p", "q"});
  EXPECT_FALSE(r.converged);
  EXPECT_NE(r.message.find("singular"), std::string::npos);
  EXPECT_TRUE(r.parameter_errors.empty());
}

TEST(LeastSquares, RejectsMalformedInput) {
  const std::vector<double> x{0.0, 1.0}, y{1.0};
  EXPECT_THROW(least_squares(exponential_model, x, y, {1.0, 1.0}, {"c", "Gamma"}), std::invalid_argument);
  const std::vector<double> y2{1.0, 0.5};
  EXPECT_THROW(least_squares(exponential_model, std::span(x).first(1), std::span(y2).first(1), {1.0, 1.0},
                             {"c", "Gamma"}),
               std::invalid_argument);
}

TEST(FitExponential, RecoversExactDecay) {
  const auto t = grid(0.0, 400.0, 801);
  const auto y = sample(exponential_model, t, {1.0, 0.02});
  const auto r = fit_exponential(t, y, 30.0, 400.0);
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.value("c"), 1.0, 1e-9);
  EXPECT_NEAR(r.value("Gamma"), 0.02, 0.02 * 1e-9);
  ASSERT_TRUE(r.window);
  EXPECT_EQ(r.window->first, 30.0);
  EXPECT_EQ(r.window->second, 400.0);
}

TEST(FitExponential, BareCavityDecaysAtKappa) {
  ModelParams p;
  p.t_decay = 30.0;
  SystemState s = SystemState::ground(0);
  s.set_a({0.4, 0.0});
  const std::vector<Trajectory> trajs{run_decay(DisorderRealization{}, s, p)};
  const auto trace = fluorescence_full(trajs, p);
  const auto r = fit_exponential(trace, 2.0, 20.0);
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.value("Gamma"), p.kappa, 1e-6);
  EXPECT_NEAR(r.value("c"), p.kappa_c * 0.16, 1e-6);
}

TEST(FitExponential, TwoRateMixtureAnchor) {
  const auto t = grid(0.0, 400.0, 801);
  std::vector<double> y(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) y[i] = 0.9 * std::exp(-0.01 * t[i]) + 0.1 * std::exp(-0.05 * t[i]);
  const auto r = fit_exponential(t, y, 30.0, 400.0);
  ASSERT_TRUE(r.converged);
  const double gamma = r.value("Gamma");
  EXPECT_GT(gamma, 0.01);
  EXPECT_LT(gamma, 0.05);
  EXPECT_NEAR(gamma, kTwoRateAnchor, 1e-12);
  EXPECT_EQ(fit_exponential(t, y, 30.0, 400.0).parameters, r.parameters);
}

TEST(FitExponential, SkipsNonPositiveSamplesInLogStage) {
  const auto t = grid(0.0, 400.0, 801);
  auto y = sample(exponential_model, t, {2.0, 0.1});
  for (auto& v : y)
    if (v < 1e-12) v = 0.0;
  const auto r = fit_exponential(t, y, 0.0, 400.0);
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.value("Gamma"), 0.1, 1e-6);
}

TEST(FitExponential, Errors) {
  const auto t = grid(0.0, 10.0, 50);
  const std::vector<double> zeros(t.size(), 0.0);
  EXPECT_THROW(fit_exponential(t, zeros, 0.0, 10.0), std::domain_error);
  const auto y = sample(exponential_model, t, {1.0, 0.1});
  EXPECT_THROW(fit_exponential(t, y, 0.0, 1.0), std::invalid_argument);
}

TEST(FitStretched, UnitStretchIsDoubleExponential) {
  const auto t = grid(0.0, 2000.0, 401);
  const std::vector<double> truth{1.0, 40.0, 1.0, 0.3, 300.0, 0.02};
  const auto y = sample(stretched_composite_model, t, truth);
  const auto r = fit_stretched_composite(t, y);
  ASSERT_TRUE(r.converged) << r.message;
  for (std::size_t i = 0; i < truth.size(); ++i)
    EXPECT_NEAR(r.parameters[i], truth[i], 1e-6 * std::abs(truth[i])) << r.names[i];
  EXPECT_NEAR(r.value("Gamma"), 1.0 / 40.0, 1e-8);
}

TEST(FitStretched, MissingFastComponentIsFlagged) {
  const auto t = grid(0.0, 2000.0, 401);
  const auto y = sample(stretched_composite_model, t, {0.0, 40.0, 1.0, 0.3, 300.0, 0.02});
  const auto r = fit_stretched_composite(t, y);
  EXPECT_TRUE(!r.converged || r.any_at_bound());
  EXPECT_FALSE(r.ok());
}

TEST(FitStretched, NoisySyntheticHistogramWithinFivePercent) {
  const auto t = grid(0.0, 1500.0, 20001);
  const std::vector<double> truth{1.0, 50.0, 0.7, 0.2, 200.0, 0.01};
  RandomStream rng(7);
  for (int draw = 0; draw < 100; ++draw) {
    auto y = sample(stretched_composite_model, t, truth);
    for (auto& v : y) v *= 1.0 + 0.01 * rng.normal();
    FitOptions opts;
    opts.solver.weights.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) opts.solver.weights[i] = 1.0 / (y[i] * y[i]);
    const auto r = fit_stretched_composite(t, y, std::nullopt, opts);
    ASSERT_TRUE(r.converged) << "draw " << draw;
    for (std::size_t i = 0; i < truth.size(); ++i)
      ASSERT_NEAR(r.parameters[i], truth[i], 0.05 * truth[i]) << r.names[i] << " in draw " << draw;
  }
}

TEST(FitStretched, PurcellRatioFromReferenceRate) {
  const auto t = grid(0.0, 2000.0, 401);
  const auto y = sample(stretched_composite_model, t, {1.0, 40.0, 0.9, 0.3, 300.0, 0.02});
  const auto r = fit_stretched_composite(t, y, 1.0 / 4000.0);
  EXPECT_NEAR(r.value("purcell_ratio"), 100.0, 1e-4);
}

TEST(FitStretched, NeedsTwentySamples) {
  const auto t = grid(0.0, 10.0, 19);
  const std::vector<double> y(t.size(), 1.0);
  EXPECT_THROW(fit_stretched_composite(t, y), std::invalid_argument);
}

TEST(FitLorentzian, ExactSamples) {
  const auto x = grid(-3.0, 3.0, 21);
  const std::vector<double> truth{0.8, 0.3, 1.0, 0.05};
  const auto r = fit_lorentzian_single(x, sample(lorentzian_model, x, truth));
  ASSERT_TRUE(r.converged);
  for (std::size_t i = 0; i < truth.size(); ++i) EXPECT_NEAR(r.parameters[i], truth[i], 1e-9) << r.names[i];
  EXPECT_NEAR(r.value("fwhm"), 2.0, 2e-9);
}

TEST(FitLorentzian, OffsetOnlyDataPinsAmplitudeAtZero) {
  const auto x = grid(-3.0, 3.0, 21);
  const std::vector<double> y(x.size(), 0.4);
  const auto r = fit_lorentzian_single(x, y);
  EXPECT_NEAR(r.value("amplitude"), 0.0, 1e-12);
  EXPECT_NEAR(r.value("offset"), 0.4, 1e-12);
  EXPECT_TRUE(r.at_bound[0]);
  EXPECT_FALSE(r.ok());
}

TEST(FitLorentzian, NeedsSixPoints) {
  const auto x = grid(-1.0, 1.0, 5);
  EXPECT_THROW(fit_lorentzian_single(x, std::vector<double>(5, 1.0)), std::invalid_argument);
}

TEST(FitDoubleLorentzian, SymmetricPeaks) {
  const auto x = grid(-5.0, 5.0, 41);
  const std::vector<double> truth{1.0, 1.5, 0.6, -1.5, 0.6, 0.05};
  const auto r = fit_double_lorentzian(x, sample(double_lorentzian_model, x, truth));
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.value("splitting"), 3.0, 1e-6);
  EXPECT_GE(r.value("Delta_plus"), r.value("Delta_minus"));
}

TEST(FitDoubleLorentzian, CoincidentPeaksActLikeSingleLorentzian) {
  const auto x = grid(-5.0, 5.0, 41);
  const auto y = sample(lorentzian_model, x, {1.6, 0.0, 0.8, 0.05});
  const auto r = fit_double_lorentzian(x, y);
  EXPECT_NEAR(r.value("splitting"), 0.0, 1e-3);
  EXPECT_LT(r.residual_norm, 1e-6);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(double_lorentzian_model(x[i], r.parameters), y[i], 1e-6);
}

TEST(FitDoubleLorentzian, LabelSwapInvariance) {
  const auto x = grid(-5.0, 5.0, 41);
  const std::vector<double> truth{1.2, 1.1, 0.7, -0.6, 0.4, 0.02};
  auto y = sample(double_lorentzian_model, x, truth);
  RandomStream rng(3);
  for (auto& v : y) v += 1e-3 * rng.normal();
  const auto base = fit_double_lorentzian(x, y);
  std::vector<double> swapped = base.parameters;
  std::swap(swapped[1], swapped[3]);
  std::swap(swapped[2], swapped[4]);
  FitOptions opts;
  opts.initial_guess = swapped;
  const auto other = fit_double_lorentzian(x, y, opts);
  EXPECT_NEAR(other.residual_norm, base.residual_norm, 1e-12);
  for (std::size_t i = 0; i < base.parameters.size(); ++i)
    EXPECT_NEAR(other.parameters[i], base.parameters[i], 1e-9 * std::max(1.0, std::abs(base.parameters[i])));
  ASSERT_EQ(other.parameter_errors.size(), base.parameter_errors.size());
  for (std::size_t i = 0; i < base.parameter_errors.size(); ++i)
    EXPECT_NEAR(other.parameter_errors[i], base.parameter_errors[i], 1e-6 * base.parameter_errors[i]);
}

TEST(FitDoubleLorentzian, GuessUsesTwoLargestMaxima) {
  const auto x = grid(-4.0, 4.0, 17);
  const auto y = sample(double_lorentzian_model, x, {1.0, 2.0, 0.3, -1.0, 0.3, 0.0});
  const auto g = double_lorentzian_guess(x, y);
  EXPECT_EQ(g[1], 2.0);
  EXPECT_EQ(g[3], -1.0);
  EXPECT_EQ(local_maxima(std::vector<double>{0.0, 2.0, 1.0, 3.0, 0.5}), (std::vector<std::size_t>{3, 1}));
}

TEST(FitPle, RecoversSaturationFlux) {
  const auto phi = testsupport::detail::logspace(-2.0, 3.0, 11);
  const auto r = fit_ple_saturation(phi, sample(ple_model, phi, {1.0, 0.1}));
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.value("phi_0"), 10.0, 1e-8);
  EXPECT_NEAR(r.value("saturation"), r.value("p1") / r.value("p2"), 1e-15);
  EXPECT_NEAR(ple_model(1e12, r.parameters), r.value("saturation"), 1e-9);
  EXPECT_NEAR(ple_model(r.value("phi_0"), r.parameters), 0.5 * r.value("saturation"), 1e-12);
}

TEST(FitPle, NeedsOneDecade) {
  const std::vector<double> phi{1.0, 2.0, 4.0, 8.0};
  EXPECT_THROW(fit_ple_saturation(phi, sample(ple_model, phi, {1.0, 0.1})), std::invalid_argument);
  const std::vector<double> three{1.0, 10.0, 100.0};
  EXPECT_THROW(fit_ple_saturation(three, sample(ple_model, three, {1.0, 0.1})), std::invalid_argument);
}

TEST(FitProperties, ExactRecoveryFromPerturbedGuesses) {
  for (const auto& model : testsupport::recovery_models()) {
    const auto outcome = testsupport::run_recovery(model, 20, 11);
    EXPECT_EQ(outcome.failures, 0) << model << " worst relative error " << outcome.worst_relative_error;
  }
}

TEST(FitProperties, RefitFromConvergedParametersIsImmediate) {
  RandomStream rng(5);
  for (const auto& model : testsupport::recovery_models()) {
    for (int k = 0; k < 5; ++k) {
      const auto c = testsupport::make_case(model, rng, 0.2);
      std::vector<double> y(c.x.size());
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = testsupport::evaluate(model, c.x[i], c.truth) * (1.0 + 0.01 * rng.normal());
      FitOptions opts;
      opts.initial_guess = c.guess;
      const auto first = testsupport::fit_by_name(model, c.x, y, opts);
      opts.initial_guess = first.parameters;
      const auto again = testsupport::fit_by_name(model, c.x, y, opts);
      EXPECT_LE(again.iterations, 2) << model << ": " << first.message;
    }
  }
}

TEST(Units, RoundTripIsLossless) {
  const UnitSystem units{2.3};
  ExperimentalDataset ns{{0.5, 3.0, 17.25, 400.0}, {10, 8, 3, 1}, AbscissaUnit::ns, 0.0125};
  const auto back = ns.to_internal(units).from_internal(units, AbscissaUnit::ns);
  for (std::size_t i = 0; i < ns.abscissa.size(); ++i)
    EXPECT_NEAR(back.abscissa[i], ns.abscissa[i], 1e-12 * ns.abscissa[i]);
  EXPECT_NEAR(*back.gamma_0, *ns.gamma_0, 1e-12 * *ns.gamma_0);

  ExperimentalDataset ghz{{-6.0, -0.1, 0.7, 9.0}, {1, 2, 3, 4}, AbscissaUnit::ghz, std::nullopt};
  const auto internal = ghz.to_internal(units);
  EXPECT_NEAR(internal.abscissa[3], 9.0 / 2.3, 1e-15);
  const auto back2 = internal.from_internal(units, AbscissaUnit::ghz);
  for (std::size_t i = 0; i < ghz.abscissa.size(); ++i)
    EXPECT_NEAR(back2.abscissa[i], ghz.abscissa[i], 1e-12 * std::abs(ghz.abscissa[i]));
}

TEST(Units, RatesScaleInverselyToTimes) {
  const UnitSystem units{0.5};
  ExperimentalDataset ds{{1.0, 2.0}, {1, 1}, AbscissaUnit::ns, 1.0 / 1000.0};
  const auto internal = ds.to_internal(units);
  EXPECT_NEAR(internal.abscissa[0], std::numbers::pi, 1e-15);
  EXPECT_NEAR(*internal.gamma_0 * internal.abscissa[0], *ds.gamma_0 * ds.abscissa[0], 1e-18);
}

TEST(Dataset, ReadsHistogramAndDetuningTables) {
  std::istringstream hist("time_ns,counts\n0,100\n1.5,80\n3,61\n");
  const auto h = dataset_from_table(parse_csv(hist), "hist");
  EXPECT_EQ(h.unit, AbscissaUnit::ns);
  EXPECT_EQ(h.counts, (std::vector<double>{100, 80, 61}));

  std::istringstream det("detuning_GHz,rate\n-1,0.2\n0,0.5\n1,0.21\n");
  const auto d = dataset_from_table(parse_csv(det), "det");
  EXPECT_EQ(d.unit, AbscissaUnit::ghz);
  EXPECT_EQ(d.abscissa, (std::vector<double>{-1, 0, 1}));
}

TEST(Dataset, ValidationErrorsNameTheSource) {
  std::istringstream bad("time_ns,counts\n0,1\n0,2\n");
  try {
    dataset_from_table(parse_csv(bad), "bad.csv");
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("bad.csv"), std::string::npos);
  }
  std::istringstream neg("time_ns,counts\n0,1\n1,-2\n");
  EXPECT_THROW(dataset_from_table(parse_csv(neg), "neg"), std::invalid_argument);
  std::istringstream cols("t,y\n0,1\n");
  EXPECT_THROW(dataset_from_table(parse_csv(cols), "cols"), std::invalid_argument);
}

TEST(Dataset, PoissonWeights) {
  EXPECT_EQ(poisson_weights({0.0, 0.5, 4.0}), (std::vector<double>{1.0, 1.0, 0.25}));
}

TEST(FitJson, CarriesNamesErrorsAndWindow) {
  const auto t = grid(0.0, 100.0, 201);
  auto y = sample(exponential_model, t, {1.0, 0.05});
  RandomStream rng(1);
  for (auto& v : y) v += 1e-4 * rng.normal();
  const auto j = to_json(fit_exponential(t, y, 10.0, 90.0));
  EXPECT_EQ(j["model"], "exponential");
  ASSERT_EQ(j["parameters"].size(), 2u);
  EXPECT_EQ(j["parameters"][1]["name"], "Gamma");
  EXPECT_GT(j["parameters"][1]["error"].get<double>(), 0.0);
  EXPECT_EQ(j["error_method"], "diagonal covariance");
  EXPECT_EQ(j["window"][0].get<double>(), 10.0);
  EXPECT_EQ(j["window"][1].get<double>(), 90.0);
  EXPECT_TRUE(j["converged"].get<bool>());
  EXPECT_TRUE(j["derived"].contains("Gamma"));
}
