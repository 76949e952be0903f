#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sfda/error.hpp"
#include "sfda/eval.hpp"
#include "sfda/rng.hpp"
#include "test_util.hpp"

using namespace sfda;

namespace {

TimeSeries sine(double hz, double seconds, double rate = 30.0) {
  std::vector<double> x(static_cast<std::size_t>(seconds * rate));
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate);
  return TimeSeries(std::move(x), rate);
}

ExperimentSpec tiny_experiment() {
  ExperimentSpec spec;
  spec.sources[0].frame_size = 8;
  spec.targets[0].frame_size = 8;
  spec.n_source_clips = 4;
  spec.n_target_clips = 2;
  spec.duration_s = 4.0;
  spec.window_s = 4.0;
  spec.pretrain.epochs = 1;
  spec.adapt.epochs = 1;
  return spec;
}

}  // namespace

TEST_CASE("metric examples") {
  const auto r = compute_metrics({70, 80, 90}, {73, 77, 93});
  CHECK(r.mae == doctest::Approx(3.0));
  CHECK(r.rmse == doctest::Approx(3.0));
  CHECK(r.n_windows == 3);
  const auto s = compute_metrics({60, 70}, {62, 76});
  CHECK(s.mae == doctest::Approx(4.0));
  CHECK(s.rmse == doctest::Approx(std::sqrt(20.0)));
  const auto same = compute_metrics({60, 70, 85}, {60, 70, 85});
  REQUIRE(same.pearson_r.has_value());
  CHECK(*same.pearson_r == doctest::Approx(1.0));
  CHECK(same.mae == 0.0);
  CHECK_FALSE(compute_metrics({60, 70, 80}, {75, 75, 75}).pearson_r.has_value());
  CHECK_THROWS_AS(compute_metrics({1, 2}, {1}), InvalidArgument);
  CHECK_THROWS_AS(compute_metrics({}, {}), InvalidArgument);
}

TEST_CASE("metric properties on random windows") {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(20);
    std::vector<double> p(n), l(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = rng.uniform(40, 180);
      l[i] = rng.uniform(40, 180);
    }
    const auto a = compute_metrics(p, l);
    CHECK(a.mae <= a.rmse + 1e-12);
    CHECK(a.mae >= 0.0);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::reverse(perm.begin(), perm.end());
    std::vector<double> pp(n), lp(n);
    for (std::size_t i = 0; i < n; ++i) {
      pp[i] = p[perm[i]];
      lp[i] = l[perm[i]];
    }
    const auto b = compute_metrics(pp, lp);
    CHECK(b.mae == doctest::Approx(a.mae));
    CHECK(b.rmse == doctest::Approx(a.rmse));
    if (a.pearson_r) CHECK(*b.pearson_r == doctest::Approx(*a.pearson_r));
    if (a.pearson_r) CHECK(std::abs(*a.pearson_r) <= 1.0 + 1e-12);
  }
}

TEST_CASE("windowing counts and stationarity") {
  const auto x = sine(1.2, 95.0);
  const auto w = windowed_hr(x, 30.0, 30.0);
  CHECK(w.size() == 3);
  const double bin_bpm = 60.0 * 30.0 / static_cast<double>(default_fft_len(900));
  for (double hr : w) CHECK(std::abs(hr - 72.0) <= bin_bpm);
  CHECK(windowed_hr(x, 10.0, 5.0).size() == 18);
  const auto single = windowed_hr(sine(1.5, 10.0), 10.0, 10.0);
  REQUIRE(single.size() == 1);
  CHECK(single[0] == doctest::Approx(estimate_hr(sine(1.5, 10.0))));
  CHECK_THROWS_AS(windowed_hr(sine(1.2, 5.0), 10.0), InvalidArgument);
  CHECK_THROWS_AS(windowed_hr(x, 0.0), InvalidArgument);
}

TEST_CASE("windows follow concatenated segments") {
  auto a = sine(1.0, 10.0).samples();
  const auto b = sine(2.0, 10.0).samples();
  a.insert(a.end(), b.begin(), b.end());
  const auto w = windowed_hr(TimeSeries(a, 30.0), 10.0, 10.0);
  REQUIRE(w.size() == 2);
  CHECK(std::abs(w[0] - 60.0) <= 3.0);
  CHECK(std::abs(w[1] - 120.0) <= 3.0);
}

TEST_CASE("evaluation pools windows and requires labels") {
  auto clips = make_domain_dataset(default_source_spec(), 2, 10.0, true);
  const SignalPredictor oracle = [&](const ClipTensor& c) {
    for (const auto& lc : clips)
      if (lc.clip == c) return lc.label->signal;
    throw InvalidState("unknown clip");
  };
  const auto r = evaluate(oracle, clips, 5.0);
  CHECK(r.n_windows == 4);
  CHECK(r.mae == 0.0);
  CHECK(mean_spectral_fwd(oracle, clips) == 0.0);
  clips[0].label.reset();
  CHECK_THROWS_AS(evaluate(oracle, clips, 5.0), InvalidData);
  CHECK_THROWS_AS(mean_spectral_fwd(oracle, clips), InvalidData);
  CHECK_THROWS_AS(mean_spectral_fwd(oracle, {}), InvalidArgument);
}

TEST_CASE("method registry") {
  for (const auto& name : known_methods()) CHECK(method_by_name(name).name == name);
  CHECK_FALSE(method_by_name("no-adapt").adapt_loss.has_value());
  CHECK(method_by_name("sfda-fwd-oneshot").num_target_clips == std::optional<std::size_t>(1));
  CHECK(method_by_name("sfda-kl").pretrain_loss == PretrainLoss::Kl);
  CHECK(method_by_name("sfda-time-wd").adapt_loss == ConsistencyLoss::TimeWd);
  CHECK_THROWS_AS(method_by_name("sfda-magic"), ConfigError);
}

TEST_CASE("seeded specs differ per run seed") {
  const auto spec = default_target_spec();
  CHECK(seeded_spec(spec, 0).seed != seeded_spec(spec, 1).seed);
  CHECK(seeded_spec(spec, 3).seed == seeded_spec(spec, 3).seed);
  CHECK(seeded_spec(spec, 0).name == spec.name);
}

TEST_CASE("experiment matrix shape and reproducibility") {
  auto spec = tiny_experiment();
  spec.methods = {"no-adapt"};
  const auto one = run_experiment(spec);
  REQUIRE(one.size() == 1);
  CHECK(one[0].method == "no-adapt");
  CHECK(one[0].metrics.n_windows == 2);
  CHECK(one[0].spectral_fwd_bpm >= 0.0);

  spec.methods = {"no-adapt", "sfda-fwd"};
  spec.seeds = {0, 1};
  const auto rows = run_experiment(spec);
  CHECK(rows.size() == 4);
  const auto again = run_experiment(spec);
  CHECK(format_report(rows) == format_report(again));
  const auto report = format_report(rows);
  CHECK(report.rfind(kReportHeader, 0) == 0);
  CHECK(std::count(report.begin(), report.end(), '\n') == 5);
  CHECK(rows[0].method == "no-adapt");
  CHECK(rows[0].seed == 0);
  CHECK(rows[1].seed == 1);
  CHECK(rows[2].method == "sfda-fwd");
  CHECK(format_report(one) == format_report({rows[0]}));

  spec.methods = {};
  CHECK_THROWS_AS(run_experiment(spec), InvalidArgument);
}

TEST_CASE("experiment reads pretrained checkpoints when asked") {
  test::TempDir dir("ckpts");
  auto spec = tiny_experiment();
  spec.methods = {"no-adapt"};
  spec.checkpoint_dir = dir.path();
  try {
    run_experiment(spec);
    FAIL("expected a missing checkpoint error");
  } catch (const InvalidData& e) {
    const std::string what = e.what();
    CHECK(what.find("source") != std::string::npos);
    CHECK(what.find("seed 0") != std::string::npos);
  }
  const auto source = make_domain_dataset(seeded_spec(spec.sources[0], 0), spec.n_source_clips, spec.duration_s, true);
  PretrainConfig cfg = spec.pretrain;
  cfg.seed = derive_seed(0, "pretrain");
  nn::checkpoint_save(pretrain(source, cfg).model,
                      pretrained_checkpoint_path(dir.path(), spec.sources[0].name, PretrainLoss::Fwd, 0));
  const auto from_disk = run_experiment(spec);
  spec.checkpoint_dir.reset();
  const auto trained = run_experiment(spec);
  CHECK(format_report(from_disk) == format_report(trained));
}
