#include "sfda/eval.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <thread>
#include <tuple>

#include "sfda/error.hpp"
#include "sfda/log.hpp"
#include "sfda/transport.hpp"

namespace sfda {

std::vector<double> windowed_hr(const TimeSeries& signal, double window_s, double hop_s, HrBand band) {
  if (!(window_s > 0.0) || !(hop_s > 0.0)) throw InvalidArgument("windowed_hr: window and hop must be positive");
  const auto window = static_cast<std::size_t>(std::llround(window_s * signal.rate()));
  const auto hop = static_cast<std::size_t>(std::llround(hop_s * signal.rate()));
  if (window < 2 || hop < 1) throw InvalidArgument("windowed_hr: window too short for the sample rate");
  if (signal.size() < window)
    throw InvalidArgument("windowed_hr: signal of " + std::to_string(signal.duration()) +
                          " s is shorter than one window of " + std::to_string(window_s) + " s");
  std::vector<double> out;
  const auto& s = signal.samples();
  for (std::size_t start = 0; start + window <= s.size(); start += hop) {
    std::vector<double> segment(s.begin() + static_cast<std::ptrdiff_t>(start),
                                s.begin() + static_cast<std::ptrdiff_t>(start + window));
    out.push_back(estimate_hr(TimeSeries(std::move(segment), signal.rate()), band));
  }
  return out;
}

namespace {

// Sample variance is treated as zero below this fraction of the second moment,
// so float noise in a constant sequence never produces a spurious R.
constexpr double kDegenerateVariance = 1e-18;

}  // namespace

MetricsReport compute_metrics(const std::vector<double>& preds, const std::vector<double>& labels) {
  if (preds.size() != labels.size()) throw InvalidArgument("compute_metrics: length mismatch");
  if (preds.empty()) throw InvalidArgument("compute_metrics: no windows");
  MetricsReport r;
  r.n_windows = preds.size();
  const double n = static_cast<double>(preds.size());
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double mean_p = 0.0;
  double mean_l = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - labels[i];
    abs_sum += std::abs(d);
    sq_sum += d * d;
    mean_p += preds[i];
    mean_l += labels[i];
    r.per_window.emplace_back(preds[i], labels[i]);
  }
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  mean_p /= n;
  mean_l /= n;
  double spp = 0.0, sll = 0.0, spl = 0.0, mpp = 0.0, mll = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double a = preds[i] - mean_p;
    const double b = labels[i] - mean_l;
    spp += a * a;
    sll += b * b;
    spl += a * b;
    mpp += preds[i] * preds[i];
    mll += labels[i] * labels[i];
  }
  if (spp > kDegenerateVariance * mpp && sll > kDegenerateVariance * mll)
    r.pearson_r = std::clamp(spl / std::sqrt(spp * sll), -1.0, 1.0);
  return r;
}

MetricsReport evaluate(const SignalPredictor& predict, const std::vector<LabeledClip>& clips, double window_s) {
  std::vector<double> preds;
  std::vector<double> labels;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (!clips[i].label) throw InvalidData("evaluate: clip " + std::to_string(i) + " has no label");
    const auto p = windowed_hr(predict(clips[i].clip), window_s, window_s);
    const auto l = windowed_hr(clips[i].label->signal, window_s, window_s);
    preds.insert(preds.end(), p.begin(), p.end());
    labels.insert(labels.end(), l.begin(), l.end());
  }
  return compute_metrics(preds, labels);
}

MetricsReport evaluate(const nn::ModelState& model, const std::vector<LabeledClip>& clips, double window_s) {
  return evaluate([&](const ClipTensor& c) { return infer(model, c).signal; }, clips, window_s);
}

MetricsReport evaluate(const AdaptedModel& model, const std::vector<LabeledClip>& clips, double window_s) {
  return evaluate([&](const ClipTensor& c) { return infer(model, c).signal; }, clips, window_s);
}

double mean_spectral_fwd(const SignalPredictor& predict, const std::vector<LabeledClip>& clips) {
  if (clips.empty()) throw InvalidArgument("mean_spectral_fwd: no clips");
  double total = 0.0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (!clips[i].label) throw InvalidData("mean_spectral_fwd: clip " + std::to_string(i) + " has no label");
    const PowerSpectrum pred = band_psd(predict(clips[i].clip));
    const PowerSpectrum label = band_psd(clips[i].label->signal);
    total += fwd_distance(spectral_softmax(pred).probs, spectral_softmax(label).probs, 60.0 * pred.resolution);
  }
  return total / static_cast<double>(clips.size());
}

Method method_by_name(const std::string& name) {
  using PL = PretrainLoss;
  using CL = ConsistencyLoss;
  if (name == "no-adapt") return {name, PL::Fwd, std::nullopt, std::nullopt};
  if (name == "no-adapt-kl") return {name, PL::Kl, std::nullopt, std::nullopt};
  if (name == "no-adapt-ce") return {name, PL::FrequencyCe, std::nullopt, std::nullopt};
  if (name == "sfda-fwd") return {name, PL::Fwd, CL::Fwd, std::nullopt};
  if (name == "sfda-kl") return {name, PL::Kl, CL::Kl, std::nullopt};
  if (name == "sfda-ce") return {name, PL::FrequencyCe, CL::Fwd, std::nullopt};
  if (name == "sfda-time-wd") return {name, PL::Fwd, CL::TimeWd, std::nullopt};
  if (name == "sfda-fwd-oneshot") return {name, PL::Fwd, CL::Fwd, std::size_t{1}};
  if (name == "sfda-fwd-negpearson") return {name, PL::FwdNegPearson, CL::Fwd, std::nullopt};
  throw ConfigError("unknown method '" + name + "'");
}

std::vector<std::string> known_methods() {
  return {"no-adapt", "no-adapt-kl", "no-adapt-ce", "sfda-fwd", "sfda-kl", "sfda-ce", "sfda-time-wd",
          "sfda-fwd-oneshot", "sfda-fwd-negpearson"};
}

std::filesystem::path pretrained_checkpoint_path(const std::filesystem::path& dir, const std::string& source,
                                                 PretrainLoss loss, std::uint64_t seed) {
  std::string loss_name(to_string(loss));
  for (auto& ch : loss_name)
    if (ch == '+') ch = '-';
  return dir / ("pretrained-" + source + "-" + loss_name + "-seed" + std::to_string(seed) + ".sfda");
}

DomainSpec seeded_spec(const DomainSpec& spec, std::uint64_t run_seed) {
  DomainSpec out = spec;
  out.seed = derive_seed(derive_seed(run_seed, "synth"), spec.seed);
  return out;
}

namespace {

// Runs jobs[0..n) on up to `threads` workers; the first exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& job) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

std::vector<ExperimentRow> run_experiment(const ExperimentSpec& spec) {
  if (spec.sources.empty() || spec.targets.empty() || spec.methods.empty() || spec.seeds.empty())
    throw InvalidArgument("run_experiment: empty experiment matrix");
  std::vector<Method> methods;
  for (const auto& name : spec.methods) methods.push_back(method_by_name(name));

  // Pretraining jobs are shared by every target and method that need them.
  using PretrainKey = std::tuple<std::size_t, std::uint64_t, PretrainLoss>;
  std::map<PretrainKey, nn::ModelState> pretrained;
  for (std::size_t s = 0; s < spec.sources.size(); ++s)
    for (auto seed : spec.seeds)
      for (const auto& m : methods) pretrained.emplace(PretrainKey{s, seed, m.pretrain_loss}, nn::ModelState{});
  std::vector<PretrainKey> keys;
  for (const auto& [k, _] : pretrained) keys.push_back(k);

  parallel_for(keys.size(), spec.threads, [&](std::size_t i) {
    const auto [s, seed, loss] = keys[i];
    const DomainSpec& source = spec.sources[s];
    nn::ModelState& slot = pretrained.at(keys[i]);
    if (spec.checkpoint_dir) {
      const auto path = pretrained_checkpoint_path(*spec.checkpoint_dir, source.name, loss, seed);
      if (!std::filesystem::exists(path))
        throw InvalidData("experiment cell (source " + source.name + ", loss " + std::string(to_string(loss)) +
                          ", seed " + std::to_string(seed) + "): missing pretrained checkpoint " + path.string());
      slot = nn::checkpoint_load(path);
      return;
    }
    const auto data = make_domain_dataset(seeded_spec(source, seed), spec.n_source_clips, spec.duration_s, true);
    PretrainConfig cfg = spec.pretrain;
    cfg.loss = loss;
    cfg.seed = derive_seed(seed, "pretrain");
    slot = pretrain(data, cfg).model;
  });

  struct Cell {
    std::size_t source, target, method;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < spec.sources.size(); ++s)
    for (std::size_t t = 0; t < spec.targets.size(); ++t)
      for (std::size_t m = 0; m < methods.size(); ++m)
        for (auto seed : spec.seeds) cells.push_back({s, t, m, seed});

  std::vector<ExperimentRow> rows(cells.size());
  parallel_for(cells.size(), spec.threads, [&](std::size_t i) {
    const Cell& c = cells[i];
    const Method& method = methods[c.method];
    const DomainSpec& target = spec.targets[c.target];
    // Adaptation sees clips only; labels are kept for scoring.
    const auto data = make_domain_dataset(seeded_spec(target, c.seed), spec.n_target_clips, spec.duration_s, true);
    const nn::ModelState& base = pretrained.at(PretrainKey{c.source, c.seed, method.pretrain_loss});
    ExperimentRow row{spec.sources[c.source].name, target.name, method.name, c.seed, {}};
    if (!method.adapt_loss) {
      row.metrics = evaluate(base, data, spec.window_s);
      row.spectral_fwd_bpm = mean_spectral_fwd([&](const ClipTensor& x) { return infer(base, x).signal; }, data);
    } else {
      AdaptConfig cfg = spec.adapt;
      cfg.loss = *method.adapt_loss;
      cfg.seed = derive_seed(c.seed, "adapt");
      if (method.num_target_clips) cfg.num_target_clips = method.num_target_clips;
      const auto adapted = adapt(base, clips_of(data), cfg);
      row.metrics = evaluate(adapted.model, data, spec.window_s);
      row.spectral_fwd_bpm =
          mean_spectral_fwd([&](const ClipTensor& x) { return infer(adapted.model, x).signal; }, data);
    }
    log_info("experiment " + row.source + "->" + row.target + " " + row.method + " seed " +
             std::to_string(row.seed) + " mae " + std::to_string(row.metrics.mae));
    rows[i] = std::move(row);
  });
  return rows;
}

std::string format_report(const std::vector<ExperimentRow>& rows) {
  std::string out = std::string(kReportHeader) + "\n";
  char buf[256];
  for (const auto& r : rows) {
    std::string pearson;
    if (r.metrics.pearson_r) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.metrics.pearson_r);
      pearson = buf;
    }
    std::snprintf(buf, sizeof buf, ",%llu,%zu,%.6f,%.6f,", static_cast<unsigned long long>(r.seed),
                  r.metrics.n_windows, r.metrics.mae, r.metrics.rmse);
    out += r.source + "," + r.target + "," + r.method + buf + pearson + "\n";
  }
  return out;
}

}  // namespace sfda
