#include "sfda/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <vector>

#include "sfda/binary_io.hpp"
#include "sfda/error.hpp"
#include "sfda/eval.hpp"
#include "sfda/gradcheck.hpp"
#include "sfda/log.hpp"
#include "sfda/nn/checkpoint.hpp"
#include "sfda/pipeline.hpp"
#include "sfda/rng.hpp"
#include "sfda/synth.hpp"
#include "sfda/synth_json.hpp"

namespace sfda::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json default_config() {
  const PretrainConfig pre;
  const AdaptConfig ad;
  const nn::ModelConfig arch;
  const GradcheckOptions gc;
  const ExperimentSpec ex;
  return json{
      {"seed", 0},
      {"threads", 1},
      {"source", domain_spec_json(default_source_spec())},
      {"target", domain_spec_json(default_target_spec())},
      {"data",
       {{"n_source_clips", ex.n_source_clips},
        {"n_target_clips", ex.n_target_clips},
        {"duration_s", ex.duration_s},
        {"source_dir", nullptr},
        {"target_dir", nullptr}}},
      {"model",
       {{"kernel", arch.kernel},
        {"enc_channels1", arch.enc_channels1},
        {"enc_channels2", arch.enc_channels2},
        {"dec_channels", arch.dec_channels}}},
      {"pretrain",
       {{"epochs", pre.epochs},
        {"batch_size", pre.batch_size},
        {"lr", pre.lr},
        {"weight_decay", pre.weight_decay},
        {"loss", to_string(pre.loss)}}},
      {"adapt",
       {{"epochs", ad.epochs},
        {"batch_size", ad.batch_size},
        {"lr", ad.lr},
        {"weight_decay", ad.weight_decay},
        {"r_range", {ad.r_lo, ad.r_hi}},
        {"num_target_clips", nullptr},
        {"loss", to_string(ad.loss)},
        {"checkpoint", nullptr}}},
      {"infer", {{"checkpoint", nullptr}, {"clips_dir", nullptr}}},
      {"eval",
       {{"window_s", ex.window_s},
        {"checkpoint", nullptr},
        {"method", "no-adapt"},
        {"methods", ex.methods},
        {"seeds", {0, 1, 2}},
        {"checkpoint_dir", nullptr}}},
      {"otbench", {{"methods", {"sfda-fwd", "sfda-kl", "sfda-ce", "sfda-time-wd"}}, {"seeds", {0, 1, 2}}}},
      {"gradcheck",
       {{"cases", gc.cases},
        {"op_tolerance", gc.op_tolerance},
        {"end_to_end_tolerance", gc.end_to_end_tolerance},
        {"perturb_suite", gc.perturb_suite},
        {"filter", gc.filter}}},
  };
}

namespace {

json merge_at(const json& base, const json& overlay, const std::string& path) {
  if (!overlay.is_object()) throw ConfigError("config: '" + (path.empty() ? "<root>" : path) + "' must be an object");
  json out = base;
  for (const auto& [key, value] : overlay.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + here + "'");
    if (base[key].is_object() && value.is_object()) {
      out[key] = merge_at(base[key], value, here);
    } else if (base[key].is_object()) {
      throw ConfigError("config: '" + here + "' must be an object");
    } else {
      out[key] = value;
    }
  }
  return out;
}

}  // namespace

json merge_config(const json& base, const json& overlay) { return merge_at(base, overlay, ""); }

void apply_override(json& tree, std::string_view dotted_key, std::string_view text) {
  if (dotted_key.empty()) throw ConfigError("config override with empty key");
  json value = json::parse(text.begin(), text.end(), nullptr, false);
  if (value.is_discarded()) value = std::string(text);
  json patch = value;
  std::string key(dotted_key);
  for (auto pos = key.rfind('.'); pos != std::string::npos; pos = key.rfind('.')) {
    patch = json{{key.substr(pos + 1), patch}};
    key.resize(pos);
  }
  patch = json{{key, patch}};
  tree = merge_config(tree, patch);
}

namespace {

// Typed reads of a resolved tree; type errors name the dotted key.
class ConfigView {
 public:
  explicit ConfigView(const json& root) : root_(root) {}

  const json& node(const std::string& dotted) const {
    const json* cur = &root_;
    std::size_t start = 0;
    while (true) {
      const auto dot = dotted.find('.', start);
      const std::string part = dotted.substr(start, dot - start);
      if (!cur->is_object() || !cur->contains(part)) throw ConfigError("config: missing key '" + dotted + "'");
      cur = &(*cur)[part];
      if (dot == std::string::npos) return *cur;
      start = dot + 1;
    }
  }

  std::uint64_t u64(const std::string& key) const {
    const json& v = node(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0))
      throw ConfigError("config: '" + key + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
  }
  std::size_t size(const std::string& key) const { return static_cast<std::size_t>(u64(key)); }
  double real(const std::string& key) const {
    const json& v = node(key);
    if (!v.is_number()) throw ConfigError("config: '" + key + "' must be a number");
    return v.get<double>();
  }
  std::string text(const std::string& key) const {
    const json& v = node(key);
    if (!v.is_string()) throw ConfigError("config: '" + key + "' must be a string");
    return v.get<std::string>();
  }
  std::optional<std::string> optional_text(const std::string& key) const {
    if (node(key).is_null()) return std::nullopt;
    return text(key);
  }
  std::optional<std::size_t> optional_size(const std::string& key) const {
    if (node(key).is_null()) return std::nullopt;
    return size(key);
  }
  std::vector<std::string> texts(const std::string& key) const {
    const json& v = node(key);
    if (!v.is_array()) throw ConfigError("config: '" + key + "' must be a list of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError("config: '" + key + "' must be a list of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }
  std::vector<std::uint64_t> u64s(const std::string& key) const {
    const json& v = node(key);
    if (!v.is_array()) throw ConfigError("config: '" + key + "' must be a list of integers");
    std::vector<std::uint64_t> out;
    for (const auto& e : v) {
      if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<long long>() >= 0))
        throw ConfigError("config: '" + key + "' must be a list of non-negative integers");
      out.push_back(e.get<std::uint64_t>());
    }
    return out;
  }

 private:
  const json& root_;
};

struct Resolved {
  json tree;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  DomainSpec source;
  DomainSpec target;
  std::size_t n_source_clips = 0;
  std::size_t n_target_clips = 0;
  double duration_s = 0.0;
  std::optional<fs::path> source_dir;
  std::optional<fs::path> target_dir;
  nn::ModelConfig arch;
  PretrainConfig pretrain;
  AdaptConfig adapt;
  std::optional<fs::path> adapt_checkpoint;
  std::optional<fs::path> infer_checkpoint;
  std::optional<fs::path> infer_clips_dir;
  double window_s = 10.0;
  std::optional<fs::path> eval_checkpoint;
  std::string eval_method;
  std::vector<std::string> eval_methods;
  std::vector<std::uint64_t> eval_seeds;
  std::optional<fs::path> eval_checkpoint_dir;
  std::vector<std::string> otbench_methods;
  std::vector<std::uint64_t> otbench_seeds;
  GradcheckOptions gradcheck;
};

std::optional<fs::path> as_path(std::optional<std::string> s) {
  if (!s) return std::nullopt;
  return fs::path(*s);
}

Resolved resolve(json tree) {
  const ConfigView c(tree);
  Resolved r;
  r.seed = c.u64("seed");
  r.threads = c.size("threads");
  if (r.threads < 1) throw ConfigError("config: 'threads' must be at least 1");
  r.source = parse_domain_spec(c.node("source"), default_source_spec(), "source");
  r.target = parse_domain_spec(c.node("target"), default_target_spec(), "target");
  r.n_source_clips = c.size("data.n_source_clips");
  r.n_target_clips = c.size("data.n_target_clips");
  r.duration_s = c.real("data.duration_s");
  if (r.n_source_clips < 1 || r.n_target_clips < 1) throw ConfigError("config: clip counts must be at least 1");
  if (!(r.duration_s > 0.0)) throw ConfigError("config: 'data.duration_s' must be positive");
  r.source_dir = as_path(c.optional_text("data.source_dir"));
  r.target_dir = as_path(c.optional_text("data.target_dir"));

  r.arch.kernel = c.size("model.kernel");
  r.arch.enc_channels1 = c.size("model.enc_channels1");
  r.arch.enc_channels2 = c.size("model.enc_channels2");
  r.arch.dec_channels = c.size("model.dec_channels");
  if (r.arch.kernel % 2 == 0 || r.arch.enc_channels1 < 1 || r.arch.enc_channels2 < 1 || r.arch.dec_channels < 1)
    throw ConfigError("config: model kernel must be odd and channel counts positive");

  r.pretrain.epochs = c.size("pretrain.epochs");
  r.pretrain.batch_size = c.size("pretrain.batch_size");
  r.pretrain.lr = c.real("pretrain.lr");
  r.pretrain.weight_decay = c.real("pretrain.weight_decay");
  r.pretrain.loss = parse_pretrain_loss(c.text("pretrain.loss"));
  r.pretrain.seed = derive_seed(r.seed, "pretrain");

  r.adapt.epochs = c.size("adapt.epochs");
  r.adapt.batch_size = c.size("adapt.batch_size");
  r.adapt.lr = c.real("adapt.lr");
  r.adapt.weight_decay = c.real("adapt.weight_decay");
  const json& range = c.node("adapt.r_range");
  if (!range.is_array() || range.size() != 2 || !range[0].is_number() || !range[1].is_number())
    throw ConfigError("config: 'adapt.r_range' must be [lo, hi]");
  r.adapt.r_lo = range[0].get<double>();
  r.adapt.r_hi = range[1].get<double>();
  r.adapt.num_target_clips = c.optional_size("adapt.num_target_clips");
  r.adapt.loss = parse_consistency_loss(c.text("adapt.loss"));
  r.adapt.seed = derive_seed(r.seed, "adapt");
  r.adapt_checkpoint = as_path(c.optional_text("adapt.checkpoint"));

  r.infer_checkpoint = as_path(c.optional_text("infer.checkpoint"));
  r.infer_clips_dir = as_path(c.optional_text("infer.clips_dir"));

  r.window_s = c.real("eval.window_s");
  r.eval_checkpoint = as_path(c.optional_text("eval.checkpoint"));
  r.eval_method = c.text("eval.method");
  r.eval_methods = c.texts("eval.methods");
  r.eval_seeds = c.u64s("eval.seeds");
  r.eval_checkpoint_dir = as_path(c.optional_text("eval.checkpoint_dir"));
  r.otbench_methods = c.texts("otbench.methods");
  r.otbench_seeds = c.u64s("otbench.seeds");
  for (const auto& m : r.eval_methods) method_by_name(m);
  for (const auto& m : r.otbench_methods) method_by_name(m);

  r.gradcheck.seed = r.seed;
  r.gradcheck.cases = c.size("gradcheck.cases");
  r.gradcheck.op_tolerance = c.real("gradcheck.op_tolerance");
  r.gradcheck.end_to_end_tolerance = c.real("gradcheck.end_to_end_tolerance");
  r.gradcheck.perturb_suite = c.text("gradcheck.perturb_suite");
  r.gradcheck.filter = c.text("gradcheck.filter");

  try {
    r.pretrain.validate();
    r.adapt.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  r.tree = std::move(tree);
  return r;
}

struct Invocation {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::optional<std::size_t> num_target_clips;
  std::vector<std::string> extras;
};

json load_tree(const Invocation& inv) {
  json tree = default_config();
  if (!inv.config_path.empty()) {
    const fs::path path(inv.config_path);
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    json file = json::parse(io::read_text_file(path), nullptr, false);
    if (file.is_discarded()) throw ConfigError("config file is not valid JSON: " + path.string());
    tree = merge_config(tree, file);
  }
  for (const auto& extra : inv.extras) {
    if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos)
      throw ConfigError("unrecognized argument '" + extra + "' (overrides take the form --key.path=value)");
    const auto eq = extra.find('=');
    apply_override(tree, std::string_view(extra).substr(2, eq - 2), std::string_view(extra).substr(eq + 1));
  }
  if (inv.seed) tree["seed"] = *inv.seed;
  if (inv.num_target_clips) {
    if (inv.command == "synth") tree["data"]["n_target_clips"] = *inv.num_target_clips;
    else tree["adapt"]["num_target_clips"] = *inv.num_target_clips;
  }
  return tree;
}

// Output directories must be empty unless --force; files written by a
// command are overwritten in place.
fs::path prepare_out_dir(const Invocation& inv) {
  if (inv.out.empty()) throw ConfigError(inv.command + ": --out DIR is required");
  const fs::path dir(inv.out);
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(inv.command + ": output path is not a directory: " + dir.string());
    if (!fs::is_empty(dir) && !inv.force)
      throw ConfigError(inv.command + ": output directory " + dir.string() + " is not empty (use --force)");
  }
  fs::create_directories(dir);
  return dir;
}

void freeze_config(const fs::path& dir, const json& tree) { io::write_text_file(dir / "config.json", tree.dump(2) + "\n"); }

const fs::path& require_path(const std::optional<fs::path>& p, const std::string& key) {
  if (!p) throw ConfigError("config: '" + key + "' must be set");
  return *p;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

bool same_location(const fs::path& a, const fs::path& b) {
  return fs::weakly_canonical(fs::absolute(a)) == fs::weakly_canonical(fs::absolute(b));
}

bool is_within(const fs::path& p, const fs::path& dir) {
  const auto child = fs::weakly_canonical(fs::absolute(p));
  const auto root = fs::weakly_canonical(fs::absolute(dir));
  auto c = child.begin();
  for (auto r = root.begin(); r != root.end(); ++r, ++c) {
    if (r->empty()) continue;  // trailing separator
    if (c == child.end() || *c != *r) return false;
  }
  return true;
}

int cmd_synth(const Invocation& inv, const Resolved& r, std::ostream& out) {
  const fs::path dir = prepare_out_dir(inv);
  const DomainSpec source = seeded_spec(r.source, r.seed);
  const DomainSpec target = seeded_spec(r.target, r.seed);
  if (inv.force) {
    fs::remove_all(dir / "source");
    fs::remove_all(dir / "target");
  }
  const auto src = make_domain_dataset(source, r.n_source_clips, r.duration_s, true);
  const auto tgt = make_domain_dataset(target, r.n_target_clips, r.duration_s, true);
  save_dataset(src, source, r.duration_s, dir / "source");
  save_dataset(tgt, target, r.duration_s, dir / "target");
  freeze_config(dir, r.tree);
  out << "source " << src.size() << " clips -> " << (dir / "source").string() << "\n";
  out << "target " << tgt.size() << " clips -> " << (dir / "target").string() << "\n";
  return kExitOk;
}

int cmd_pretrain(const Invocation& inv, const Resolved& r, std::ostream& out) {
  const fs::path& source_dir = require_path(r.source_dir, "data.source_dir");
  const fs::path dir = prepare_out_dir(inv);
  const auto source = load_dataset(source_dir);
  std::string log = "epoch,mean_loss\n";
  const auto result = pretrain(source, r.pretrain, r.arch, [&](const EpochRecord& e) {
    log += std::to_string(e.epoch) + "," + fmt("%.9g", e.mean_loss) + "\n";
  });
  nn::checkpoint_save(result.model, dir / "pretrained.sfda");
  io::write_text_file(dir / "pretrain_log.csv", log);
  freeze_config(dir, r.tree);
  out << "pretrained on " << source.size() << " clips for " << r.pretrain.epochs << " epochs -> "
      << (dir / "pretrained.sfda").string() << "\n";
  return kExitOk;
}

int cmd_adapt(const Invocation& inv, const Resolved& r, std::ostream& out) {
  const fs::path& checkpoint = require_path(r.adapt_checkpoint, "adapt.checkpoint");
  const fs::path& target_dir = require_path(r.target_dir, "data.target_dir");
  if (r.source_dir && same_location(*r.source_dir, target_dir))
    throw ConfigError("adapt: target dataset path equals the source dataset path " + target_dir.string());
  const fs::path dir = prepare_out_dir(inv);

  std::size_t source_reads = 0;
  AdaptResult result;
  std::string log = "step,epoch,aug,r,l_adapting,spatial_term,temporal_term\n";
  std::size_t n_clips = 0;
  {
    io::ReadObserverGuard audit([&](const fs::path& p) {
      if (r.source_dir && is_within(p, *r.source_dir)) ++source_reads;
    });
    const nn::ModelState pretrained = nn::checkpoint_load(checkpoint);
    const auto target = clips_of(strip_labels(load_dataset(target_dir)));
    n_clips = r.adapt.num_target_clips.value_or(target.size());
    result = adapt(pretrained, target, r.adapt, [&](const StepRecord& s) {
      log += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + s.aug + "," + fmt("%.9g", s.r) + "," +
             fmt("%.9g", s.loss) + "," + fmt("%.9g", s.spatial_term) + "," + fmt("%.9g", s.temporal_term) + "\n";
    });
  }
  if (source_reads > 0)
    throw VerificationFailure("adapt: " + std::to_string(source_reads) + " reads from the source dataset path");
  save_adapted(result.model, dir / "adapted.sfda");
  io::write_text_file(dir / "adapt_log.csv", log);
  freeze_config(dir, r.tree);
  out << "adapted on " << n_clips << " target clips, " << result.log.size() << " steps, source reads 0 -> "
      << (dir / "adapted.sfda").string() << "\n";
  return kExitOk;
}

// Either checkpoint kind; adapted checkpoints carry the "E." prefix.
struct AnyModel {
  std::optional<nn::ModelState> pretrained;
  std::optional<AdaptedModel> adapted;

  Inference infer_clip(const ClipTensor& clip) const {
    return adapted ? infer(*adapted, clip) : infer(*pretrained, clip);
  }
};

AnyModel load_any(const fs::path& path) {
  const auto tensors = nn::load_tensors(path);
  AnyModel m;
  if (nn::has_tensor(tensors, "E.spatial_logits")) m.adapted = adapted_from_tensors(tensors);
  else m.pretrained = nn::model_from_tensors(tensors);
  return m;
}

int cmd_infer(const Invocation& inv, const Resolved& r, std::ostream& out) {
  const fs::path& checkpoint = require_path(r.infer_checkpoint, "infer.checkpoint");
  const fs::path clips_dir = r.infer_clips_dir ? *r.infer_clips_dir : require_path(r.target_dir, "infer.clips_dir");
  const fs::path dir = prepare_out_dir(inv);
  const AnyModel model = load_any(checkpoint);
  const auto manifest = load_manifest(clips_dir);
  const auto clips = load_dataset(clips_dir);
  std::string csv = "file,hr_bpm\n";
  for (std::size_t i = 0; i < clips.size(); ++i)
    csv += manifest.files[i] + "," + fmt("%.6f", model.infer_clip(clips[i].clip).hr_bpm) + "\n";
  io::write_text_file(dir / "predictions.csv", csv);
  freeze_config(dir, r.tree);
  out << csv;
  return kExitOk;
}

ExperimentSpec experiment_spec(const Resolved& r, std::vector<std::string> methods, std::vector<std::uint64_t> seeds) {
  ExperimentSpec spec;
  spec.sources = {r.source};
  spec.targets = {r.target};
  spec.methods = std::move(methods);
  spec.seeds = std::move(seeds);
  spec.n_source_clips = r.n_source_clips;
  spec.n_target_clips = r.n_target_clips;
  spec.duration_s = r.duration_s;
  spec.window_s = r.window_s;
  spec.pretrain = r.pretrain;
  spec.adapt = r.adapt;
  spec.checkpoint_dir = r.eval_checkpoint_dir;
  spec.threads = r.threads;
  return spec;
}

int cmd_eval(const Invocation& inv, const Resolved& r, std::ostream& out) {
  const fs::path dir = prepare_out_dir(inv);
  std::vector<ExperimentRow> rows;
  if (r.eval_checkpoint) {
    // Single checkpoint on a labeled dataset directory.
    const fs::path& target_dir = require_path(r.target_dir, "data.target_dir");
    const AnyModel model = load_any(*r.eval_checkpoint);
    const bool wants_raw = !method_by_name(r.eval_method).adapt_loss;
    if (wants_raw != model.pretrained.has_value())
      throw ConfigError("eval: method '" + r.eval_method + "' expects " +
                        (wants_raw ? "a pretrained" : "an adapted") + " checkpoint");
    const auto manifest = load_manifest(target_dir);
    const auto clips = load_dataset(target_dir);
    const SignalPredictor predict = [&](const ClipTensor& c) { return model.infer_clip(c).signal; };
    ExperimentRow row{r.source.name, manifest.spec.name, r.eval_method, r.seed, evaluate(predict, clips, r.window_s)};
    row.spectral_fwd_bpm = mean_spectral_fwd(predict, clips);
    rows.push_back(std::move(row));
  } else {
    rows = run_experiment(experiment_spec(r, r.eval_methods, r.eval_seeds));
  }
  const std::string report = format_report(rows);
  io::write_text_file(dir / "report.csv", report);
  freeze_config(dir, r.tree);
  out << report;
  return kExitOk;
}

inline constexpr const char* kOtbenchHeader =
    "source,target,method,pretrain_loss,adapt_loss,seed,n_windows,mae_bpm,rmse_bpm,pearson_r,spectral_fwd_bpm";

int cmd_otbench(const Invocation& inv, const Resolved& r, std::ostream& out) {
  const fs::path dir = prepare_out_dir(inv);
  const auto rows = run_experiment(experiment_spec(r, r.otbench_methods, r.otbench_seeds));
  std::string csv = std::string(kOtbenchHeader) + "\n";
  for (const auto& row : rows) {
    const Method m = method_by_name(row.method);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%llu,%zu,%.6f,%.6f,", static_cast<unsigned long long>(row.seed),
                  row.metrics.n_windows, row.metrics.mae, row.metrics.rmse);
    csv += row.source + "," + row.target + "," + row.method + "," + std::string(to_string(m.pretrain_loss)) + "," +
           (m.adapt_loss ? std::string(to_string(*m.adapt_loss)) : std::string("none")) + "," + buf +
           (row.metrics.pearson_r ? fmt("%.6f", *row.metrics.pearson_r) : std::string()) + "," +
           fmt("%.6f", row.spectral_fwd_bpm) + "\n";
  }
  io::write_text_file(dir / "otbench.csv", csv);
  freeze_config(dir, r.tree);
  out << csv;
  return kExitOk;
}

int cmd_gradcheck(const Invocation& inv, const Resolved& r, std::ostream& out) {
  const GradcheckReport report = run_gradcheck(r.gradcheck);
  const std::string text = report.format();
  out << text;
  if (!inv.out.empty()) {
    const fs::path dir = prepare_out_dir(inv);
    io::write_text_file(dir / "gradcheck.txt", text);
    freeze_config(dir, r.tree);
  }
  if (!report.passed()) {
    std::string failed;
    for (const auto& s : report.suites)
      if (!s.passed()) failed += (failed.empty() ? "" : ", ") + s.name;
    throw VerificationFailure("gradcheck failed: " + failed);
  }
  return kExitOk;
}

int dispatch(const Invocation& inv, std::ostream& out) {
  const Resolved r = resolve(load_tree(inv));
  if (inv.command == "synth") return cmd_synth(inv, r, out);
  if (inv.command == "pretrain") return cmd_pretrain(inv, r, out);
  if (inv.command == "adapt") return cmd_adapt(inv, r, out);
  if (inv.command == "infer") return cmd_infer(inv, r, out);
  if (inv.command == "eval") return cmd_eval(inv, r, out);
  if (inv.command == "otbench") return cmd_otbench(inv, r, out);
  return cmd_gradcheck(inv, r, out);
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Source-free adaptation of pulse-signal estimators"};
  app.require_subcommand(1);
  Invocation inv;
  const std::map<std::string, std::string> commands = {
      {"synth", "Generate source and target datasets"},
      {"pretrain", "Supervised pretraining on the source dataset"},
      {"adapt", "Source-free adaptation on unlabeled target clips"},
      {"infer", "Heart rate per clip with a checkpoint"},
      {"eval", "Windowed metrics for a checkpoint or an experiment matrix"},
      {"otbench", "Loss-ablation grid"},
      {"gradcheck", "Finite-difference gradient suites"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->allow_extras();
    sub->add_option("--config", inv.config_path, "JSON config file");
    sub->add_option("--seed", inv.seed, "Global seed");
    sub->add_option("--out", inv.out, "Output directory");
    sub->add_flag("--force", inv.force, "Allow a non-empty output directory");
    if (name == "synth" || name == "adapt")
      sub->add_option("--num-target-clips", inv.num_target_clips, "Target clip count (1 = one-shot)");
    sub->callback([&inv, sub, name = name] {
      inv.command = name;
      inv.extras = sub->remaining();
    });
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream o, eo;
    const int code = app.exit(e, o, eo);
    out << o.str();
    err << eo.str();
    return code == 0 ? kExitOk : kExitConfig;
  }

  set_log_level(LogLevel::Info);
  try {
    return dispatch(inv, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidArgument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const VerificationFailure& e) {
    err << "verification failure: " << e.what() << "\n";
    return kExitVerification;
  } catch (const InvalidData& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace sfda::cli
