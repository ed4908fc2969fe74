#include "derm/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>

#include "derm/config.hpp"
#include "derm/ensemble.hpp"
#include "derm/error.hpp"
#include "derm/hash.hpp"
#include "derm/interpret.hpp"
#include "derm/trainer.hpp"

namespace derm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  fs::path config;
  fs::path manifest;
  fs::path out;
  std::optional<std::uint64_t> seed;
  std::string run_name;
  // Per-command.
  std::vector<fs::path> checkpoints;
  fs::path from_run;
  std::string subset = "test";
  int limit = 0;
  std::optional<int> tta_n;
};

std::string utc_now(const char* fmt) {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, fmt, &tm);
  return buf;
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

// Everything a command needs: the resolved config, its run directory and a
// log sink.
class Run {
 public:
  Run(std::string command, const Options& opts, std::ostream& out, std::ostream& err)
      : command_(std::move(command)), opts_(opts), out_(out), err_(err) {
    config_text_ = read_config_text(opts.config);
    config_ = load_experiment_config(opts.config);
    if (!opts.out.empty()) config_.output_dir = opts.out;
    if (opts.seed) {
      config_.split.seed = *opts.seed;
      config_.train.seed = *opts.seed;
      config_.model.init_seed = *opts.seed;
      config_.ensemble.tta_seed = *opts.seed;
    }
    if (opts.tta_n) config_.ensemble.tta_n = *opts.tta_n;
    config_.validate();

    json identity = to_json(config_);
    identity["command"] = command_;
    identity["options"] = {{"manifest", opts.manifest.string()},
                           {"checkpoints", [&] {
                              json a = json::array();
                              for (const auto& p : opts.checkpoints) a.push_back(p.string());
                              return a;
                            }()},
                           {"from", opts.from_run.string()},
                           {"subset", opts.subset},
                           {"limit", opts.limit}};
    const std::string hash = sha256_hex(identity.dump());
    std::string name = opts.run_name.empty() ? command_ + "-" + utc_now("%Y%m%d-%H%M%S") + "-" + hash.substr(0, 8)
                                             : opts.run_name;
    dir_ = config_.output_dir / name;
    for (int i = 2; opts.run_name.empty() && fs::exists(dir_); ++i)
      dir_ = config_.output_dir / (name + "-" + std::to_string(i));
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw Error("cannot create run directory " + dir_.string() + ": " + ec.message());

    std::ofstream(dir_ / "config.yaml", std::ios::binary) << config_text_;
    write_json(to_json(config_), dir_ / "config.resolved.json");
    started_ = utc_now("%Y-%m-%dT%H:%M:%SZ");
    record_ = {{"command", command_},
               {"config_source", fs::absolute(opts.config).string()},
               {"config_sha256", sha256_hex(config_text_)},
               {"run_id", hash.substr(0, 16)},
               {"seeds",
                {{"split", config_.split.seed},
                 {"train", config_.train.seed},
                 {"model_init", config_.model.init_seed},
                 {"tta", config_.ensemble.tta_seed}}},
               {"started", started_}};
    log("run directory " + dir_.string());
  }

  const ExperimentConfig& config() const { return config_; }
  const fs::path& dir() const { return dir_; }
  json& record() { return record_; }
  std::ostream& out() { return out_; }
  void log(const std::string& line) { err_ << "[" << command_ << "] " << line << '\n' << std::flush; }

  const std::vector<LesionRecord>& catalog() {
    if (!catalog_) {
      config_.require_dataset();
      catalog_ = load_catalog(config_.dataset.metadata_path, config_.dataset.images_root);
      log("catalog: " + std::to_string(catalog_->size()) + " images");
    }
    return *catalog_;
  }

  SplitManifest manifest() {
    const fs::path p = opts_.manifest.empty() ? config_.output_dir / "manifest.json" : opts_.manifest;
    if (!fs::exists(p))
      throw DataError("manifest not found: " + p.string() + " (run prepare first or pass --manifest)");
    SplitManifest m = load_manifest(p);
    record_["manifest"] = {{"path", fs::absolute(p).string()}, {"sha256", sha256_file(p)}};
    return m;
  }

  // Hashes every artifact and writes run.json.
  void finish() {
    json artifacts = json::object();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir_))
      if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) artifacts[fs::relative(f, dir_).generic_string()] = sha256_file(f);
    record_["artifacts"] = artifacts;
    record_["finished"] = utc_now("%Y-%m-%dT%H:%M:%SZ");
    write_json(record_, dir_ / "run.json");
  }

 private:
  static std::string read_config_text(const fs::path& p) {
    if (p.empty()) throw ConfigError("--config is required");
    std::ifstream in(p, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + p.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  std::string command_;
  Options opts_;
  std::ostream& out_;
  std::ostream& err_;
  std::string config_text_;
  ExperimentConfig config_;
  fs::path dir_;
  json record_;
  std::string started_;
  std::optional<std::vector<LesionRecord>> catalog_;
};

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

void print_report_line(std::ostream& out, const std::string& title, const MetricsReport& r) {
  out << title << ": accuracy " << pct(r.accuracy) << ", top-2 " << pct(r.top_k.at(2)) << ", top-3 "
      << pct(r.top_k.at(3)) << ", macro F1 " << pct(r.macro_f1) << ", macro AUC " << pct(r.auc.macro) << '\n';
}

std::vector<std::string> subset_ids(const SplitManifest& m, const std::string& subset) {
  if (subset == "test") return m.test_ids;
  if (subset == "val") return m.val_ids;
  if (subset == "train") return m.train_ids;
  throw ConfigError("unknown subset '" + subset + "' (test, val, train)");
}

json distribution_json(const ClassDistribution& d) {
  json j = json::object();
  for (ClassLabel c : kAllClasses) j[std::string(code_of(c))] = d.counts[static_cast<std::size_t>(index_of(c))];
  j["total"] = d.total;
  return j;
}

void cmd_prepare(Run& run) {
  const auto& cfg = run.config();
  const auto& catalog = run.catalog();
  const SplitManifest m = prepare_manifest(catalog, cfg.split.seed, cfg.split.ratios, cfg.split.k);
  for (const auto& w : m.warnings) run.log("warning: " + w);
  save_manifest(m, run.dir() / "manifest.json");
  fs::create_directories(cfg.output_dir);
  save_manifest(m, cfg.output_dir / "manifest.json");

  const ClassDistribution images = class_distribution(catalog, Granularity::image);
  const ClassDistribution lesions = class_distribution(catalog, Granularity::lesion);
  const FileDataset train = FileDataset::select(catalog, m.train_ids, 0);
  const std::vector<double> train_weights = training_class_weights(train, cfg.train);
  const ClassWeights catalog_weights = compute_class_weights(images, WeightScheme::balanced);
  json weights = json::object(), catalog_w = json::object();
  for (ClassLabel c : kAllClasses) {
    const auto i = static_cast<std::size_t>(index_of(c));
    weights[std::string(code_of(c))] = train_weights[i];
    catalog_w[std::string(code_of(c))] = catalog_weights.weights[i];
  }
  const json summary = {{"images", distribution_json(images)},
                        {"lesions", distribution_json(lesions)},
                        {"distinct_lesions", distinct_lesions(catalog)},
                        {"subsets",
                         {{"train", m.train_ids.size()},
                          {"val", m.val_ids.size()},
                          {"test", m.test_ids.size()},
                          {"held_out_test", m.held_out_test.size()},
                          {"held_out_val", m.held_out_val.size()}}},
                        {"k", m.k},
                        {"class_weight_scheme", to_string(cfg.train.class_weights)},
                        {"train_class_weights", weights},
                        {"catalog_balanced_weights", catalog_w},
                        {"warnings", m.warnings}};
  write_json(summary, run.dir() / "class_distribution.json");

  std::ostream& out = run.out();
  out << "images " << images.total << ", distinct lesions " << distinct_lesions(catalog) << '\n';
  out << "class   images  lesions  weight\n";
  for (ClassLabel c : kAllClasses) {
    const auto i = static_cast<std::size_t>(index_of(c));
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-6s %7lld %8lld %7.3f\n", std::string(code_of(c)).c_str(),
                  static_cast<long long>(images.counts[i]), static_cast<long long>(lesions.counts[i]),
                  train_weights[i]);
    out << buf;
  }
  out << "train " << m.train_ids.size() << ", val " << m.val_ids.size() << ", test " << m.test_ids.size()
      << " images; k = " << m.k << '\n';
  out << "manifest " << (cfg.output_dir / "manifest.json").string() << '\n';
}

MetricsReport test_set_report(const Model& model, const Dataset& data, int batch) {
  const EvalResult r = evaluate_model(model, data, LossSpec{LossKind::ce, 0.0, {}}, batch);
  return evaluate_predictions(r.probabilities, r.labels);
}

void cmd_train(Run& run) {
  const auto& cfg = run.config();
  const SplitManifest m = run.manifest();
  const auto& catalog = run.catalog();
  Model model = build_model(effective_model_spec(cfg.model, cfg.train));
  const TrainResult r = train(model, catalog, m, cfg.train, run.dir(), [&](const EpochRecord& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %d train_loss %.4f val_loss %.4f val_acc %.4f lr %.3g", e.epoch,
                  e.train_loss, e.val_loss, e.val_accuracy, e.learning_rate);
    run.log(buf);
  });
  const FileDataset test = FileDataset::select(catalog, m.test_ids);
  const MetricsReport report = test_set_report(model, test, cfg.train.eval_batch_size);
  render_report(report, run.dir() / "test");
  run.out() << "best epoch " << r.history.best_epoch << ", best val accuracy " << pct(r.history.best_val_accuracy)
            << '\n';
  print_report_line(run.out(), "test", report);
}

void ensemble_and_report(Run& run, const EnsembleSpec& spec, const SplitManifest& m) {
  const auto& cfg = run.config();
  write_json(to_json(spec), run.dir() / "ensemble.json");
  const FileDataset test = FileDataset::select(run.catalog(), m.test_ids);
  run.log("ensemble of " + std::to_string(spec.checkpoint_paths.size()) + " models, TTA n = " +
          std::to_string(spec.tta_n) + ", " + std::to_string(test.size()) + " test images");
  const Ensemble ensemble(spec);
  const EnsembleEvaluation e = evaluate_ensemble(ensemble, test, cfg.train.eval_batch_size);
  render_report(e.plain, run.dir() / "ensemble");
  if (e.tta) render_report(*e.tta, run.dir() / "tta");
  json members = json::array();
  for (std::size_t i = 0; i < e.members.size(); ++i) {
    members.push_back({{"checkpoint", spec.checkpoint_paths[i].string()},
                       {"accuracy", e.members[i].accuracy},
                       {"macro_f1", e.members[i].macro_f1},
                       {"macro_auc", e.members[i].auc.macro}});
    print_report_line(run.out(), "member " + std::to_string(i), e.members[i]);
  }
  json summary = {{"test_images", test.size()},
                  {"members", members},
                  {"ensemble", {{"accuracy", e.plain.accuracy}, {"top_2", e.plain.top_k.at(2)},
                                {"top_3", e.plain.top_k.at(3)}, {"macro_auc", e.plain.auc.macro}}}};
  if (e.tta)
    summary["tta"] = {{"accuracy", e.tta->accuracy}, {"top_2", e.tta->top_k.at(2)}, {"top_3", e.tta->top_k.at(3)},
                      {"macro_auc", e.tta->auc.macro}};
  write_json(summary, run.dir() / "ensemble_summary.json");
  print_report_line(run.out(), "ensemble", e.plain);
  if (e.tta) print_report_line(run.out(), "ensemble + TTA", *e.tta);
}

void cmd_crossval(Run& run) {
  const auto& cfg = run.config();
  const SplitManifest m = run.manifest();
  const auto runs = train_kfold(cfg.model, cfg.train, run.catalog(), m, run.dir(), [&](const std::string& s) { run.log(s); });
  EnsembleSpec spec;
  spec.tta_n = cfg.ensemble.tta_n;
  spec.tta_seed = cfg.ensemble.tta_seed;
  for (const FoldRun& f : runs) {
    spec.checkpoint_paths.push_back(fs::absolute(f.checkpoint));
    print_report_line(run.out(), "fold " + std::to_string(f.fold), f.test_report);
  }
  ensemble_and_report(run, spec, m);
}

void cmd_ensemble(Run& run, const Options& opts) {
  const auto& cfg = run.config();
  EnsembleSpec spec;
  spec.tta_n = cfg.ensemble.tta_n;
  spec.tta_seed = cfg.ensemble.tta_seed;
  for (const auto& p : opts.checkpoints) spec.checkpoint_paths.push_back(fs::absolute(p));
  if (!opts.from_run.empty()) {
    if (!fs::is_directory(opts.from_run)) throw DataError("run directory not found: " + opts.from_run.string());
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(opts.from_run))
      if (e.is_directory() && e.path().filename().string().rfind("fold_", 0) == 0 &&
          fs::exists(e.path() / "checkpoint.dckpt"))
        found.push_back(fs::absolute(e.path() / "checkpoint.dckpt"));
    std::sort(found.begin(), found.end());
    if (found.empty()) throw DataError("no fold_*/checkpoint.dckpt under " + opts.from_run.string());
    spec.checkpoint_paths.insert(spec.checkpoint_paths.end(), found.begin(), found.end());
  }
  if (spec.checkpoint_paths.empty()) throw ConfigError("ensemble needs --checkpoint paths or --from <crossval run>");
  for (const auto& p : spec.checkpoint_paths)
    if (!fs::exists(p)) throw DataError("checkpoint not found: " + p.string());
  ensemble_and_report(run, spec, run.manifest());
}

void cmd_ablation(Run& run) {
  const auto& cfg = run.config();
  const SplitManifest m = run.manifest();
  const AblationReport r =
      run_ablation(cfg.model, cfg.train, run.catalog(), m, run.dir(), [&](const std::string& s) { run.log(s); });
  for (const AblationExperiment& e : r.experiments)
    print_report_line(run.out(), std::to_string(e.index) + " (" + e.name + ")", e.test_report);
  run.out() << "report " << (run.dir() / "ablation.md").string() << '\n';
}

Model load_for(Run& run, const Options& opts) {
  if (opts.checkpoints.size() != 1) throw ConfigError("pass exactly one --checkpoint");
  const fs::path& p = opts.checkpoints.front();
  if (!fs::exists(p)) throw DataError("checkpoint not found: " + p.string());
  run.record()["checkpoint"] = {{"path", fs::absolute(p).string()}, {"sha256", sha256_file(p)}};
  return load_checkpoint(p);
}

void cmd_evaluate(Run& run, const Options& opts) {
  const Model model = load_for(run, opts);
  const SplitManifest m = run.manifest();
  const FileDataset data = FileDataset::select(run.catalog(), subset_ids(m, opts.subset));
  if (data.size() == 0) throw DataError("the " + opts.subset + " subset is empty");
  const MetricsReport report = test_set_report(model, data, run.config().train.eval_batch_size);
  render_report(report, run.dir() / opts.subset);
  print_report_line(run.out(), opts.subset, report);
}

void cmd_gradcam(Run& run, const Options& opts) {
  Model model = load_for(run, opts);
  const SplitManifest m = run.manifest();
  std::vector<std::string> ids = subset_ids(m, opts.subset);
  if (opts.limit > 0 && ids.size() > static_cast<std::size_t>(opts.limit)) ids.resize(static_cast<std::size_t>(opts.limit));
  const FileDataset data = FileDataset::select(run.catalog(), ids);
  const auto items = gradcam_batch(model, data, run.dir() / "gradcam");
  json list = json::array();
  int scored = 0, wins = 0;
  for (const GradcamItem& it : items) {
    json j = {{"image_id", it.image_id},
              {"label", code_of(class_from_index(it.label))},
              {"predicted", code_of(class_from_index(it.predicted))},
              {"overlay", fs::relative(it.files.overlay, run.dir()).generic_string()}};
    if (it.localization) {
      j["mean_inside"] = it.localization->mean_inside;
      j["mean_outside"] = it.localization->mean_outside;
      if (it.label == it.predicted) {
        ++scored;
        wins += it.localization->inside_wins();
      }
    }
    list.push_back(j);
  }
  json summary = {{"images", list}, {"correct_with_box", scored}, {"inside_exceeds_outside", wins}};
  if (scored > 0) summary["localization_rate"] = static_cast<double>(wins) / scored;
  write_json(summary, run.dir() / "gradcam.json");
  run.out() << items.size() << " heatmaps in " << (run.dir() / "gradcam").string() << '\n';
  if (scored > 0) run.out() << "localization: " << wins << " of " << scored << " correctly classified images\n";
}

int exit_code_of(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const DataError*>(&e)) return kExitData;
  return kExitRuntime;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skin lesion classification pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opts;
  app.add_option("--config", opts.config, "experiment config (YAML)");
  app.add_option("--manifest", opts.manifest, "split manifest (default <output_dir>/manifest.json)");
  app.add_option("--out", opts.out, "output directory, overrides output_dir");
  app.add_option("--seed", opts.seed, "overrides every seed in the config");
  app.add_option("--run-name", opts.run_name, "run directory name (default <command>-<time>-<hash>)");

  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"prepare", "write the split manifest and class summary"},
      {"train", "train one model on the train/val split"},
      {"crossval", "k-fold training plus the fold ensemble"},
      {"ablation", "the six-experiment ablation"},
      {"evaluate", "evaluate a checkpoint"},
      {"ensemble", "evaluate an ensemble of checkpoints"},
      {"gradcam", "GradCAM overlays for a checkpoint"}};
  std::map<std::string, CLI::App*> sub;
  for (const auto& [name, help] : verbs) sub[name] = app.add_subcommand(name, help);
  for (const char* name : {"evaluate", "ensemble", "gradcam"})
    sub[name]->add_option("--checkpoint", opts.checkpoints, "checkpoint file")->take_all();
  sub["ensemble"]->add_option("--from", opts.from_run, "crossval run directory holding fold_*/checkpoint.dckpt");
  sub["ensemble"]->add_option("--tta-n", opts.tta_n, "overrides ensemble.tta_n");
  for (const char* name : {"evaluate", "gradcam"})
    sub[name]->add_option("--subset", opts.subset, "test, val or train")->check(CLI::IsMember({"test", "val", "train"}));
  sub["gradcam"]->add_option("--limit", opts.limit, "at most this many images");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (opts.config.empty()) throw ConfigError("--config is required");
    Run run(command, opts, out, err);
    if (command == "prepare") cmd_prepare(run);
    else if (command == "train") cmd_train(run);
    else if (command == "crossval") cmd_crossval(run);
    else if (command == "ablation") cmd_ablation(run);
    else if (command == "evaluate") cmd_evaluate(run, opts);
    else if (command == "ensemble") cmd_ensemble(run, opts);
    else if (command == "gradcam") cmd_gradcam(run, opts);
    run.finish();
    out << "run " << run.dir().string() << '\n';
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_of(e);
  }
}

}  // namespace derm
