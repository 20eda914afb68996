#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "veritas/errors.hpp"
#include "veritas/harness.hpp"
#include "veritas/io.hpp"

using namespace veritas;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void emit(const std::string& text, const std::string& out) {
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file(out, text);
  }
}

std::size_t class_count_of(const std::vector<PredictionRecord>& records, std::optional<std::size_t> classes) {
  return classes ? *classes : record_class_count(records);
}

json split_summary(const std::vector<PredictionRecord>& retained, std::size_t n_total, std::size_t classes) {
  json j;
  j["n_total"] = n_total;
  j["n_retained"] = retained.size();
  j["n_removed"] = n_total - retained.size();
  if (retained.empty()) {
    j["metrics"] = nullptr;
  } else {
    j["metrics"] = json::parse(metrics_to_json(evaluate(retained, classes)));
  }
  return j;
}

// A numeric id names a fold directly; anything else is an event under leave_one_event_out.
int resolve_dev_fold(const std::string& id, const std::vector<ConversationTree>& trees, const FoldSpec& folds) {
  try {
    std::size_t used = 0;
    const int fold = std::stoi(id, &used);
    if (used == id.size()) {
      if (fold < 0 || fold >= folds.fold_count()) throw ConfigError("dev fold " + id + " is out of range");
      return fold;
    }
  } catch (const std::invalid_argument&) {
  } catch (const std::out_of_range&) {
  }
  return fold_of_event(trees, folds, id);
}

int run_train(const std::string& data_path, const std::string& folds_path, const std::string& config_path,
              const std::string& out_dir, const std::string& dev_fold) {
  const auto trees = load_dataset(data_path);
  auto folds = fold_spec_from_json(read_file(folds_path));
  auto config = config_path.empty() ? ExperimentConfig{} : experiment_config_from_json(read_file(config_path));
  if (!dev_fold.empty()) {
    folds.dev_fold = resolve_dev_fold(dev_fold, trees, folds);
  } else if (!folds.dev_fold && config.dev_fold) {
    folds.dev_fold = config.dev_fold;
  }
  config.dev_fold = folds.dev_fold;
  const bool with_dev = folds.dev_fold.has_value();

  const auto cv = cross_validate(trees, folds, config, with_dev);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  write_file((out / "config.json").string(), experiment_config_to_json(config));
  write_file((out / "folds.json").string(), fold_spec_to_json(folds));
  save_records((out / "records.csv").string(), cv.records);
  for (const auto& run : cv.runs) {
    const std::string stem = "fold_" + std::to_string(run.test_fold);
    write_file((out / (stem + ".model.json")).string(), save_checkpoint(run.model.params));
    write_file((out / (stem + ".history.csv")).string(), run.model.history.to_csv());
  }
  const std::size_t classes = record_class_count(cv.records);
  json summary;
  summary["folds"] = cv.runs.size();
  summary["metrics"] = json::parse(metrics_to_json(evaluate(cv.records, classes)));
  if (with_dev) {
    save_records((out / "dev_records.csv").string(), cv.dev_records);
    save_meta((out / "meta.json").string(), train_meta(cv.dev_records, config.meta));
    const auto split = supervised_reject_per_fold(cv.dev_records, cv.records, config.meta);
    summary["dev_fold"] = *folds.dev_fold;
    summary["supervised"] = split_summary(split.retained, cv.records.size(), classes);
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int run_evaluate(const std::string& records_path, std::size_t classes) {
  std::cout << metrics_to_json(evaluate(load_records(records_path), classes)) << "\n";
  return 0;
}

struct RejectArgs {
  std::string records;
  std::string mode;
  std::string measure = "variation_ratio";
  std::optional<double> retain;
  std::string meta;
  std::string dev;
  std::string meta_config;
  std::uint64_t seed = 0;
  std::optional<std::size_t> classes;
  std::string out;
};

int run_reject(const RejectArgs& a) {
  const auto records = load_records(a.records);
  const std::size_t classes = class_count_of(records, a.classes);
  const Measure measure = parse_measure(a.measure);

  if (a.mode == "sup") {
    SupervisedSplit split;
    if (!a.dev.empty()) {
      const auto config = a.meta_config.empty() ? MetaConfig{} : meta_config_from_json(read_file(a.meta_config));
      split = supervised_reject_per_fold(load_records(a.dev), records, config);
    } else if (!a.meta.empty()) {
      split = supervised_reject(load_meta(a.meta), records);
    } else {
      throw ConfigError("--mode sup needs --meta or --dev");
    }
    auto j = split_summary(split.retained, records.size(), classes);
    j["mode"] = "sup";
    std::cout << j.dump(2) << "\n";
    if (!a.out.empty()) save_records(a.out, split.retained);
    return 0;
  }

  if (!a.retain) {
    RejectionCurve curve;
    if (a.mode == "unsup") curve = rejection_curve(records, measure, default_fractions());
    else if (a.mode == "random") curve = random_curve(records, default_fractions(), a.seed);
    else if (a.mode == "perfold") curve = per_fold_curve(records, measure, default_fractions());
    else throw ConfigError("unknown rejection mode '" + a.mode + "'");
    emit(curves_to_csv({curve}), a.out);
    return 0;
  }

  RejectionSplit split;
  if (a.mode == "unsup") split = unsupervised_reject(records, measure, *a.retain);
  else if (a.mode == "random") split = random_reject(records, *a.retain, a.seed);
  else if (a.mode == "perfold") split = per_fold_reject(records, measure, *a.retain);
  else throw ConfigError("unknown rejection mode '" + a.mode + "'");
  auto j = split_summary(split.retained, records.size(), classes);
  j["mode"] = a.mode;
  j["retain"] = *a.retain;
  if (a.mode != "random") j["measure"] = std::string(to_string(measure));
  std::cout << j.dump(2) << "\n";
  if (!a.out.empty()) save_records(a.out, split.retained);
  return 0;
}

int run_meta(const std::string& dev_path, const std::string& config_path, const std::string& out) {
  const auto config = config_path.empty() ? MetaConfig{} : meta_config_from_json(read_file(config_path));
  const auto meta = train_meta(load_records(dev_path), config);
  emit(meta_to_json(meta) + "\n", out);
  return 0;
}

int run_calibrate(const std::string& dev_path, const std::string& test_path, const std::string& measure_name,
                  std::size_t bins, const std::string& reliability, const std::string& out) {
  const auto dev = load_records(dev_path);
  const auto test = load_records(test_path);
  std::vector<CalibrationReport> reports;
  if (measure_name == "all") {
    for (Measure m : kAllMeasures) reports.push_back(calibrate(dev, test, m, bins));
  } else {
    reports.push_back(calibrate(dev, test, parse_measure(measure_name), bins));
  }
  emit(calibration_reports_to_csv(reports), out);
  if (!reliability.empty()) write_file(reliability, reliability_to_csv(reports));
  return 0;
}

int run_timeline(const std::string& model_path, const std::string& tree_id, const std::string& data_path,
                 const std::string& measure_name, const std::string& config_path, const std::string& out) {
  std::string cfg = config_path;
  if (cfg.empty()) {
    const auto sibling = fs::path(model_path).parent_path() / "config.json";
    if (fs::exists(sibling)) cfg = sibling.string();
  }
  const auto config = cfg.empty() ? ExperimentConfig{} : experiment_config_from_json(read_file(cfg));
  const Measure measure = parse_measure(measure_name);
  const auto params = load_checkpoint(read_file(model_path));
  const auto trees = load_dataset(data_path);
  const auto it = std::find_if(trees.begin(), trees.end(), [&](const auto& t) { return t.tree_id == tree_id; });
  if (it == trees.end()) throw DataError("tree '" + tree_id + "' not found in " + data_path);

  const auto series = timeline_report(params, *it, config.embedder.make(), config.uncertainty,
                                      config.training.max_branch_length);
  for (const auto& r : series.repairs) warn("reply " + r.tweet_id + " predates its parent " + r.parent_id);
  emit(timeline_to_csv(series), out);
  json j;
  j["tree_id"] = series.tree_id;
  j["gold"] = std::string(to_string(series.gold));
  j["measure"] = std::string(to_string(measure));
  j["final_prediction"] = std::string(to_string(series.steps.back().predicted));
  j["min_uncertainty_prediction"] = std::string(to_string(min_uncertainty_prediction(series, measure)));
  (out.empty() ? std::cerr : std::cout) << j.dump(2) << "\n";
  return 0;
}

int run_synth(const std::string& spec_path, const std::string& out) {
  const auto spec = spec_path.empty() ? SyntheticSpec{} : synthetic_spec_from_json(read_file(spec_path));
  const auto data = generate_synthetic(spec);
  if (out.empty()) {
    std::cout << serialize_dataset(data.trees);
  } else {
    save_dataset(data.trees, out);
  }
  return 0;
}

int run_folds(const std::string& data_path, const std::string& scheme, std::optional<int> k, std::uint64_t seed,
              const std::string& out) {
  const auto trees = load_dataset(data_path);
  emit(fold_spec_to_json(make_folds(trees, parse_fold_scheme(scheme), k, seed)) + "\n", out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rumour verification with uncertainty estimates"};
  app.require_subcommand(1);
  std::function<int()> action;

  std::string data, folds, config, out, dev_fold;
  auto* train = app.add_subcommand("train", "cross-validate a model and write records, checkpoints and reports");
  train->add_option("--data", data, "dataset (JSON Lines)")->required();
  train->add_option("--folds", folds, "fold assignment JSON")->required();
  train->add_option("--config", config, "experiment config JSON");
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--dev-fold", dev_fold, "dev fold index or event name");
  train->callback([&] { action = [&] { return run_train(data, folds, config, out, dev_fold); }; });

  std::string records;
  std::size_t classes = 0;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "accuracy and macro-F of a records file");
  evaluate_cmd->add_option("--records", records, "records CSV")->required();
  evaluate_cmd->add_option("--classes", classes, "number of classes")->required()->check(CLI::PositiveNumber);
  evaluate_cmd->callback([&] { action = [&] { return run_evaluate(records, classes); }; });

  RejectArgs reject_args;
  auto* reject = app.add_subcommand("reject", "instance rejection");
  reject->add_option("--records", reject_args.records, "records CSV")->required();
  reject->add_option("--mode", reject_args.mode, "rejection mode")
      ->required()
      ->check(CLI::IsMember({"unsup", "sup", "random", "perfold"}));
  reject->add_option("--measure", reject_args.measure, "uncertainty measure");
  reject->add_option("--retain", reject_args.retain, "fraction to keep; omit for the full curve");
  reject->add_option("--meta", reject_args.meta, "trained meta-classifier JSON");
  reject->add_option("--dev", reject_args.dev, "dev records CSV for per-fold meta training");
  reject->add_option("--meta-config", reject_args.meta_config, "meta-classifier config JSON");
  reject->add_option("--seed", reject_args.seed, "random rejection seed");
  reject->add_option("--classes", reject_args.classes, "number of classes");
  reject->add_option("--out", reject_args.out, "retained records CSV, or the curve CSV");
  reject->callback([&] { action = [&] { return run_reject(reject_args); }; });

  std::string meta_dev, meta_config, meta_out;
  auto* meta = app.add_subcommand("meta", "train a meta-classifier on dev records");
  meta->add_option("--dev", meta_dev, "dev records CSV")->required();
  meta->add_option("--config", meta_config, "meta-classifier config JSON");
  meta->add_option("--out", meta_out, "output JSON");
  meta->callback([&] { action = [&] { return run_meta(meta_dev, meta_config, meta_out); }; });

  std::string cal_dev, cal_test, cal_measure, cal_reliability, cal_out;
  std::size_t bins = 10;
  auto* calibrate_cmd = app.add_subcommand("calibrate", "histogram-binning calibration");
  calibrate_cmd->add_option("--dev", cal_dev, "dev records CSV")->required();
  calibrate_cmd->add_option("--test", cal_test, "test records CSV")->required();
  calibrate_cmd->add_option("--measure", cal_measure, "measure name or 'all'")->required();
  calibrate_cmd->add_option("--bins", bins, "bin count")->check(CLI::PositiveNumber);
  calibrate_cmd->add_option("--reliability", cal_reliability, "reliability bins CSV");
  calibrate_cmd->add_option("--out", cal_out, "report CSV");
  calibrate_cmd->callback(
      [&] { action = [&] { return run_calibrate(cal_dev, cal_test, cal_measure, bins, cal_reliability, cal_out); }; });

  std::string tl_model, tl_tree, tl_data, tl_measure, tl_config, tl_out;
  auto* timeline = app.add_subcommand("timeline", "uncertainty over the prefixes of one conversation");
  timeline->add_option("--model", tl_model, "checkpoint JSON")->required();
  timeline->add_option("--tree", tl_tree, "tree id")->required();
  timeline->add_option("--data", tl_data, "dataset (JSON Lines)")->required();
  timeline->add_option("--measure", tl_measure, "measure for the min-uncertainty prediction")->required();
  timeline->add_option("--config", tl_config, "experiment config JSON (default: config.json beside the model)");
  timeline->add_option("--out", tl_out, "timeline CSV");
  timeline->callback(
      [&] { action = [&] { return run_timeline(tl_model, tl_tree, tl_data, tl_measure, tl_config, tl_out); }; });

  std::string spec, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", spec, "synthetic spec JSON");
  synth->add_option("--out", synth_out, "output JSON Lines");
  synth->callback([&] { action = [&] { return run_synth(spec, synth_out); }; });

  std::string folds_data, scheme = "k_fold", folds_out;
  std::optional<int> k;
  std::uint64_t folds_seed = 0;
  auto* folds_cmd = app.add_subcommand("folds", "write a fold assignment");
  folds_cmd->add_option("--data", folds_data, "dataset (JSON Lines)")->required();
  folds_cmd->add_option("--scheme", scheme, "k_fold or leave_one_event_out");
  folds_cmd->add_option("--k", k, "fold count for k_fold");
  folds_cmd->add_option("--seed", folds_seed, "shuffle seed");
  folds_cmd->add_option("--out", folds_out, "output JSON");
  folds_cmd->callback([&] { action = [&] { return run_folds(folds_data, scheme, k, folds_seed, folds_out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
