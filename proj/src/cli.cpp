#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "harness_util.hpp"
#include "igrad/harness.hpp"

namespace igrad::harness {

namespace {

// Bool flags take no value on the command line, so config entries for them
// inject the bare flag when truthy and nothing otherwise.
bool is_flag_key(const std::string& name) { return name == "pin"; }

bool truthy(const std::string& value) {
  return value == "1" || value == "true" || value == "yes" || value == "on";
}

bool flag_present(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args)
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  return false;
}

// Config entries under the active subcommand become flags unless the command
// line already sets them; explicit flags always win.
std::vector<std::string> inject_config(const std::vector<std::string>& in) {
  if (in.empty() || in[0].empty() || in[0][0] == '-') return in;
  const std::string& sub = in[0];
  std::string config_path;
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (in[i] == "--config" && i + 1 < in.size()) config_path = in[i + 1];
    else if (in[i].rfind("--config=", 0) == 0) config_path = in[i].substr(9);
  }
  if (config_path.empty()) return in;

  const KvConfig kv = KvConfig::load(config_path);
  std::vector<std::string> out = in;
  const std::string prefix = sub + ".";
  for (const auto& e : kv.entries()) {
    // Other sections (meta.*, other subcommands) are inert for this run.
    if (e.key.rfind(prefix, 0) != 0) continue;
    const std::string name = e.key.substr(prefix.size());
    const std::string flag = "--" + name;
    if (flag_present(in, flag)) continue;
    if (is_flag_key(name)) {
      if (truthy(e.value)) out.push_back(flag);
    } else {
      out.push_back(flag);
      out.push_back(e.value);
    }
  }
  return out;
}

void add_common(CLI::App* cmd, std::string& config_path, std::string& out_dir) {
  cmd->add_option("--config", config_path,
                  "key/value file whose <subcommand>.* entries become flag defaults");
  cmd->add_option("--out", out_dir, "output directory");
}

void add_dataset_flags(CLI::App* cmd, DatasetOptions& d) {
  cmd->add_option("--dataset", d.dataset,
                  "toy-color, decoy-mnist, mnist, iris-cancer, blobs2d, text-dir, or file");
  cmd->add_option("--n", d.n, "rows generated before splitting (synthetic datasets)");
  cmd->add_option("--train-fraction", d.train_fraction, "train share of the split");
  cmd->add_option("--data-seed", d.data_seed, "generation and split seed");
  cmd->add_option("--path", d.path, "corpus directory (text-dir) or train file (file)");
  cmd->add_option("--test-path", d.test_path, "pre-split test file (file dataset)");
  cmd->add_option("--mnist-dir", d.mnist_dir, "directory with the four IDX files");
  cmd->add_option("--fixtures-dir", d.fixtures_dir, "directory with iris.data and wdbc.data");
  cmd->add_option("--subsample", d.subsample, "keep only the first N train rows (mnist kinds)");
}

void add_mask_flags(CLI::App* cmd, MaskOptions& m) {
  cmd->add_option("--mask", m.mask,
                  "none, dataset, full, corners, top-middle, pro-rule1, or pro-rule2");
  cmd->add_option("--mask-fraction", m.fraction, "fraction of train rows that keep annotations");
  cmd->add_option("--mask-count", m.count, "exact annotated-row count (overrides the fraction)");
}

void add_rrr_flags(CLI::App* cmd, RrrConfig& c) {
  cmd->add_option("--lambda1", c.lambda1, "annotation-penalty weight");
  cmd->add_option("--lambda2", c.lambda2, "parameter-decay weight");
  cmd->add_option("--batch-size", c.batch_size);
  cmd->add_option("--epochs", c.epochs);
  cmd->add_option("--step-size", c.adam.step_size, "optimizer step size");
  cmd->add_option("--seed", c.seed, "initialization and shuffling seed");
  cmd->add_flag("--pin", c.pin_annotated, "include every annotated row in every batch");
  cmd->add_option("--stall-tolerance", c.stall_tolerance);
  cmd->add_option("--stall-window", c.stall_window, "epochs of stall before stopping; 0 disables");
}

}  // namespace

int run_cli(const std::vector<std::string>& args_in) {
  std::vector<std::string> args;
  try {
    args = inject_config(args_in);
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  }

  CLI::App app{"input-gradient training, explanation, and experiment drivers"};
  app.require_subcommand(1);

  std::string config_path;

  GenDataOptions gen_opts;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "resolve a dataset and write both splits");
  add_common(gen_cmd, config_path, gen_opts.out);
  add_dataset_flags(gen_cmd, gen_opts.data);
  add_mask_flags(gen_cmd, gen_opts.mask);
  gen_cmd->add_option("--seed", gen_opts.seed, "annotated-subset selection seed");

  TrainOptions train_opts;
  CLI::App* train_cmd =
      app.add_subcommand("train", "train a classifier and write a checkpoint plus history CSV");
  add_common(train_cmd, config_path, train_opts.out);
  add_dataset_flags(train_cmd, train_opts.data);
  add_mask_flags(train_cmd, train_opts.mask);
  add_rrr_flags(train_cmd, train_opts.rrr);

  ExplainOptions explain_opts;
  CLI::App* explain_cmd =
      app.add_subcommand("explain", "write an input-gradient explanation artifact");
  add_common(explain_cmd, config_path, explain_opts.out);
  explain_cmd->add_option("--checkpoint", explain_opts.checkpoint, "trained checkpoint file");
  add_dataset_flags(explain_cmd, explain_opts.data);
  explain_cmd->add_option("--split", explain_opts.split, "train or test");
  explain_cmd->add_option("--target", explain_opts.target,
                          "sum-logprob, predicted-prob, or class-prob");
  explain_cmd->add_option("--class-index", explain_opts.class_index, "class for class-prob");
  explain_cmd->add_option("--cutoff", explain_opts.cutoff, "mask magnitude-ratio cutoff");
  explain_cmd->add_option("--limit", explain_opts.limit, "rows explained; 0 means all");

  SurrogateOptions surrogate_opts;
  CLI::App* surrogate_cmd =
      app.add_subcommand("surrogate", "fit local perturbation surrogates and write their weights");
  add_common(surrogate_cmd, config_path, surrogate_opts.out);
  surrogate_cmd->add_option("--checkpoint", surrogate_opts.checkpoint, "trained checkpoint file");
  add_dataset_flags(surrogate_cmd, surrogate_opts.data);
  surrogate_cmd->add_option("--split", surrogate_opts.split, "train or test");
  surrogate_cmd->add_option("--samples", surrogate_opts.samples, "perturbation samples");
  surrogate_cmd->add_option("--k", surrogate_opts.k, "features kept per explanation");
  surrogate_cmd->add_option("--limit", surrogate_opts.limit, "instances explained; 0 means all");
  surrogate_cmd->add_option("--seed", surrogate_opts.seed, "perturbation seed");

  FaeOptions fae_opts;
  std::string fae_schedule;
  double fae_floor = std::numeric_limits<double>::quiet_NaN();
  CLI::App* fae_cmd = app.add_subcommand(
      "fae", "alternate training and explanation masking until the model runs out of rules");
  add_common(fae_cmd, config_path, fae_opts.out);
  add_dataset_flags(fae_cmd, fae_opts.data);
  add_rrr_flags(fae_cmd, fae_opts.rrr);
  fae_cmd->add_option("--cutoff", fae_opts.cutoff, "mask magnitude-ratio cutoff");
  fae_cmd->add_option("--schedule", fae_schedule,
                      "comma list of penalty weights per iteration (last value repeats)");
  fae_cmd->add_option("--max-iterations", fae_opts.max_iterations);
  fae_cmd->add_option("--accuracy-floor", fae_floor,
                      "stop when test accuracy falls below this; default iteration-0 minus 0.05");
  fae_cmd->add_option("--overlap-ceiling", fae_opts.overlap_ceiling,
                      "stop when mask overlap with the previous union exceeds this");

  BenchOptions bench_opts;
  CLI::App* bench_cmd =
      app.add_subcommand("bench", "time surrogate, gradient, and forward explanations");
  add_common(bench_cmd, config_path, bench_opts.out);
  bench_cmd->add_option("--input-dim", bench_opts.input_dim);
  bench_cmd->add_option("--classes", bench_opts.classes);
  bench_cmd->add_option("--samples", bench_opts.samples, "perturbation samples per explanation");
  bench_cmd->add_option("--k", bench_opts.k, "features kept per explanation");
  bench_cmd->add_option("--instances", bench_opts.instances, "instances timed per repetition");
  bench_cmd->add_option("--repetitions", bench_opts.repetitions);
  bench_cmd->add_option("--seed", bench_opts.seed);

  LambdaSweepOptions sweep_opts;
  sweep_opts.mask.mask = "corners";
  std::string sweep_grid;
  CLI::App* sweep_cmd =
      app.add_subcommand("lambda-sweep", "train across a penalty-weight grid and tabulate terms");
  add_common(sweep_cmd, config_path, sweep_opts.out);
  add_dataset_flags(sweep_cmd, sweep_opts.data);
  add_mask_flags(sweep_cmd, sweep_opts.mask);
  add_rrr_flags(sweep_cmd, sweep_opts.rrr);
  sweep_cmd->add_option("--grid", sweep_grid, "comma list of penalty weights (>= four decades)");

  DataEfficiencyOptions eff_opts;
  std::string eff_masks, eff_grid;
  CLI::App* eff_cmd = app.add_subcommand(
      "data-efficiency", "test accuracy versus train-set size for several annotation masks");
  add_common(eff_cmd, config_path, eff_opts.out);
  eff_cmd->add_option("--data-seed", eff_opts.data_seed, "pool and test generation seed");
  add_rrr_flags(eff_cmd, eff_opts.rrr);
  eff_cmd->add_option("--masks", eff_masks, "comma list of annotation masks");
  eff_cmd->add_option("--n-grid", eff_grid, "comma list of increasing train-set sizes");
  eff_cmd->add_option("--step-budget", eff_opts.step_budget, "target optimizer steps per run");
  eff_cmd->add_option("--test-n", eff_opts.test_n, "test-set size");

  BoundaryFieldOptions field_opts;
  field_opts.data.dataset = "blobs2d";
  field_opts.data.n = 500;
  CLI::App* field_cmd = app.add_subcommand(
      "boundary-field", "train on a planar dataset and grid-sample both gradient fields");
  add_common(field_cmd, config_path, field_opts.out);
  add_dataset_flags(field_cmd, field_opts.data);
  add_rrr_flags(field_cmd, field_opts.rrr);
  field_cmd->add_option("--resolution", field_opts.resolution, "grid points per axis");
  field_cmd->add_option("--margin", field_opts.margin, "padding around the data bounding box");

  ConfoundReportOptions confound_opts;
  confound_opts.data.dataset = "iris-cancer";
  std::string confound_variants;
  CLI::App* confound_cmd = app.add_subcommand(
      "confound-report", "train on a confounded dataset and report accuracies per mask variant");
  add_common(confound_cmd, config_path, confound_opts.out);
  add_dataset_flags(confound_cmd, confound_opts.data);
  add_rrr_flags(confound_cmd, confound_opts.rrr);
  confound_cmd->add_option("--splits", confound_opts.splits, "retraining count");
  confound_cmd->add_option("--variants", confound_variants,
                           "comma list from zero, full, and (decoy-mnist only) clean");
  confound_cmd->add_option("--threads", confound_opts.threads, "0 picks a hardware default");

  std::vector<std::string> argv_strings;
  argv_strings.reserve(args.size() + 1);
  argv_strings.emplace_back("igrad");
  for (const auto& a : args) argv_strings.push_back(a);
  std::vector<const char*> argv;
  argv.reserve(argv_strings.size());
  for (const auto& s : argv_strings) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << '\n';
    return 1;
  }

  try {
    if (*gen_cmd) {
      const GenDataResult r = run_gen_data(gen_opts);
      std::cout << "wrote " << r.train_path.string() << " and " << r.test_path.string() << '\n';
    } else if (*train_cmd) {
      const TrainOutcome r = run_train(train_opts);
      const auto& last = r.history.back();
      std::cout << "wrote " << r.checkpoint_path.string() << " (train "
                << last.train_accuracy << ", test " << last.heldout_accuracy.value_or(0.0)
                << ", epochs " << r.history.size() << ")\n";
    } else if (*explain_cmd) {
      const ExplainOutcome r = run_explain(explain_opts);
      std::cout << "wrote " << r.artifact_path.string() << " (selected fraction "
                << r.selected_fraction << ")\n";
    } else if (*surrogate_cmd) {
      const SurrogateOutcome r = run_surrogate(surrogate_opts);
      std::cout << "wrote " << r.csv_path.string() << '\n';
    } else if (*fae_cmd) {
      if (!fae_schedule.empty()) fae_opts.lambda1_schedule = util::parse_double_list(fae_schedule);
      fae_opts.accuracy_floor = fae_floor;
      const FaeOutcome r = run_fae_driver(fae_opts);
      std::cout << "wrote " << r.index_path.string() << " (" << r.trace.iterations.size()
                << " iterations)\n";
    } else if (*bench_cmd) {
      const BenchOutcome r = run_bench(bench_opts);
      std::cout << "wrote " << r.csv_path.string() << " (surrogate/gradient ratio "
                << r.result.ratio << ")\n";
    } else if (*sweep_cmd) {
      if (!sweep_grid.empty()) sweep_opts.grid = util::parse_double_list(sweep_grid);
      const LambdaSweepOutcome r = run_lambda_sweep(sweep_opts);
      std::cout << "wrote " << r.csv_path.string() << " (" << r.rows.size() << " grid points)\n";
    } else if (*eff_cmd) {
      if (!eff_masks.empty()) eff_opts.masks = util::parse_name_list(eff_masks);
      if (!eff_grid.empty()) eff_opts.n_grid = util::parse_size_list(eff_grid);
      const DataEfficiencyOutcome r = run_data_efficiency(eff_opts);
      std::cout << "wrote " << r.csv_path.string() << " (" << r.rows.size() << " rows)\n";
    } else if (*field_cmd) {
      const BoundaryFieldOutcome r = run_boundary_field(field_opts);
      std::cout << "wrote " << r.csv_path.string() << '\n';
    } else if (*confound_cmd) {
      if (!confound_variants.empty())
        confound_opts.variants = util::parse_name_list(confound_variants);
      const ConfoundReportOutcome r = run_confound_report(confound_opts);
      std::cout << "wrote " << r.report_path.string() << " and " << r.aggregate_path.string()
                << '\n';
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace igrad::harness
