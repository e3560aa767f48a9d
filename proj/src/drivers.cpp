#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "harness_util.hpp"
#include "igrad/explain.hpp"
#include "igrad/fingerprint.hpp"
#include "igrad/harness.hpp"
#include "igrad/rng.hpp"
#include "igrad/surrogate.hpp"
#include "igrad/textio.hpp"

namespace igrad::harness {

namespace fs = std::filesystem;
using util::cell;
using util::CsvFile;
using util::require_exists;
using util::take_rows;

namespace {

// ---- resolved-option echoes for run metadata ----
// Keys mirror the CLI flags of the owning subcommand; omitted keys mean the
// default was used.

void echo_dataset(KvConfig& kv, const std::string& cmd, const DatasetOptions& d) {
  kv.set(cmd + ".dataset", d.dataset);
  kv.set(cmd + ".n", std::to_string(d.n));
  kv.set(cmd + ".train-fraction", fmt_double(d.train_fraction));
  kv.set(cmd + ".data-seed", std::to_string(d.data_seed));
  if (!d.path.empty()) kv.set(cmd + ".path", d.path);
  if (!d.test_path.empty()) kv.set(cmd + ".test-path", d.test_path);
  kv.set(cmd + ".mnist-dir", d.mnist_dir);
  kv.set(cmd + ".fixtures-dir", d.fixtures_dir);
  if (d.subsample > 0) kv.set(cmd + ".subsample", std::to_string(d.subsample));
}

void echo_mask(KvConfig& kv, const std::string& cmd, const MaskOptions& m) {
  kv.set(cmd + ".mask", m.mask);
  kv.set(cmd + ".mask-fraction", fmt_double(m.fraction));
  if (m.count >= 0) kv.set(cmd + ".mask-count", std::to_string(m.count));
}

void echo_rrr(KvConfig& kv, const std::string& cmd, const RrrConfig& c) {
  kv.set(cmd + ".lambda1", fmt_double(c.lambda1));
  kv.set(cmd + ".lambda2", fmt_double(c.lambda2));
  kv.set(cmd + ".batch-size", std::to_string(c.batch_size));
  kv.set(cmd + ".epochs", std::to_string(c.epochs));
  kv.set(cmd + ".step-size", fmt_double(c.adam.step_size));
  kv.set(cmd + ".seed", std::to_string(c.seed));
  if (c.pin_annotated) kv.set(cmd + ".pin", "1");
  kv.set(cmd + ".stall-tolerance", fmt_double(c.stall_tolerance));
  kv.set(cmd + ".stall-window", std::to_string(c.stall_window));
}

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt_double(v[i]);
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string join_names(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

Checkpoint make_checkpoint(Params params, const RrrConfig& config, std::uint64_t dataset_fp) {
  Checkpoint c;
  c.params = std::move(params);
  c.config = config;
  c.dataset_fingerprint = dataset_fp;
  return c;
}

void write_history_csv(const fs::path& path, const TrainHistory& history) {
  CsvFile csv(path, {"epoch", "right_answers", "right_reasons", "regular", "total",
                     "train_accuracy", "heldout_accuracy"});
  for (const auto& rec : history) {
    csv.row({cell(rec.epoch), cell(rec.loss.right_answers), cell(rec.loss.right_reasons),
             cell(rec.loss.regular), cell(rec.loss.total), cell(rec.train_accuracy),
             rec.heldout_accuracy ? cell(*rec.heldout_accuracy) : std::string()});
  }
  csv.close();
}

ExplainTarget parse_target(const std::string& name, std::size_t class_index) {
  if (name == "sum-logprob") return {Target::kSumLogProb, 0};
  if (name == "predicted-prob") return {Target::kPredictedProb, 0};
  if (name == "class-prob") return {Target::kClassProb, class_index};
  throw std::invalid_argument("unknown target '" + name +
                              "' (expected sum-logprob, predicted-prob, or class-prob)");
}

const data::LabeledDataset& pick_split(const data::TrainTest& tt, const std::string& split) {
  if (split == "train") return tt.train;
  if (split == "test") return tt.test;
  throw std::invalid_argument("unknown split '" + split + "' (expected train or test)");
}

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

// Runs fn(i) for i in [0, count) on up to `threads` concurrent workers and
// returns results in index order.
template <typename T, typename Fn>
std::vector<T> indexed_parallel(std::size_t count, std::size_t threads, Fn fn) {
  std::vector<T> results(count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) results[i] = fn(i);
    return results;
  }
  std::size_t next = 0;
  while (next < count) {
    const std::size_t wave = std::min(threads, count - next);
    std::vector<std::future<T>> futures;
    futures.reserve(wave);
    for (std::size_t w = 0; w < wave; ++w)
      futures.push_back(std::async(std::launch::async, fn, next + w));
    for (std::size_t w = 0; w < wave; ++w) results[next + w] = futures[w].get();
    next += wave;
  }
  return results;
}

}  // namespace

// ---- gen-data ----

GenDataResult run_gen_data(const GenDataOptions& opts) {
  data::TrainTest tt = resolve_dataset(opts.data);
  apply_mask(tt.train, opts.mask, opts.seed);
  const fs::path out = opts.out;
  fs::create_directories(out);
  GenDataResult result{out / "train.txt", out / "test.txt"};
  data::save_dataset(tt.train, result.train_path.string());
  data::save_dataset(tt.test, result.test_path.string());

  KvConfig kv;
  echo_dataset(kv, "gen-data", opts.data);
  echo_mask(kv, "gen-data", opts.mask);
  kv.set("gen-data.seed", std::to_string(opts.seed));
  kv.set("gen-data.out", opts.out);
  write_run_metadata(out, "gen-data", kv);
  return result;
}

// ---- train ----

TrainOutcome run_train(const TrainOptions& opts) {
  validate_config(opts.rrr);
  data::TrainTest tt = resolve_dataset(opts.data);
  apply_mask(tt.train, opts.mask, opts.rrr.seed);

  const EvalSplit heldout{tt.test.X, tt.test.y};
  TrainResult trained = train(opts.rrr, tt.train.X, tt.train.y, tt.train.A, heldout);

  const fs::path out = opts.out;
  fs::create_directories(out);

  TrainOutcome outcome;
  outcome.history = trained.history;
  outcome.checkpoint =
      make_checkpoint(std::move(trained.params), opts.rrr, data::dataset_fingerprint(tt.train));
  const auto& last = outcome.history.back();
  set_metric(outcome.checkpoint, "train_accuracy", last.train_accuracy);
  set_metric(outcome.checkpoint, "test_accuracy", last.heldout_accuracy.value_or(0.0));
  set_metric(outcome.checkpoint, "right_answers", last.loss.right_answers);
  set_metric(outcome.checkpoint, "right_reasons", last.loss.right_reasons);
  set_metric(outcome.checkpoint, "regular", last.loss.regular);
  set_metric(outcome.checkpoint, "total_loss", last.loss.total);
  set_metric(outcome.checkpoint, "epochs_run", static_cast<double>(outcome.history.size()));

  outcome.checkpoint_path = out / "checkpoint.txt";
  outcome.history_path = out / "history.csv";
  save_checkpoint(outcome.checkpoint, outcome.checkpoint_path.string());
  write_history_csv(outcome.history_path, outcome.history);

  KvConfig kv;
  echo_dataset(kv, "train", opts.data);
  echo_mask(kv, "train", opts.mask);
  echo_rrr(kv, "train", opts.rrr);
  kv.set("train.out", opts.out);
  write_run_metadata(out, "train", kv);
  return outcome;
}

// ---- explain ----

ExplainOutcome run_explain(const ExplainOptions& opts) {
  require_exists(opts.checkpoint, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
  data::TrainTest tt = resolve_dataset(opts.data);
  const data::LabeledDataset& ds = pick_split(tt, opts.split);
  const std::size_t rows = opts.limit == 0 ? ds.size() : std::min(opts.limit, ds.size());
  if (rows == 0) throw std::invalid_argument("no rows to explain");
  const data::LabeledDataset subset = take_rows(ds, rows);

  const ExplainTarget target = parse_target(opts.target, opts.class_index);
  const ExplanationSet e = explain(ckpt.params, subset.X, target);
  const Mask m = mask_top(e, opts.cutoff);

  const fs::path out = opts.out;
  fs::create_directories(out);
  ExplainOutcome outcome;
  outcome.artifact_path = out / "explanation.json";
  outcome.selected_fraction = selected_fraction(m);
  {
    std::ofstream file(outcome.artifact_path);
    if (!file) throw std::runtime_error("cannot write artifact: " + outcome.artifact_path.string());
    file << render(e, m, subset.meta);
    if (!file.flush())
      throw std::runtime_error("cannot write artifact: " + outcome.artifact_path.string());
  }

  KvConfig kv;
  kv.set("explain.checkpoint", opts.checkpoint);
  echo_dataset(kv, "explain", opts.data);
  kv.set("explain.split", opts.split);
  kv.set("explain.target", opts.target);
  if (opts.target == "class-prob") kv.set("explain.class-index", std::to_string(opts.class_index));
  kv.set("explain.cutoff", fmt_double(opts.cutoff));
  kv.set("explain.limit", std::to_string(opts.limit));
  kv.set("explain.out", opts.out);
  write_run_metadata(out, "explain", kv);
  return outcome;
}

// ---- surrogate ----

SurrogateOutcome run_surrogate(const SurrogateOptions& opts) {
  require_exists(opts.checkpoint, "checkpoint");
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint);
  data::TrainTest tt = resolve_dataset(opts.data);
  const data::LabeledDataset& ds = pick_split(tt, opts.split);
  const std::size_t rows = opts.limit == 0 ? ds.size() : std::min(opts.limit, ds.size());
  if (rows == 0) throw std::invalid_argument("no rows to explain");

  const PerturbationScheme scheme = scheme_for(ds.meta, opts.samples);
  const ProbFn model = [&](const Tensor& X) { return forward(ckpt.params, X).probs; };

  const fs::path out = opts.out;
  fs::create_directories(out);
  SurrogateOutcome outcome;
  outcome.csv_path = out / "surrogate.csv";
  CsvFile csv(outcome.csv_path, {"instance", "predicted_class", "rank", "feature", "weight",
                                 "intercept", "fit_quality", "min_norm_fallback"});
  for (std::size_t i = 0; i < rows; ++i) {
    Tensor x = Tensor::zeros({1, ds.num_features()});
    for (std::size_t j = 0; j < ds.num_features(); ++j) x.at(0, j) = ds.X.at(i, j);
    const LocalExplanation ex = explain_instance(model, x, scheme, opts.k, mix_seed(opts.seed, i));
    const std::size_t pred = predict(ckpt.params, x)[0];
    for (std::size_t r = 0; r < ex.features.size(); ++r) {
      csv.row({cell(i), cell(pred), cell(r), cell(ex.features[r].first),
               cell(ex.features[r].second), cell(ex.intercept), cell(ex.fit_quality),
               std::string(ex.min_norm_fallback ? "1" : "0")});
    }
  }
  csv.close();

  KvConfig kv;
  kv.set("surrogate.checkpoint", opts.checkpoint);
  echo_dataset(kv, "surrogate", opts.data);
  kv.set("surrogate.split", opts.split);
  kv.set("surrogate.samples", std::to_string(opts.samples));
  kv.set("surrogate.k", std::to_string(opts.k));
  kv.set("surrogate.limit", std::to_string(opts.limit));
  kv.set("surrogate.seed", std::to_string(opts.seed));
  kv.set("surrogate.out", opts.out);
  write_run_metadata(out, "surrogate", kv);
  return outcome;
}

// ---- fae ----

FaeOutcome run_fae_driver(const FaeOptions& opts) {
  data::TrainTest tt = resolve_dataset(opts.data);

  FaeConfig fc;
  fc.cutoff = opts.cutoff;
  fc.max_iterations = opts.max_iterations;
  fc.overlap_ceiling = opts.overlap_ceiling;
  fc.base = opts.rrr;
  const bool toy = opts.data.dataset == "toy-color";
  // Reproduction profile for the color grid: the first retraining keeps the
  // moderate penalty weight, the second escalates it, and the accuracy floor
  // is lifted so the second-rule model is allowed through.
  if (opts.lambda1_schedule.empty())
    fc.lambda1_schedule = toy ? std::vector<double>{1e3, 1e3, 1e6}
                              : std::vector<double>{opts.rrr.lambda1};
  else
    fc.lambda1_schedule = opts.lambda1_schedule;
  if (std::isnan(opts.accuracy_floor)) {
    if (toy) fc.accuracy_floor = 0.0;
  } else {
    fc.accuracy_floor = opts.accuracy_floor;
  }

  FaeOutcome outcome;
  outcome.trace = run_fae(tt, fc);

  const fs::path out = opts.out;
  fs::create_directories(out);
  outcome.index_path = out / "trace.csv";
  CsvFile csv(outcome.index_path, {"iteration", "lambda1", "train_accuracy", "test_accuracy",
                                   "new_mask_fraction", "params_fingerprint"});
  const std::uint64_t dataset_fp = data::dataset_fingerprint(tt.train);
  for (std::size_t i = 0; i < outcome.trace.iterations.size(); ++i) {
    const FaeIteration& it = outcome.trace.iterations[i];
    csv.row({cell(i), cell(it.lambda1), cell(it.train_accuracy), cell(it.test_accuracy),
             cell(it.new_mask_fraction), fingerprint_hex(params_fingerprint(it.params))});

    RrrConfig cfg = opts.rrr;
    cfg.lambda1 = it.lambda1;
    Checkpoint ckpt = make_checkpoint(it.params, cfg, dataset_fp);
    set_metric(ckpt, "iteration", static_cast<double>(i));
    set_metric(ckpt, "lambda1", it.lambda1);
    set_metric(ckpt, "train_accuracy", it.train_accuracy);
    set_metric(ckpt, "test_accuracy", it.test_accuracy);
    set_metric(ckpt, "new_mask_fraction", it.new_mask_fraction);
    char name[32];
    std::snprintf(name, sizeof name, "iteration-%03zu.txt", i);
    fs::path path = out / name;
    save_checkpoint(ckpt, path.string());
    outcome.iteration_paths.push_back(std::move(path));
  }
  csv.close();

  KvConfig kv;
  echo_dataset(kv, "fae", opts.data);
  echo_rrr(kv, "fae", opts.rrr);
  kv.set("fae.cutoff", fmt_double(opts.cutoff));
  kv.set("fae.schedule", join_doubles(fc.lambda1_schedule));
  kv.set("fae.max-iterations", std::to_string(opts.max_iterations));
  if (fc.accuracy_floor) kv.set("fae.accuracy-floor", fmt_double(*fc.accuracy_floor));
  kv.set("fae.overlap-ceiling", fmt_double(opts.overlap_ceiling));
  kv.set("fae.out", opts.out);
  write_run_metadata(out, "fae", kv);
  return outcome;
}

// ---- bench ----

BenchOutcome run_bench(const BenchOptions& opts) {
  if (opts.input_dim == 0 || opts.classes < 2)
    throw std::invalid_argument("bench needs input-dim >= 1 and classes >= 2");
  if (opts.instances == 0) throw std::invalid_argument("bench needs at least one instance");
  const Params p = init_params(opts.input_dim, opts.classes, opts.seed);
  Tensor X = Tensor::zeros({opts.instances, opts.input_dim});
  Rng rng(mix_seed(opts.seed, 1));
  for (std::size_t i = 0; i < opts.instances; ++i)
    for (std::size_t j = 0; j < opts.input_dim; ++j) X.at(i, j) = rng.uniform();

  PerturbationScheme scheme;
  scheme.kind = SchemeKind::kFeatureMask;
  scheme.num_samples = opts.samples;

  BenchOutcome outcome;
  outcome.result = bench(p, X, scheme, opts.k, opts.repetitions);

  const fs::path out = opts.out;
  fs::create_directories(out);
  outcome.csv_path = out / "bench.csv";
  CsvFile csv(outcome.csv_path, {"method", "mean_seconds", "std_seconds"});
  csv.row({"surrogate", cell(outcome.result.surrogate_mean_s), cell(outcome.result.surrogate_std_s)});
  csv.row({"gradient", cell(outcome.result.gradient_mean_s), cell(outcome.result.gradient_std_s)});
  csv.row({"forward", cell(outcome.result.forward_mean_s), cell(outcome.result.forward_std_s)});
  csv.close();

  KvConfig kv;
  kv.set("bench.input-dim", std::to_string(opts.input_dim));
  kv.set("bench.classes", std::to_string(opts.classes));
  kv.set("bench.samples", std::to_string(opts.samples));
  kv.set("bench.k", std::to_string(opts.k));
  kv.set("bench.instances", std::to_string(opts.instances));
  kv.set("bench.repetitions", std::to_string(opts.repetitions));
  kv.set("bench.seed", std::to_string(opts.seed));
  kv.set("bench.out", opts.out);
  write_run_metadata(out, "bench", kv);
  return outcome;
}

// ---- lambda-sweep ----

LambdaSweepOutcome run_lambda_sweep(const LambdaSweepOptions& opts) {
  validate_config(opts.rrr);
  if (opts.grid.empty()) throw std::invalid_argument("sweep grid is empty");
  std::vector<double> grid = opts.grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  double lo = 0.0, hi = 0.0;
  for (double g : grid) {
    if (!(g >= 0.0) || !std::isfinite(g))
      throw std::invalid_argument("sweep grid values must be finite and nonnegative");
    if (g > 0.0) {
      if (lo == 0.0) lo = g;
      hi = g;
    }
  }
  if (lo == 0.0 || hi / lo < 0.999e4)
    throw std::invalid_argument("sweep grid must span at least four decades of positive values");

  data::TrainTest tt = resolve_dataset(opts.data);
  apply_mask(tt.train, opts.mask, opts.rrr.seed);

  LambdaSweepOutcome outcome;
  for (double lambda1 : grid) {
    RrrConfig cfg = opts.rrr;
    cfg.lambda1 = lambda1;
    const Params fresh = init_params(tt.train.num_features(), tt.train.num_classes(), cfg.seed);
    const LossBreakdown init_loss =
        rrr_loss(fresh, tt.train.X, tt.train.y, tt.train.A, lambda1, cfg.lambda2);
    const TrainResult trained = train(cfg, tt.train.X, tt.train.y, tt.train.A);
    const auto& last = trained.history.back();

    LambdaSweepRow row;
    row.lambda1 = lambda1;
    row.initial_right_answers = init_loss.right_answers;
    row.initial_right_reasons = init_loss.right_reasons;
    row.initial_ratio =
        init_loss.right_answers > 0.0 ? init_loss.right_reasons / init_loss.right_answers : 0.0;
    row.final_right_answers = last.loss.right_answers;
    row.final_right_reasons = last.loss.right_reasons;
    row.final_ratio =
        last.loss.right_answers > 0.0 ? last.loss.right_reasons / last.loss.right_answers : 0.0;
    row.train_accuracy = last.train_accuracy;
    row.test_accuracy = accuracy(trained.params, tt.test.X, tt.test.y);
    row.params_fingerprint = params_fingerprint(trained.params);
    outcome.rows.push_back(row);
  }

  const fs::path out = opts.out;
  fs::create_directories(out);
  outcome.csv_path = out / "sweep.csv";
  CsvFile csv(outcome.csv_path,
              {"lambda1", "initial_right_answers", "initial_right_reasons", "initial_ratio",
               "final_right_answers", "final_right_reasons", "final_ratio", "train_accuracy",
               "test_accuracy", "params_fingerprint"});
  for (const auto& row : outcome.rows) {
    csv.row({cell(row.lambda1), cell(row.initial_right_answers), cell(row.initial_right_reasons),
             cell(row.initial_ratio), cell(row.final_right_answers),
             cell(row.final_right_reasons), cell(row.final_ratio), cell(row.train_accuracy),
             cell(row.test_accuracy), fingerprint_hex(row.params_fingerprint)});
  }
  csv.close();

  KvConfig kv;
  echo_dataset(kv, "lambda-sweep", opts.data);
  echo_mask(kv, "lambda-sweep", opts.mask);
  echo_rrr(kv, "lambda-sweep", opts.rrr);
  kv.set("lambda-sweep.grid", join_doubles(grid));
  kv.set("lambda-sweep.out", opts.out);
  write_run_metadata(out, "lambda-sweep", kv);
  return outcome;
}

// ---- data-efficiency ----

DataEfficiencyOutcome run_data_efficiency(const DataEfficiencyOptions& opts) {
  validate_config(opts.rrr);
  if (opts.masks.empty()) throw std::invalid_argument("no masks requested");
  if (opts.n_grid.empty()) throw std::invalid_argument("empty N grid");
  for (std::size_t i = 0; i + 1 < opts.n_grid.size(); ++i)
    if (opts.n_grid[i] >= opts.n_grid[i + 1])
      throw std::invalid_argument("N grid must be strictly increasing");
  if (opts.n_grid.front() < 2) throw std::invalid_argument("N grid values must be at least 2");
  if (opts.step_budget == 0) throw std::invalid_argument("step budget must be positive");

  const std::size_t pool_n = opts.n_grid.back();
  const data::LabeledDataset pool = data::gen_toy_color(pool_n, opts.data_seed);
  const data::LabeledDataset test =
      data::gen_toy_color(opts.test_n, mix_seed(opts.data_seed, 0x74657374ULL));

  DataEfficiencyOutcome outcome;
  for (const std::string& mask_name : opts.masks) {
    for (const std::size_t n : opts.n_grid) {
      const data::LabeledDataset subset = take_rows(pool, n);
      Tensor A = Tensor::zeros({n, subset.num_features()});
      if (mask_name != "none") {
        data::ToyColorMask which;
        if (mask_name == "corners") which = data::ToyColorMask::kCorners;
        else if (mask_name == "top-middle") which = data::ToyColorMask::kTopMiddle;
        else if (mask_name == "pro-rule1") which = data::ToyColorMask::kProRule1;
        else if (mask_name == "pro-rule2") which = data::ToyColorMask::kProRule2;
        else
          throw std::invalid_argument("unknown mask '" + mask_name +
                                      "' (expected none, corners, top-middle, pro-rule1, or "
                                      "pro-rule2)");
        A = data::toy_color_mask(which, n);
      }

      RrrConfig cfg = opts.rrr;
      // Balance the two loss terms exactly at initialization.
      cfg.lambda1 = 0.0;
      if (mask_name != "none") {
        const Params fresh = init_params(subset.num_features(), subset.num_classes(), cfg.seed);
        const LossBreakdown at_unit = rrr_loss(fresh, subset.X, subset.y, A, 1.0, 0.0);
        if (at_unit.right_reasons > 0.0) cfg.lambda1 = at_unit.right_answers / at_unit.right_reasons;
      }
      // Hold the optimizer-step count roughly constant as N shrinks.
      const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
      cfg.epochs = std::max(opts.rrr.epochs,
                            std::min<std::size_t>(6400, (opts.step_budget + steps_per_epoch - 1) /
                                                            steps_per_epoch));

      const TrainResult trained = train(cfg, subset.X, subset.y, A);
      DataEfficiencyRow row;
      row.mask = mask_name;
      row.n = n;
      row.lambda1 = cfg.lambda1;
      row.epochs = cfg.epochs;
      row.train_accuracy = trained.history.back().train_accuracy;
      row.test_accuracy = accuracy(trained.params, test.X, test.y);
      outcome.rows.push_back(std::move(row));
    }
  }

  const fs::path out = opts.out;
  fs::create_directories(out);
  outcome.csv_path = out / "efficiency.csv";
  CsvFile csv(outcome.csv_path,
              {"mask", "n", "lambda1", "epochs", "train_accuracy", "test_accuracy"});
  for (const auto& row : outcome.rows) {
    csv.row({row.mask, cell(row.n), cell(row.lambda1), cell(row.epochs), cell(row.train_accuracy),
             cell(row.test_accuracy)});
  }
  csv.close();

  KvConfig kv;
  kv.set("data-efficiency.data-seed", std::to_string(opts.data_seed));
  echo_rrr(kv, "data-efficiency", opts.rrr);
  kv.set("data-efficiency.masks", join_names(opts.masks));
  kv.set("data-efficiency.n-grid", join_sizes(opts.n_grid));
  kv.set("data-efficiency.step-budget", std::to_string(opts.step_budget));
  kv.set("data-efficiency.test-n", std::to_string(opts.test_n));
  kv.set("data-efficiency.out", opts.out);
  write_run_metadata(out, "data-efficiency", kv);
  return outcome;
}

// ---- boundary-field ----

BoundaryFieldOutcome run_boundary_field(const BoundaryFieldOptions& opts) {
  validate_config(opts.rrr);
  if (opts.resolution < 2) throw std::invalid_argument("resolution must be at least 2");
  if (!(opts.margin >= 0.0)) throw std::invalid_argument("margin must be nonnegative");
  data::TrainTest tt = resolve_dataset(opts.data);
  if (tt.train.num_features() != 2)
    throw std::invalid_argument("boundary-field needs a two-column dataset, got " +
                                std::to_string(tt.train.num_features()));

  const TrainResult trained = train(opts.rrr, tt.train.X, tt.train.y, tt.train.A);

  double x1_lo = tt.train.X.at(0, 0), x1_hi = x1_lo;
  double x2_lo = tt.train.X.at(0, 1), x2_hi = x2_lo;
  for (std::size_t i = 0; i < tt.train.size(); ++i) {
    x1_lo = std::min(x1_lo, tt.train.X.at(i, 0));
    x1_hi = std::max(x1_hi, tt.train.X.at(i, 0));
    x2_lo = std::min(x2_lo, tt.train.X.at(i, 1));
    x2_hi = std::max(x2_hi, tt.train.X.at(i, 1));
  }
  x1_lo -= opts.margin;
  x1_hi += opts.margin;
  x2_lo -= opts.margin;
  x2_hi += opts.margin;

  const std::size_t res = opts.resolution;
  BoundaryFieldOutcome outcome;
  outcome.cells = Tensor::zeros({res * res, 2});
  const double step1 = (x1_hi - x1_lo) / static_cast<double>(res - 1);
  const double step2 = (x2_hi - x2_lo) / static_cast<double>(res - 1);
  for (std::size_t i = 0; i < res; ++i) {
    for (std::size_t j = 0; j < res; ++j) {
      outcome.cells.at(i * res + j, 0) = x1_lo + step1 * static_cast<double>(i);
      outcome.cells.at(i * res + j, 1) = x2_lo + step2 * static_cast<double>(j);
    }
  }

  const ExplanationSet prob_e = explain(trained.params, outcome.cells, {Target::kPredictedProb, 0});
  const ExplanationSet logprob_e =
      explain(trained.params, outcome.cells, {Target::kSumLogProb, 0});
  outcome.params = trained.params;
  outcome.prob_gradients = prob_e.gradients;
  outcome.logprob_gradients = logprob_e.gradients;
  outcome.predicted = predict(trained.params, outcome.cells);

  const fs::path out = opts.out;
  fs::create_directories(out);
  outcome.csv_path = out / "field.csv";
  CsvFile csv(outcome.csv_path, {"x1", "x2", "predicted_class", "dprob_dx1", "dprob_dx2",
                                 "dlogprob_dx1", "dlogprob_dx2"});
  for (std::size_t r = 0; r < res * res; ++r) {
    csv.row({cell(outcome.cells.at(r, 0)), cell(outcome.cells.at(r, 1)), cell(outcome.predicted[r]),
             cell(outcome.prob_gradients.at(r, 0)), cell(outcome.prob_gradients.at(r, 1)),
             cell(outcome.logprob_gradients.at(r, 0)), cell(outcome.logprob_gradients.at(r, 1))});
  }
  csv.close();

  KvConfig kv;
  echo_dataset(kv, "boundary-field", opts.data);
  echo_rrr(kv, "boundary-field", opts.rrr);
  kv.set("boundary-field.resolution", std::to_string(opts.resolution));
  kv.set("boundary-field.margin", fmt_double(opts.margin));
  kv.set("boundary-field.out", opts.out);
  write_run_metadata(out, "boundary-field", kv);
  return outcome;
}

// ---- confound-report ----

namespace {

struct SplitResult {
  double train = 0.0;
  double with_acc = 0.0;
  double without_acc = 0.0;
};

}  // namespace

ConfoundReportOutcome run_confound_report(const ConfoundReportOptions& opts) {
  validate_config(opts.rrr);
  if (opts.splits == 0) throw std::invalid_argument("need at least one split");
  if (opts.variants.empty()) throw std::invalid_argument("no variants requested");
  const bool iris = opts.data.dataset == "iris-cancer";
  const bool decoy = opts.data.dataset == "decoy-mnist";
  if (!iris && !decoy)
    throw std::invalid_argument("confound-report covers iris-cancer and decoy-mnist, got '" +
                                opts.data.dataset + "'");
  for (const auto& v : opts.variants) {
    const bool known = v == "zero" || v == "full" || (decoy && v == "clean");
    if (!known)
      throw std::invalid_argument("unknown variant '" + v +
                                  (decoy ? "' (expected zero, full, or clean)"
                                         : "' (expected zero or full)"));
  }

  const std::size_t threads =
      opts.threads > 0
          ? opts.threads
          : std::min<std::size_t>(opts.splits,
                                  std::max(1u, std::thread::hardware_concurrency()));

  const fs::path out = opts.out;
  fs::create_directories(out);
  ConfoundReportOutcome outcome;
  outcome.report_path = out / (iris ? "confound-iris.csv" : "confound-decoy.csv");
  outcome.aggregate_path =
      out / (iris ? "confound-iris-aggregate.csv" : "confound-decoy-aggregate.csv");

  CsvFile report(outcome.report_path,
                 iris ? std::vector<std::string>{"variant", "split", "train_accuracy",
                                                 "test_with_iris", "test_without_iris"}
                      : std::vector<std::string>{"variant", "split", "train_accuracy",
                                                 "test_accuracy"});
  CsvFile aggregate(outcome.aggregate_path,
                    iris ? std::vector<std::string>{"variant", "train_mean", "train_std",
                                                    "test_with_mean", "test_with_std",
                                                    "test_without_mean", "test_without_std"}
                         : std::vector<std::string>{"variant", "train_mean", "train_std",
                                                    "test_mean", "test_std"});

  for (const std::string& variant : opts.variants) {
    auto run_split = [&](std::size_t s) -> SplitResult {
      DatasetOptions d = opts.data;
      d.data_seed = opts.data.data_seed + s;
      if (variant == "clean") d.dataset = "mnist";
      data::TrainTest tt = resolve_dataset(d);

      MaskOptions mask;
      mask.mask = variant == "full" ? "dataset" : "none";
      // The test annotations keep marking the confounded columns even for the
      // zero variant, which only blanks the train-side mask.
      std::vector<std::size_t> masked_cols;
      if (iris)
        for (std::size_t j = 0; j < tt.test.num_features(); ++j)
          if (tt.test.A.at(0, j) != 0.0) masked_cols.push_back(j);
      RrrConfig cfg = opts.rrr;
      cfg.seed = mix_seed(opts.rrr.seed, s);
      apply_mask(tt.train, mask, cfg.seed);

      const TrainResult trained = train(cfg, tt.train.X, tt.train.y, tt.train.A);
      SplitResult r;
      r.train = trained.history.back().train_accuracy;
      r.with_acc = accuracy(trained.params, tt.test.X, tt.test.y);
      if (iris) {
        // Remove the confounded columns by permuting each one across the test
        // rows: values stay on-distribution but lose their pairing with the
        // label. Zeroing would instead pin every row at the column minimum,
        // an extreme rather than an uninformative input.
        Tensor blanked = tt.test.X;
        Rng rng(mix_seed(cfg.seed, 0x72656d6f7665ULL));
        std::vector<std::size_t> perm(tt.test.size());
        for (std::size_t j : masked_cols) {
          std::iota(perm.begin(), perm.end(), std::size_t{0});
          rng.shuffle(perm);
          for (std::size_t i = 0; i < tt.test.size(); ++i)
            blanked.at(i, j) = tt.test.X.at(perm[i], j);
        }
        r.without_acc = accuracy(trained.params, blanked, tt.test.y);
      }
      return r;
    };

    const std::vector<SplitResult> results =
        indexed_parallel<SplitResult>(opts.splits, threads, run_split);

    std::vector<double> trains, withs, withouts;
    for (std::size_t s = 0; s < results.size(); ++s) {
      const SplitResult& r = results[s];
      trains.push_back(r.train);
      withs.push_back(r.with_acc);
      withouts.push_back(r.without_acc);
      if (iris)
        report.row({variant, cell(s), cell(r.train), cell(r.with_acc), cell(r.without_acc)});
      else
        report.row({variant, cell(s), cell(r.train), cell(r.with_acc)});
    }

    ConfoundAggregateRow agg;
    agg.variant = variant;
    agg.train_mean = mean_of(trains);
    agg.train_std = sample_std(trains, agg.train_mean);
    agg.with_mean = mean_of(withs);
    agg.with_std = sample_std(withs, agg.with_mean);
    if (iris) {
      agg.without_mean = mean_of(withouts);
      agg.without_std = sample_std(withouts, agg.without_mean);
      aggregate.row({variant, cell(agg.train_mean), cell(agg.train_std), cell(agg.with_mean),
                     cell(agg.with_std), cell(agg.without_mean), cell(agg.without_std)});
    } else {
      aggregate.row({variant, cell(agg.train_mean), cell(agg.train_std), cell(agg.with_mean),
                     cell(agg.with_std)});
    }
    outcome.aggregates.push_back(std::move(agg));
  }
  report.close();
  aggregate.close();

  KvConfig kv;
  echo_dataset(kv, "confound-report", opts.data);
  echo_rrr(kv, "confound-report", opts.rrr);
  kv.set("confound-report.splits", std::to_string(opts.splits));
  kv.set("confound-report.variants", join_names(opts.variants));
  kv.set("confound-report.threads", std::to_string(opts.threads));
  kv.set("confound-report.out", opts.out);
  write_run_metadata(out, "confound-report", kv);
  return outcome;
}

}  // namespace igrad::harness
