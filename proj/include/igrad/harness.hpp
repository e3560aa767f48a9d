#pragma once

// Experiment plumbing: the flat key/value run-configuration format, dataset
// resolution by name, annotation-mask selection, the experiment drivers that
// emit plot-ready CSV files, and the command line entry point. Every driver
// writes a run-metadata file to its output directory holding the resolved
// options under the same dotted keys the config file uses, so feeding that
// file back through --config reproduces the run bit for bit.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "igrad/checkpoint.hpp"
#include "igrad/datasets.hpp"
#include "igrad/fae.hpp"
#include "igrad/surrogate.hpp"
#include "igrad/training.hpp"

namespace igrad::harness {

inline constexpr std::string_view kLibraryVersion = "1.0.0";

// ---- flat key/value configuration ----
//
// One "key value" pair per line; '#' starts a comment; keys are dotted,
// lowercase, and mirror CLI flags (train.lambda1 pairs with `train --lambda1`).
struct KvEntry {
  std::string key;
  std::string value;
};

class KvConfig {
 public:
  // Throws std::invalid_argument with a line number on malformed lines.
  static KvConfig parse_text(const std::string& text);
  // Throws std::invalid_argument naming the path when the file is missing.
  static KvConfig load(const std::string& path);

  void set(const std::string& key, std::string value);
  const std::string* find(std::string_view key) const;
  std::string serialize() const;
  const std::vector<KvEntry>& entries() const { return entries_; }

 private:
  std::vector<KvEntry> entries_;  // insertion order, keys unique
};

// ---- dataset resolution ----
struct DatasetOptions {
  std::string dataset = "toy-color";  // toy-color | decoy-mnist | iris-cancer |
                                      // blobs2d | text-dir | file
  std::size_t n = 12500;              // rows generated before splitting (synthetic kinds)
  double train_fraction = 0.8;
  std::uint64_t data_seed = 0;        // generation and split seed
  std::string path;                   // text-dir corpus directory, or train file for "file"
  std::string test_path;              // optional pre-split test file for "file"
  std::string mnist_dir = "data/mnist";
  std::string fixtures_dir = "data/fixtures";
  std::size_t subsample = 0;          // decoy-mnist: keep only the first N train rows
};

struct MaskOptions {
  std::string mask = "dataset";  // none | dataset | full | corners | top-middle |
                                 // pro-rule1 | pro-rule2
  double fraction = 1.0;         // fraction of train rows that keep their annotations
  std::int64_t count = -1;       // exact annotated-row count; overrides fraction when >= 0
};

// Builds the named dataset with its natural annotations installed in A
// (decoy corner blocks, the Iris columns), then splits. Throws
// std::invalid_argument naming any missing file or directory.
data::TrainTest resolve_dataset(const DatasetOptions& opts);

// Replaces the train annotations according to MaskOptions, then zeroes the
// annotation rows outside a seeded subset of the requested size.
void apply_mask(data::LabeledDataset& train, const MaskOptions& opts, std::uint64_t seed);

// ---- run metadata ----
// Writes `<out>/run-metadata.txt`: meta.command, meta.library-version,
// meta.checkpoint-format, then the resolved options (already dotted).
void write_run_metadata(const std::filesystem::path& out_dir, const std::string& command,
                        const KvConfig& resolved);

// ---- drivers ----
struct GenDataOptions {
  DatasetOptions data;
  MaskOptions mask;
  std::uint64_t seed = 0;  // mask-subset seed
  std::string out = "out/gen-data";
};
struct GenDataResult {
  std::filesystem::path train_path;
  std::filesystem::path test_path;
};
GenDataResult run_gen_data(const GenDataOptions& opts);

struct TrainOptions {
  DatasetOptions data;
  MaskOptions mask;
  RrrConfig rrr;
  std::string out = "out/train";
};
struct TrainOutcome {
  Checkpoint checkpoint;
  TrainHistory history;
  std::filesystem::path checkpoint_path;
  std::filesystem::path history_path;
};
TrainOutcome run_train(const TrainOptions& opts);

struct ExplainOptions {
  std::string checkpoint = "out/train/checkpoint.txt";
  DatasetOptions data;
  std::string split = "test";  // train | test
  std::string target = "sum-logprob";  // sum-logprob | predicted-prob | class-prob
  std::size_t class_index = 0;         // class-prob only
  double cutoff = 0.67;
  std::size_t limit = 25;  // rows explained; 0 means every row
  std::string out = "out/explain";
};
struct ExplainOutcome {
  std::filesystem::path artifact_path;
  double selected_fraction = 0.0;
};
ExplainOutcome run_explain(const ExplainOptions& opts);

struct SurrogateOptions {
  std::string checkpoint = "out/train/checkpoint.txt";
  DatasetOptions data;
  std::string split = "test";
  std::size_t samples = 1000;
  std::size_t k = 6;
  std::size_t limit = 10;  // instances explained
  std::uint64_t seed = 0;
  std::string out = "out/surrogate";
};
struct SurrogateOutcome {
  std::filesystem::path csv_path;
};
SurrogateOutcome run_surrogate(const SurrogateOptions& opts);

struct FaeOptions {
  DatasetOptions data;
  RrrConfig rrr;
  double cutoff = 0.67;
  std::vector<double> lambda1_schedule;  // empty selects a per-dataset default
  std::size_t max_iterations = 3;
  double accuracy_floor = std::numeric_limits<double>::quiet_NaN();  // NaN selects the default
  double overlap_ceiling = 0.98;
  std::string out = "out/fae";
};
struct FaeOutcome {
  FaeTrace trace;
  std::filesystem::path index_path;
  std::vector<std::filesystem::path> iteration_paths;
};
FaeOutcome run_fae_driver(const FaeOptions& opts);

struct BenchOptions {
  std::size_t input_dim = 784;
  std::size_t classes = 10;
  std::size_t samples = 5000;
  std::size_t k = 6;
  std::size_t instances = 3;
  std::size_t repetitions = 5;
  std::uint64_t seed = 0;
  std::string out = "out/bench";
};
struct BenchOutcome {
  BenchResult result;
  std::filesystem::path csv_path;
};
BenchOutcome run_bench(const BenchOptions& opts);

struct LambdaSweepOptions {
  DatasetOptions data;
  MaskOptions mask;  // default corners on toy-color
  RrrConfig rrr;     // lambda1 ignored; the grid supplies it
  std::vector<double> grid = {0.0, 0.1, 1.0, 10.0, 100.0, 1000.0, 1e4, 1e5, 1e6};
  std::string out = "out/lambda-sweep";
};
struct LambdaSweepRow {
  double lambda1 = 0.0;
  double initial_right_answers = 0.0;
  double initial_right_reasons = 0.0;
  double initial_ratio = 0.0;
  double final_right_answers = 0.0;
  double final_right_reasons = 0.0;
  double final_ratio = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::uint64_t params_fingerprint = 0;
};
struct LambdaSweepOutcome {
  std::vector<LambdaSweepRow> rows;
  std::filesystem::path csv_path;
};
LambdaSweepOutcome run_lambda_sweep(const LambdaSweepOptions& opts);

struct DataEfficiencyOptions {
  std::uint64_t data_seed = 0;  // toy-color pool and test-set seed
  RrrConfig rrr;                // lambda1 ignored; rebalanced at every N. epochs is the floor.
  std::vector<std::string> masks = {"none", "pro-rule1", "corners"};
  std::vector<std::size_t> n_grid = {25, 50, 100, 250, 500, 1000, 2500, 5000};
  std::size_t step_budget = 2560;  // target optimizer steps; epochs grow as N shrinks
  std::size_t test_n = 2500;
  std::string out = "out/data-efficiency";
};
struct DataEfficiencyRow {
  std::string mask;
  std::size_t n = 0;
  double lambda1 = 0.0;
  std::size_t epochs = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};
struct DataEfficiencyOutcome {
  std::vector<DataEfficiencyRow> rows;
  std::filesystem::path csv_path;
};
DataEfficiencyOutcome run_data_efficiency(const DataEfficiencyOptions& opts);

struct BoundaryFieldOptions {
  DatasetOptions data;  // must resolve to a two-column dataset
  RrrConfig rrr;
  std::size_t resolution = 40;
  double margin = 0.5;  // padding around the training bounding box
  std::string out = "out/boundary-field";
};
struct BoundaryFieldOutcome {
  std::filesystem::path csv_path;
  Params params;          // the trained model the field was sampled from
  Tensor cells;           // [resolution^2, 2]
  Tensor prob_gradients;  // [resolution^2, 2], d p_predicted / d x
  Tensor logprob_gradients;  // [resolution^2, 2], d sum_k log p_k / d x
  std::vector<std::size_t> predicted;
};
BoundaryFieldOutcome run_boundary_field(const BoundaryFieldOptions& opts);

struct ConfoundReportOptions {
  DatasetOptions data;  // iris-cancer or decoy-mnist
  RrrConfig rrr;        // lambda1 applies to the full-A variant
  std::size_t splits = 50;  // retraining count (split seeds 0..splits-1 offset by data_seed)
  std::vector<std::string> variants = {"zero", "full"};
  std::size_t threads = 0;  // 0 picks a hardware-based default
  std::string out = "out/confound-report";
};
struct ConfoundAggregateRow {
  std::string variant;
  double train_mean = 0.0, train_std = 0.0;
  double with_mean = 0.0, with_std = 0.0;      // iris: test with Iris columns; decoy: test
  double without_mean = 0.0, without_std = 0.0;  // iris only; zero for decoy
};
struct ConfoundReportOutcome {
  std::vector<ConfoundAggregateRow> aggregates;
  std::filesystem::path report_path;
  std::filesystem::path aggregate_path;
};
ConfoundReportOutcome run_confound_report(const ConfoundReportOptions& opts);

// ---- command line ----
// Exit 0 on success, 1 on configuration errors (unknown subcommand or flag,
// bad values, missing input paths), 2 on runtime failures.
int run_cli(int argc, const char* const* argv);
int run_cli(const std::vector<std::string>& args);  // args without the program name

}  // namespace igrad::harness
