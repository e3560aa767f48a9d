#include "igrad/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "harness_util.hpp"
#include "igrad/rng.hpp"
#include "igrad/textio.hpp"

namespace igrad::harness {

namespace fs = std::filesystem;

namespace util {

void require_exists(const std::string& path, const std::string& what) {
  if (path.empty()) throw std::invalid_argument(what + " path is empty");
  if (!fs::exists(path)) throw std::invalid_argument(what + " path does not exist: " + path);
}

data::LabeledDataset take_rows(const data::LabeledDataset& ds, std::size_t count) {
  const std::size_t n = std::min(count, ds.size());
  const std::size_t d = ds.num_features();
  const std::size_t k = ds.num_classes();
  data::LabeledDataset out;
  out.X = Tensor::zeros({n, d});
  out.y = Tensor::zeros({n, k});
  out.A = Tensor::zeros({n, d});
  out.meta = ds.meta;
  out.split_tag = ds.split_tag;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out.X.at(i, j) = ds.X.at(i, j);
      out.A.at(i, j) = ds.A.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) out.y.at(i, c) = ds.y.at(i, c);
  }
  return out;
}

namespace {

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if (item.empty()) throw std::invalid_argument("empty item in list '" + text + "'");
    items.push_back(item);
  }
  if (items.empty()) throw std::invalid_argument("empty list");
  return items;
}

}  // namespace

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_commas(text)) out.push_back(parse_double(item));
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split_commas(text)) out.push_back(parse_uint64(item));
  return out;
}

std::vector<std::string> parse_name_list(const std::string& text) { return split_commas(text); }

CsvFile::CsvFile(const fs::path& path, const std::vector<std::string>& header)
    : path_(path), out_(path), columns_(header.size()) {
  if (!out_) throw std::runtime_error("cannot write CSV file: " + path.string());
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void CsvFile::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_)
    throw std::logic_error("CSV row width mismatch in " + path_.string());
  for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
  out_ << '\n';
}

void CsvFile::close() {
  if (!out_.flush()) throw std::runtime_error("cannot write CSV file: " + path_.string());
  out_.close();
}

}  // namespace util

using util::require_exists;
using util::take_rows;

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    const bool ok = std::islower(static_cast<unsigned char>(c)) ||
                    std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == '-' ||
                    c == '_';
    if (!ok) return false;
  }
  return true;
}

}  // namespace

// ---- KvConfig ----

KvConfig KvConfig::parse_text(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t space = line.find_first_of(" \t");
    if (space == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected 'key value', got '" + line + "'");
    const std::string key = line.substr(0, space);
    const std::string value = trim(line.substr(space + 1));
    if (!valid_key(key))
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": bad key '" + key +
                                  "' (lowercase letters, digits, '.', '-', '_')");
    if (value.empty())
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": key '" + key +
                                  "' has no value");
    if (cfg.find(key))
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": duplicate key '" +
                                  key + "'");
    cfg.entries_.push_back({key, value});
  }
  return cfg;
}

KvConfig KvConfig::load(const std::string& path) {
  require_exists(path, "config file");
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

void KvConfig::set(const std::string& key, std::string value) {
  if (!valid_key(key)) throw std::invalid_argument("bad config key '" + key + "'");
  for (auto& e : entries_) {
    if (e.key == key) {
      e.value = std::move(value);
      return;
    }
  }
  entries_.push_back({key, std::move(value)});
}

const std::string* KvConfig::find(std::string_view key) const {
  for (const auto& e : entries_)
    if (e.key == key) return &e.value;
  return nullptr;
}

std::string KvConfig::serialize() const {
  std::ostringstream out;
  for (const auto& e : entries_) out << e.key << ' ' << e.value << '\n';
  return out.str();
}

// ---- dataset resolution ----

data::TrainTest resolve_dataset(const DatasetOptions& opts) {
  const std::string& name = opts.dataset;
  if (name == "toy-color") {
    if (opts.n < 4) throw std::invalid_argument("toy-color needs n >= 4");
    return data::split(data::gen_toy_color(opts.n, opts.data_seed), opts.train_fraction,
                       opts.data_seed);
  }
  if (name == "blobs2d") {
    if (opts.n < 4) throw std::invalid_argument("blobs2d needs n >= 4");
    return data::split(data::gen_2d_toy(data::Toy2dKind::kTwoClass, opts.n, opts.data_seed),
                       opts.train_fraction, opts.data_seed);
  }
  if (name == "decoy-mnist" || name == "mnist") {
    const std::string train_images = opts.mnist_dir + "/train-images-idx3-ubyte";
    const std::string train_labels = opts.mnist_dir + "/train-labels-idx1-ubyte";
    const std::string test_images = opts.mnist_dir + "/t10k-images-idx3-ubyte";
    const std::string test_labels = opts.mnist_dir + "/t10k-labels-idx1-ubyte";
    for (const auto* p : {&train_images, &train_labels, &test_images, &test_labels})
      require_exists(*p, "dataset");
    data::LabeledDataset train_digits = data::load_mnist(train_images, train_labels);
    data::LabeledDataset test_digits = data::load_mnist(test_images, test_labels);
    if (opts.subsample > 0 && opts.subsample < train_digits.size())
      train_digits = take_rows(train_digits, opts.subsample);
    train_digits.split_tag = "train";
    test_digits.split_tag = "test";
    if (name == "mnist") return {std::move(train_digits), std::move(test_digits)};
    data::DecoyResult train = data::decoyify(train_digits, opts.data_seed, data::DecoyPhase::kTrain);
    data::DecoyResult test =
        data::decoyify(test_digits, opts.data_seed + 1, data::DecoyPhase::kTest);
    train.data.A = train.annotations;
    test.data.A = test.annotations;
    train.data.split_tag = "train";
    test.data.split_tag = "test";
    return {std::move(train.data), std::move(test.data)};
  }
  if (name == "iris-cancer") {
    const std::string iris = opts.fixtures_dir + "/iris.data";
    const std::string wdbc = opts.fixtures_dir + "/wdbc.data";
    require_exists(iris, "dataset");
    require_exists(wdbc, "dataset");
    data::IrisCancerResult built = data::build_iris_cancer(iris, wdbc);
    built.data.A = built.iris_mask;
    return data::split(built.data, opts.train_fraction, opts.data_seed);
  }
  if (name == "text-dir") {
    require_exists(opts.path, "dataset");
    return data::split(data::load_text_dir(opts.path), opts.train_fraction, opts.data_seed);
  }
  if (name == "file") {
    require_exists(opts.path, "dataset");
    data::LabeledDataset train = data::load_dataset(opts.path);
    if (!opts.test_path.empty()) {
      require_exists(opts.test_path, "dataset");
      data::LabeledDataset test = data::load_dataset(opts.test_path);
      if (test.num_features() != train.num_features() || test.num_classes() != train.num_classes())
        throw std::invalid_argument("train and test files disagree on feature or class counts");
      return {std::move(train), std::move(test)};
    }
    return data::split(train, opts.train_fraction, opts.data_seed);
  }
  throw std::invalid_argument(
      "unknown dataset '" + name +
      "' (expected toy-color, decoy-mnist, mnist, iris-cancer, blobs2d, text-dir, or file)");
}

void apply_mask(data::LabeledDataset& train, const MaskOptions& opts, std::uint64_t seed) {
  const std::size_t n = train.size();
  const std::size_t d = train.num_features();
  if (!(opts.fraction >= 0.0 && opts.fraction <= 1.0))
    throw std::invalid_argument("mask fraction must lie in [0, 1]");

  const std::string& kind = opts.mask;
  if (kind == "none") {
    train.A = Tensor::zeros({n, d});
  } else if (kind == "dataset") {
    // keep the annotations the dataset came with
  } else if (kind == "full") {
    train.A = Tensor::zeros({n, d});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) train.A.at(i, j) = 1.0;
  } else {
    data::ToyColorMask which;
    if (kind == "corners") which = data::ToyColorMask::kCorners;
    else if (kind == "top-middle") which = data::ToyColorMask::kTopMiddle;
    else if (kind == "pro-rule1") which = data::ToyColorMask::kProRule1;
    else if (kind == "pro-rule2") which = data::ToyColorMask::kProRule2;
    else
      throw std::invalid_argument("unknown mask '" + kind +
                                  "' (expected none, dataset, full, corners, top-middle, "
                                  "pro-rule1, or pro-rule2)");
    if (d != 75)
      throw std::invalid_argument("mask '" + kind +
                                  "' applies to the 5x5 color grid (75 columns), got " +
                                  std::to_string(d));
    train.A = data::toy_color_mask(which, n);
  }

  // Restrict annotations to a seeded subset of rows.
  std::size_t keep = n;
  if (opts.count >= 0) keep = std::min<std::size_t>(static_cast<std::size_t>(opts.count), n);
  else if (opts.fraction < 1.0) keep = static_cast<std::size_t>(std::llround(opts.fraction * n));
  if (keep >= n) return;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x6d61736bULL));
  rng.shuffle(order);
  for (std::size_t r = keep; r < n; ++r)
    for (std::size_t j = 0; j < d; ++j) train.A.at(order[r], j) = 0.0;
}

void write_run_metadata(const fs::path& out_dir, const std::string& command,
                        const KvConfig& resolved) {
  fs::create_directories(out_dir);
  KvConfig meta;
  meta.set("meta.command", command);
  meta.set("meta.library-version", std::string(kLibraryVersion));
  meta.set("meta.checkpoint-format", std::to_string(kCheckpointVersion));
  for (const auto& e : resolved.entries()) meta.set(e.key, e.value);
  const fs::path path = out_dir / "run-metadata.txt";
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metadata file: " + path.string());
  out << meta.serialize();
  if (!out.flush()) throw std::runtime_error("cannot write metadata file: " + path.string());
}

}  // namespace igrad::harness
