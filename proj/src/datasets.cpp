#include "igrad/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "igrad/fingerprint.hpp"
#include "igrad/rng.hpp"
#include "igrad/textio.hpp"

namespace igrad::data {

namespace fs = std::filesystem;

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::kGrid: return "grid";
    case Kind::kText: return "text";
    case Kind::kTabular: return "tabular";
  }
  throw std::logic_error("unknown dataset kind");
}

Kind kind_from_name(const std::string& name) {
  if (name == "grid") return Kind::kGrid;
  if (name == "text") return Kind::kText;
  if (name == "tabular") return Kind::kTabular;
  throw std::invalid_argument("unknown dataset kind '" + name + "'");
}

std::vector<std::size_t> LabeledDataset::labels() const {
  std::vector<std::size_t> out(size());
  const std::size_t k = num_classes();
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (y.at(i, j) > y.at(i, best)) best = j;
    out[i] = best;
  }
  return out;
}

void LabeledDataset::validate() const {
  if (X.rank() != 2) throw std::runtime_error("dataset X must be rank 2, got " + shape_str(X.shape()));
  if (y.rank() != 2) throw std::runtime_error("dataset y must be rank 2, got " + shape_str(y.shape()));
  if (!A.same_shape(X))
    throw std::runtime_error("dataset A shape " + shape_str(A.shape()) + " does not match X shape " +
                             shape_str(X.shape()));
  if (y.rows() != X.rows())
    throw std::runtime_error("dataset has " + std::to_string(X.rows()) + " feature rows but " +
                             std::to_string(y.rows()) + " label rows");
  if (num_classes() < 2) throw std::runtime_error("dataset needs at least 2 label columns");
  if (!A.binary()) throw std::runtime_error("dataset annotations must be 0/1");
  for (std::size_t i = 0; i < y.rows(); ++i) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      const double v = y.at(i, j);
      if (v == 1.0) ++ones;
      else if (v != 0.0)
        throw std::runtime_error("label row " + std::to_string(i) + " is not one-hot");
    }
    if (ones != 1) throw std::runtime_error("label row " + std::to_string(i) + " is not one-hot");
  }
  if (!X.all_finite()) throw std::runtime_error("dataset features contain non-finite values");
  if (meta.kind == Kind::kGrid) {
    if (meta.grid_h * meta.grid_w * meta.grid_channels != num_features())
      throw std::runtime_error("grid dims do not multiply to the feature count");
  }
  if (!meta.feature_names.empty() && meta.feature_names.size() != num_features())
    throw std::runtime_error("feature name count does not match the feature count");
}

// ---- toy color images ----

namespace {

constexpr std::size_t kToySide = 5;
constexpr std::size_t kToyChannels = 3;
constexpr std::size_t kToyFeatures = kToySide * kToySide * kToyChannels;  // 75

// red, green, blue, yellow
constexpr double kPalette[4][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}};

void put_pixel(Tensor& X, std::size_t row, std::size_t r, std::size_t c, int color) {
  const std::size_t base = (r * kToySide + c) * kToyChannels;
  for (std::size_t ch = 0; ch < kToyChannels; ++ch) X.at(row, base + ch) = kPalette[color][ch];
}

bool corners_all_equal(const int px[kToySide][kToySide]) {
  return px[0][0] == px[0][4] && px[0][0] == px[4][0] && px[0][0] == px[4][4];
}

bool top_middle_distinct(const int px[kToySide][kToySide]) {
  return px[0][1] != px[0][2] && px[0][1] != px[0][3] && px[0][2] != px[0][3];
}

}  // namespace

LabeledDataset gen_toy_color(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gen_toy_color: n must be positive");
  LabeledDataset ds;
  ds.X = Tensor::zeros({n, kToyFeatures});
  ds.y = Tensor::zeros({n, 2});
  ds.A = Tensor::zeros({n, kToyFeatures});
  ds.meta.kind = Kind::kGrid;
  ds.meta.grid_h = kToySide;
  ds.meta.grid_w = kToySide;
  ds.meta.grid_channels = kToyChannels;

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, i));
    const std::size_t label = i % 2;
    ds.y.at(i, label) = 1.0;
    if (label == 0) {
      // Corners share one color; top middle pixels get three distinct colors;
      // the remaining 18 pixels are uniform.
      const int corner = static_cast<int>(rng.integer(4));
      int colors[4] = {0, 1, 2, 3};
      for (int k = 0; k < 3; ++k) {
        const std::size_t j = k + rng.integer(4 - k);
        std::swap(colors[k], colors[j]);
      }
      for (std::size_t r = 0; r < kToySide; ++r)
        for (std::size_t c = 0; c < kToySide; ++c) put_pixel(ds.X, i, r, c, static_cast<int>(rng.integer(4)));
      put_pixel(ds.X, i, 0, 0, corner);
      put_pixel(ds.X, i, 0, 4, corner);
      put_pixel(ds.X, i, 4, 0, corner);
      put_pixel(ds.X, i, 4, 4, corner);
      put_pixel(ds.X, i, 0, 1, colors[0]);
      put_pixel(ds.X, i, 0, 2, colors[1]);
      put_pixel(ds.X, i, 0, 3, colors[2]);
    } else {
      // Rejection sample uniform images until both rules fail.
      for (;;) {
        int px[kToySide][kToySide];
        for (std::size_t r = 0; r < kToySide; ++r)
          for (std::size_t c = 0; c < kToySide; ++c) px[r][c] = static_cast<int>(rng.integer(4));
        if (corners_all_equal(px) || top_middle_distinct(px)) continue;
        for (std::size_t r = 0; r < kToySide; ++r)
          for (std::size_t c = 0; c < kToySide; ++c) put_pixel(ds.X, i, r, c, px[r][c]);
        break;
      }
    }
  }
  return ds;
}

Tensor toy_color_mask(ToyColorMask which, std::size_t n) {
  static const std::vector<std::pair<std::size_t, std::size_t>> corner_pixels = {
      {0, 0}, {0, 4}, {4, 0}, {4, 4}};
  static const std::vector<std::pair<std::size_t, std::size_t>> top_middle_pixels = {
      {0, 1}, {0, 2}, {0, 3}};

  std::vector<double> row(kToyFeatures, 0.0);
  const bool complement = which == ToyColorMask::kProRule1 || which == ToyColorMask::kProRule2;
  const auto& pixels = (which == ToyColorMask::kCorners || which == ToyColorMask::kProRule1)
                           ? corner_pixels
                           : top_middle_pixels;
  for (const auto& [r, c] : pixels) {
    const std::size_t base = (r * kToySide + c) * kToyChannels;
    for (std::size_t ch = 0; ch < kToyChannels; ++ch) row[base + ch] = 1.0;
  }
  if (complement)
    for (double& v : row) v = 1.0 - v;

  Tensor mask = Tensor::zeros({n, kToyFeatures});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kToyFeatures; ++j) mask.at(i, j) = row[j];
  return mask;
}

// ---- IDX digit images ----

namespace {

std::vector<unsigned char> read_binary_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return bytes;
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t offset, const std::string& path) {
  if (offset + 4 > b.size())
    throw std::runtime_error(path + " truncated: need 4 bytes at byte offset " + std::to_string(offset) +
                             ", file has " + std::to_string(b.size()));
  return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
         (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

}  // namespace

LabeledDataset load_mnist(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_binary_file(images_path);
  const auto lab = read_binary_file(labels_path);

  const std::uint32_t img_magic = be32(img, 0, images_path);
  if (img_magic != 2051)
    throw std::runtime_error(images_path + ": bad magic " + std::to_string(img_magic) + ", expected 2051");
  const std::uint32_t lab_magic = be32(lab, 0, labels_path);
  if (lab_magic != 2049)
    throw std::runtime_error(labels_path + ": bad magic " + std::to_string(lab_magic) + ", expected 2049");

  const std::size_t n = be32(img, 4, images_path);
  const std::size_t h = be32(img, 8, images_path);
  const std::size_t w = be32(img, 12, images_path);
  const std::size_t expected_img = 16 + n * h * w;
  if (img.size() != expected_img)
    throw std::runtime_error(images_path + " truncated: expected " + std::to_string(expected_img) +
                             " bytes, got " + std::to_string(img.size()) + " (data ends at byte offset " +
                             std::to_string(img.size()) + ")");

  const std::size_t n_lab = be32(lab, 4, labels_path);
  if (n_lab != n)
    throw std::runtime_error(images_path + " holds " + std::to_string(n) + " images but " + labels_path +
                             " holds " + std::to_string(n_lab) + " labels");
  const std::size_t expected_lab = 8 + n;
  if (lab.size() != expected_lab)
    throw std::runtime_error(labels_path + " truncated: expected " + std::to_string(expected_lab) +
                             " bytes, got " + std::to_string(lab.size()) + " (data ends at byte offset " +
                             std::to_string(lab.size()) + ")");
  if (n == 0) throw std::runtime_error(images_path + " holds no images");

  const std::size_t d = h * w;
  LabeledDataset ds;
  ds.X = Tensor::zeros({n, d});
  ds.y = Tensor::zeros({n, 10});
  ds.A = Tensor::zeros({n, d});
  ds.meta.kind = Kind::kGrid;
  ds.meta.grid_h = h;
  ds.meta.grid_w = w;
  ds.meta.grid_channels = 1;

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) ds.X.at(i, j) = img[16 + i * d + j] / 255.0;
    const unsigned char label = lab[8 + i];
    if (label > 9)
      throw std::runtime_error(labels_path + ": label " + std::to_string(int(label)) + " at index " +
                               std::to_string(i) + " is out of range");
    ds.y.at(i, label) = 1.0;
  }
  return ds;
}

DecoyResult decoyify(const LabeledDataset& digits, std::uint64_t seed, DecoyPhase phase) {
  digits.validate();
  if (digits.meta.kind != Kind::kGrid || digits.meta.grid_channels != 1)
    throw std::invalid_argument("decoyify needs single-channel grid data");
  const std::size_t h = digits.meta.grid_h, w = digits.meta.grid_w;
  if (h < 8 || w < 8) throw std::invalid_argument("decoyify needs at least 8x8 images");
  if (digits.num_classes() > 10) throw std::invalid_argument("decoyify supports at most 10 classes");

  constexpr std::size_t kSwatch = 4;
  const std::size_t n = digits.size();
  const auto labels = digits.labels();

  DecoyResult out;
  out.data = digits;
  out.annotations = Tensor::zeros({n, h * w});

  // (row, col) origin of each corner block: TL, TR, BL, BR.
  const std::size_t origins[4][2] = {{0, 0}, {0, w - kSwatch}, {h - kSwatch, 0}, {h - kSwatch, w - kSwatch}};

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, i));
    const std::size_t corner = rng.integer(4);
    std::size_t shade_index = labels[i];
    if (phase == DecoyPhase::kTest) shade_index = rng.integer(10);
    const double shade = (255.0 - 25.0 * static_cast<double>(shade_index)) / 255.0;

    const auto [r0, c0] = std::pair(origins[corner][0], origins[corner][1]);
    for (std::size_t r = 0; r < kSwatch; ++r)
      for (std::size_t c = 0; c < kSwatch; ++c) out.data.X.at(i, (r0 + r) * w + (c0 + c)) = shade;

    for (const auto& origin : origins)
      for (std::size_t r = 0; r < kSwatch; ++r)
        for (std::size_t c = 0; c < kSwatch; ++c)
          out.annotations.at(i, (origin[0] + r) * w + (origin[1] + c)) = 1.0;
  }
  return out;
}

// ---- iris columns glued onto breast cancer columns ----

namespace {

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(strip_cr(line));
  return lines;
}

}  // namespace

IrisCancerResult build_iris_cancer(const std::string& iris_csv, const std::string& wdbc_csv) {
  constexpr std::size_t kRowsPerClass = 50;
  constexpr std::size_t kIrisCols = 4;
  constexpr std::size_t kCancerCols = 30;
  constexpr std::size_t kCols = kIrisCols + kCancerCols;

  std::vector<std::vector<double>> versicolor, virginica;
  for (const auto& line : read_lines(iris_csv)) {
    if (line.empty()) continue;
    const auto fields = split_fields(line, ',');
    if (fields.size() != kIrisCols + 1)
      throw std::runtime_error(iris_csv + ": expected 5 fields, got " + std::to_string(fields.size()) +
                               " in line '" + line + "'");
    std::vector<double> vals(kIrisCols);
    for (std::size_t j = 0; j < kIrisCols; ++j) vals[j] = parse_double(fields[j]);
    const std::string& species = fields[kIrisCols];
    if (species == "Iris-versicolor") versicolor.push_back(vals);
    else if (species == "Iris-virginica") virginica.push_back(vals);
    else if (species != "Iris-setosa")
      throw std::runtime_error(iris_csv + ": unknown species '" + species + "'");
  }
  if (versicolor.size() < kRowsPerClass || virginica.size() < kRowsPerClass)
    throw std::runtime_error(iris_csv + ": need 50 rows of each overlapping species, got " +
                             std::to_string(versicolor.size()) + " and " + std::to_string(virginica.size()));

  std::vector<std::vector<double>> malignant, benign;
  for (const auto& line : read_lines(wdbc_csv)) {
    if (line.empty()) continue;
    const auto fields = split_fields(line, ',');
    if (fields.size() != kCancerCols + 2)
      throw std::runtime_error(wdbc_csv + ": expected 32 fields, got " + std::to_string(fields.size()) +
                               " in line '" + line + "'");
    const std::string& diagnosis = fields[1];
    auto* bucket = diagnosis == "M" ? &malignant : diagnosis == "B" ? &benign : nullptr;
    if (bucket == nullptr) throw std::runtime_error(wdbc_csv + ": unknown diagnosis '" + diagnosis + "'");
    if (bucket->size() >= kRowsPerClass) continue;
    std::vector<double> vals(kCancerCols);
    for (std::size_t j = 0; j < kCancerCols; ++j) vals[j] = parse_double(fields[j + 2]);
    bucket->push_back(vals);
  }
  if (malignant.size() < kRowsPerClass || benign.size() < kRowsPerClass)
    throw std::runtime_error(wdbc_csv + ": need 50 rows of each diagnosis, got " +
                             std::to_string(malignant.size()) + " M and " + std::to_string(benign.size()) +
                             " B");

  const std::size_t n = 2 * kRowsPerClass;
  IrisCancerResult out;
  out.data.X = Tensor::zeros({n, kCols});
  out.data.y = Tensor::zeros({n, 2});
  out.data.A = Tensor::zeros({n, kCols});
  out.iris_mask = Tensor::zeros({n, kCols});
  out.data.meta.kind = Kind::kTabular;
  out.data.meta.feature_names = {"iris-sepal-length", "iris-sepal-width", "iris-petal-length",
                                 "iris-petal-width"};
  for (std::size_t j = 1; j <= kCancerCols; ++j) {
    std::string name = "cancer-";
    if (j < 10) name += '0';
    out.data.meta.feature_names.push_back(name + std::to_string(j));
  }

  // Class 0 pairs versicolor with the first malignant rows, class 1 pairs
  // virginica with the first benign rows, both in file order.
  for (std::size_t i = 0; i < kRowsPerClass; ++i) {
    for (std::size_t j = 0; j < kIrisCols; ++j) {
      out.data.X.at(i, j) = versicolor[i][j];
      out.data.X.at(kRowsPerClass + i, j) = virginica[i][j];
    }
    for (std::size_t j = 0; j < kCancerCols; ++j) {
      out.data.X.at(i, kIrisCols + j) = malignant[i][j];
      out.data.X.at(kRowsPerClass + i, kIrisCols + j) = benign[i][j];
    }
    out.data.y.at(i, 0) = 1.0;
    out.data.y.at(kRowsPerClass + i, 1) = 1.0;
  }

  // Scale every column to [0, 1] over the 100 rows. Min-max keeps the two
  // source scales comparable while letting the heavy-tailed cancer columns
  // compress, which is what makes the unconstrained model lean on the Iris
  // columns; z-scoring instead equalizes variances and that reliance (and
  // the with/without-Iris accuracy drop) disappears.
  for (std::size_t j = 0; j < kCols; ++j) {
    double lo = out.data.X.at(0, j), hi = lo;
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, out.data.X.at(i, j));
      hi = std::max(hi, out.data.X.at(i, j));
    }
    const double span = hi - lo < 1e-12 ? 1.0 : hi - lo;
    for (std::size_t i = 0; i < n; ++i)
      out.data.X.at(i, j) = (out.data.X.at(i, j) - lo) / span;
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kIrisCols; ++j) out.iris_mask.at(i, j) = 1.0;
  return out;
}

// ---- bag-of-words text ----

namespace {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char ch : text) {
    const unsigned char u = static_cast<unsigned char>(ch);
    char lower = 0;
    if (u >= 'a' && u <= 'z') lower = char(u);
    else if (u >= 'A' && u <= 'Z') lower = char(u - 'A' + 'a');
    else if (u >= '0' && u <= '9') lower = char(u);
    if (lower != 0) {
      cur += lower;
    } else if (!cur.empty()) {
      if (cur.size() >= 2) tokens.push_back(cur);
      cur.clear();
    }
  }
  if (cur.size() >= 2) tokens.push_back(cur);
  return tokens;
}

std::string strip_header(const std::string& text) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line(text.data() + pos, eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) return text.substr(eol == text.size() ? eol : eol + 1);
    pos = eol == text.size() ? eol : eol + 1;
  }
  return text;  // no blank line: keep everything
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

LabeledDataset load_text_dir(const std::string& corpus_dir, const NewsgroupsOptions& opts) {
  if (opts.vocabulary_size == 0) throw std::invalid_argument("vocabulary_size must be positive");
  if (!fs::is_directory(corpus_dir)) throw std::runtime_error(corpus_dir + " is not a directory");

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(corpus_dir))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() < 2)
    throw std::runtime_error(corpus_dir + " needs at least 2 class subdirectories, found " +
                             std::to_string(class_dirs.size()));

  std::vector<std::size_t> labels;
  std::vector<std::unordered_map<std::string, std::size_t>> doc_counts;
  for (std::size_t cls = 0; cls < class_dirs.size(); ++cls) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[cls]))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw std::runtime_error(class_dirs[cls].string() + " holds no documents");
    for (const auto& file : files) {
      std::string text = read_text_file(file);
      if (opts.strip_headers) text = strip_header(text);
      std::unordered_map<std::string, std::size_t> counts;
      for (const auto& tok : tokenize(text)) ++counts[tok];
      doc_counts.push_back(std::move(counts));
      labels.push_back(cls);
    }
  }

  const std::size_t n = doc_counts.size();
  std::map<std::string, std::size_t> df;  // ordered: lexicographic tie-break for free
  for (const auto& counts : doc_counts)
    for (const auto& [term, tf] : counts) ++df[term];
  if (df.empty()) throw std::runtime_error(corpus_dir + " produced an empty vocabulary");

  // Keep the highest-document-frequency terms; ties break lexicographically
  // (stable_sort over a map iteration preserves lexicographic order).
  std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  ranked.resize(std::min(opts.vocabulary_size, ranked.size()));

  std::vector<std::string> vocab;
  vocab.reserve(ranked.size());
  for (const auto& [term, count] : ranked) vocab.push_back(term);
  std::sort(vocab.begin(), vocab.end());

  std::unordered_map<std::string, std::size_t> column;
  std::vector<double> idf(vocab.size());
  for (std::size_t j = 0; j < vocab.size(); ++j) {
    column[vocab[j]] = j;
    idf[j] = std::log((1.0 + double(n)) / (1.0 + double(df[vocab[j]]))) + 1.0;
  }

  LabeledDataset ds;
  ds.X = Tensor::zeros({n, vocab.size()});
  ds.y = Tensor::zeros({n, class_dirs.size()});
  ds.A = Tensor::zeros({n, vocab.size()});
  ds.meta.kind = Kind::kText;
  ds.meta.feature_names = vocab;

  for (std::size_t i = 0; i < n; ++i) {
    ds.y.at(i, labels[i]) = 1.0;
    for (const auto& [term, tf] : doc_counts[i]) {
      const auto it = column.find(term);
      if (it != column.end()) ds.X.at(i, it->second) = double(tf) * idf[it->second];
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < vocab.size(); ++j) norm += ds.X.at(i, j) * ds.X.at(i, j);
    norm = std::sqrt(norm);
    if (norm > 0.0)
      for (std::size_t j = 0; j < vocab.size(); ++j) ds.X.at(i, j) /= norm;
  }
  return ds;
}

// ---- 2D blobs ----

LabeledDataset gen_2d_toy(Toy2dKind kind, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("gen_2d_toy: n must be positive");
  const double root3_half = std::sqrt(3.0) / 2.0;
  std::vector<std::pair<double, double>> centers;
  if (kind == Toy2dKind::kTwoClass) centers = {{1.0, 0.0}, {-1.0, 0.0}};
  else centers = {{0.0, 1.0}, {-root3_half, -0.5}, {root3_half, -0.5}};
  const std::size_t k = centers.size();
  constexpr double kSigma = 0.3;

  LabeledDataset ds;
  ds.X = Tensor::zeros({n, 2});
  ds.y = Tensor::zeros({n, k});
  ds.A = Tensor::zeros({n, 2});
  ds.meta.kind = Kind::kTabular;
  ds.meta.feature_names = {"x1", "x2"};
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(mix_seed(seed, i));
    const std::size_t label = i % k;
    ds.y.at(i, label) = 1.0;
    ds.X.at(i, 0) = centers[label].first + kSigma * rng.normal();
    ds.X.at(i, 1) = centers[label].second + kSigma * rng.normal();
  }
  return ds;
}

// ---- stratified split ----

TrainTest split(const LabeledDataset& ds, double train_fraction, std::uint64_t seed) {
  ds.validate();
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must lie strictly between 0 and 1");

  const std::size_t n = ds.size();
  const std::size_t k = ds.num_classes();
  const auto labels = ds.labels();
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
  for (std::size_t c = 0; c < k; ++c)
    if (by_class[c].size() < 2)
      throw std::runtime_error("class " + std::to_string(c) + " has " +
                               std::to_string(by_class[c].size()) +
                               " examples; splitting needs at least 2");

  const std::size_t total_train = static_cast<std::size_t>(std::floor(double(n) * train_fraction + 0.5));

  // Largest-remainder apportionment of total_train across classes.
  std::vector<std::size_t> take(k);
  std::vector<std::pair<double, std::size_t>> remainders;  // (-frac, class) for ascending sort
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double target = double(by_class[c].size()) * train_fraction;
    take[c] = static_cast<std::size_t>(std::floor(target));
    assigned += take[c];
    remainders.emplace_back(-(target - std::floor(target)), c);
  }
  std::sort(remainders.begin(), remainders.end());
  std::size_t leftover = total_train > assigned ? total_train - assigned : 0;
  for (const auto& [neg_frac, c] : remainders) {
    if (leftover == 0) break;
    if (take[c] + 1 <= by_class[c].size() - 1) {
      ++take[c];
      --leftover;
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (take[c] == 0 || take[c] >= by_class[c].size())
      throw std::runtime_error("split leaves class " + std::to_string(c) +
                               " without examples on one side (class size " +
                               std::to_string(by_class[c].size()) + ", train share " +
                               std::to_string(take[c]) + ")");
  }

  Rng rng(mix_seed(seed, 0));
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < k; ++c) {
    auto& members = by_class[c];
    rng.shuffle(members);
    for (std::size_t j = 0; j < members.size(); ++j)
      (j < take[c] ? train_idx : test_idx).push_back(members[j]);
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());

  auto subset = [&](const std::vector<std::size_t>& idx, const char* tag) {
    LabeledDataset out;
    const std::size_t d = ds.num_features();
    out.X = Tensor::zeros({idx.size(), d});
    out.y = Tensor::zeros({idx.size(), k});
    out.A = Tensor::zeros({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        out.X.at(i, j) = ds.X.at(idx[i], j);
        out.A.at(i, j) = ds.A.at(idx[i], j);
      }
      for (std::size_t j = 0; j < k; ++j) out.y.at(i, j) = ds.y.at(idx[i], j);
    }
    out.meta = ds.meta;
    out.split_tag = tag;
    return out;
  };
  return TrainTest{subset(train_idx, "train"), subset(test_idx, "test")};
}

// ---- columnar text serialization ----

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

[[noreturn]] void bad_file(const std::string& path, std::size_t lineno, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + what);
}

}  // namespace

void save_dataset(const LabeledDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");

  out << "igrad-dataset 1\n";
  out << "kind " << kind_name(ds.meta.kind) << "\n";
  out << "examples " << ds.size() << "\n";
  out << "features " << ds.num_features() << "\n";
  out << "classes " << ds.num_classes() << "\n";
  if (ds.meta.kind == Kind::kGrid)
    out << "grid " << ds.meta.grid_h << " " << ds.meta.grid_w << " " << ds.meta.grid_channels << "\n";
  if (!ds.split_tag.empty()) out << "split " << ds.split_tag << "\n";
  if (!ds.meta.feature_names.empty()) {
    out << "names";
    for (const auto& name : ds.meta.feature_names) out << " " << name;
    out << "\n";
  }

  const auto labels = ds.labels();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << "row " << labels[i] << " ";
    bool any = false;
    for (std::size_t j = 0; j < ds.num_features(); ++j) {
      if (ds.A.at(i, j) == 1.0) {
        if (any) out << ",";
        out << j;
        any = true;
      }
    }
    if (!any) out << "-";
    for (std::size_t j = 0; j < ds.num_features(); ++j) out << " " << fmt_double(ds.X.at(i, j));
    out << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

LabeledDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);

  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() {
    if (!std::getline(in, line)) bad_file(path, lineno + 1, "unexpected end of file");
    line = strip_cr(line);
    ++lineno;
  };

  next_line();
  if (line != "igrad-dataset 1") bad_file(path, lineno, "bad header '" + line + "'");

  LabeledDataset ds;
  std::size_t n = 0, d = 0, k = 0;
  bool have_n = false, have_d = false, have_k = false;
  for (;;) {
    next_line();
    const auto fields = split_ws(line);
    if (fields.empty()) bad_file(path, lineno, "blank line");
    const std::string& key = fields[0];
    if (key == "row") break;
    if (key == "kind" && fields.size() == 2) {
      ds.meta.kind = kind_from_name(fields[1]);
    } else if (key == "examples" && fields.size() == 2) {
      n = static_cast<std::size_t>(parse_int(fields[1]));
      have_n = true;
    } else if (key == "features" && fields.size() == 2) {
      d = static_cast<std::size_t>(parse_int(fields[1]));
      have_d = true;
    } else if (key == "classes" && fields.size() == 2) {
      k = static_cast<std::size_t>(parse_int(fields[1]));
      have_k = true;
    } else if (key == "grid" && fields.size() == 4) {
      ds.meta.grid_h = static_cast<std::size_t>(parse_int(fields[1]));
      ds.meta.grid_w = static_cast<std::size_t>(parse_int(fields[2]));
      ds.meta.grid_channels = static_cast<std::size_t>(parse_int(fields[3]));
    } else if (key == "split" && fields.size() == 2) {
      ds.split_tag = fields[1];
    } else if (key == "names") {
      ds.meta.feature_names.assign(fields.begin() + 1, fields.end());
    } else {
      bad_file(path, lineno, "unknown field '" + key + "'");
    }
  }
  if (!have_n || !have_d || !have_k) bad_file(path, lineno, "missing examples/features/classes header");
  if (n == 0 || d == 0 || k < 2) bad_file(path, lineno, "degenerate dimensions in header");

  ds.X = Tensor::zeros({n, d});
  ds.y = Tensor::zeros({n, k});
  ds.A = Tensor::zeros({n, d});

  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0) next_line();
    const auto fields = split_ws(line);
    if (fields.size() != 3 + d || fields[0] != "row")
      bad_file(path, lineno, "expected 'row <label> <annotations> <" + std::to_string(d) + " values>'");
    const auto label = static_cast<std::size_t>(parse_int(fields[1]));
    if (label >= k) bad_file(path, lineno, "label " + fields[1] + " out of range");
    ds.y.at(i, label) = 1.0;
    if (fields[2] != "-") {
      for (const auto& part : split_fields(fields[2], ',')) {
        const auto col = static_cast<std::size_t>(parse_int(part));
        if (col >= d) bad_file(path, lineno, "annotation column " + part + " out of range");
        ds.A.at(i, col) = 1.0;
      }
    }
    for (std::size_t j = 0; j < d; ++j) ds.X.at(i, j) = parse_double(fields[3 + j]);
  }
  if (std::getline(in, line) && !strip_cr(line).empty())
    bad_file(path, lineno + 1, "trailing content after last row");

  ds.validate();
  return ds;
}

std::uint64_t dataset_fingerprint(const LabeledDataset& ds) {
  Fnv1a h;
  h.mix(std::string_view(kind_name(ds.meta.kind)));
  h.mix(std::uint64_t(ds.size()));
  h.mix(std::uint64_t(ds.num_features()));
  h.mix(std::uint64_t(ds.num_classes()));
  h.mix(std::uint64_t(ds.meta.grid_h));
  h.mix(std::uint64_t(ds.meta.grid_w));
  h.mix(std::uint64_t(ds.meta.grid_channels));
  for (const auto& name : ds.meta.feature_names) {
    h.mix(name);
    h.mix(std::string_view("\x1f"));
  }
  h.mix(ds.X.data());
  h.mix(ds.y.data());
  h.mix(ds.A.data());
  return h.value();
}

}  // namespace igrad::data
