#pragma once

// Dataset construction: synthetic generators, file loaders, stratified
// splitting, and a portable columnar text serialization. Every dataset is a
// feature matrix X, one-hot labels y, and a binary annotation matrix A of the
// same shape as X marking features the classifier should not rely on.

#include <cstdint>
#include <string>
#include <vector>

#include "igrad/tensor.hpp"

namespace igrad::data {

enum class Kind { kGrid, kText, kTabular };

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& name);

struct DatasetMeta {
  Kind kind = Kind::kTabular;
  std::size_t grid_h = 0, grid_w = 0, grid_channels = 0;  // grid kind only
  std::vector<std::string> feature_names;                 // vocabulary for text

  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct LabeledDataset {
  Tensor X;  // [n, d]
  Tensor y;  // [n, k] one-hot
  Tensor A;  // [n, d] binary annotations; all-zero when nothing is annotated
  DatasetMeta meta;
  std::string split_tag;  // free-form provenance tag, e.g. "train"

  std::size_t size() const { return X.rank() == 2 ? X.shape()[0] : 0; }
  std::size_t num_features() const { return X.rank() == 2 ? X.shape()[1] : 0; }
  std::size_t num_classes() const { return y.rank() == 2 ? y.shape()[1] : 0; }
  std::vector<std::size_t> labels() const;

  // Throws unless X/y/A row counts agree, y is one-hot, and A is binary.
  void validate() const;

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct TrainTest {
  LabeledDataset train;
  LabeledDataset test;
};

// ---- 5x5 four-color images with two redundant rules ----
//
// Pixels take one of four colors (red, green, blue, yellow as RGB triples in
// [0,1]). Class 0 images have all four corner pixels equal AND the three top
// middle pixels pairwise distinct; class 1 images satisfy neither property.
// Column layout is (row*5 + col)*3 + channel.
LabeledDataset gen_toy_color(std::size_t n, std::uint64_t seed);

enum class ToyColorMask {
  kCorners,    // the 4 corner pixels (12 columns)
  kTopMiddle,  // the 3 top middle pixels (9 columns)
  kProRule1,   // complement of corners (63 columns)
  kProRule2,   // complement of top middle (66 columns)
};
// Annotation matrix with the given column set marked on every one of n rows.
Tensor toy_color_mask(ToyColorMask which, std::size_t n);

// ---- IDX-format digit images ----
LabeledDataset load_mnist(const std::string& images_path, const std::string& labels_path);

// Stamps a 4x4 gray swatch into one random corner of each image. In the
// train phase the shade is (255 - 25*label)/255, perfectly correlated with
// the label; in the test phase it is one of those ten shades chosen at
// random. Swatch placement depends only on (example index, seed), so the two
// phases differ in shade only. The returned annotations mark all four 4x4
// corner blocks of every example.
enum class DecoyPhase { kTrain, kTest };
struct DecoyResult {
  LabeledDataset data;
  Tensor annotations;
};
DecoyResult decoyify(const LabeledDataset& digits, std::uint64_t seed, DecoyPhase phase);

// ---- Iris columns glued onto Breast Cancer Wisconsin columns ----
//
// Takes the two overlapping Iris species (0-indexed classes 1 and 2) and the
// first 50 rows of each WDBC diagnosis (class 0 = 'M', class 1 = 'B'), pairs
// them in file order, and rescales every column to [0, 1] over the 100 rows.
// The mask marks the four Iris columns.
struct IrisCancerResult {
  LabeledDataset data;
  Tensor iris_mask;  // [100, 34]
};
IrisCancerResult build_iris_cancer(const std::string& iris_csv, const std::string& wdbc_csv);

// ---- bag-of-words text from a directory of class subdirectories ----
struct NewsgroupsOptions {
  std::size_t vocabulary_size = 5000;
  bool strip_headers = true;  // drop everything through the first blank line
};
// Vocabulary keeps the highest-document-frequency terms (ties break
// lexicographically) and columns are sorted lexicographically. Rows are
// tf * (log((1+N)/(1+df)) + 1), then L2-normalized.
LabeledDataset load_text_dir(const std::string& corpus_dir, const NewsgroupsOptions& opts = {});

// ---- 2D Gaussian blobs for boundary visualizations ----
enum class Toy2dKind { kTwoClass, kThreeClass };
LabeledDataset gen_2d_toy(Toy2dKind kind, std::size_t n, std::uint64_t seed);

// Stratified split: per-class counts stay within one of proportional, every
// class keeps at least one example on each side (else throws).
TrainTest split(const LabeledDataset& ds, double train_fraction, std::uint64_t seed);

// Columnar text round trip; format documented in the README.
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

std::uint64_t dataset_fingerprint(const LabeledDataset& ds);

}  // namespace igrad::data
