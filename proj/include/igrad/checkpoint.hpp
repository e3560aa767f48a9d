#pragma once

// Versioned text checkpoints bundling trained parameters with the training
// configuration, the fingerprint of the dataset they came from, and summary
// metrics. Floating-point fields are stored as hex floats, so a load after a
// save reproduces every field bit for bit.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "igrad/model.hpp"
#include "igrad/training.hpp"

namespace igrad {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int format_version = kCheckpointVersion;
  Params params;
  RrrConfig config;
  std::uint64_t dataset_fingerprint = 0;
  // Name/value pairs, kept sorted by name; names contain no whitespace.
  std::vector<std::pair<std::string, double>> metrics;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Inserts or replaces a metric, keeping the list sorted by name.
void set_metric(Checkpoint& c, const std::string& name, double value);

// Throws std::invalid_argument on malformed metric names or empty params,
// std::runtime_error when the file cannot be written.
void save_checkpoint(const Checkpoint& c, const std::string& path);

// Throws std::runtime_error on missing files, unsupported versions, or any
// structural mismatch.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace igrad
