#pragma once

// Internal helpers shared by the harness translation units.

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "igrad/datasets.hpp"
#include "igrad/tensor.hpp"
#include "igrad/textio.hpp"

namespace igrad::harness::util {

void require_exists(const std::string& path, const std::string& what);

data::LabeledDataset take_rows(const data::LabeledDataset& ds, std::size_t count);

// Comma-separated lists; throws std::invalid_argument on empty items.
std::vector<double> parse_double_list(const std::string& text);
std::vector<std::size_t> parse_size_list(const std::string& text);
std::vector<std::string> parse_name_list(const std::string& text);

// CSV with a fixed column count; numbers go through shortest-round-trip
// formatting, never the locale.
class CsvFile {
 public:
  CsvFile(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::size_t columns_;
};

inline std::string cell(double v) { return fmt_double(v); }
inline std::string cell(std::size_t v) { return std::to_string(v); }

}  // namespace igrad::harness::util
