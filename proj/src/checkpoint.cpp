#include "igrad/checkpoint.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "igrad/fingerprint.hpp"
#include "igrad/textio.hpp"

namespace igrad {

namespace {

bool valid_metric_name(const std::string& name) {
  if (name.empty()) return false;
  for (char c : name)
    if (std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

[[noreturn]] void bad(const std::string& path, std::size_t line, const std::string& what) {
  throw std::runtime_error("checkpoint " + path + ":" + std::to_string(line) + ": " + what);
}

struct LineReader {
  std::istream& in;
  const std::string& path;
  std::size_t line_no = 0;

  std::string next() {
    std::string line;
    if (!std::getline(in, line)) bad(path, line_no + 1, "unexpected end of file");
    ++line_no;
    return line;
  }
};

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string t;
  while (ss >> t) out.push_back(t);
  return out;
}

void write_config(std::ostream& out, const RrrConfig& c) {
  out << "config lambda1 " << fmt_double_hex(c.lambda1) << '\n';
  out << "config lambda2 " << fmt_double_hex(c.lambda2) << '\n';
  out << "config batch-size " << c.batch_size << '\n';
  out << "config epochs " << c.epochs << '\n';
  out << "config step-size " << fmt_double_hex(c.adam.step_size) << '\n';
  out << "config beta1 " << fmt_double_hex(c.adam.beta1) << '\n';
  out << "config beta2 " << fmt_double_hex(c.adam.beta2) << '\n';
  out << "config adam-epsilon " << fmt_double_hex(c.adam.epsilon) << '\n';
  out << "config seed " << c.seed << '\n';
  out << "config pin-annotated " << (c.pin_annotated ? 1 : 0) << '\n';
  out << "config stall-tolerance " << fmt_double_hex(c.stall_tolerance) << '\n';
  out << "config stall-window " << c.stall_window << '\n';
}

void apply_config(RrrConfig& c, const std::string& key, const std::string& value,
                  const std::string& path, std::size_t line) {
  if (key == "lambda1") c.lambda1 = parse_double_hex(value);
  else if (key == "lambda2") c.lambda2 = parse_double_hex(value);
  else if (key == "batch-size") c.batch_size = parse_uint64(value);
  else if (key == "epochs") c.epochs = parse_uint64(value);
  else if (key == "step-size") c.adam.step_size = parse_double_hex(value);
  else if (key == "beta1") c.adam.beta1 = parse_double_hex(value);
  else if (key == "beta2") c.adam.beta2 = parse_double_hex(value);
  else if (key == "adam-epsilon") c.adam.epsilon = parse_double_hex(value);
  else if (key == "seed") c.seed = parse_uint64(value);
  else if (key == "pin-annotated") c.pin_annotated = parse_uint64(value) != 0;
  else if (key == "stall-tolerance") c.stall_tolerance = parse_double_hex(value);
  else if (key == "stall-window") c.stall_window = parse_uint64(value);
  else bad(path, line, "unknown config key '" + key + "'");
}

}  // namespace

void set_metric(Checkpoint& c, const std::string& name, double value) {
  if (!valid_metric_name(name))
    throw std::invalid_argument("metric name must be nonempty without whitespace: '" + name + "'");
  auto it = std::lower_bound(c.metrics.begin(), c.metrics.end(), name,
                             [](const auto& m, const std::string& n) { return m.first < n; });
  if (it != c.metrics.end() && it->first == name) it->second = value;
  else c.metrics.insert(it, {name, value});
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  if (c.params.layers.empty()) throw std::invalid_argument("checkpoint has no parameters");
  for (const auto& [name, value] : c.metrics) {
    (void)value;
    if (!valid_metric_name(name))
      throw std::invalid_argument("metric name must be nonempty without whitespace: '" + name + "'");
  }

  std::ostringstream out;
  out << "igrad-checkpoint " << c.format_version << '\n';
  write_config(out, c.config);
  out << "dataset " << fingerprint_hex(c.dataset_fingerprint) << '\n';
  out << "metrics " << c.metrics.size() << '\n';
  for (const auto& [name, value] : c.metrics)
    out << "metric " << name << ' ' << fmt_double_hex(value) << '\n';
  out << "layers " << c.params.layers.size() << '\n';
  for (std::size_t l = 0; l < c.params.layers.size(); ++l) {
    const auto& layer = c.params.layers[l];
    const std::size_t rows = layer.weights.shape()[0];
    const std::size_t cols = layer.weights.shape()[1];
    out << "layer " << l << ' ' << rows << ' ' << cols << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
      out << 'w';
      for (std::size_t j = 0; j < cols; ++j) out << ' ' << fmt_double_hex(layer.weights.at(r, j));
      out << '\n';
    }
    out << 'b';
    for (std::size_t j = 0; j < cols; ++j) out << ' ' << fmt_double_hex(layer.bias[j]);
    out << '\n';
  }
  out << "end\n";

  std::ofstream file(path);
  if (!file) throw std::runtime_error("cannot write checkpoint file: " + path);
  file << out.str();
  if (!file.flush()) throw std::runtime_error("cannot write checkpoint file: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw std::runtime_error("cannot open checkpoint file: " + path);
  LineReader reader{file, path};

  Checkpoint c;
  {
    const auto t = tokens(reader.next());
    if (t.size() != 2 || t[0] != "igrad-checkpoint")
      bad(path, reader.line_no, "not an igrad checkpoint");
    c.format_version = static_cast<int>(parse_int(t[1]));
    if (c.format_version != kCheckpointVersion)
      bad(path, reader.line_no,
          "unsupported format version " + t[1] + " (expected " +
              std::to_string(kCheckpointVersion) + ")");
  }

  std::string line = reader.next();
  while (true) {
    const auto t = tokens(line);
    if (t.empty()) bad(path, reader.line_no, "blank line inside header");
    if (t[0] != "config") break;
    if (t.size() != 3) bad(path, reader.line_no, "config lines need a key and a value");
    apply_config(c.config, t[1], t[2], path, reader.line_no);
    line = reader.next();
  }

  {
    const auto t = tokens(line);
    if (t.size() != 2 || t[0] != "dataset") bad(path, reader.line_no, "expected dataset line");
    c.dataset_fingerprint = parse_hex64(t[1]);
  }
  {
    const auto t = tokens(reader.next());
    if (t.size() != 2 || t[0] != "metrics") bad(path, reader.line_no, "expected metrics count");
    const std::size_t count = parse_uint64(t[1]);
    for (std::size_t i = 0; i < count; ++i) {
      const auto m = tokens(reader.next());
      if (m.size() != 3 || m[0] != "metric") bad(path, reader.line_no, "expected metric line");
      c.metrics.emplace_back(m[1], parse_double_hex(m[2]));
    }
  }

  std::size_t layer_count = 0;
  {
    const auto t = tokens(reader.next());
    if (t.size() != 2 || t[0] != "layers") bad(path, reader.line_no, "expected layers count");
    layer_count = parse_uint64(t[1]);
    if (layer_count == 0) bad(path, reader.line_no, "checkpoint has no layers");
  }
  for (std::size_t l = 0; l < layer_count; ++l) {
    const auto t = tokens(reader.next());
    if (t.size() != 4 || t[0] != "layer" || parse_uint64(t[1]) != l)
      bad(path, reader.line_no, "expected layer " + std::to_string(l));
    const std::size_t rows = parse_uint64(t[2]);
    const std::size_t cols = parse_uint64(t[3]);
    if (rows == 0 || cols == 0) bad(path, reader.line_no, "layer dimensions must be positive");
    LayerParams layer{Tensor::zeros({rows, cols}), Tensor::zeros({cols})};
    for (std::size_t r = 0; r < rows; ++r) {
      const auto w = tokens(reader.next());
      if (w.size() != cols + 1 || w[0] != "w")
        bad(path, reader.line_no, "expected weight row with " + std::to_string(cols) + " values");
      for (std::size_t j = 0; j < cols; ++j) layer.weights.at(r, j) = parse_double_hex(w[j + 1]);
    }
    const auto b = tokens(reader.next());
    if (b.size() != cols + 1 || b[0] != "b")
      bad(path, reader.line_no, "expected bias row with " + std::to_string(cols) + " values");
    for (std::size_t j = 0; j < cols; ++j) layer.bias[j] = parse_double_hex(b[j + 1]);
    c.params.layers.push_back(std::move(layer));
  }
  {
    const auto t = tokens(reader.next());
    if (t.size() != 1 || t[0] != "end") bad(path, reader.line_no, "expected end marker");
  }
  return c;
}

}  // namespace igrad
