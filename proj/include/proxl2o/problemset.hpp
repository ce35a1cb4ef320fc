#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "proxl2o/problems.hpp"

namespace proxl2o {

/// Ordered instances sharing kind, regularizer and dimensions.
struct ProblemSet {
  SmoothKind kind = SmoothKind::lasso_quadratic;
  RegularizerKind regularizer = RegularizerKind::l1;
  std::size_t m = 0;
  std::size_t n = 0;
  double lambda = 0.0;
  std::size_t sparsity = 0;  // 0 when not generated
  std::uint64_t seed = 0;
  std::string source = "generated";
  std::vector<CompositeProblem> instances;

  std::size_t size() const { return instances.size(); }
};

namespace io {

inline constexpr int kProblemSetVersion = 1;

inline void write_f64_le(std::ostream& out, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      char buf[8];
      for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
      out.write(buf, 8);
    }
  }
}

/// Reads exactly values.size() doubles; false on short read.
inline bool read_f64_le(std::istream& in, std::span<double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    return static_cast<std::size_t>(in.gcount()) == values.size() * sizeof(double);
  } else {
    for (double& v : values) {
      unsigned char buf[8];
      in.read(reinterpret_cast<char*>(buf), 8);
      if (in.gcount() != 8) return false;
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
      v = std::bit_cast<double>(bits);
    }
    return true;
  }
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string(), "cannot open");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string(), std::string("malformed JSON: ") + e.what());
  }
}

template <class T>
T require_field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw FormatError(where, std::string("field '") + key + "' has the wrong type");
  }
}

}  // namespace io

/// Writes `manifest.json` and `data.bin` under `dir` (created if needed).
inline void save_problemset(const ProblemSet& set, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "proxl2o-problemset";
  manifest["version"] = io::kProblemSetVersion;
  manifest["kind"] = std::string(to_string(set.kind));
  manifest["regularizer"] = std::string(to_string(set.regularizer));
  manifest["count"] = set.instances.size();
  manifest["m"] = set.m;
  manifest["n"] = set.n;
  manifest["lambda"] = set.lambda;
  manifest["sparsity"] = set.sparsity;
  manifest["seed"] = set.seed;
  manifest["source"] = set.source;
  manifest["dtype"] = "float64-le";
  manifest["layout"] = set.kind == SmoothKind::lasso_quadratic
                           ? nlohmann::ordered_json::array({"A:row-major:m*n", "b:m"})
                           : nlohmann::ordered_json::array({"features:row-major:m*n", "labels:m"});
  {
    std::ofstream out(dir / "manifest.json");
    if (!out) throw FormatError((dir / "manifest.json").string(), "cannot write");
    out << manifest.dump(2) << "\n";
  }
  std::ofstream data(dir / "data.bin", std::ios::binary);
  if (!data) throw FormatError((dir / "data.bin").string(), "cannot write");
  for (std::size_t i = 0; i < set.instances.size(); ++i) {
    const auto& p = set.instances[i];
    if (p.rows() != set.m || p.dim() != set.n || p.kind() != set.kind) {
      throw DimensionError("save_problemset", "instance " + std::to_string(i) + " does not match the set's shape");
    }
    io::write_f64_le(data, p.matrix().span());
    io::write_f64_le(data, p.rhs().span());
  }
  if (!data) throw FormatError((dir / "data.bin").string(), "write failed");
}

inline ProblemSet load_problemset(const std::filesystem::path& dir) {
  const std::string where = (dir / "manifest.json").string();
  const auto manifest = io::read_json_file(dir / "manifest.json");
  if (io::require_field<std::string>(manifest, "format", where) != "proxl2o-problemset") {
    throw FormatError(where, "not a problem-set manifest");
  }
  if (io::require_field<int>(manifest, "version", where) != io::kProblemSetVersion) {
    throw FormatError(where, "unsupported version");
  }
  if (manifest.contains("dtype") && manifest["dtype"] != "float64-le") throw FormatError(where, "unsupported dtype");
  ProblemSet set;
  set.kind = smooth_kind_from_string(io::require_field<std::string>(manifest, "kind", where));
  set.regularizer = regularizer_from_string(io::require_field<std::string>(manifest, "regularizer", where));
  const auto count = io::require_field<std::size_t>(manifest, "count", where);
  set.m = io::require_field<std::size_t>(manifest, "m", where);
  set.n = io::require_field<std::size_t>(manifest, "n", where);
  set.lambda = io::require_field<double>(manifest, "lambda", where);
  set.sparsity = io::require_field<std::size_t>(manifest, "sparsity", where);
  set.seed = io::require_field<std::uint64_t>(manifest, "seed", where);
  if (manifest.contains("source")) set.source = manifest["source"].get<std::string>();
  if (set.m == 0 || set.n == 0) throw FormatError(where, "m and n must be positive");

  const std::string data_path = (dir / "data.bin").string();
  std::ifstream data(dir / "data.bin", std::ios::binary);
  if (!data) throw FormatError(data_path, "cannot open");
  data.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::uintmax_t>(data.tellg());
  data.seekg(0);
  const std::uintmax_t expected = count * (set.m * set.n + set.m) * sizeof(double);
  if (bytes != expected) {
    throw DimensionError(data_path, "holds " + std::to_string(bytes) + " bytes, manifest implies " + std::to_string(expected));
  }
  set.instances.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> a(set.m * set.n), b(set.m);
    if (!io::read_f64_le(data, a) || !io::read_f64_le(data, b)) {
      throw FormatError(data_path, "truncated at instance " + std::to_string(i));
    }
    try {
      set.instances.emplace_back(set.kind, DenseMatrix(set.m, set.n, std::move(a)), DenseVector(std::move(b)),
                                 Regularizer{set.regularizer, set.lambda});
    } catch (const FormatError& e) {
      throw FormatError(data_path, "instance " + std::to_string(i) + ": " + e.what());
    }
  }
  return set;
}

/// Comma-separated rows of features followed by a final 0/1 label column; an
/// optional non-numeric header row is skipped. With `standardize`, each
/// feature column is z-scored (constant columns are only centered).
inline ProblemSet load_logistic_csv(const std::filesystem::path& path, double lambda, bool standardize) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string(), "cannot open");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0, width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> fields;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        double v = std::stod(cell, &used);
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument("trailing");
        fields.push_back(v);
      } catch (const std::exception&) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw FormatError(path.string() + ":" + std::to_string(line_no), "non-numeric field");
    }
    if (fields.size() < 2) throw FormatError(path.string() + ":" + std::to_string(line_no), "need at least one feature and a label");
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw DimensionError(path.string() + ":" + std::to_string(line_no),
                           "expected " + std::to_string(width) + " fields, found " + std::to_string(fields.size()));
    }
    const double label = fields.back();
    if (label != 0.0 && label != 1.0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no), "label must be 0 or 1, found " + std::to_string(label));
    }
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw FormatError(path.string(), "no data rows");
  const std::size_t m = rows.size(), n = width - 1;
  DenseMatrix X(m, n);
  DenseVector y(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) X(i, j) = rows[i][j];
    y[i] = rows[i][n];
  }
  if (standardize) {
    for (std::size_t j = 0; j < n; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += X(i, j);
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) var += (X(i, j) - mean) * (X(i, j) - mean);
      const double sd = std::sqrt(var / static_cast<double>(m));
      for (std::size_t i = 0; i < m; ++i) X(i, j) = sd > 0.0 ? (X(i, j) - mean) / sd : X(i, j) - mean;
    }
  }
  ProblemSet set;
  set.kind = SmoothKind::logistic;
  set.regularizer = RegularizerKind::l1;
  set.m = m;
  set.n = n;
  set.lambda = lambda;
  set.source = "csv:" + path.filename().string();
  set.instances.emplace_back(SmoothKind::logistic, std::move(X), std::move(y), Regularizer{RegularizerKind::l1, lambda});
  return set;
}

/// `count` instances, instance i drawn from rng.derive(i).
inline ProblemSet generate_problemset(SmoothKind kind, std::size_t m, std::size_t n, std::size_t s, double lambda,
                                      std::size_t count, std::uint64_t seed, std::string_view stream = "data") {
  ProblemSet set;
  set.kind = kind;
  set.regularizer = RegularizerKind::l1;
  set.m = m;
  set.n = n;
  set.lambda = lambda;
  set.sparsity = s;
  set.seed = seed;
  set.instances.reserve(count);
  const RngStream base(seed, stream);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng = base.derive(i);
    if (kind == SmoothKind::lasso_quadratic) set.instances.push_back(CompositeProblem::lasso(generate_lasso(rng, m, n, s, lambda)));
    else set.instances.push_back(CompositeProblem::logistic_l1(generate_logistic(rng, m, n, s, lambda)));
  }
  return set;
}

}  // namespace proxl2o
