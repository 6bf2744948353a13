#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfv3d/classify.hpp"
#include "mfv3d/common.hpp"
#include "mfv3d/encoder.hpp"
#include "mfv3d/gmm.hpp"

namespace mfv3d {

namespace detail {

// Temp-file-plus-rename so readers never observe a partial file.
inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string shortest_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GMM JSON
// ---------------------------------------------------------------------------

inline nlohmann::json gmm_to_json(const Gmm& g) {
  nlohmann::json j;
  j["K"] = g.size();
  if (g.grid_m) j["m"] = *g.grid_m;
  j["weights"] = g.weights;
  j["sigmas"] = g.sigmas;
  auto means = nlohmann::json::array();
  for (const Vec3& m : g.means) means.push_back({m.x(), m.y(), m.z()});
  j["means"] = means;
  return j;
}

inline Gmm gmm_from_json(const nlohmann::json& j) {
  Gmm g;
  g.weights = j.at("weights").get<std::vector<double>>();
  g.sigmas = j.at("sigmas").get<std::vector<double>>();
  for (const auto& m : j.at("means")) g.means.emplace_back(m.at(0).get<double>(), m.at(1).get<double>(), m.at(2).get<double>());
  if (j.contains("m")) g.grid_m = j.at("m").get<int>();
  const auto K = j.at("K").get<std::size_t>();
  if (g.weights.size() != K || g.sigmas.size() != K || g.means.size() != K)
    throw ParseError("gmm json: K does not match array lengths");
  return g;
}

inline void save_gmm(const Gmm& g, const std::filesystem::path& path) {
  detail::atomic_write_file(path, gmm_to_json(g).dump(2) + "\n");
}

inline Gmm load_gmm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  nlohmann::json j;
  in >> j;
  return gmm_from_json(j);
}

// ---------------------------------------------------------------------------
// Grid tensor: raw little-endian float array + JSON sidecar
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little, "tensor files are written little-endian");

struct TensorMeta {
  int m = 0;
  std::size_t K = 0;
  std::string variant;
  bool finalized = false;
  std::string dtype;  // "float32" or "float64"
  std::vector<std::string> row_order;
};

/// Writes <base>.bin (raw array, feature-major then x-fastest lattice order)
/// and <base>.json describing it.
inline void save_grid_tensor(const GridTensor& t, const Mfv& source, const std::filesystem::path& base,
                             bool as_float32 = true) {
  std::string blob;
  if (as_float32) {
    blob.resize(t.data.size() * sizeof(float));
    float* out = reinterpret_cast<float*>(blob.data());
    for (std::size_t i = 0; i < t.data.size(); ++i) out[i] = static_cast<float>(t.data[i]);
  } else {
    blob.resize(t.data.size() * sizeof(double));
    std::memcpy(blob.data(), t.data.data(), blob.size());
  }
  auto bin = base;
  bin += ".bin";
  detail::atomic_write_file(bin, blob);

  nlohmann::json j;
  j["m"] = t.m;
  j["K"] = static_cast<std::size_t>(t.m) * t.m * t.m;
  j["variant"] = to_string(source.variant);
  j["finalized"] = source.finalized;
  j["dtype"] = as_float32 ? "float32" : "float64";
  j["row_order"] = mfv_row_names(source.variant);
  j["layout"] = "feature-major, lattice index k = i + m*j + m*m*l (x fastest)";
  auto meta = base;
  meta += ".json";
  detail::atomic_write_file(meta, j.dump(2) + "\n");
}

inline std::pair<GridTensor, TensorMeta> load_grid_tensor(const std::filesystem::path& base) {
  auto meta_path = base;
  meta_path += ".json";
  std::ifstream mf(meta_path);
  if (!mf) throw ParseError("cannot open '" + meta_path.string() + "'");
  nlohmann::json j;
  mf >> j;
  TensorMeta meta;
  meta.m = j.at("m").get<int>();
  meta.K = j.at("K").get<std::size_t>();
  meta.variant = j.at("variant").get<std::string>();
  meta.finalized = j.at("finalized").get<bool>();
  meta.dtype = j.at("dtype").get<std::string>();
  meta.row_order = j.at("row_order").get<std::vector<std::string>>();

  auto bin_path = base;
  bin_path += ".bin";
  std::ifstream bf(bin_path, std::ios::binary);
  if (!bf) throw ParseError("cannot open '" + bin_path.string() + "'");
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  GridTensor t;
  t.m = meta.m;
  t.rows = static_cast<int>(meta.row_order.size());
  const std::size_t n = meta.K * meta.row_order.size();
  t.data.resize(n);
  if (meta.dtype == "float32") {
    if (blob.size() != n * sizeof(float)) throw ParseError("tensor blob size mismatch");
    const float* in = reinterpret_cast<const float*>(blob.data());
    for (std::size_t i = 0; i < n; ++i) t.data[i] = in[i];
  } else if (meta.dtype == "float64") {
    if (blob.size() != n * sizeof(double)) throw ParseError("tensor blob size mismatch");
    std::memcpy(t.data.data(), blob.data(), blob.size());
  } else {
    throw ParseError("tensor dtype '" + meta.dtype + "' not recognized");
  }
  return {std::move(t), std::move(meta)};
}

// ---------------------------------------------------------------------------
// Classifier model: JSON metadata + raw little-endian float64 weight blob
// ---------------------------------------------------------------------------

inline void save_model(const MlpModel& m, const std::filesystem::path& base) {
  std::string blob;
  auto append = [&blob](const double* d, std::size_t n) {
    const std::size_t off = blob.size();
    blob.resize(off + n * sizeof(double));
    std::memcpy(blob.data() + off, d, n * sizeof(double));
  };
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    append(m.weights[l].data(), static_cast<std::size_t>(m.weights[l].size()));
    append(m.biases[l].data(), static_cast<std::size_t>(m.biases[l].size()));
  }
  auto bin = base;
  bin += ".weights.bin";
  detail::atomic_write_file(bin, blob);

  nlohmann::json j;
  j["layer_sizes"] = m.layer_sizes;
  j["class_names"] = m.class_names;
  j["dtype"] = "float64";
  j["storage"] = "per layer: weight matrix (column-major), then bias";
  j["epoch_loss"] = m.epoch_loss;
  j["config"] = {{"hidden", m.config.hidden},       {"learning_rate", m.config.learning_rate},
                 {"momentum", m.config.momentum},   {"epochs", m.config.epochs},
                 {"batch_size", m.config.batch_size}, {"seed", m.config.seed}};
  auto meta = base;
  meta += ".json";
  detail::atomic_write_file(meta, j.dump(2) + "\n");
}

inline MlpModel load_model(const std::filesystem::path& base) {
  auto meta_path = base;
  meta_path += ".json";
  std::ifstream mf(meta_path);
  if (!mf) throw ParseError("cannot open '" + meta_path.string() + "'");
  nlohmann::json j;
  mf >> j;
  MlpModel m;
  m.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  if (j.contains("epoch_loss")) m.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  const auto& c = j.at("config");
  m.config.hidden = c.at("hidden").get<std::vector<int>>();
  m.config.learning_rate = c.at("learning_rate").get<double>();
  m.config.momentum = c.at("momentum").get<double>();
  m.config.epochs = c.at("epochs").get<int>();
  m.config.batch_size = c.at("batch_size").get<int>();
  m.config.seed = c.at("seed").get<std::uint64_t>();

  auto bin_path = base;
  bin_path += ".weights.bin";
  std::ifstream bf(bin_path, std::ios::binary);
  if (!bf) throw ParseError("cannot open '" + bin_path.string() + "'");
  std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  std::size_t off = 0;
  auto take = [&](double* d, std::size_t n) {
    if (off + n * sizeof(double) > blob.size()) throw ParseError("model blob too short");
    std::memcpy(d, blob.data() + off, n * sizeof(double));
    off += n * sizeof(double);
  };
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    Eigen::MatrixXd w(m.layer_sizes[l + 1], m.layer_sizes[l]);
    Eigen::VectorXd b(m.layer_sizes[l + 1]);
    take(w.data(), static_cast<std::size_t>(w.size()));
    take(b.data(), static_cast<std::size_t>(b.size()));
    m.weights.push_back(std::move(w));
    m.biases.push_back(std::move(b));
  }
  if (off != blob.size()) throw ParseError("model blob has trailing bytes");
  return m;
}

// ---------------------------------------------------------------------------
// Experiment reports: self-describing CSV
// ---------------------------------------------------------------------------

inline constexpr int kReportFormatVersion = 1;

struct ReportRow {
  std::string experiment;
  std::uint64_t seed = 0;
  int m = 0;
  double sigma = 0.0;
  std::string variant;
  std::size_t t_points = 0;
  std::string corruption = "kind=none";  // provenance of the applied corruption
  bool train_noise = false;
  std::string metric;
  double value = 0.0;
};

struct ExperimentReport {
  int format_version = kReportFormatVersion;
  std::vector<ReportRow> rows;
};

namespace detail {

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace detail

inline std::string report_to_csv(const ExperimentReport& r) {
  std::string out = "# mfv3d-report v" + std::to_string(r.format_version) + "\n";
  out += "experiment,seed,m,sigma,variant,t_points,corruption,train_noise,metric,value\n";
  for (const ReportRow& row : r.rows) {
    out += detail::csv_quote(row.experiment) + ",";
    out += std::to_string(row.seed) + ",";
    out += std::to_string(row.m) + ",";
    out += detail::shortest_double(row.sigma) + ",";
    out += detail::csv_quote(row.variant) + ",";
    out += std::to_string(row.t_points) + ",";
    out += detail::csv_quote(row.corruption) + ",";
    out += (row.train_noise ? "1," : "0,");
    out += detail::csv_quote(row.metric) + ",";
    out += detail::shortest_double(row.value) + "\n";
  }
  return out;
}

inline ExperimentReport report_from_csv(const std::string& text) {
  ExperimentReport r;
  std::istringstream in(text);
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (auto v = line.rfind(" v"); v != std::string::npos) r.format_version = std::atoi(line.c_str() + v + 2);
      continue;
    }
    if (!header_seen) {
      header_seen = true;  // column names are fixed by the format version
      continue;
    }
    auto f = detail::csv_split(line);
    if (f.size() != 10) throw ParseError("report csv: expected 10 fields, got " + std::to_string(f.size()));
    ReportRow row;
    row.experiment = f[0];
    row.seed = std::strtoull(f[1].c_str(), nullptr, 10);
    row.m = std::atoi(f[2].c_str());
    if (!detail::parse_double(f[3], row.sigma)) throw ParseError("report csv: bad sigma '" + f[3] + "'");
    row.variant = f[4];
    row.t_points = std::strtoull(f[5].c_str(), nullptr, 10);
    row.corruption = f[6];
    row.train_noise = f[7] == "1";
    row.metric = f[8];
    if (!detail::parse_double(f[9], row.value)) throw ParseError("report csv: bad value '" + f[9] + "'");
    r.rows.push_back(std::move(row));
  }
  return r;
}

inline void save_report(const ExperimentReport& r, const std::filesystem::path& path) {
  detail::atomic_write_file(path, report_to_csv(r));
}

inline ExperimentReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return report_from_csv(ss.str());
}

}  // namespace mfv3d
