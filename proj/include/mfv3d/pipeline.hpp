#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mfv3d/classify.hpp"
#include "mfv3d/common.hpp"
#include "mfv3d/corrupt.hpp"
#include "mfv3d/encoder.hpp"
#include "mfv3d/gmm.hpp"
#include "mfv3d/mesh.hpp"
#include "mfv3d/pointcloud.hpp"
#include "mfv3d/serialize.hpp"

namespace mfv3d {

/// Runs fn(i) for i in [0,n) across `workers` threads with a strided split.
/// Each index writes only its own slot, so results never depend on the worker
/// count.
inline void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

/// Encodes a batch of clouds; identical output for any worker count.
inline std::vector<Mfv> encode_batch(const std::vector<PointCloud>& clouds, const Gmm& g, MfvVariant variant,
                                     bool finalize, unsigned workers = 1) {
  std::vector<Mfv> out(clouds.size());
  parallel_for(clouds.size(), workers, [&](std::size_t i) {
    Mfv m = encode_3dmfv(g, clouds[i], variant);
    out[i] = finalize ? finalize_normalization(m) : std::move(m);
  });
  return out;
}

/// Finalized flattened features for a labeled dataset.
inline Eigen::MatrixXd dataset_features(const LabeledDataset& ds, const Gmm& g, MfvVariant variant,
                                        unsigned workers = 1) {
  const Eigen::Index dim = mfv_row_count(variant) * static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd features(ds.items.size(), dim);
  parallel_for(ds.items.size(), workers, [&](std::size_t i) {
    features.row(static_cast<Eigen::Index>(i)) = feature_vector(g, ds.items[i].cloud, variant).transpose();
  });
  return features;
}

inline std::vector<int> dataset_labels(const LabeledDataset& ds) {
  std::vector<int> labels(ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) labels[i] = ds.items[i].label;
  return labels;
}

// ---------------------------------------------------------------------------
// Dataset directory layout: clouds/NNNNN_<class>.xyz + manifest.csv + meta
// ---------------------------------------------------------------------------

inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "clouds");
  std::string manifest = "file,label,class,split\n";
  char name[64];
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    std::snprintf(name, sizeof(name), "%05zu_%s.xyz", i, ds.class_names[ds.items[i].label].c_str());
    save_xyz(ds.items[i].cloud, dir / "clouds" / name);
    manifest += std::string("clouds/") + name + "," + std::to_string(ds.items[i].label) + "," +
                ds.class_names[ds.items[i].label] + "," + ds.split + "\n";
  }
  detail::atomic_write_file(dir / "manifest.csv", manifest);
  nlohmann::json j;
  j["class_names"] = ds.class_names;
  j["split"] = ds.split;
  j["count"] = ds.items.size();
  detail::atomic_write_file(dir / "dataset.json", j.dump(2) + "\n");
}

/// Ingests a ModelNet-style OFF tree (<dir>/<class>/<split>/*.off): each mesh
/// is surface-sampled to t_points and unit-sphere normalized, so the rest of
/// the pipeline runs unchanged. Classes are the sorted directory names.
inline LabeledDataset load_off_dataset(const std::filesystem::path& dir, const std::string& split,
                                       std::size_t t_points, std::uint64_t seed) {
  namespace fs = std::filesystem;
  LabeledDataset ds;
  ds.split = split;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory() && fs::exists(entry.path() / split)) ds.class_names.push_back(entry.path().filename().string());
  std::sort(ds.class_names.begin(), ds.class_names.end());
  if (ds.class_names.size() < 2)
    throw EmptyInputError("load_off_dataset: found " + std::to_string(ds.class_names.size()) +
                          " class directories with a '" + split + "' split under '" + dir.string() + "'");
  for (int label = 0; label < static_cast<int>(ds.class_names.size()); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir / ds.class_names[label] / split))
      if (entry.path().extension() == ".off") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
      const TriangleMesh mesh = load_off_mesh(file);
      const std::uint64_t item_seed = detail::splitmix64(seed ^ detail::fnv1a(file.filename().string()));
      ds.items.push_back({normalize_unit_sphere(sample_mesh(mesh, t_points, item_seed)), label});
    }
  }
  if (ds.items.empty()) throw EmptyInputError("load_off_dataset: no .off files under '" + dir.string() + "'");
  return ds;
}

inline LabeledDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream meta(dir / "dataset.json");
  if (!meta) throw ParseError("cannot open '" + (dir / "dataset.json").string() + "'");
  nlohmann::json j;
  meta >> j;
  LabeledDataset ds;
  ds.class_names = j.at("class_names").get<std::vector<std::string>>();
  ds.split = j.at("split").get<std::string>();
  std::ifstream man(dir / "manifest.csv");
  if (!man) throw ParseError("cannot open '" + (dir / "manifest.csv").string() + "'");
  std::string line;
  std::getline(man, line);  // header
  while (std::getline(man, line)) {
    if (line.empty()) continue;
    auto f = detail::csv_split(line);
    if (f.size() < 2) throw ParseError("manifest: bad row '" + line + "'");
    ds.items.push_back({load_xyz(dir / f[0]), std::atoi(f[1].c_str())});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Experiment runners
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  DatasetConfig train_data;
  DatasetConfig test_data;
  int m = 5;
  std::optional<double> sigma_override;
  MfvVariant variant = MfvVariant::Full;
  TrainConfig training;
  unsigned workers = 1;
};

inline double experiment_sigma(const ExperimentConfig& cfg) {
  return cfg.sigma_override ? *cfg.sigma_override : 1.0 / cfg.m;
}

namespace detail {

inline ReportRow base_row(const ExperimentConfig& cfg, const std::string& experiment) {
  ReportRow row;
  row.experiment = experiment;
  row.seed = cfg.train_data.seed;
  row.m = cfg.m;
  row.sigma = experiment_sigma(cfg);
  row.variant = to_string(cfg.variant);
  row.t_points = cfg.train_data.t_points;
  return row;
}

}  // namespace detail

/// Robustness protocol: train clean and (optionally) noise-augmented
/// classifiers, then evaluate across the corruption grid. Every grid kind gets
/// a clean-baseline row per training flag.
struct RobustnessConfig {
  ExperimentConfig base;
  std::vector<CorruptionSpec> grid;
  bool train_with_noise = false;  // adds the noise-augmented training arm
  int noise_copies = 3;           // corrupted copies per training item
};

inline ExperimentReport run_robustness(const RobustnessConfig& cfg) {
  const auto& base = cfg.base;
  const Gmm g = build_grid_gmm(base.m, base.sigma_override);
  LabeledDataset train = generate_synthetic_dataset(base.train_data);
  LabeledDataset test = generate_synthetic_dataset(base.test_data);
  const Eigen::MatrixXd test_features = dataset_features(test, g, base.variant, base.workers);
  const std::vector<int> test_labels = dataset_labels(test);

  ExperimentReport report;
  auto eval_to_rows = [&](const MlpModel& model, const CorruptionSpec& spec, bool train_noise) {
    Eigen::MatrixXd feats;
    if (spec.kind == CorruptionSpec::Kind::None) {
      feats = test_features;
    } else {
      LabeledDataset corrupted = test;
      parallel_for(corrupted.items.size(), base.workers, [&](std::size_t i) {
        corrupted.items[i].cloud = apply_corruption(corrupted.items[i].cloud, spec, /*salt=*/i);
      });
      feats = dataset_features(corrupted, g, base.variant, base.workers);
    }
    const Metrics metrics = evaluate_features(model, feats, test_labels);
    ReportRow row = detail::base_row(base, "robustness");
    row.corruption = spec.to_string();
    row.train_noise = train_noise;
    row.metric = "test_accuracy";
    row.value = metrics.accuracy;
    report.rows.push_back(row);
  };

  // clean-trained arm
  MlpModel clean_model = train_classifier(train, g, base.variant, base.training);
  CorruptionSpec none;
  eval_to_rows(clean_model, none, false);
  for (const CorruptionSpec& spec : cfg.grid) eval_to_rows(clean_model, spec, false);

  if (cfg.train_with_noise) {
    // one noise-augmented model per corruption kind in the grid
    std::vector<CorruptionSpec::Kind> kinds;
    for (const CorruptionSpec& spec : cfg.grid)
      if (std::find(kinds.begin(), kinds.end(), spec.kind) == kinds.end()) kinds.push_back(spec.kind);
    for (CorruptionSpec::Kind kind : kinds) {
      CorruptionSpec proto;
      for (const CorruptionSpec& spec : cfg.grid)
        if (spec.kind == kind) proto = spec;  // strongest level listed last wins
      LabeledDataset augmented = train;
      for (int copy = 0; copy < cfg.noise_copies; ++copy) {
        for (std::size_t i = 0; i < train.items.size(); ++i) {
          const std::uint64_t salt = (copy + 1) * 1000003ULL + i;
          augmented.items.push_back({apply_corruption(train.items[i].cloud, proto, salt), train.items[i].label});
        }
      }
      MlpModel noisy_model = train_classifier(augmented, g, base.variant, base.training);
      eval_to_rows(noisy_model, none, true);
      for (const CorruptionSpec& spec : cfg.grid)
        if (spec.kind == kind) eval_to_rows(noisy_model, spec, true);
    }
  }
  return report;
}

/// Accuracy and representation-collapse diagnostics across a sigma list.
struct SigmaSweepConfig {
  ExperimentConfig base;
  std::vector<double> sigmas;
};

/// Fraction of |entries| < 1e-8 in the pre-finalization representation, plus
/// the fraction of points detached from every Gaussian.
struct SparsityStats {
  double entry_sparsity = 0.0;
  double detached_fraction = 0.0;
};

inline SparsityStats representation_sparsity(const LabeledDataset& ds, const Gmm& g, MfvVariant variant,
                                             unsigned workers = 1) {
  std::vector<double> sparsity(ds.items.size()), detached(ds.items.size());
  parallel_for(ds.items.size(), workers, [&](std::size_t i) {
    EncodeDiagnostics diag;
    const Mfv mfv = encode_3dmfv(g, ds.items[i].cloud, variant, &diag);
    std::size_t small = 0;
    for (Eigen::Index r = 0; r < mfv.rows.rows(); ++r)
      for (Eigen::Index c = 0; c < mfv.rows.cols(); ++c)
        if (std::abs(mfv.rows(r, c)) < 1e-8) ++small;
    sparsity[i] = static_cast<double>(small) / static_cast<double>(mfv.rows.size());
    detached[i] = static_cast<double>(diag.detached_points) / static_cast<double>(ds.items[i].cloud.size());
  });
  SparsityStats stats;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    stats.entry_sparsity += sparsity[i];
    stats.detached_fraction += detached[i];
  }
  stats.entry_sparsity /= static_cast<double>(ds.items.size());
  stats.detached_fraction /= static_cast<double>(ds.items.size());
  return stats;
}

inline ExperimentReport run_sigma_sweep(const SigmaSweepConfig& cfg) {
  for (double s : cfg.sigmas)
    if (s <= 0.0) throw MisuseError("sigma sweep: sigmas must be > 0");
  std::vector<double> sigmas = cfg.sigmas;
  std::sort(sigmas.begin(), sigmas.end());
  LabeledDataset train = generate_synthetic_dataset(cfg.base.train_data);
  LabeledDataset test = generate_synthetic_dataset(cfg.base.test_data);
  const std::vector<int> test_labels = dataset_labels(test);
  const double default_sigma = 1.0 / cfg.base.m;

  ExperimentReport report;
  for (double sigma : sigmas) {
    const Gmm g = build_grid_gmm(cfg.base.m, sigma);
    MlpModel model;
    {
      Eigen::MatrixXd train_features = dataset_features(train, g, cfg.base.variant, cfg.base.workers);
      model = make_mlp(static_cast<int>(train_features.cols()), cfg.base.training.hidden, train.num_classes(),
                       cfg.base.training.seed, cfg.base.training);
      model.class_names = train.class_names;
      train_on_features(model, train_features, dataset_labels(train), cfg.base.training);
    }
    const Eigen::MatrixXd test_features = dataset_features(test, g, cfg.base.variant, cfg.base.workers);
    const Metrics metrics = evaluate_features(model, test_features, test_labels);
    const SparsityStats stats = representation_sparsity(test, g, cfg.base.variant, cfg.base.workers);

    ExperimentConfig row_cfg = cfg.base;
    row_cfg.sigma_override = sigma;
    ReportRow row = detail::base_row(row_cfg, "sigma_sweep");
    row.metric = "test_accuracy";
    row.value = metrics.accuracy;
    report.rows.push_back(row);
    row.metric = "entry_sparsity";
    row.value = stats.entry_sparsity;
    report.rows.push_back(row);
    row.metric = "detached_fraction";
    row.value = stats.detached_fraction;
    report.rows.push_back(row);
    if (sigma == default_sigma) {
      row.metric = "default_sigma";
      row.value = 1.0;
      report.rows.push_back(row);
    }
  }
  return report;
}

/// Accuracy per (grid resolution, point count) cell with encode wall time.
struct ResolutionSweepConfig {
  ExperimentConfig base;
  std::vector<int> grid_sizes;
  std::vector<std::size_t> point_counts;
};

inline ExperimentReport run_resolution_sweep(const ResolutionSweepConfig& cfg) {
  ExperimentReport report;
  for (int m : cfg.grid_sizes) {
    for (std::size_t t_points : cfg.point_counts) {
      ExperimentConfig cell = cfg.base;
      cell.m = m;
      cell.sigma_override.reset();
      cell.train_data.t_points = t_points;
      cell.test_data.t_points = t_points;
      const Gmm g = build_grid_gmm(m);
      LabeledDataset train = generate_synthetic_dataset(cell.train_data);
      LabeledDataset test = generate_synthetic_dataset(cell.test_data);

      const auto t0 = std::chrono::steady_clock::now();
      Eigen::MatrixXd train_features = dataset_features(train, g, cell.variant, cell.workers);
      Eigen::MatrixXd test_features = dataset_features(test, g, cell.variant, cell.workers);
      const double encode_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

      MlpModel model = make_mlp(static_cast<int>(train_features.cols()), cell.training.hidden, train.num_classes(),
                                cell.training.seed, cell.training);
      model.class_names = train.class_names;
      train_on_features(model, train_features, dataset_labels(train), cell.training);
      const Metrics metrics = evaluate_features(model, test_features, dataset_labels(test));

      ReportRow row = detail::base_row(cell, "resolution_sweep");
      row.metric = "test_accuracy";
      row.value = metrics.accuracy;
      report.rows.push_back(row);
      row.metric = "encode_wall_ms";
      row.value = encode_ms;
      report.rows.push_back(row);
    }
  }
  return report;
}

}  // namespace mfv3d
