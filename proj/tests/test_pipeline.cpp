#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "mfv3d/pipeline.hpp"

using namespace mfv3d;
namespace fs = std::filesystem;

namespace {

std::vector<PointCloud> random_batch(std::size_t n, std::size_t points, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<PointCloud> out(n);
  for (auto& pc : out)
    for (std::size_t i = 0; i < points; ++i) pc.points.emplace_back(u(rng), u(rng), u(rng));
  return out;
}

ExperimentConfig tiny_experiment(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.train_data.per_class = 6;
  cfg.train_data.t_points = 128;
  cfg.train_data.seed = seed;
  cfg.train_data.split = "train";
  cfg.test_data = cfg.train_data;
  cfg.test_data.per_class = 4;
  cfg.test_data.seed = seed + 1;
  cfg.test_data.split = "test";
  cfg.m = 3;
  cfg.training.hidden = {32};
  cfg.training.epochs = 30;
  cfg.training.learning_rate = 0.05;
  cfg.training.seed = 3;
  cfg.workers = 2;
  return cfg;
}

}  // namespace

TEST_CASE("batch encoding is identical for any worker count", "[pipeline]") {
  Gmm g = build_grid_gmm(3);
  auto clouds = random_batch(17, 200, 9);
  auto ref = encode_batch(clouds, g, MfvVariant::Full, true, 1);
  for (unsigned workers : {2u, 5u, 8u}) {
    auto out = encode_batch(clouds, g, MfvVariant::Full, true, workers);
    REQUIRE(out.size() == ref.size());
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].rows == ref[i].rows);  // bit identical
  }
}

TEST_CASE("parallel_for propagates exceptions", "[pipeline]") {
  CHECK_THROWS_AS(parallel_for(8, 4,
                               [](std::size_t i) {
                                 if (i == 5) throw MisuseError("boom");
                               }),
                  MisuseError);
}

TEST_CASE("dataset directory round trip", "[pipeline]") {
  DatasetConfig cfg;
  cfg.per_class = 2;
  cfg.t_points = 96;
  cfg.seed = 21;
  cfg.split = "test";
  LabeledDataset ds = generate_synthetic_dataset(cfg);
  auto dir = fs::temp_directory_path() / "mfv3d_dataset_rt";
  fs::remove_all(dir);
  save_dataset(ds, dir);
  LabeledDataset back = load_dataset(dir);
  REQUIRE(back.size() == ds.size());
  CHECK(back.class_names == ds.class_names);
  CHECK(back.split == "test");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.items[i].label == ds.items[i].label);
    REQUIRE(back.items[i].cloud.size() == ds.items[i].cloud.size());
    for (std::size_t t = 0; t < ds.items[i].cloud.size(); ++t)
      CHECK(back.items[i].cloud.points[t] == ds.items[i].cloud.points[t]);
  }
}

TEST_CASE("OFF tree ingestion runs the standard pipeline", "[pipeline]") {
  // ModelNet-style layout: <dir>/<class>/<split>/*.off
  auto dir = fs::temp_directory_path() / "mfv3d_off_tree";
  fs::remove_all(dir);
  const char* tetra =
      "OFF\n4 4 6\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n3 0 1 3\n3 0 2 3\n3 1 2 3\n";
  const char* slab =
      "OFF\n4 2 5\n0 0 0\n2 0 0\n2 1 0\n0 1 0\n3 0 1 2\n3 0 2 3\n";
  for (const std::string cls : {"tetra", "slab"}) {
    fs::create_directories(dir / cls / "train");
    for (int i = 0; i < 3; ++i) {
      std::ofstream out(dir / cls / "train" / ("model_" + std::to_string(i) + ".off"));
      out << (cls == "tetra" ? tetra : slab);
    }
  }
  LabeledDataset ds = load_off_dataset(dir, "train", 128, 9);
  REQUIRE(ds.size() == 6);
  CHECK(ds.class_names == std::vector<std::string>{"slab", "tetra"});
  for (const auto& item : ds.items) {
    CHECK(item.cloud.size() == 128);
    double max_norm = 0.0;
    for (const Vec3& p : item.cloud.points) max_norm = std::max(max_norm, p.norm());
    CHECK(std::abs(max_norm - 1.0) < 1e-9);
  }
  SECTION("feeds the classifier directly") {
    Gmm g = build_grid_gmm(2);
    TrainConfig tc;
    tc.hidden = {8};
    tc.epochs = 40;
    tc.learning_rate = 0.1;
    MlpModel m = train_classifier(ds, g, MfvVariant::Full, tc);
    CHECK(evaluate(m, ds, g, MfvVariant::Full).accuracy == 1.0);
  }
  SECTION("missing split reports an error") {
    CHECK_THROWS_AS(load_off_dataset(dir, "test", 128, 9), EmptyInputError);
  }
}

TEST_CASE("robustness report structure", "[pipeline]") {
  RobustnessConfig cfg;
  cfg.base = tiny_experiment(100);
  for (double ratio : {0.1, 0.2, 0.3, 0.4, 0.5})
    cfg.grid.push_back(parse_corruption_spec("kind=delete_uniform,ratio=" + std::to_string(ratio) + ",seed=5"));
  ExperimentReport report = run_robustness(cfg);

  // clean baseline + 5 grid rows, clean-trained arm only
  REQUIRE(report.rows.size() == 6);
  CHECK(report.rows[0].corruption == "kind=none");
  for (const auto& row : report.rows) {
    CHECK(row.experiment == "robustness");
    CHECK(row.metric == "test_accuracy");
    CHECK_FALSE(row.train_noise);
    CHECK(row.m == 3);
    CHECK(row.t_points == 128);
    CHECK(row.value >= 0.0);
    CHECK(row.value <= 1.0);
  }

  SECTION("zero-corruption row equals the clean evaluation exactly") {
    RobustnessConfig with_zero = cfg;
    with_zero.grid.insert(with_zero.grid.begin(), parse_corruption_spec("kind=delete_uniform,ratio=0,seed=5"));
    ExperimentReport r2 = run_robustness(with_zero);
    CHECK(r2.rows[0].value == r2.rows[1].value);  // baseline vs ratio=0
  }
  SECTION("round trips through csv") {
    ExperimentReport back = report_from_csv(report_to_csv(report));
    REQUIRE(back.rows.size() == report.rows.size());
    CHECK(back.rows[3].value == report.rows[3].value);
    CHECK(back.rows[3].corruption == report.rows[3].corruption);
  }
  SECTION("noise-trained arm adds rows per kind") {
    RobustnessConfig noisy = cfg;
    noisy.grid = {parse_corruption_spec("kind=rotate,seed=5")};
    noisy.train_with_noise = true;
    noisy.noise_copies = 1;
    ExperimentReport r3 = run_robustness(noisy);
    REQUIRE(r3.rows.size() == 4);  // (clean + rotate) x (clean-trained, noise-trained)
    CHECK(r3.rows[2].train_noise);
    CHECK(r3.rows[3].train_noise);
  }
}

TEST_CASE("sigma sweep report structure", "[pipeline]") {
  SigmaSweepConfig cfg;
  cfg.base = tiny_experiment(200);
  cfg.sigmas = {0.4, 1.0 / 3.0, 0.001};  // deliberately unsorted
  ExperimentReport report = run_sigma_sweep(cfg);

  std::vector<double> sigma_order;
  for (const auto& row : report.rows)
    if (row.metric == "test_accuracy") sigma_order.push_back(row.sigma);
  REQUIRE(sigma_order.size() == 3);
  CHECK(std::is_sorted(sigma_order.begin(), sigma_order.end()));

  bool default_marked = false;
  double tiny_sparsity = 0.0, healthy_sparsity = 1.0, tiny_detached = 0.0;
  for (const auto& row : report.rows) {
    if (row.metric == "default_sigma" && row.sigma == 1.0 / 3.0) default_marked = true;
    if (row.metric == "entry_sparsity" && row.sigma == 0.001) tiny_sparsity = row.value;
    if (row.metric == "detached_fraction" && row.sigma == 0.001) tiny_detached = row.value;
    if (row.metric == "entry_sparsity" && row.sigma == 0.4) healthy_sparsity = row.value;
  }
  CHECK(default_marked);  // sigma = 1/m row carries the marker
  CHECK(tiny_sparsity > 0.8);
  CHECK(tiny_detached > 0.9);
  CHECK(healthy_sparsity < 0.2);
}

TEST_CASE("resolution sweep emits one cell per combination", "[pipeline]") {
  ResolutionSweepConfig cfg;
  cfg.base = tiny_experiment(300);
  cfg.base.training.epochs = 10;
  cfg.grid_sizes = {2, 3};
  cfg.point_counts = {64, 128};
  ExperimentReport report = run_resolution_sweep(cfg);
  int acc_rows = 0, time_rows = 0;
  for (const auto& row : report.rows) {
    if (row.metric == "test_accuracy") ++acc_rows;
    if (row.metric == "encode_wall_ms") {
      ++time_rows;
      CHECK(row.value > 0.0);
    }
  }
  CHECK(acc_rows == 4);
  CHECK(time_rows == 4);

  SECTION("identical config reproduces cells") {
    ExperimentReport again = run_resolution_sweep(cfg);
    REQUIRE(again.rows.size() == report.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i)
      if (report.rows[i].metric == "test_accuracy") CHECK(again.rows[i].value == report.rows[i].value);
  }
}
