#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "mfv3d/serialize.hpp"

using namespace mfv3d;
namespace fs = std::filesystem;

namespace {

fs::path temp_base(const std::string& name) { return fs::temp_directory_path() / ("mfv3d_ser_" + name); }

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PointCloud pc;
  for (std::size_t i = 0; i < n; ++i) pc.points.emplace_back(u(rng), u(rng), u(rng));
  return pc;
}

}  // namespace

TEST_CASE("gmm json round trip is exact", "[serialize]") {
  Gmm g = build_grid_gmm(3, 0.123456789012345678);
  auto path = temp_base("gmm.json");
  save_gmm(g, path);
  Gmm back = load_gmm(path);
  REQUIRE(back.size() == g.size());
  CHECK(back.grid_m == g.grid_m);
  for (std::size_t k = 0; k < g.size(); ++k) {
    CHECK(back.weights[k] == g.weights[k]);
    CHECK(back.sigmas[k] == g.sigmas[k]);
    CHECK(back.means[k] == g.means[k]);
  }
}

TEST_CASE("gmm json rejects inconsistent K", "[serialize]") {
  nlohmann::json j = gmm_to_json(build_grid_gmm(2));
  j["K"] = 9;
  CHECK_THROWS_AS(gmm_from_json(j), ParseError);
}

TEST_CASE("grid tensor files round trip", "[serialize]") {
  Gmm g = build_grid_gmm(3);
  Mfv mfv = finalize_normalization(encode_3dmfv(g, random_cloud(200, 5)));
  GridTensor t = to_grid_tensor(mfv, g);

  SECTION("float64 is bit exact") {
    auto base = temp_base("tensor64");
    save_grid_tensor(t, mfv, base, /*as_float32=*/false);
    auto [back, meta] = load_grid_tensor(base);
    CHECK(meta.dtype == "float64");
    CHECK(meta.m == 3);
    CHECK(meta.variant == "full");
    CHECK(meta.finalized);
    CHECK(meta.row_order.size() == 20);
    CHECK(meta.row_order[0] == "sum_alpha");
    CHECK(meta.row_order[7] == "max_alpha");
    CHECK(meta.row_order[14] == "min_mu_x");
    REQUIRE(back.data.size() == t.data.size());
    for (std::size_t i = 0; i < t.data.size(); ++i) CHECK(back.data[i] == t.data[i]);
  }
  SECTION("float32 round trips through the declared precision") {
    auto base = temp_base("tensor32");
    save_grid_tensor(t, mfv, base, /*as_float32=*/true);
    auto [back, meta] = load_grid_tensor(base);
    CHECK(meta.dtype == "float32");
    for (std::size_t i = 0; i < t.data.size(); ++i)
      CHECK(back.data[i] == static_cast<double>(static_cast<float>(t.data[i])));
  }
}

TEST_CASE("model save/load preserves predictions bit-exactly", "[serialize]") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  TrainConfig cfg;
  cfg.hidden = {9, 5};
  cfg.epochs = 10;
  MlpModel m = make_mlp(14, cfg.hidden, 4, 7, cfg);
  m.class_names = {"a", "b", "c", "d"};
  Eigen::MatrixXd features(20, 14);
  std::vector<int> labels(20);
  for (Eigen::Index i = 0; i < features.size(); ++i) features.data()[i] = gauss(rng);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 4;
  train_on_features(m, features, labels, cfg);

  auto base = temp_base("model");
  save_model(m, base);
  MlpModel back = load_model(base);
  CHECK(back.class_names == m.class_names);
  CHECK(back.layer_sizes == m.layer_sizes);
  CHECK(back.config.epochs == cfg.epochs);
  CHECK(back.epoch_loss == m.epoch_loss);
  for (int i = 0; i < 20; ++i) {
    Eigen::VectorXd x = features.row(i).transpose();
    CHECK(predict(back, x) == predict(m, x));
  }
}

TEST_CASE("experiment report round trips losslessly", "[serialize]") {
  ExperimentReport r;
  ReportRow row;
  row.experiment = "robustness";
  row.seed = 42;
  row.m = 5;
  row.sigma = 0.2;
  row.variant = "full";
  row.t_points = 1024;
  row.corruption = "kind=delete_uniform,ratio=0.5,seed=7";  // embedded commas need quoting
  row.train_noise = true;
  row.metric = "test_accuracy";
  row.value = 0.9533333333333333;
  r.rows.push_back(row);
  row.corruption = "kind=none";
  row.train_noise = false;
  row.value = 1.0 / 3.0;
  r.rows.push_back(row);

  const std::string csv = report_to_csv(r);
  CHECK(csv.rfind("# mfv3d-report v1", 0) == 0);
  ExperimentReport back = report_from_csv(csv);
  CHECK(back.format_version == r.format_version);
  REQUIRE(back.rows.size() == r.rows.size());
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(back.rows[i].experiment == r.rows[i].experiment);
    CHECK(back.rows[i].seed == r.rows[i].seed);
    CHECK(back.rows[i].m == r.rows[i].m);
    CHECK(back.rows[i].sigma == r.rows[i].sigma);
    CHECK(back.rows[i].variant == r.rows[i].variant);
    CHECK(back.rows[i].t_points == r.rows[i].t_points);
    CHECK(back.rows[i].corruption == r.rows[i].corruption);
    CHECK(back.rows[i].train_noise == r.rows[i].train_noise);
    CHECK(back.rows[i].metric == r.rows[i].metric);
    CHECK(back.rows[i].value == r.rows[i].value);  // shortest round-trip decimals
  }

  SECTION("file round trip") {
    auto path = temp_base("report.csv");
    save_report(r, path);
    ExperimentReport from_file = load_report(path);
    CHECK(report_to_csv(from_file) == csv);
  }
}

TEST_CASE("csv quoting handles quotes and commas", "[serialize]") {
  auto split = detail::csv_split(detail::csv_quote("a\"b,c") + ",plain");
  REQUIRE(split.size() == 2);
  CHECK(split[0] == "a\"b,c");
  CHECK(split[1] == "plain");
}

TEST_CASE("atomic writes leave no temp file", "[serialize]") {
  auto path = temp_base("atomic.txt");
  detail::atomic_write_file(path, "payload");
  CHECK(fs::exists(path));
  CHECK_FALSE(fs::exists(path.string() + ".tmp"));
}

TEST_CASE("report parser survives garbage with typed errors", "[serialize]") {
  std::mt19937_64 rng(707);
  const std::string alphabet = "abc,\"0123456789.#\n ve-";
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  std::uniform_int_distribution<int> len(0, 200);
  for (int trial = 0; trial < 500; ++trial) {
    std::string text = trial % 2 ? "# mfv3d-report v1\nexperiment,seed,m,sigma,variant,t_points,corruption,"
                                   "train_noise,metric,value\n"
                                 : "";
    const int n = len(rng);
    for (int i = 0; i < n; ++i) text += alphabet[pick(rng)];
    try {
      ExperimentReport r = report_from_csv(text);
      report_to_csv(r);  // anything accepted must serialize again
    } catch (const ParseError&) {
    }
  }
}
