// Command-line front end: batch encoding, analytic plane recovery, corruption
// transforms, synthetic dataset generation, classifier training/evaluation and
// the robustness / sigma / resolution experiment sweeps.
//
// Exit codes: 0 success, 1 partial or runtime failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mfv3d/mfv3d.hpp"

namespace fs = std::filesystem;
using namespace mfv3d;

namespace {

struct GlobalOpts {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  std::string out;
};

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    std::size_t comma = csv.find(',', pos);
    if (comma == std::string::npos) comma = csv.size();
    if (comma > pos) out.push_back(csv.substr(pos, comma - pos));
    pos = comma + 1;
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  for (const auto& tok : split_list(csv)) out.push_back(std::stoi(tok));
  return out;
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  for (const auto& tok : split_list(csv)) out.push_back(std::stod(tok));
  return out;
}

int cmd_encode(const GlobalOpts& g, const std::vector<std::string>& inputs, int m, std::optional<double> sigma,
               const std::string& variant_name, bool normalize, bool finalize, bool float64) {
  const Gmm gmm = build_grid_gmm(m, sigma);
  const MfvVariant variant = mfv_variant_from_string(variant_name);
  fs::create_directories(g.out);

  std::vector<int> status(inputs.size(), 0);
  std::vector<std::string> messages(inputs.size());
  parallel_for(inputs.size(), g.threads, [&](std::size_t i) {
    try {
      PointCloud pc = load_xyz(inputs[i]);
      if (normalize) pc = normalize_unit_sphere(pc);
      Mfv mfv = encode_3dmfv(gmm, pc, variant);
      if (finalize) mfv = finalize_normalization(mfv);
      const GridTensor tensor = to_grid_tensor(mfv, gmm);
      save_grid_tensor(tensor, mfv, fs::path(g.out) / fs::path(inputs[i]).stem(), !float64);
    } catch (const std::exception& e) {
      status[i] = 1;
      messages[i] = e.what();
    }
  });

  int failures = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (status[i]) {
      ++failures;
      std::cerr << "encode: skipped '" << inputs[i] << "': " << messages[i] << "\n";
    }
  }
  std::cout << "encoded " << (inputs.size() - failures) << "/" << inputs.size() << " clouds into " << g.out << "\n";
  return failures == 0 ? 0 : 1;
}

int cmd_reconstruct_plane(const GlobalOpts& g, const std::string& input, int m, std::optional<double> sigma,
                          double threshold, bool normalize) {
  PointCloud pc = load_xyz(input);
  if (normalize) pc = normalize_unit_sphere(pc);
  const Gmm gmm = build_grid_gmm(m, sigma);
  const FisherVector fv = encode_fv(gmm, pc, /*apply_t_norm=*/true);
  PlaneRecoveryConfig cfg;
  cfg.min_points = threshold;

  nlohmann::json planes = nlohmann::json::array();
  for (std::size_t k = 0; k < gmm.size(); ++k) {
    if (estimate_points_per_gaussian(fv, gmm, k, pc.size()) < cfg.min_points) continue;
    nlohmann::json entry;
    entry["gaussian"] = k;
    try {
      const PlaneParams p = recover_plane(fv, gmm, k, pc.size(), cfg);
      entry["normal"] = {p.normal.x(), p.normal.y(), p.normal.z()};
      entry["rho"] = p.rho;
      entry["rho0"] = p.rho0;
      entry["t_k_estimate"] = p.t_k_estimate;
    } catch (const DegeneratePlaneError& e) {
      entry["degenerate"] = true;
      entry["rho0"] = e.rho0;
    }
    planes.push_back(entry);
  }
  nlohmann::json doc;
  doc["input"] = input;
  doc["m"] = m;
  doc["sigma"] = sigma ? *sigma : 1.0 / m;
  doc["threshold"] = threshold;
  doc["planes"] = planes;
  if (g.out.empty()) {
    std::cout << doc.dump(2) << "\n";
  } else {
    detail::atomic_write_file(g.out, doc.dump(2) + "\n");
    std::cout << "wrote " << planes.size() << " plane estimates to " << g.out << "\n";
  }
  return 0;
}

int cmd_corrupt(const GlobalOpts& g, const std::vector<std::string>& inputs, const std::string& spec_text) {
  CorruptionSpec spec = parse_corruption_spec(spec_text);
  fs::create_directories(g.out);
  int failures = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    try {
      const PointCloud pc = load_xyz(inputs[i]);
      const PointCloud out = apply_corruption(pc, spec, /*salt=*/i);
      save_xyz(out, fs::path(g.out) / fs::path(inputs[i]).filename());
    } catch (const std::exception& e) {
      ++failures;
      std::cerr << "corrupt: skipped '" << inputs[i] << "': " << e.what() << "\n";
    }
  }
  return failures == 0 ? 0 : 1;
}

int cmd_dataset(const GlobalOpts& g, const std::string& classes, std::size_t per_class, std::size_t points,
                const std::string& split, bool full_rotation, const std::string& from_off) {
  LabeledDataset ds;
  if (!from_off.empty()) {
    ds = load_off_dataset(from_off, split, points, g.seed);
  } else {
    DatasetConfig cfg;
    if (!classes.empty()) cfg.classes = split_list(classes);
    cfg.per_class = per_class;
    cfg.t_points = points;
    cfg.seed = g.seed;
    cfg.split = split;
    cfg.full_rotation = full_rotation;
    ds = generate_synthetic_dataset(cfg);
  }
  save_dataset(ds, g.out);
  std::cout << "wrote " << ds.size() << " clouds (" << ds.class_names.size() << " classes) to " << g.out << "\n";
  return 0;
}

TrainConfig training_from_flags(const std::string& hidden, double lr, double momentum, int epochs, int batch,
                                std::uint64_t seed) {
  TrainConfig cfg;
  cfg.hidden = hidden.empty() ? std::vector<int>{} : parse_int_list(hidden);
  cfg.learning_rate = lr;
  cfg.momentum = momentum;
  cfg.epochs = epochs;
  cfg.batch_size = batch;
  cfg.seed = seed;
  return cfg;
}

int cmd_train(const GlobalOpts& g, const std::string& data_dir, int m, std::optional<double> sigma,
              const std::string& variant_name, const TrainConfig& training) {
  const LabeledDataset train = load_dataset(data_dir);
  const Gmm gmm = build_grid_gmm(m, sigma);
  const MfvVariant variant = mfv_variant_from_string(variant_name);

  Eigen::MatrixXd features = dataset_features(train, gmm, variant, g.threads);
  MlpModel model = make_mlp(static_cast<int>(features.cols()), training.hidden, train.num_classes(), training.seed,
                            training);
  model.class_names = train.class_names;
  train_on_features(model, features, dataset_labels(train), training);

  save_model(model, g.out);
  save_gmm(gmm, g.out + ".gmm.json");
  nlohmann::json extra;
  extra["variant"] = to_string(variant);
  detail::atomic_write_file(g.out + ".variant.json", extra.dump(2) + "\n");

  const Metrics train_metrics = evaluate_features(model, features, dataset_labels(train));
  std::cout << "trained on " << train.size() << " items; final loss " << model.epoch_loss.back()
            << "; train accuracy " << train_metrics.accuracy << "\n";
  return 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& model_base, const std::string& data_dir,
             const std::string& csv_out) {
  const MlpModel model = load_model(model_base);
  const Gmm gmm = load_gmm(model_base + ".gmm.json");
  std::ifstream vf(model_base + ".variant.json");
  if (!vf) throw ParseError("cannot open '" + model_base + ".variant.json'");
  nlohmann::json vj;
  vf >> vj;
  const MfvVariant variant = mfv_variant_from_string(vj.at("variant").get<std::string>());

  const LabeledDataset ds = load_dataset(data_dir);
  Eigen::MatrixXd features = dataset_features(ds, gmm, variant, g.threads);
  const Metrics metrics = evaluate_features(model, features, dataset_labels(ds));

  nlohmann::json doc;
  doc["accuracy"] = metrics.accuracy;
  doc["per_class_accuracy"] = metrics.per_class_accuracy;
  doc["class_names"] = ds.class_names;
  auto conf = nlohmann::json::array();
  for (Eigen::Index r = 0; r < metrics.confusion.rows(); ++r) {
    std::vector<int> row(metrics.confusion.cols());
    for (Eigen::Index c = 0; c < metrics.confusion.cols(); ++c) row[c] = metrics.confusion(r, c);
    conf.push_back(row);
  }
  doc["confusion"] = conf;
  if (!csv_out.empty()) {
    ExperimentReport report;
    ReportRow row;
    row.experiment = "eval";
    row.seed = g.seed;
    row.variant = to_string(variant);
    row.m = gmm.grid_m ? *gmm.grid_m : 0;
    row.sigma = gmm.sigmas.empty() ? 0.0 : gmm.sigmas.front();
    row.t_points = ds.items.empty() ? 0 : ds.items.front().cloud.size();
    row.metric = "test_accuracy";
    row.value = metrics.accuracy;
    report.rows.push_back(row);
    for (std::size_t c = 0; c < metrics.per_class_accuracy.size(); ++c) {
      row.metric = "accuracy_" + ds.class_names[c];
      row.value = metrics.per_class_accuracy[c];
      report.rows.push_back(row);
    }
    save_report(report, csv_out);
  }
  if (g.out.empty()) {
    std::cout << doc.dump(2) << "\n";
  } else {
    detail::atomic_write_file(g.out, doc.dump(2) + "\n");
    std::cout << "accuracy " << metrics.accuracy << "; metrics written to " << g.out << "\n";
  }
  return 0;
}

ExperimentConfig experiment_from_flags(const GlobalOpts& g, std::size_t per_class, std::size_t test_per_class,
                                       std::size_t points, int m, std::optional<double> sigma,
                                       const std::string& variant_name, const TrainConfig& training) {
  ExperimentConfig cfg;
  cfg.train_data.per_class = per_class;
  cfg.train_data.t_points = points;
  cfg.train_data.seed = g.seed;
  cfg.train_data.split = "train";
  cfg.test_data = cfg.train_data;
  cfg.test_data.per_class = test_per_class;
  cfg.test_data.seed = g.seed + 1;
  cfg.test_data.split = "test";
  cfg.m = m;
  cfg.sigma_override = sigma;
  cfg.variant = mfv_variant_from_string(variant_name);
  cfg.training = training;
  cfg.workers = g.threads;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3DmFV point cloud representation toolkit"};
  app.require_subcommand(1);
  GlobalOpts g;
  app.add_option("--seed", g.seed, "master random seed (all randomness is explicit)");
  app.add_option("--threads", g.threads, "worker threads for batch stages");
  app.add_option("--out", g.out, "output file or directory");

  // encode
  auto* encode = app.add_subcommand("encode", "encode XYZ clouds into 3DmFV grid tensors");
  std::vector<std::string> enc_inputs;
  int enc_m = 5;
  double enc_sigma = -1.0;
  std::string enc_variant = "full";
  bool enc_no_normalize = false, enc_no_finalize = false, enc_float64 = false;
  encode->add_option("inputs", enc_inputs, "input .xyz files")->required();
  encode->add_option("--m", enc_m, "grid resolution");
  encode->add_option("--sigma", enc_sigma, "sigma override (default 1/m)");
  encode->add_option("--variant", enc_variant, "full|fv|ss|min|max");
  encode->add_flag("--no-normalize", enc_no_normalize, "skip unit-sphere normalization");
  encode->add_flag("--no-finalize", enc_no_finalize, "skip signed-sqrt + L2 normalization");
  encode->add_flag("--float64", enc_float64, "write float64 tensors instead of float32");

  // reconstruct-plane
  auto* rplane = app.add_subcommand("reconstruct-plane", "recover plane parameters from Fisher components");
  std::string rp_input;
  int rp_m = 5;
  double rp_sigma = -1.0, rp_threshold = 30.0;
  bool rp_normalize = false;
  rplane->add_option("input", rp_input, "input .xyz file")->required();
  rplane->add_option("--m", rp_m, "grid resolution");
  rplane->add_option("--sigma", rp_sigma, "sigma override (default 1/m)");
  rplane->add_option("--threshold", rp_threshold, "qualifying T_k threshold");
  rplane->add_flag("--normalize", rp_normalize, "unit-sphere normalize before encoding");

  // corrupt
  auto* corrupt = app.add_subcommand("corrupt", "apply a seeded corruption to XYZ clouds");
  std::vector<std::string> cor_inputs;
  std::string cor_spec;
  corrupt->add_option("inputs", cor_inputs, "input .xyz files")->required();
  corrupt->add_option("--spec,--corrupt", cor_spec, "corruption spec, e.g. kind=delete_uniform,ratio=0.5,seed=7")
      ->required();

  // dataset
  auto* dataset = app.add_subcommand("dataset", "generate the synthetic shape benchmark");
  std::string ds_classes;
  std::size_t ds_per_class = 100, ds_points = 1024;
  std::string ds_split = "train";
  std::string ds_from_off;
  bool ds_full_rotation = false;
  dataset->add_option("--classes", ds_classes, "comma list (default: sphere,cube,cylinder,cone,torus,plane)");
  dataset->add_option("--from-off", ds_from_off, "ingest a ModelNet-style OFF tree (<dir>/<class>/<split>/*.off)");
  dataset->add_option("--per-class", ds_per_class, "instances per class");
  dataset->add_option("--points", ds_points, "points per cloud");
  dataset->add_option("--split", ds_split, "split tag: train|test");
  dataset->add_flag("--full-rotation", ds_full_rotation, "apply full SO(3) rotations instead of azimuthal spins");

  // train / eval
  auto* train = app.add_subcommand("train", "train a classifier on an encoded dataset");
  std::string tr_data, tr_hidden = "256,128", tr_variant = "full";
  int tr_m = 5, tr_epochs = 120, tr_batch = 32;
  double tr_sigma = -1.0, tr_lr = 0.02, tr_momentum = 0.9;
  train->add_option("--data", tr_data, "dataset directory")->required();
  train->add_option("--m", tr_m, "grid resolution");
  train->add_option("--sigma", tr_sigma, "sigma override (default 1/m)");
  train->add_option("--variant", tr_variant, "full|fv|ss|min|max");
  train->add_option("--hidden", tr_hidden, "hidden layer sizes, empty for linear");
  train->add_option("--lr", tr_lr, "learning rate");
  train->add_option("--momentum", tr_momentum, "SGD momentum");
  train->add_option("--epochs", tr_epochs, "training epochs");
  train->add_option("--batch", tr_batch, "mini-batch size");

  auto* eval = app.add_subcommand("eval", "evaluate a trained model on a dataset");
  std::string ev_model, ev_data, ev_csv;
  eval->add_option("--model", ev_model, "model base path (as given to train --out)")->required();
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--csv", ev_csv, "also write metrics as a CSV report");

  // robustness
  auto* robust = app.add_subcommand("robustness", "corruption-robustness experiment grid");
  std::size_t rb_per_class = 100, rb_test_per_class = 50, rb_points = 1024;
  int rb_m = 5, rb_epochs = 120, rb_batch = 32, rb_noise_copies = 3;
  double rb_sigma = -1.0, rb_lr = 0.02, rb_momentum = 0.9;
  std::string rb_variant = "full", rb_hidden = "256,128";
  std::vector<std::string> rb_corrupts;
  bool rb_train_noise = false;
  robust->add_option("--per-class", rb_per_class, "train instances per class");
  robust->add_option("--test-per-class", rb_test_per_class, "test instances per class");
  robust->add_option("--points", rb_points, "points per cloud");
  robust->add_option("--m", rb_m, "grid resolution");
  robust->add_option("--sigma", rb_sigma, "sigma override");
  robust->add_option("--variant", rb_variant, "representation variant");
  robust->add_option("--hidden", rb_hidden, "hidden sizes");
  robust->add_option("--lr", rb_lr, "learning rate");
  robust->add_option("--momentum", rb_momentum, "SGD momentum");
  robust->add_option("--epochs", rb_epochs, "epochs");
  robust->add_option("--batch", rb_batch, "batch size");
  robust->add_option("--corrupt", rb_corrupts, "corruption spec (repeatable)")->required();
  robust->add_flag("--train-with-noise", rb_train_noise, "also train noise-augmented classifiers");
  robust->add_option("--noise-copies", rb_noise_copies, "corrupted copies per item for noise training");

  // sigma-sweep
  auto* ssweep = app.add_subcommand("sigma-sweep", "accuracy and sparsity across sigma values");
  std::size_t sw_per_class = 100, sw_test_per_class = 50, sw_points = 1024;
  int sw_m = 5, sw_epochs = 120, sw_batch = 32;
  double sw_lr = 0.02, sw_momentum = 0.9;
  std::string sw_variant = "full", sw_hidden = "256,128", sw_sigmas = "0.001,0.1,0.2,0.3,0.4";
  ssweep->add_option("--per-class", sw_per_class, "train instances per class");
  ssweep->add_option("--test-per-class", sw_test_per_class, "test instances per class");
  ssweep->add_option("--points", sw_points, "points per cloud");
  ssweep->add_option("--m", sw_m, "grid resolution");
  ssweep->add_option("--sigmas", sw_sigmas, "comma list of sigmas");
  ssweep->add_option("--variant", sw_variant, "representation variant");
  ssweep->add_option("--hidden", sw_hidden, "hidden sizes");
  ssweep->add_option("--lr", sw_lr, "learning rate");
  ssweep->add_option("--momentum", sw_momentum, "SGD momentum");
  ssweep->add_option("--epochs", sw_epochs, "epochs");
  ssweep->add_option("--batch", sw_batch, "batch size");

  // resolution-sweep
  auto* rsweep = app.add_subcommand("resolution-sweep", "accuracy across grid size and point count");
  std::size_t rs_per_class = 100, rs_test_per_class = 50;
  int rs_epochs = 120, rs_batch = 32;
  double rs_lr = 0.02, rs_momentum = 0.9;
  std::string rs_variant = "full", rs_hidden = "256,128", rs_grids = "3,5", rs_points = "256,1024";
  rsweep->add_option("--per-class", rs_per_class, "train instances per class");
  rsweep->add_option("--test-per-class", rs_test_per_class, "test instances per class");
  rsweep->add_option("--grids", rs_grids, "comma list of grid resolutions m");
  rsweep->add_option("--points", rs_points, "comma list of point counts");
  rsweep->add_option("--variant", rs_variant, "representation variant");
  rsweep->add_option("--hidden", rs_hidden, "hidden sizes");
  rsweep->add_option("--lr", rs_lr, "learning rate");
  rsweep->add_option("--momentum", rs_momentum, "SGD momentum");
  rsweep->add_option("--epochs", rs_epochs, "epochs");
  rsweep->add_option("--batch", rs_batch, "batch size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    auto sig = [](double s) { return s > 0.0 ? std::optional<double>(s) : std::nullopt; };
    if (*encode)
      return cmd_encode(g, enc_inputs, enc_m, sig(enc_sigma), enc_variant, !enc_no_normalize, !enc_no_finalize,
                        enc_float64);
    if (*rplane) return cmd_reconstruct_plane(g, rp_input, rp_m, sig(rp_sigma), rp_threshold, rp_normalize);
    if (*corrupt) return cmd_corrupt(g, cor_inputs, cor_spec);
    if (*dataset) return cmd_dataset(g, ds_classes, ds_per_class, ds_points, ds_split, ds_full_rotation, ds_from_off);
    if (*train)
      return cmd_train(g, tr_data, tr_m, sig(tr_sigma), tr_variant,
                       training_from_flags(tr_hidden, tr_lr, tr_momentum, tr_epochs, tr_batch, g.seed));
    if (*eval) return cmd_eval(g, ev_model, ev_data, ev_csv);
    if (*robust) {
      RobustnessConfig cfg;
      cfg.base = experiment_from_flags(g, rb_per_class, rb_test_per_class, rb_points, rb_m, sig(rb_sigma), rb_variant,
                                       training_from_flags(rb_hidden, rb_lr, rb_momentum, rb_epochs, rb_batch, g.seed));
      for (const auto& text : rb_corrupts) cfg.grid.push_back(parse_corruption_spec(text));
      cfg.train_with_noise = rb_train_noise;
      cfg.noise_copies = rb_noise_copies;
      const ExperimentReport report = run_robustness(cfg);
      save_report(report, g.out.empty() ? "robustness.csv" : g.out);
      std::cout << "wrote " << report.rows.size() << " report rows\n";
      return 0;
    }
    if (*ssweep) {
      SigmaSweepConfig cfg;
      cfg.base = experiment_from_flags(g, sw_per_class, sw_test_per_class, sw_points, sw_m, std::nullopt, sw_variant,
                                       training_from_flags(sw_hidden, sw_lr, sw_momentum, sw_epochs, sw_batch, g.seed));
      cfg.sigmas = parse_double_list(sw_sigmas);
      const ExperimentReport report = run_sigma_sweep(cfg);
      save_report(report, g.out.empty() ? "sigma_sweep.csv" : g.out);
      std::cout << "wrote " << report.rows.size() << " report rows\n";
      return 0;
    }
    if (*rsweep) {
      ResolutionSweepConfig cfg;
      cfg.base = experiment_from_flags(g, rs_per_class, rs_test_per_class, 1024, 5, std::nullopt, rs_variant,
                                       training_from_flags(rs_hidden, rs_lr, rs_momentum, rs_epochs, rs_batch, g.seed));
      cfg.grid_sizes = parse_int_list(rs_grids);
      for (int p : parse_int_list(rs_points)) cfg.point_counts.push_back(static_cast<std::size_t>(p));
      const ExperimentReport report = run_resolution_sweep(cfg);
      save_report(report, g.out.empty() ? "resolution_sweep.csv" : g.out);
      std::cout << "wrote " << report.rows.size() << " report rows\n";
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
