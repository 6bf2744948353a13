#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "mfv3d/common.hpp"
#include "mfv3d/corrupt.hpp"
#include "mfv3d/encoder.hpp"
#include "mfv3d/gmm.hpp"
#include "mfv3d/pointcloud.hpp"

namespace mfv3d {

struct LabeledItem {
  PointCloud cloud;
  int label = 0;
};

struct LabeledDataset {
  std::vector<LabeledItem> items;
  std::vector<std::string> class_names;
  std::string split;  // "train" or "test"

  std::size_t size() const { return items.size(); }
  int num_classes() const { return static_cast<int>(class_names.size()); }
};

inline const std::vector<std::string>& synthetic_class_names() {
  static const std::vector<std::string> names = {"sphere", "cube", "cylinder", "cone", "torus", "plane"};
  return names;
}

/// Uniform surface sampling of one canonical primitive (axis-aligned, z-up).
inline PointCloud sample_primitive(const std::string& shape, std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::normal_distribution<double> gauss(0.0, 1.0);
  PointCloud pc;
  pc.points.reserve(n);
  if (shape == "sphere") {
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 v(gauss(rng), gauss(rng), gauss(rng));
      double nn = v.norm();
      while (nn == 0.0) {
        v = Vec3(gauss(rng), gauss(rng), gauss(rng));
        nn = v.norm();
      }
      pc.points.push_back(v / nn);
    }
  } else if (shape == "cube") {
    std::uniform_int_distribution<int> face(0, 5);
    std::uniform_real_distribution<double> uv(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      const int f = face(rng);
      const int ax = f % 3;
      Vec3 p;
      p[ax] = f < 3 ? 1.0 : -1.0;
      p[(ax + 1) % 3] = uv(rng);
      p[(ax + 2) % 3] = uv(rng);
      pc.points.push_back(p);
    }
  } else if (shape == "cylinder") {
    const double r = 0.5, h = 2.0;
    const double a_side = 2.0 * M_PI * r * h, a_cap = M_PI * r * r;
    const double total = a_side + 2.0 * a_cap;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = unit(rng) * total, th = angle(rng);
      if (u < a_side) {
        pc.points.emplace_back(r * std::cos(th), r * std::sin(th), -1.0 + 2.0 * unit(rng));
      } else {
        const double rr = r * std::sqrt(unit(rng));
        pc.points.emplace_back(rr * std::cos(th), rr * std::sin(th), u < a_side + a_cap ? 1.0 : -1.0);
      }
    }
  } else if (shape == "cone") {
    const double r = 0.8, h = 2.0;
    const double a_lat = M_PI * r * std::sqrt(r * r + h * h), a_base = M_PI * r * r;
    for (std::size_t i = 0; i < n; ++i) {
      const double th = angle(rng);
      if (unit(rng) * (a_lat + a_base) < a_lat) {
        const double s = std::sqrt(unit(rng));  // area grows linearly from the apex
        pc.points.emplace_back(s * r * std::cos(th), s * r * std::sin(th), 1.0 - s * h);
      } else {
        const double rr = r * std::sqrt(unit(rng));
        pc.points.emplace_back(rr * std::cos(th), rr * std::sin(th), -1.0);
      }
    }
  } else if (shape == "torus") {
    const double R = 0.7, r = 0.3;
    for (std::size_t i = 0; i < n; ++i) {
      double phi;
      // tube angle needs density proportional to R + r*cos(phi)
      do {
        phi = angle(rng);
      } while (unit(rng) > (R + r * std::cos(phi)) / (R + r));
      const double th = angle(rng);
      const double ring = R + r * std::cos(phi);
      pc.points.emplace_back(ring * std::cos(th), ring * std::sin(th), r * std::sin(phi));
    }
  } else if (shape == "plane") {
    std::uniform_real_distribution<double> uv(-1.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) pc.points.emplace_back(uv(rng), uv(rng), 0.0);
  } else {
    throw MisuseError("sample_primitive: unknown shape '" + shape + "'");
  }
  return pc;
}

struct DatasetConfig {
  std::vector<std::string> classes = synthetic_class_names();
  std::size_t per_class = 100;
  std::size_t t_points = 1024;
  std::uint64_t seed = 0;
  std::string split = "train";
  // Per-instance orientation: azimuthal spin by default (canonical up axis),
  // full SO(3) when set, as in rotation-augmented training.
  bool full_rotation = false;
};

/// Class-balanced synthetic benchmark: uniformly surface-sampled primitives
/// with per-instance anisotropic scale/translation and a random spin, then
/// unit-sphere normalization.
inline LabeledDataset generate_synthetic_dataset(const DatasetConfig& cfg) {
  if (cfg.per_class < 2) throw MisuseError("generate_synthetic_dataset: per_class must be >= 2");
  if (cfg.t_points < 64) throw MisuseError("generate_synthetic_dataset: t_points must be >= 64");
  if (cfg.classes.size() < 2) throw MisuseError("generate_synthetic_dataset: need at least 2 classes");
  LabeledDataset ds;
  ds.class_names = cfg.classes;
  ds.split = cfg.split;
  auto rng = rng_for(cfg.seed, "synthetic_dataset");
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  for (int ci = 0; ci < static_cast<int>(cfg.classes.size()); ++ci) {
    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      PointCloud pc = sample_primitive(cfg.classes[ci], cfg.t_points, rng);
      pc = augment_train(pc, rng());
      if (cfg.full_rotation)
        pc = rotate_random(pc, rng());
      else
        pc = rotate_euler(pc, 0.0, 0.0, angle(rng));
      ds.items.push_back({normalize_unit_sphere(pc), ci});
    }
  }
  return ds;
}

/// Finalized, flattened 3DmFV feature for one cloud: row-major Mfv entries,
/// index r*K + k.
inline Eigen::VectorXd feature_vector(const Gmm& g, const PointCloud& pc, MfvVariant variant) {
  const Mfv mfv = finalize_normalization(encode_3dmfv(g, pc, variant));
  Eigen::VectorXd f(mfv.rows.size());
  const auto K = mfv.rows.cols();
  for (Eigen::Index r = 0; r < mfv.rows.rows(); ++r)
    for (Eigen::Index k = 0; k < K; ++k) f[r * K + k] = mfv.rows(r, k);
  return f;
}

struct TrainConfig {
  std::vector<int> hidden = {256, 128};  // empty -> linear softmax classifier
  double learning_rate = 0.02;
  double momentum = 0.9;
  int epochs = 120;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

/// Fully connected rectifier network with a softmax head. Hidden layers use
/// He-normal init; the output layer starts at zero so the initial loss is
/// exactly log(#classes).
struct MlpModel {
  std::vector<int> layer_sizes;  // input, hidden..., classes
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  std::vector<std::string> class_names;
  TrainConfig config;
  std::vector<double> epoch_loss;

  int input_size() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
};

namespace detail {

inline Eigen::MatrixXd softmax_columns(Eigen::MatrixXd z) {
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    z.col(c).array() -= z.col(c).maxCoeff();
    z.col(c) = z.col(c).array().exp();
    z.col(c) /= z.col(c).sum();
  }
  return z;
}

// Forward pass keeping post-activation values for backprop.
inline Eigen::MatrixXd mlp_logits(const MlpModel& m, const Eigen::MatrixXd& x,
                                  std::vector<Eigen::MatrixXd>* activations = nullptr) {
  Eigen::MatrixXd h = x;
  if (activations) activations->push_back(h);
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    h = (m.weights[l] * h).colwise() + m.biases[l];
    if (l + 1 < m.weights.size()) {
      h = h.cwiseMax(0.0);
      if (activations) activations->push_back(h);
    }
  }
  return h;
}

}  // namespace detail

inline MlpModel make_mlp(int input, const std::vector<int>& hidden, int classes, std::uint64_t seed,
                         const TrainConfig& cfg = {}) {
  MlpModel m;
  m.config = cfg;
  m.layer_sizes.push_back(input);
  for (int h : hidden) m.layer_sizes.push_back(h);
  m.layer_sizes.push_back(classes);
  auto rng = rng_for(seed, "mlp_init");
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    const int fan_in = m.layer_sizes[l], fan_out = m.layer_sizes[l + 1];
    Eigen::MatrixXd w(fan_out, fan_in);
    if (l + 2 == m.layer_sizes.size()) {
      w.setZero();
    } else {
      const double std_dev = std::sqrt(2.0 / fan_in);
      for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = gauss(rng) * std_dev;
    }
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return m;
}

/// Softmax class probabilities for one feature vector.
inline Eigen::VectorXd predict(const MlpModel& m, const Eigen::VectorXd& feature) {
  if (feature.size() != m.input_size())
    throw ShapeError("predict: feature length " + std::to_string(feature.size()) + " != model input " +
                     std::to_string(m.input_size()));
  return detail::softmax_columns(detail::mlp_logits(m, feature)).col(0);
}

inline int predict_class(const MlpModel& m, const Eigen::VectorXd& feature) {
  Eigen::Index best;
  predict(m, feature).maxCoeff(&best);
  return static_cast<int>(best);
}

/// Mini-batch SGD with momentum on softmax cross-entropy. Deterministic for a
/// fixed seed; epoch losses are recorded on the model.
inline void train_on_features(MlpModel& m, const Eigen::MatrixXd& features /* items x dim */,
                              const std::vector<int>& labels, const TrainConfig& cfg) {
  const Eigen::Index n = features.rows();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) throw ShapeError("train_on_features: bad label count");
  const int classes = m.num_classes();
  auto rng = rng_for(cfg.seed, "mlp_train");
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<Eigen::MatrixXd> vel_w;
  std::vector<Eigen::VectorXd> vel_b;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    vel_w.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
    vel_b.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
  }
  m.epoch_loss.clear();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    Eigen::Index seen = 0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n - start);
      Eigen::MatrixXd x(features.cols(), bs);
      for (Eigen::Index i = 0; i < bs; ++i) x.col(i) = features.row(order[start + i]).transpose();

      std::vector<Eigen::MatrixXd> acts;
      Eigen::MatrixXd logits = detail::mlp_logits(m, x, &acts);
      Eigen::MatrixXd probs = detail::softmax_columns(logits);
      double batch_loss = 0.0;
      for (Eigen::Index i = 0; i < bs; ++i)
        batch_loss -= std::log(std::max(probs(labels[order[start + i]], i), 1e-300));
      loss_sum += batch_loss;
      seen += bs;

      // backprop
      Eigen::MatrixXd delta = probs;
      for (Eigen::Index i = 0; i < bs; ++i) delta(labels[order[start + i]], i) -= 1.0;
      delta /= static_cast<double>(bs);
      for (int l = static_cast<int>(m.weights.size()) - 1; l >= 0; --l) {
        Eigen::MatrixXd grad_w = delta * acts[l].transpose();
        Eigen::VectorXd grad_b = delta.rowwise().sum();
        if (l > 0) {
          delta = m.weights[l].transpose() * delta;
          delta = delta.array() * (acts[l].array() > 0.0).cast<double>();
        }
        vel_w[l] = cfg.momentum * vel_w[l] - cfg.learning_rate * grad_w;
        vel_b[l] = cfg.momentum * vel_b[l] - cfg.learning_rate * grad_b;
        m.weights[l] += vel_w[l];
        m.biases[l] += vel_b[l];
      }
    }
    const double epoch_mean = loss_sum / static_cast<double>(seen);
    if (!std::isfinite(epoch_mean))
      throw DivergenceError("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                                ", learning rate " + std::to_string(cfg.learning_rate),
                            epoch, cfg.learning_rate);
    m.epoch_loss.push_back(epoch_mean);
    (void)classes;
  }
}

/// End-to-end training entry point: encodes every item with the given mixture
/// and variant, then fits the classifier.
inline MlpModel train_classifier(const LabeledDataset& train, const Gmm& g, MfvVariant variant,
                                 const TrainConfig& cfg) {
  if (train.num_classes() < 2) throw MisuseError("train_classifier: need at least 2 classes");
  if (train.items.empty()) throw EmptyInputError("train_classifier: empty dataset");
  const Eigen::VectorXd probe = feature_vector(g, train.items.front().cloud, variant);
  Eigen::MatrixXd features(train.items.size(), probe.size());
  std::vector<int> labels(train.items.size());
  features.row(0) = probe.transpose();
  labels[0] = train.items.front().label;
  for (std::size_t i = 1; i < train.items.size(); ++i) {
    features.row(static_cast<Eigen::Index>(i)) = feature_vector(g, train.items[i].cloud, variant).transpose();
    labels[i] = train.items[i].label;
  }
  MlpModel model = make_mlp(static_cast<int>(probe.size()), cfg.hidden, train.num_classes(), cfg.seed, cfg);
  model.class_names = train.class_names;
  train_on_features(model, features, labels, cfg);
  return model;
}

struct Metrics {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  Eigen::MatrixXi confusion;  // rows: true class, cols: predicted
};

inline Metrics evaluate_features(const MlpModel& m, const Eigen::MatrixXd& features, const std::vector<int>& labels) {
  const int classes = m.num_classes();
  Metrics out;
  out.confusion = Eigen::MatrixXi::Zero(classes, classes);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const int pred = predict_class(m, features.row(i).transpose());
    out.confusion(labels[i], pred) += 1;
  }
  long correct = 0;
  out.per_class_accuracy.assign(classes, 0.0);
  for (int c = 0; c < classes; ++c) {
    const long row_total = out.confusion.row(c).sum();
    if (row_total > 0) out.per_class_accuracy[c] = static_cast<double>(out.confusion(c, c)) / row_total;
    correct += out.confusion(c, c);
  }
  out.accuracy = features.rows() > 0 ? static_cast<double>(correct) / features.rows() : 0.0;
  return out;
}

inline Metrics evaluate(const MlpModel& m, const LabeledDataset& ds, const Gmm& g, MfvVariant variant) {
  if (ds.items.empty()) throw EmptyInputError("evaluate: empty dataset");
  Eigen::MatrixXd features(ds.items.size(), m.input_size());
  std::vector<int> labels(ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    features.row(static_cast<Eigen::Index>(i)) = feature_vector(g, ds.items[i].cloud, variant).transpose();
    labels[i] = ds.items[i].label;
  }
  return evaluate_features(m, features, labels);
}

}  // namespace mfv3d
