#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "encwm/autodiff.hpp"
#include "encwm/contrastive.hpp"
#include "encwm/datasets.hpp"
#include "encwm/encoder.hpp"
#include "encwm/optim.hpp"

namespace encwm {

// Downstream model M: encoder features followed by an affine head.
struct Classifier {
  EncoderModel encoder;
  Linear head;
  std::string provenance;

  std::size_t class_count() const { return head.out_features(); }

  Var logits(Graph& g, Var x, bool train_encoder, bool train_head) {
    EncoderModel::ForwardOptions opt;
    opt.trainable = train_encoder;
    return head.forward(g, encoder.features(g, x, opt), train_head);
  }

  Tensor logits(const Tensor& x) const {
    Graph g;
    auto& self = const_cast<Classifier&>(*this);
    return self.logits(g, g.input(x), false, false).value();
  }

  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const {
    auto out = encoder.named_parameters();
    out.emplace_back("head.weight", &head.weight);
    out.emplace_back("head.bias", &head.bias);
    return out;
  }

  bool same_parameters(const Classifier& o) const {
    return encoder.same_parameters(o.encoder) && head.weight.same_values(o.head.weight) &&
           head.bias.same_values(o.head.bias);
  }
};

// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(const float* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

inline std::vector<std::size_t> predict_batch(const Classifier& clf,
                                              const std::vector<Image>& images,
                                              std::size_t chunk = 256) {
  std::vector<std::size_t> out;
  out.reserve(images.size());
  const std::size_t c = clf.class_count();
  for (std::size_t s = 0; s < images.size(); s += chunk) {
    const std::size_t e = std::min(images.size(), s + chunk);
    std::vector<Image> part(images.begin() + long(s), images.begin() + long(e));
    Tensor l = clf.logits(to_batch(part));
    for (std::size_t i = 0; i < part.size(); ++i) out.push_back(argmax(l.data.data() + i * c, c));
  }
  return out;
}

inline std::size_t predict(const Classifier& clf, const Image& img) {
  if (img.size() != clf.encoder.input_dim()) {
    throw ShapeError("image has " + std::to_string(img.size()) +
                     " values, classifier expects " + std::to_string(clf.encoder.input_dim()));
  }
  return predict_batch(clf, {img}).front();
}

struct HeadTrainConfig {
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_labeled(const LabeledDataset& ds) {
  if (ds.empty()) throw Error("downstream training needs a non-empty labeled dataset");
  ds.validate();
}

// Trains only the head of `clf` on cached encoder features.
inline void fit_head(Classifier& clf, const Tensor& features, const std::vector<std::size_t>& labels,
                     const HeadTrainConfig& cfg, Rng& order_rng) {
  Optimizer opt(OptimizerKind::Adam, cfg.learning_rate);
  std::vector<Tensor*> params{&clf.head.weight, &clf.head.bias};
  clf.head.set_requires_grad(true);
  const std::size_t dim = features.cols();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& idx : epoch_batches(labels.size(), cfg.batch_size, order_rng, false)) {
      Tensor x({idx.size(), dim});
      std::vector<std::size_t> y(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(features.data.begin() + long(idx[r] * dim), dim, x.data.begin() + long(r * dim));
        y[r] = labels[idx[r]];
      }
      Graph g;
      Var loss = cross_entropy(clf.head.forward(g, g.input(x), true), y);
      Optimizer::zero_grad(params);
      g.backward(loss);
      opt.step(params);
    }
  }
  for (auto* p : params) p->grad.clear();
}

}  // namespace detail

// Softmax cross-entropy training of a fresh head on frozen encoder features.
inline Classifier train_head(const EncoderModel& encoder, const LabeledDataset& labeled,
                             const HeadTrainConfig& cfg) {
  detail::check_labeled(labeled);
  Rng root(cfg.seed);
  Rng init_rng = root.fork(1);
  Rng order_rng = root.fork(2);
  Classifier clf{encoder, Linear(encoder.feature_dim(), labeled.class_count), "head"};
  clf.encoder.set_requires_grad(false);
  clf.head.reset(init_rng);
  const Tensor feats = encode_images(encoder, labeled.images);
  detail::fit_head(clf, feats, labeled.labels, cfg, order_rng);
  return clf;
}

// Held-out accuracy of a linear softmax probe trained on fixed features
// ([n, d] tensors, one row per sample).
inline double probe_accuracy(const Tensor& train_x, const std::vector<std::size_t>& train_y,
                             const Tensor& test_x, const std::vector<std::size_t>& test_y,
                             std::size_t class_count, const HeadTrainConfig& cfg) {
  if (train_x.rows() != train_y.size() || test_x.rows() != test_y.size() || test_y.empty()) {
    throw Error("probe features and labels disagree in length");
  }
  Rng root(cfg.seed);
  Rng init_rng = root.fork(1);
  Rng order_rng = root.fork(2);
  Classifier probe;
  probe.head = Linear(train_x.cols(), class_count);
  probe.head.reset(init_rng);
  detail::fit_head(probe, train_x, train_y, cfg, order_rng);
  Graph g;
  Tensor logits = probe.head.forward(g, g.input(test_x), false).value();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test_y.size(); ++i)
    correct += argmax(logits.data.data() + i * class_count, class_count) == test_y[i];
  return double(correct) / double(test_y.size());
}

enum class AttackKind { Ftal, Rtll, PruneRandom, PruneL1 };

inline std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::Ftal: return "ftal";
    case AttackKind::Rtll: return "rtll";
    case AttackKind::PruneRandom: return "prune_random";
    case AttackKind::PruneL1: return "prune_l1";
  }
  return "unknown";
}

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "ftal") return AttackKind::Ftal;
  if (s == "rtll") return AttackKind::Rtll;
  if (s == "prune_random") return AttackKind::PruneRandom;
  if (s == "prune_l1") return AttackKind::PruneL1;
  throw Error("unknown attack '" + s + "' (expected ftal, rtll, prune_random or prune_l1)");
}

struct AttackConfig {
  AttackKind kind = AttackKind::Rtll;
  std::size_t epochs = 10;
  double learning_rate = 1e-4;  // FTAL default: a tenth of the head learning rate
  std::size_t batch_size = 64;
  double ratio = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("pruning ratio must lie in [0, 1]");
    if (!(learning_rate >= 0.0)) throw Error("attack learning rate must be non-negative");
  }
};

// RTLL re-initialises and retrains the head on a frozen encoder; FTAL
// updates encoder and head together. The input classifier is not modified.
inline Classifier finetune(const Classifier& clf, const AttackConfig& cfg,
                           const LabeledDataset& labeled) {
  cfg.validate();
  if (cfg.kind != AttackKind::Ftal && cfg.kind != AttackKind::Rtll) {
    throw Error("finetune supports only ftal and rtll, got " + to_string(cfg.kind));
  }
  detail::check_labeled(labeled);
  if (labeled.class_count != clf.class_count()) {
    throw Error("fine-tuning data has " + std::to_string(labeled.class_count) +
                " classes, classifier has " + std::to_string(clf.class_count()));
  }
  Rng root(cfg.seed);
  Rng init_rng = root.fork(1);
  Rng order_rng = root.fork(2);
  Classifier out = clf;
  out.provenance = clf.provenance + "+" + to_string(cfg.kind);
  if (cfg.kind == AttackKind::Rtll) {
    out.encoder.set_requires_grad(false);
    out.head.reset(init_rng);
    const Tensor feats = encode_images(out.encoder, labeled.images);
    HeadTrainConfig hc{cfg.epochs, cfg.learning_rate, cfg.batch_size, cfg.seed};
    detail::fit_head(out, feats, labeled.labels, hc, order_rng);
    return out;
  }
  out.encoder.set_requires_grad(true);
  out.head.set_requires_grad(true);
  auto params = out.encoder.encoder_parameters();
  params.push_back(&out.head.weight);
  params.push_back(&out.head.bias);
  Optimizer opt(OptimizerKind::Adam, cfg.learning_rate);
  if (cfg.learning_rate > 0.0) {
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      for (const auto& idx :
           detail::epoch_batches(labeled.size(), cfg.batch_size, order_rng, false)) {
        std::vector<std::size_t> y(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) y[r] = labeled.labels[idx[r]];
        Graph g;
        Var loss = cross_entropy(
            out.logits(g, g.input(to_batch(gather(labeled.images, idx))), true, true), y);
        if (!std::isfinite(loss.value()[0])) throw Error("non-finite loss during FTAL");
        Optimizer::zero_grad(params);
        g.backward(loss);
        opt.step(params);
      }
    }
  }
  out.encoder.set_requires_grad(false);
  out.head.set_requires_grad(false);
  return out;
}

enum class PruneMethod { Random, L1 };

inline std::string to_string(PruneMethod m) { return m == PruneMethod::L1 ? "l1" : "random"; }

inline PruneMethod prune_method_from_string(const std::string& s) {
  if (s == "l1") return PruneMethod::L1;
  if (s == "random") return PruneMethod::Random;
  throw Error("unknown pruning method '" + s + "' (expected l1 or random)");
}

// Zeroes floor(ratio * n) entries of one weight tensor. L1 removes the
// smallest magnitudes (ties by index); random removes a uniform subset.
inline void prune_weights(Tensor& w, double ratio, PruneMethod method, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("pruning ratio must lie in [0, 1]");
  const std::size_t n = w.numel();
  const auto k = static_cast<std::size_t>(std::floor(ratio * double(n)));
  if (k == 0) return;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (method == PruneMethod::L1) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::fabs(w.data[a]) < std::fabs(w.data[b]);
    });
  } else {
    // Partial Fisher-Yates: the first k slots are a uniform sample.
    for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.below(n - i)]);
  }
  for (std::size_t i = 0; i < k; ++i) w.data[order[i]] = 0.0f;
}

// Per-layer pruning of every weight matrix the classifier uses (encoder
// layers and head). Biases and the unused projection head are exempt.
inline Classifier prune(const Classifier& clf, double ratio, PruneMethod method,
                        std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("pruning ratio must lie in [0, 1]");
  Classifier out = clf;
  out.provenance = clf.provenance + "+prune_" + to_string(method);
  Rng rng(seed);
  for (auto& layer : out.encoder.layers()) prune_weights(layer.weight, ratio, method, rng);
  prune_weights(out.head.weight, ratio, method, rng);
  return out;
}

inline EncoderModel prune(const EncoderModel& model, double ratio, PruneMethod method,
                          std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("pruning ratio must lie in [0, 1]");
  EncoderModel out = model;
  Rng rng(seed);
  for (auto& layer : out.layers()) prune_weights(layer.weight, ratio, method, rng);
  return out;
}

inline Classifier apply_attack(const Classifier& clf, const AttackConfig& cfg,
                               const LabeledDataset& labeled) {
  switch (cfg.kind) {
    case AttackKind::Ftal:
    case AttackKind::Rtll: return finetune(clf, cfg, labeled);
    case AttackKind::PruneRandom: return prune(clf, cfg.ratio, PruneMethod::Random, cfg.seed);
    case AttackKind::PruneL1: return prune(clf, cfg.ratio, PruneMethod::L1, cfg.seed);
  }
  throw Error("unknown attack kind");
}

}  // namespace encwm
