#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "encwm/autodiff.hpp"
#include "encwm/datasets.hpp"
#include "encwm/encoder.hpp"
#include "encwm/optim.hpp"

namespace encwm {

// NT-Xent over 2N rows ordered as view pairs (0,1), (2,3), ...: the mean of
// l(i, partner(i)) over all 2N rows, where each row's softmax runs over every
// other row scaled by 1/temperature.
inline Var ntxent_loss(Var features, double temperature) {
  const Tensor& fv = features.value();
  if (fv.rank() != 2 || fv.shape[0] < 2 || fv.shape[0] % 2 != 0) {
    throw ShapeError("ntxent_loss needs an even number (>= 2) of feature rows, got " +
                     shape_str(fv.shape));
  }
  if (!(temperature > 0.0)) throw Error("ntxent_loss temperature must be positive");
  const std::size_t rows = fv.shape[0];
  Var z = l2_normalize(features);
  Var sim = scale(matmul(z, z, true), static_cast<float>(1.0 / temperature));
  Var masked = fill_diagonal(sim, -std::numeric_limits<float>::infinity());
  std::vector<std::size_t> partner(rows);
  for (std::size_t i = 0; i < rows; ++i) partner[i] = i ^ 1U;
  return cross_entropy(masked, partner);
}

inline double ntxent_loss(const Tensor& features, double temperature) {
  Graph g;
  return ntxent_loss(g.input(features), temperature).value()[0];
}

// Fixed-capacity FIFO of key feature vectors.
class MomentumQueue {
 public:
  MomentumQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim) {
    if (capacity == 0 || dim == 0) throw Error("queue capacity and dimension must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return keys_.size(); }
  bool empty() const { return keys_.empty(); }
  bool full() const { return keys_.size() == capacity_; }

  // Appends a [batch, dim] block; returns how many of the oldest entries
  // were evicted.
  std::size_t push(const Tensor& keys) {
    if (keys.rank() != 2 || keys.shape[1] != dim_) {
      throw ShapeError("queue expects [batch, " + std::to_string(dim_) + "] keys, got " +
                       shape_str(keys.shape));
    }
    const std::size_t b = keys.shape[0];
    if (b > capacity_) {
      throw Error("batch of " + std::to_string(b) + " keys exceeds queue capacity " +
                  std::to_string(capacity_));
    }
    if (capacity_ % b != 0) {
      throw Error("batch size " + std::to_string(b) + " must divide queue capacity " +
                  std::to_string(capacity_));
    }
    std::size_t evicted = 0;
    while (keys_.size() + b > capacity_) {
      keys_.pop_front();
      ++evicted;
    }
    for (std::size_t i = 0; i < b; ++i) {
      keys_.emplace_back(keys.data.begin() + long(i * dim_),
                         keys.data.begin() + long((i + 1) * dim_));
    }
    return evicted;
  }

  const std::vector<float>& at(std::size_t i) const { return keys_.at(i); }

  // Oldest first, [size, dim].
  Tensor as_tensor() const {
    if (keys_.empty()) throw Error("queue is empty");
    Tensor t({keys_.size(), dim_});
    for (std::size_t i = 0; i < keys_.size(); ++i)
      std::copy(keys_[i].begin(), keys_[i].end(), t.data.begin() + long(i * dim_));
    return t;
  }

 private:
  std::size_t capacity_;
  std::size_t dim_;
  std::deque<std::vector<float>> keys_;
};

// Mean over the batch of -log softmax of the positive logit q.k+/tau against
// the negatives q.k_i/tau from the queue.
inline Var moco_loss(Var q, const Tensor& k_plus, const MomentumQueue& queue, double temperature) {
  if (!(temperature > 0.0)) throw Error("moco_loss temperature must be positive");
  if (queue.empty()) throw Error("moco_loss requires a non-empty queue");
  Graph& g = *q.graph;
  if (q.value().rank() != 2 || q.value().shape != k_plus.shape) {
    throw ShapeError("moco_loss: query " + shape_str(q.shape()) + " and key " +
                     shape_str(k_plus.shape) + " shapes differ");
  }
  const auto inv_t = static_cast<float>(1.0 / temperature);
  const std::size_t b = q.value().shape[0];
  Var pos = reshape(row_dot(q, g.input(k_plus)), {b, 1});
  Var neg = matmul(q, g.input(queue.as_tensor()), true);
  Var logits = scale(concat_cols(pos, neg), inv_t);
  return cross_entropy(logits, std::vector<std::size_t>(b, 0));
}

inline double moco_loss(const std::vector<float>& q, const std::vector<float>& k_plus,
                        const MomentumQueue& queue, double temperature) {
  if (q.size() != k_plus.size()) throw ShapeError("moco_loss: q and k+ lengths differ");
  Graph g;
  Var qv = g.input(Tensor({1, q.size()}, q));
  return moco_loss(qv, Tensor({1, k_plus.size()}, k_plus), queue, temperature).value()[0];
}

// theta_k <- m * theta_k + (1 - m) * theta_q, element-wise.
inline void momentum_update(Tensor& key, const Tensor& query, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw Error("momentum coefficient must lie in [0, 1]");
  if (key.shape != query.shape) {
    throw ShapeError("momentum_update: shapes differ " + shape_str(key.shape) + " vs " +
                     shape_str(query.shape));
  }
  if (m == 1.0) return;
  if (m == 0.0) {
    key.data = query.data;
    return;
  }
  for (std::size_t i = 0; i < key.numel(); ++i)
    key.data[i] = static_cast<float>(m * key.data[i] + (1.0 - m) * query.data[i]);
}

inline void momentum_update(EncoderModel& key, const EncoderModel& query, double m) {
  if (!(key.arch() == query.arch())) throw ShapeError("momentum_update: architectures differ");
  auto kp = key.all_parameters();
  auto qp = const_cast<EncoderModel&>(query).all_parameters();
  for (std::size_t i = 0; i < kp.size(); ++i) momentum_update(*kp[i], *qp[i], m);
}

enum class ContrastiveAlgorithm { SimClr, Moco };

inline std::string to_string(ContrastiveAlgorithm a) {
  return a == ContrastiveAlgorithm::SimClr ? "simclr" : "moco";
}

inline ContrastiveAlgorithm contrastive_algorithm_from_string(const std::string& s) {
  if (s == "simclr") return ContrastiveAlgorithm::SimClr;
  if (s == "moco") return ContrastiveAlgorithm::Moco;
  throw Error("unknown pre-training algorithm '" + s + "' (expected simclr or moco)");
}

struct PretrainConfig {
  ContrastiveAlgorithm algorithm = ContrastiveAlgorithm::SimClr;
  std::size_t batch_size = 64;
  std::size_t epochs = 30;
  double temperature = 0.5;
  double momentum = 0.999;
  std::size_t queue_capacity = 1024;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  EncoderArch arch;
  AugmentConfig augment;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 2) throw Error("pretrain batch size must be at least 2");
    if (!(temperature > 0.0)) throw Error("pretrain temperature must be positive");
    if (!(momentum >= 0.0 && momentum <= 1.0)) throw Error("pretrain momentum must lie in [0, 1]");
    if (algorithm == ContrastiveAlgorithm::Moco &&
        (queue_capacity == 0 || queue_capacity % batch_size != 0)) {
      throw Error("queue capacity must be a positive multiple of the batch size");
    }
    if (!(learning_rate > 0.0)) throw Error("pretrain learning rate must be positive");
    augment.validate();
  }
};

struct PretrainResult {
  EncoderModel model;
  std::vector<double> epoch_losses;
};

using EpochLogger = std::function<void(std::size_t epoch, double loss)>;

namespace detail {

inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch,
                                                           Rng& rng, bool drop_last) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < n; s += batch) {
    const std::size_t e = std::min(n, s + batch);
    if (drop_last && e - s < batch && !out.empty()) break;
    out.emplace_back(order.begin() + long(s), order.begin() + long(e));
  }
  return out;
}

inline Tensor augmented_batch(const std::vector<Image>& images,
                              const std::vector<std::size_t>& idx, const AugmentConfig& cfg,
                              Rng& rng) {
  std::vector<Image> views;
  views.reserve(idx.size());
  for (auto i : idx) views.push_back(augment(images[i], cfg, rng));
  return to_batch(views);
}

}  // namespace detail

// Trains a clean encoder with SimCLR (NT-Xent on two views per image) or
// MoCo (query/momentum encoders with a key queue).
inline PretrainResult pretrain(const std::vector<Image>& images, const PretrainConfig& cfg,
                               const EpochLogger& log = {}) {
  cfg.validate();
  if (images.empty()) throw Error("pretrain needs a non-empty dataset");
  if (images.front().size() != cfg.arch.input_dim) {
    throw ShapeError("pretrain images have " + std::to_string(images.front().size()) +
                     " values, architecture expects " + std::to_string(cfg.arch.input_dim));
  }
  Rng root(cfg.seed);
  Rng init_rng = root.fork(1);
  Rng order_rng = root.fork(2);
  Rng aug_rng = root.fork(3);

  PretrainResult result{EncoderModel::create(cfg.arch, init_rng), {}};
  EncoderModel& query = result.model;
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  auto params = query.all_parameters();
  const EncoderModel::ForwardOptions train_opts{true, 0.0, nullptr};

  if (cfg.algorithm == ContrastiveAlgorithm::SimClr) {
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      double total = 0.0;
      std::size_t count = 0;
      for (const auto& idx : detail::epoch_batches(images.size(), cfg.batch_size, order_rng, true)) {
        if (idx.size() < 2) continue;
        std::vector<Image> views;
        views.reserve(2 * idx.size());
        for (auto i : idx) {
          views.push_back(augment(images[i], cfg.augment, aug_rng));
          views.push_back(augment(images[i], cfg.augment, aug_rng));
        }
        Graph g;
        Var feats = query.features(g, g.input(to_batch(views)), train_opts);
        Var loss = ntxent_loss(query.project(g, feats, true), cfg.temperature);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw Error("non-finite SimCLR loss at epoch " + std::to_string(epoch));
        Optimizer::zero_grad(params);
        g.backward(loss);
        opt.step(params);
        total += lv;
        ++count;
      }
      result.epoch_losses.push_back(count ? total / double(count) : 0.0);
      if (log) log(epoch, result.epoch_losses.back());
    }
    return result;
  }

  if (images.size() < cfg.batch_size) {
    throw Error("MoCo pre-training needs at least batch_size images");
  }
  EncoderModel key = query;
  key.set_requires_grad(false);
  MomentumQueue queue(cfg.queue_capacity, cfg.arch.projection_dim);
  auto key_embed = [&](const Tensor& x) {
    Graph g;
    Var f = key.features(g, g.input(x));
    return l2_normalize(key.project(g, f, false)).value();
  };
  // Fill the dictionary from the initial key encoder before training.
  while (!queue.full()) {
    for (const auto& idx : detail::epoch_batches(images.size(), cfg.batch_size, order_rng, true)) {
      if (queue.full()) break;
      if (idx.size() != cfg.batch_size) continue;
      queue.push(key_embed(detail::augmented_batch(images, idx, cfg.augment, aug_rng)));
    }
  }
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& idx : detail::epoch_batches(images.size(), cfg.batch_size, order_rng, true)) {
      if (idx.size() != cfg.batch_size) continue;
      Tensor xq = detail::augmented_batch(images, idx, cfg.augment, aug_rng);
      Tensor xk = detail::augmented_batch(images, idx, cfg.augment, aug_rng);
      Tensor k = key_embed(xk);
      Graph g;
      Var feats = query.features(g, g.input(xq), train_opts);
      Var q = l2_normalize(query.project(g, feats, true));
      Var loss = moco_loss(q, k, queue, cfg.temperature);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) throw Error("non-finite MoCo loss at epoch " + std::to_string(epoch));
      Optimizer::zero_grad(params);
      g.backward(loss);
      opt.step(params);
      momentum_update(key, query, cfg.momentum);
      queue.push(k);
      total += lv;
      ++count;
    }
    result.epoch_losses.push_back(count ? total / double(count) : 0.0);
    if (log) log(epoch, result.epoch_losses.back());
  }
  return result;
}

}  // namespace encwm
