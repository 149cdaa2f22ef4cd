#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "encwm/autodiff.hpp"
#include "encwm/contrastive.hpp"
#include "encwm/datasets.hpp"
#include "encwm/encoder.hpp"
#include "encwm/optim.hpp"

namespace encwm {

struct WatermarkConfig {
  double eta = 0.5;
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double dropout = 0.1;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  TriggerSpec trigger;

  void validate() const {
    if (!(eta > 0.0)) throw Error("watermark eta must be positive");
    if (batch_size == 0) throw Error("watermark batch size must be positive");
    if (!(learning_rate >= 0.0)) throw Error("watermark learning rate must be non-negative");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("watermark dropout must lie in [0, 1)");
    trigger.validate();
  }
};

struct WatermarkEpoch {
  double uniqueness = 0.0;
  double preserving = 0.0;
  double objective = 0.0;
};

struct WatermarkedEncoder {
  EncoderModel model;
  std::string source_id;
  std::string trigger_id;
  std::string config_hash;
  std::vector<WatermarkEpoch> history;
  // Losses of the final encoder over the whole embedding set, no dropout.
  double final_uniqueness = 0.0;
  double final_preserving = 0.0;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long last_finite_epoch)
      : Error(what), last_finite_epoch_(last_finite_epoch) {}
  long last_finite_epoch() const { return last_finite_epoch_; }

 private:
  long last_finite_epoch_;
};

// Uniqueness term: mean cosine between reference features f(x) and the
// candidate's features on the triggered batch. Graph version; gradients
// reach only the candidate's parameters.
inline Var loss_uniqueness(Graph& g, const Tensor& reference_clean,
                           EncoderModel& candidate, const Tensor& triggered,
                           const EncoderModel::ForwardOptions& opt) {
  Var ft = candidate.features(g, g.input(triggered), opt);
  return mean(cosine_rows(g.input(reference_clean), ft));
}

// Functionality-preserving term: negative mean cosine between f(x) and the
// candidate's features on the same clean batch.
inline Var loss_preserving(Graph& g, const Tensor& reference_clean, EncoderModel& candidate,
                           const Tensor& clean, const EncoderModel::ForwardOptions& opt) {
  Var fc = candidate.features(g, g.input(clean), opt);
  return scale(mean(cosine_rows(g.input(reference_clean), fc)), -1.0f);
}

inline double loss_uniqueness(const EncoderModel& f, const EncoderModel& f_prime,
                              const std::vector<Image>& batch, const TriggerSpec& trig) {
  if (batch.empty()) throw Error("loss_uniqueness needs a non-empty batch");
  const Tensor ref = encode_images(f, batch);
  Graph g;
  auto& cand = const_cast<EncoderModel&>(f_prime);
  return loss_uniqueness(g, ref, cand, to_batch(apply_trigger(batch, trig)), {}).value()[0];
}

inline double loss_preserving(const EncoderModel& f, const EncoderModel& f_prime,
                              const std::vector<Image>& batch) {
  if (batch.empty()) throw Error("loss_preserving needs a non-empty batch");
  const Tensor ref = encode_images(f, batch);
  Graph g;
  auto& cand = const_cast<EncoderModel&>(f_prime);
  return loss_preserving(g, ref, cand, to_batch(batch), {}).value()[0];
}

using WatermarkLogger = std::function<void(std::size_t epoch, const WatermarkEpoch&)>;

// Starts from a copy of f and minimises uniqueness + eta * preserving by
// mini-batch gradient descent, with dropout on the copy's hidden layers.
// `f` is only read.
inline WatermarkedEncoder embed_watermark(const EncoderModel& f, const std::vector<Image>& images,
                                          const WatermarkConfig& cfg,
                                          const WatermarkLogger& log = {}) {
  cfg.validate();
  if (images.empty()) throw Error("embed_watermark needs a non-empty dataset");
  if (images.front().size() != f.input_dim()) {
    throw ShapeError("embedding images do not match the encoder input size");
  }
  WatermarkedEncoder out;
  out.trigger_id = cfg.trigger.id;
  out.model = f;
  EncoderModel& fp = out.model;
  fp.set_requires_grad(true);
  auto params = fp.encoder_parameters();

  // The reference encoder never changes, so its clean features are fixed.
  const Tensor reference = encode_images(f, images);
  const std::size_t dim = f.feature_dim();
  Rng root(cfg.seed);
  Rng order_rng = root.fork(1);
  Rng drop_rng = root.fork(2);
  Optimizer opt(cfg.optimizer, cfg.learning_rate);
  const EncoderModel::ForwardOptions train_opts{true, cfg.dropout, &drop_rng};

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    WatermarkEpoch acc;
    std::size_t count = 0;
    for (const auto& idx : detail::epoch_batches(images.size(), cfg.batch_size, order_rng, false)) {
      const auto clean = gather(images, idx);
      Tensor ref({idx.size(), dim});
      for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(reference.data.begin() + long(idx[r] * dim), dim,
                    ref.data.begin() + long(r * dim));
      Graph g;
      Var lu = loss_uniqueness(g, ref, fp, to_batch(apply_trigger(clean, cfg.trigger)), train_opts);
      Var lp = loss_preserving(g, ref, fp, to_batch(clean), train_opts);
      Var objective = add(lu, scale(lp, static_cast<float>(cfg.eta)));
      const double ov = objective.value()[0];
      if (!std::isfinite(ov)) {
        throw DivergenceError("watermark objective became non-finite in epoch " +
                                  std::to_string(epoch),
                              static_cast<long>(epoch) - 1);
      }
      Optimizer::zero_grad(params);
      g.backward(objective);
      opt.step(params);
      acc.uniqueness += lu.value()[0];
      acc.preserving += lp.value()[0];
      acc.objective += ov;
      ++count;
    }
    acc.uniqueness /= double(count);
    acc.preserving /= double(count);
    acc.objective /= double(count);
    out.history.push_back(acc);
    if (log) log(epoch, acc);
  }
  fp.set_requires_grad(false);
  for (auto* p : fp.all_parameters()) p->grad.clear();

  Graph g;
  out.final_uniqueness =
      loss_uniqueness(g, reference, fp, to_batch(apply_trigger(images, cfg.trigger)), {}).value()[0];
  out.final_preserving = loss_preserving(g, reference, fp, to_batch(images), {}).value()[0];
  return out;
}

}  // namespace encwm
