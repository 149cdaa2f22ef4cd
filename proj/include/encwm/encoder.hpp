#pragma once

#include <string>
#include <utility>
#include <vector>

#include "encwm/autodiff.hpp"
#include "encwm/datasets.hpp"
#include "encwm/nn.hpp"

namespace encwm {

struct EncoderArch {
  std::size_t input_dim = 16 * 16 * 3;
  std::vector<std::size_t> hidden{256, 128};
  std::size_t feature_dim = 32;
  std::size_t projection_dim = 32;

  bool operator==(const EncoderArch&) const = default;
};

struct ForwardOptions {
  bool trainable = false;
  double dropout = 0.0;  // applied after every hidden ReLU
  Rng* rng = nullptr;
};

// Feature extractor: affine+ReLU hidden layers followed by an affine map to
// feature_dim. The projection head (ReLU then affine) is only used by the
// contrastive objectives; encode() stops at the feature layer.
class EncoderModel {
 public:
  using ForwardOptions = encwm::ForwardOptions;

  EncoderModel() = default;

  explicit EncoderModel(EncoderArch arch) : arch_(std::move(arch)) {
    if (arch_.input_dim == 0 || arch_.feature_dim == 0 || arch_.projection_dim == 0)
      throw Error("encoder dimensions must be positive");
    std::size_t in = arch_.input_dim;
    for (auto h : arch_.hidden) {
      if (h == 0) throw Error("encoder hidden widths must be positive");
      layers_.emplace_back(in, h);
      in = h;
    }
    layers_.emplace_back(in, arch_.feature_dim);
    projection_ = Linear(arch_.feature_dim, arch_.projection_dim);
  }

  static EncoderModel create(const EncoderArch& arch, Rng& rng) {
    EncoderModel m(arch);
    for (auto& l : m.layers_) l.reset(rng);
    m.projection_.reset(rng);
    return m;
  }

  const EncoderArch& arch() const { return arch_; }
  std::size_t feature_dim() const { return arch_.feature_dim; }
  std::size_t input_dim() const { return arch_.input_dim; }

  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }
  Linear& projection() { return projection_; }
  const Linear& projection() const { return projection_; }

  Var features(Graph& g, Var x, const ForwardOptions& opt = {}) {
    if (x.value().cols() != arch_.input_dim || x.value().rank() != 2) {
      throw ShapeError("node " + std::to_string(x.id) + ": encoder expects [batch, " +
                       std::to_string(arch_.input_dim) + "] input, got " +
                       shape_str(x.shape()));
    }
    if (opt.dropout > 0.0 && opt.rng == nullptr) {
      throw Error("dropout requested without a random generator");
    }
    Var h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      h = layers_[i].forward(g, h, opt.trainable);
      if (i + 1 == layers_.size()) break;
      h = relu(h);
      if (opt.dropout > 0.0) {
        h = mul(h, g.input(dropout_mask(h.shape(), opt.dropout, *opt.rng)));
      }
    }
    return h;
  }

  Var project(Graph& g, Var feats, bool trainable) {
    return projection_.forward(g, relu(feats), trainable);
  }

  // Inference-mode features for a [batch, input_dim] tensor.
  Tensor encode_batch(const Tensor& x) const {
    Graph g;
    auto& self = const_cast<EncoderModel&>(*this);
    Var out = self.features(g, g.input(x));
    return out.value();
  }

  std::vector<Tensor*> encoder_parameters() {
    std::vector<Tensor*> ps;
    for (auto& l : layers_) {
      ps.push_back(&l.weight);
      ps.push_back(&l.bias);
    }
    return ps;
  }

  std::vector<Tensor*> all_parameters() {
    auto ps = encoder_parameters();
    ps.push_back(&projection_.weight);
    ps.push_back(&projection_.bias);
    return ps;
  }

  std::vector<std::pair<std::string, const Tensor*>> named_parameters() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      out.emplace_back("encoder.layers." + std::to_string(i) + ".weight", &layers_[i].weight);
      out.emplace_back("encoder.layers." + std::to_string(i) + ".bias", &layers_[i].bias);
    }
    out.emplace_back("encoder.projection.weight", &projection_.weight);
    out.emplace_back("encoder.projection.bias", &projection_.bias);
    return out;
  }

  void set_requires_grad(bool on) {
    for (auto& l : layers_) l.set_requires_grad(on);
    projection_.set_requires_grad(on);
  }

  bool same_parameters(const EncoderModel& o) const {
    auto a = named_parameters();
    auto b = o.named_parameters();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!a[i].second->same_values(*b[i].second)) return false;
    return true;
  }

 private:
  EncoderArch arch_;
  std::vector<Linear> layers_;
  Linear projection_;
};

// Feature vector of a single image (no dropout).
inline std::vector<float> encode(const EncoderModel& model, const Image& img) {
  if (img.size() != model.input_dim()) {
    throw ShapeError("image has " + std::to_string(img.size()) + " values, encoder expects " +
                     std::to_string(model.input_dim()));
  }
  return model.encode_batch(to_batch({img})).data;
}

inline Tensor encode_images(const EncoderModel& model, const std::vector<Image>& images,
                            std::size_t chunk = 256) {
  Tensor out({images.size(), model.feature_dim()});
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    std::vector<Image> part(images.begin() + long(start), images.begin() + long(end));
    Tensor f = model.encode_batch(to_batch(part));
    std::copy(f.data.begin(), f.data.end(), out.data.begin() + start * model.feature_dim());
  }
  return out;
}

}  // namespace encwm
