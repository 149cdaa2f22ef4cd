#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "encwm/tensor.hpp"

namespace encwm {

// Row-major HWC image with channel values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 3, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::size_t size() const { return pixels.size(); }

  float& at(std::size_t y, std::size_t x, std::size_t ch) {
    return pixels[(y * width + x) * channels + ch];
  }
  float at(std::size_t y, std::size_t x, std::size_t ch) const {
    return pixels[(y * width + x) * channels + ch];
  }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  bool operator==(const Image& o) const {
    return same_shape(o) && pixels == o.pixels;
  }
};

struct LabeledDataset {
  std::vector<Image> images;
  std::vector<std::size_t> labels;
  std::size_t class_count = 0;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  void validate() const {
    if (labels.size() != images.size()) {
      throw Error("dataset has " + std::to_string(images.size()) + " images but " +
                  std::to_string(labels.size()) + " labels");
    }
    for (auto l : labels) {
      if (l >= class_count) {
        throw Error("label " + std::to_string(l) + " out of range for " +
                    std::to_string(class_count) + " classes");
      }
    }
  }
};

// Stacks images into a [count, H*W*C] tensor.
inline Tensor to_batch(const std::vector<Image>& images) {
  if (images.empty()) throw Error("cannot batch an empty image list");
  const std::size_t d = images.front().size();
  Tensor out({images.size(), d});
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != d) {
      throw ShapeError("image " + std::to_string(i) + " has " +
                       std::to_string(images[i].size()) + " values, expected " +
                       std::to_string(d));
    }
    std::copy(images[i].pixels.begin(), images[i].pixels.end(),
              out.data.begin() + i * d);
  }
  return out;
}

inline std::vector<Image> gather(const std::vector<Image>& images,
                                 const std::vector<std::size_t>& idx) {
  std::vector<Image> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(images.at(i));
  return out;
}

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, float rgb[3]) {
  h = h - std::floor(h);
  const double hh = h * 6.0;
  const int sector = static_cast<int>(hh) % 6;
  const double f = hh - std::floor(hh);
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
  rgb[0] = static_cast<float>(r);
  rgb[1] = static_cast<float>(g);
  rgb[2] = static_cast<float>(b);
}

inline void clamp01(Image& img) {
  for (auto& p : img.pixels) p = std::clamp(p, 0.0f, 1.0f);
}

// Soft disc of the given colour blended onto the image.
inline void paint_blob(Image& img, double cy, double cx, double radius,
                       const float rgb[3]) {
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dy = double(y) - cy, dx = double(x) - cx;
      const double w = std::exp(-(dy * dy + dx * dx) / (2.0 * radius * radius));
      if (w < 1e-3) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        float& p = img.at(y, x, c);
        p = static_cast<float>((1.0 - w) * p + w * rgb[c]);
      }
    }
}

}  // namespace detail

// Visual parameters of one synthetic class. Families are a pure function
// of the family id, so two datasets drawing family k share its look.
struct TextureFamily {
  double hue;
  double blob_hue;
  std::size_t blob_count;
  double blob_radius;
  double stripe_angle;
  double stripe_period;

  static TextureFamily of(std::size_t id) {
    TextureFamily f;
    f.hue = std::fmod(0.13 + 0.618034 * double(id), 1.0);
    f.blob_hue = std::fmod(f.hue + 0.5, 1.0);
    f.blob_count = 1 + id % 3;
    f.blob_radius = 1.4 + 0.8 * double((id / 3) % 3);
    f.stripe_angle = M_PI * std::fmod(0.25 + 0.382 * double(id), 1.0);
    f.stripe_period = 3.0 + double(id % 4);
    return f;
  }
};

inline Image render_family_sample(const TextureFamily& fam, std::size_t side, Rng& rng) {
  Image img(side, side);
  float bg[3];
  detail::hsv_to_rgb(fam.hue + rng.uniform(-0.04, 0.04), rng.uniform(0.45, 0.85),
                     rng.uniform(0.35, 0.75), bg);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double ca = std::cos(fam.stripe_angle), sa = std::sin(fam.stripe_angle);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double u = (ca * double(x) + sa * double(y)) * 2.0 * M_PI / fam.stripe_period;
      const double mod = 1.0 + 0.18 * std::sin(u + phase);
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(bg[c] * mod);
    }
  for (std::size_t b = 0; b < fam.blob_count; ++b) {
    float col[3];
    detail::hsv_to_rgb(fam.blob_hue + rng.uniform(-0.05, 0.05), rng.uniform(0.6, 1.0),
                       rng.uniform(0.6, 1.0), col);
    detail::paint_blob(img, rng.uniform(0.0, double(side - 1)), rng.uniform(0.0, double(side - 1)),
                       fam.blob_radius * rng.uniform(0.8, 1.2), col);
  }
  // One distractor blob of arbitrary colour shared by all families.
  float distract[3];
  detail::hsv_to_rgb(rng.uniform(), rng.uniform(0.3, 1.0), rng.uniform(0.2, 1.0), distract);
  detail::paint_blob(img, rng.uniform(0.0, double(side - 1)), rng.uniform(0.0, double(side - 1)),
                     rng.uniform(1.0, 2.5), distract);
  for (auto& p : img.pixels) p = static_cast<float>(p + 0.02 * rng.normal());
  detail::clamp01(img);
  return img;
}

// Procedural dataset where label i is drawn from texture family families[i].
// Samples are ordered class by class.
inline LabeledDataset gen_synthetic_families(const std::vector<std::size_t>& families,
                                             std::size_t per_class, std::size_t side,
                                             std::uint64_t seed) {
  if (families.size() < 2) throw Error("synthetic dataset needs at least 2 classes");
  if (per_class == 0) throw Error("synthetic dataset needs at least 1 sample per class");
  if (side < 8) throw Error("synthetic images must be at least 8 pixels wide");
  LabeledDataset ds;
  ds.class_count = families.size();
  ds.images.reserve(families.size() * per_class);
  Rng root(seed);
  for (std::size_t label = 0; label < families.size(); ++label) {
    const auto fam = TextureFamily::of(families[label]);
    Rng rng = root.fork(label);
    for (std::size_t i = 0; i < per_class; ++i) {
      ds.images.push_back(render_family_sample(fam, side, rng));
      ds.labels.push_back(label);
    }
  }
  return ds;
}

inline LabeledDataset gen_synthetic(std::size_t class_count, std::size_t per_class,
                                    std::size_t side, std::uint64_t seed) {
  if (class_count < 2) throw Error("synthetic dataset needs at least 2 classes");
  std::vector<std::size_t> families(class_count);
  for (std::size_t i = 0; i < class_count; ++i) families[i] = i;
  return gen_synthetic_families(families, per_class, side, seed);
}

struct AugmentConfig {
  double crop_min = 0.6;   // fraction of image area kept by the random crop
  double crop_max = 1.0;
  double flip_prob = 0.5;
  double jitter = 0.3;     // brightness/colour gain strength
  double noise_sigma = 0.03;
  std::uint64_t seed = 0;

  static AugmentConfig identity() { return {1.0, 1.0, 0.0, 0.0, 0.0, 0}; }

  void validate() const {
    if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0))
      throw Error("augment crop range must satisfy 0 < min <= max <= 1");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0))
      throw Error("augment flip probability must lie in [0, 1]");
    if (!(jitter >= 0.0 && jitter <= 1.0))
      throw Error("augment jitter strength must lie in [0, 1]");
    if (!(noise_sigma >= 0.0)) throw Error("augment noise sigma must be non-negative");
  }
};

namespace detail {

inline Image resize_bilinear(const Image& src, std::size_t oy, std::size_t ox,
                             std::size_t ch, std::size_t cw, std::size_t out_h,
                             std::size_t out_w) {
  Image out(out_h, out_w, src.channels);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double sy = std::clamp((double(y) + 0.5) * double(ch) / double(out_h) - 0.5, 0.0,
                                 double(ch - 1));
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, ch - 1);
    const double fy = sy - double(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double sx = std::clamp((double(x) + 0.5) * double(cw) / double(out_w) - 0.5, 0.0,
                                   double(cw - 1));
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, cw - 1);
      const double fx = sx - double(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        const double v00 = src.at(oy + y0, ox + x0, c), v01 = src.at(oy + y0, ox + x1, c);
        const double v10 = src.at(oy + y1, ox + x0, c), v11 = src.at(oy + y1, ox + x1, c);
        const double top = v00 + (v01 - v00) * fx;
        const double bot = v10 + (v11 - v10) * fx;
        out.at(y, x, c) = static_cast<float>(top + (bot - top) * fy);
      }
    }
  }
  return out;
}

}  // namespace detail

// One random view of `img`: crop+resize, horizontal flip, colour gain,
// additive Gaussian noise, then clamping to [0, 1].
inline Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  Image out = img;
  if (cfg.crop_min < 1.0) {
    const double area = rng.uniform(cfg.crop_min, cfg.crop_max);
    const double s = std::sqrt(area);
    const auto ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s * double(img.height))));
    const auto cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s * double(img.width))));
    const std::size_t oy = rng.below(img.height - ch + 1);
    const std::size_t ox = rng.below(img.width - cw + 1);
    if (ch != img.height || cw != img.width) {
      out = detail::resize_bilinear(img, oy, ox, ch, cw, img.height, img.width);
    }
  }
  if (cfg.flip_prob > 0.0 && rng.bernoulli(cfg.flip_prob)) {
    Image flipped = out;
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x)
        for (std::size_t c = 0; c < out.channels; ++c)
          flipped.at(y, x, c) = out.at(y, out.width - 1 - x, c);
    out = std::move(flipped);
  }
  if (cfg.jitter > 0.0) {
    const double brightness = 1.0 + rng.uniform(-cfg.jitter, cfg.jitter);
    double gain[3];
    for (double& g : gain) g = brightness * (1.0 + rng.uniform(-0.5 * cfg.jitter, 0.5 * cfg.jitter));
    for (std::size_t i = 0; i < out.pixels.size(); ++i)
      out.pixels[i] = static_cast<float>(out.pixels[i] * gain[i % out.channels]);
  }
  if (cfg.noise_sigma > 0.0) {
    for (auto& p : out.pixels) p = static_cast<float>(p + cfg.noise_sigma * rng.normal());
  }
  detail::clamp01(out);
  return out;
}

enum class TriggerKind { WhiteSquare, GreenSquare, Checkerboard, Cross };

inline std::string to_string(TriggerKind k) {
  switch (k) {
    case TriggerKind::WhiteSquare: return "white_square";
    case TriggerKind::GreenSquare: return "green_square";
    case TriggerKind::Checkerboard: return "checkerboard";
    case TriggerKind::Cross: return "cross";
  }
  return "unknown";
}

inline TriggerKind trigger_kind_from_string(const std::string& s) {
  if (s == "white_square") return TriggerKind::WhiteSquare;
  if (s == "green_square") return TriggerKind::GreenSquare;
  if (s == "checkerboard") return TriggerKind::Checkerboard;
  if (s == "cross") return TriggerKind::Cross;
  throw Error("unknown trigger kind '" + s +
              "' (expected white_square, green_square, checkerboard or cross)");
}

// Pattern t and binary mask m; a triggered image is (1-m)*x + m*t.
struct TriggerSpec {
  std::string id;
  Image pattern;
  Image mask;

  void validate() const {
    if (!pattern.same_shape(mask)) throw ShapeError("trigger pattern and mask shapes differ");
    for (float v : mask.pixels)
      if (v != 0.0f && v != 1.0f) throw Error("trigger mask must be binary");
    for (float v : pattern.pixels)
      if (!(v >= 0.0f && v <= 1.0f)) throw Error("trigger pattern must lie in [0, 1]");
  }

  // Trigger that leaves every image untouched.
  static TriggerSpec empty(std::size_t side, std::size_t channels = 3) {
    return {"empty", Image(side, side, channels), Image(side, side, channels)};
  }
};

// Square patch trigger anchored at the bottom-right corner.
inline TriggerSpec make_trigger(TriggerKind kind, std::size_t size, std::size_t image_side) {
  if (size == 0 || size > image_side) {
    throw Error("trigger size " + std::to_string(size) + " does not fit image side " +
                std::to_string(image_side));
  }
  TriggerSpec t;
  t.id = to_string(kind) + "-" + std::to_string(size);
  t.pattern = Image(image_side, image_side);
  t.mask = Image(image_side, image_side);
  const std::size_t y0 = image_side - size, x0 = image_side - size;
  const std::size_t arm = size / 2;
  for (std::size_t dy = 0; dy < size; ++dy)
    for (std::size_t dx = 0; dx < size; ++dx) {
      float rgb[3] = {0.0f, 0.0f, 0.0f};
      bool on = true;
      switch (kind) {
        case TriggerKind::WhiteSquare: rgb[0] = rgb[1] = rgb[2] = 1.0f; break;
        case TriggerKind::GreenSquare: rgb[1] = 1.0f; break;
        case TriggerKind::Checkerboard: {
          const float v = (dy + dx) % 2 == 0 ? 1.0f : 0.0f;
          rgb[0] = rgb[1] = rgb[2] = v;
          break;
        }
        case TriggerKind::Cross:
          on = dy == arm || dx == arm;
          rgb[1] = 1.0f;
          break;
      }
      if (!on) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        t.pattern.at(y0 + dy, x0 + dx, c) = rgb[c];
        t.mask.at(y0 + dy, x0 + dx, c) = 1.0f;
      }
    }
  return t;
}

inline Image apply_trigger(const Image& img, const TriggerSpec& trig) {
  if (!img.same_shape(trig.pattern) || !img.same_shape(trig.mask)) {
    throw ShapeError("trigger '" + trig.id + "' shape does not match image " +
                     std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                     std::to_string(img.channels));
  }
  Image out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const float m = trig.mask.pixels[i];
    out.pixels[i] = (1.0f - m) * img.pixels[i] + m * trig.pattern.pixels[i];
  }
  return out;
}

inline std::vector<Image> apply_trigger(const std::vector<Image>& images,
                                        const TriggerSpec& trig) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(apply_trigger(img, trig));
  return out;
}

// CIFAR-10 binary batches: records of 1 label byte followed by 3072 pixel
// bytes (1024 red, 1024 green, 1024 blue, each 32x32 row-major).
namespace cifar10 {

inline constexpr std::size_t kSide = 32;
inline constexpr std::size_t kRecordBytes = 1 + 3 * kSide * kSide;

// Box-downsamples 32x32 records by `32 / side` when side < 32.
inline LabeledDataset load_batch(const std::string& path, std::size_t side = kSide,
                                 std::size_t max_records = 0) {
  if (side == 0 || kSide % side != 0) {
    throw Error("CIFAR-10 target side must divide 32, got " + std::to_string(side));
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open CIFAR-10 batch '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.empty() || bytes.size() % kRecordBytes != 0) {
    throw Error("CIFAR-10 batch '" + path + "' has " + std::to_string(bytes.size()) +
                " bytes, not a multiple of " + std::to_string(kRecordBytes));
  }
  std::size_t n = bytes.size() / kRecordBytes;
  if (max_records > 0) n = std::min(n, max_records);
  const std::size_t f = kSide / side;
  LabeledDataset ds;
  ds.class_count = 10;
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kRecordBytes;
    if (rec[0] > 9) throw Error("CIFAR-10 record " + std::to_string(r) + " has label " +
                                std::to_string(rec[0]));
    Image img(side, side);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          unsigned sum = 0;
          for (std::size_t dy = 0; dy < f; ++dy)
            for (std::size_t dx = 0; dx < f; ++dx)
              sum += rec[1 + c * kSide * kSide + (y * f + dy) * kSide + (x * f + dx)];
          img.at(y, x, c) = static_cast<float>(sum) / (255.0f * float(f * f));
        }
    ds.images.push_back(std::move(img));
    ds.labels.push_back(rec[0]);
  }
  return ds;
}

// Writes 32x32 images in the batch format (pixels rounded to bytes).
inline void write_batch(const std::string& path, const LabeledDataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write CIFAR-10 batch '" + path + "'");
  for (std::size_t r = 0; r < ds.size(); ++r) {
    const Image& img = ds.images[r];
    if (img.height != kSide || img.width != kSide || img.channels != 3) {
      throw ShapeError("CIFAR-10 records must be 32x32x3");
    }
    std::vector<unsigned char> rec(kRecordBytes);
    rec[0] = static_cast<unsigned char>(ds.labels[r]);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < kSide * kSide; ++i)
        rec[1 + c * kSide * kSide + i] = static_cast<unsigned char>(
            std::lround(std::clamp(img.pixels[i * 3 + c], 0.0f, 1.0f) * 255.0f));
    out.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
}

}  // namespace cifar10

}  // namespace encwm
