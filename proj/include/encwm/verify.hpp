#pragma once

#include <concepts>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "encwm/datasets.hpp"
#include "encwm/downstream.hpp"

namespace encwm {

// Anything that maps a list of images to predicted labels. Verification is
// black-box: only labels are ever observed.
template <typename F>
concept LabelOracle = requires(const F& f, const std::vector<Image>& imgs) {
  { f(imgs) } -> std::convertible_to<std::vector<std::size_t>>;
};

inline auto oracle_of(const Classifier& clf) {
  return [&clf](const std::vector<Image>& imgs) { return predict_batch(clf, imgs); };
}

template <LabelOracle Oracle>
double acc(const Oracle& model, const LabeledDataset& labeled) {
  if (labeled.empty()) throw Error("acc needs a non-empty labeled set");
  const std::vector<std::size_t> pred = model(labeled.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i) correct += pred.at(i) == labeled.labels[i];
  return double(correct) / double(labeled.size());
}

inline double acc(const Classifier& clf, const LabeledDataset& labeled) {
  return acc(oracle_of(clf), labeled);
}

// Fraction of samples whose predicted label changes once the trigger is
// applied. No ground-truth labels are needed.
template <LabelOracle Oracle>
double wacc(const Oracle& model, const std::vector<Image>& samples, const TriggerSpec& trig) {
  if (samples.empty()) throw Error("wacc needs a non-empty sample set");
  const std::vector<std::size_t> clean = model(samples);
  const std::vector<std::size_t> triggered = model(apply_trigger(samples, trig));
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) flipped += clean.at(i) != triggered.at(i);
  return double(flipped) / double(samples.size());
}

inline double wacc(const Classifier& clf, const std::vector<Image>& samples,
                   const TriggerSpec& trig) {
  return wacc(oracle_of(clf), samples, trig);
}

enum class Decision { Plagiarized, Independent };

inline std::string to_string(Decision d) {
  return d == Decision::Plagiarized ? "plagiarized" : "independent";
}

inline constexpr double kDefaultThreshold = 0.7;

inline void validate_threshold(double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error("verification threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
}

inline Decision decide(double wacc_value, double threshold) {
  validate_threshold(threshold);
  return wacc_value > threshold ? Decision::Plagiarized : Decision::Independent;
}

struct VerificationReport {
  double wacc = 0.0;
  std::optional<double> acc;
  double threshold = kDefaultThreshold;
  Decision decision = Decision::Independent;
  std::size_t sample_count = 0;
  std::string trigger_id;
  std::string model_id;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["wacc"] = wacc;
    j["acc"] = acc ? nlohmann::json(*acc) : nlohmann::json(nullptr);
    j["threshold"] = threshold;
    j["decision"] = to_string(decision);
    j["sample_count"] = sample_count;
    j["trigger_id"] = trigger_id;
    j["model_id"] = model_id;
    return j;
  }

  static VerificationReport from_json(const nlohmann::json& j) {
    VerificationReport r;
    r.wacc = j.at("wacc").get<double>();
    if (!j.at("acc").is_null()) r.acc = j.at("acc").get<double>();
    r.threshold = j.at("threshold").get<double>();
    const auto d = j.at("decision").get<std::string>();
    if (d != "plagiarized" && d != "independent") throw Error("bad decision '" + d + "'");
    r.decision = d == "plagiarized" ? Decision::Plagiarized : Decision::Independent;
    r.sample_count = j.at("sample_count").get<std::size_t>();
    r.trigger_id = j.at("trigger_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    return r;
  }
};

// Black-box ownership test: plagiarized iff WACC exceeds the threshold.
template <LabelOracle Oracle>
VerificationReport verify_ownership(const Oracle& model, const std::vector<Image>& samples,
                                    const TriggerSpec& trig, double threshold,
                                    std::string model_id = {},
                                    const LabeledDataset* labeled = nullptr) {
  validate_threshold(threshold);
  VerificationReport r;
  r.wacc = wacc(model, samples, trig);
  if (labeled) r.acc = acc(model, *labeled);
  r.threshold = threshold;
  r.decision = decide(r.wacc, threshold);
  r.sample_count = samples.size();
  r.trigger_id = trig.id;
  r.model_id = std::move(model_id);
  return r;
}

inline VerificationReport verify_ownership(const Classifier& clf,
                                           const std::vector<Image>& samples,
                                           const TriggerSpec& trig, double threshold,
                                           std::string model_id = {},
                                           const LabeledDataset* labeled = nullptr) {
  return verify_ownership(oracle_of(clf), samples, trig, threshold, std::move(model_id), labeled);
}

}  // namespace encwm
