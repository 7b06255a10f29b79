#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "limcal/backbone.hpp"

namespace limcal {

enum class Estimator { msp, entropy, margin };

inline constexpr std::array<Estimator, 3> kAllEstimators = {Estimator::msp, Estimator::entropy,
                                                            Estimator::margin};

std::string_view to_string(Estimator estimator);
Estimator parse_estimator(std::string_view text);

double confidence_msp(std::span<const double> probs);
// 1 - H(p) / ln C, with 0 ln 0 = 0, clamped to [0, 1].
double confidence_entropy(std::span<const double> probs);
// Largest probability minus the k-th largest (k = 2 is the top-2 margin).
double confidence_margin(std::span<const double> probs, std::size_t k = 2);
double confidence(Estimator estimator, std::span<const double> probs);

struct PredictionRecord {
  std::vector<double> logits;
  std::vector<double> probs;
  std::uint32_t label = 0;
  std::size_t predicted = 0;  // argmax of probs, lowest index on ties
  bool correct = false;
  std::array<double, 3> confidences{};  // indexed like Estimator

  double confidence_for(Estimator estimator) const {
    return confidences[static_cast<std::size_t>(estimator)];
  }
};

PredictionRecord make_record(std::span<const double> logits, std::uint32_t label);
PredictionRecord make_record(const AnswerDistribution& dist, std::uint32_t label);

struct Scored {
  double confidence = 0.0;
  bool correct = false;
};

struct CalibrationBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;  // 0 for empty bins
  double mean_accuracy = 0.0;
};

struct CalibrationReport {
  Estimator estimator = Estimator::msp;
  std::vector<CalibrationBin> bins;
  double ece = 0.0;
  double accuracy = 0.0;
  std::size_t total = 0;
};

// Equal-width bins over [0, 1]; confidence c falls in bin floor(c * bins),
// clamped so that c == 1 lands in the last bin.
CalibrationReport compute_ece(std::span<const Scored> scored, std::size_t bin_count = 10);
CalibrationReport compute_ece(std::span<const PredictionRecord> records, Estimator estimator,
                              std::size_t bin_count = 10);

struct TemperatureScaler {
  double temperature = 1.0;
  // Set when the optimum sits on the edge of the search range, as happens
  // for separable single-label validation sets.
  bool warning = false;
  double nll_before = 0.0;  // validation NLL at T = 1
  double nll_after = 0.0;   // validation NLL at the fitted T

  PredictionRecord apply(const PredictionRecord& record) const;
  std::vector<PredictionRecord> apply(std::span<const PredictionRecord> records) const;
};

double mean_nll(std::span<const PredictionRecord> records, double temperature);

// Golden-section search over log T in [ln 0.05, ln 20]. T = 1 is kept as a
// candidate so the fit never raises validation NLL.
TemperatureScaler fit_temperature(std::span<const PredictionRecord> validation,
                                  double log_tolerance = 1e-4);

// `bin_lo,bin_hi,count,avg_conf,avg_acc` rows, then `# ece=` and `# acc=`.
void write_reliability_csv(std::ostream& out, const CalibrationReport& report);
void write_reliability_csv(const std::filesystem::path& path, const CalibrationReport& report);

}  // namespace limcal
