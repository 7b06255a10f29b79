#include "limcal/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

#include "limcal/errors.hpp"
#include "limcal/numerics.hpp"
#include "text_format.hpp"

namespace limcal {

std::string_view to_string(Estimator estimator) {
  switch (estimator) {
    case Estimator::msp: return "msp";
    case Estimator::entropy: return "entropy";
    case Estimator::margin: return "margin";
  }
  return "unknown";
}

Estimator parse_estimator(std::string_view text) {
  if (text == "msp") return Estimator::msp;
  if (text == "entropy") return Estimator::entropy;
  if (text == "margin") return Estimator::margin;
  throw ConfigError("unknown estimator '" + std::string(text) + "'");
}

double confidence_msp(std::span<const double> probs) {
  if (probs.empty()) throw InputError("confidence of an empty distribution");
  return *std::max_element(probs.begin(), probs.end());
}

double confidence_entropy(std::span<const double> probs) {
  if (probs.size() < 2) throw InputError("entropy confidence needs at least two choices");
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::clamp(1.0 - h / std::log(static_cast<double>(probs.size())), 0.0, 1.0);
}

double confidence_margin(std::span<const double> probs, std::size_t k) {
  if (k < 2 || k > probs.size()) {
    throw InputError("margin rank " + std::to_string(k) + " outside [2, " +
                     std::to_string(probs.size()) + "]");
  }
  std::vector<double> sorted(probs.begin(), probs.end());
  std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k), sorted.end(),
                    std::greater<>());
  return std::clamp(sorted[0] - sorted[k - 1], 0.0, 1.0);
}

double confidence(Estimator estimator, std::span<const double> probs) {
  switch (estimator) {
    case Estimator::msp: return confidence_msp(probs);
    case Estimator::entropy: return confidence_entropy(probs);
    case Estimator::margin: return confidence_margin(probs);
  }
  throw ConfigError("unknown estimator");
}

namespace {

PredictionRecord record_from(std::vector<double> logits, std::vector<double> probs,
                             std::uint32_t label) {
  if (label >= probs.size()) {
    throw InputError("label " + std::to_string(label) + " outside " +
                     std::to_string(probs.size()) + " choices");
  }
  PredictionRecord r;
  r.logits = std::move(logits);
  r.probs = std::move(probs);
  r.label = label;
  r.predicted = static_cast<std::size_t>(
      std::max_element(r.probs.begin(), r.probs.end()) - r.probs.begin());
  r.correct = r.predicted == label;
  for (Estimator e : kAllEstimators) {
    r.confidences[static_cast<std::size_t>(e)] = confidence(e, r.probs);
  }
  return r;
}

std::vector<double> scaled_probs(std::span<const double> logits, double temperature) {
  Matrix m(1, logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) m(0, c) = logits[c] / temperature;
  const Matrix p = softmax_rows(m);
  return {p.values().begin(), p.values().end()};
}

}  // namespace

PredictionRecord make_record(std::span<const double> logits, std::uint32_t label) {
  return record_from({logits.begin(), logits.end()}, scaled_probs(logits, 1.0), label);
}

PredictionRecord make_record(const AnswerDistribution& dist, std::uint32_t label) {
  return record_from(dist.logits, dist.probs, label);
}

CalibrationReport compute_ece(std::span<const Scored> scored, std::size_t bin_count) {
  if (scored.empty()) throw InputError("compute_ece: no records");
  if (bin_count == 0) throw ConfigError("compute_ece: bin count must be positive");
  CalibrationReport report;
  report.total = scored.size();
  std::vector<double> conf_sum(bin_count, 0.0), acc_sum(bin_count, 0.0);
  std::vector<std::size_t> counts(bin_count, 0);
  std::size_t correct = 0;
  for (const Scored& s : scored) {
    if (!(s.confidence >= 0.0 && s.confidence <= 1.0)) {
      throw InputError("confidence " + std::to_string(s.confidence) + " outside [0, 1]");
    }
    const auto b = std::min(bin_count - 1,
                            static_cast<std::size_t>(s.confidence * static_cast<double>(bin_count)));
    counts[b] += 1;
    conf_sum[b] += s.confidence;
    acc_sum[b] += s.correct ? 1.0 : 0.0;
    correct += s.correct ? 1 : 0;
  }
  const double total = static_cast<double>(scored.size());
  for (std::size_t b = 0; b < bin_count; ++b) {
    CalibrationBin bin;
    bin.lo = static_cast<double>(b) / static_cast<double>(bin_count);
    bin.hi = static_cast<double>(b + 1) / static_cast<double>(bin_count);
    bin.count = counts[b];
    if (counts[b] > 0) {
      const double n = static_cast<double>(counts[b]);
      bin.mean_confidence = conf_sum[b] / n;
      bin.mean_accuracy = acc_sum[b] / n;
      report.ece += n / total * std::abs(bin.mean_confidence - bin.mean_accuracy);
    }
    report.bins.push_back(bin);
  }
  report.accuracy = static_cast<double>(correct) / total;
  return report;
}

CalibrationReport compute_ece(std::span<const PredictionRecord> records, Estimator estimator,
                              std::size_t bin_count) {
  std::vector<Scored> scored;
  scored.reserve(records.size());
  for (const auto& r : records) scored.push_back({r.confidence_for(estimator), r.correct});
  CalibrationReport report = compute_ece(scored, bin_count);
  report.estimator = estimator;
  return report;
}

PredictionRecord TemperatureScaler::apply(const PredictionRecord& record) const {
  return record_from(record.logits, scaled_probs(record.logits, temperature), record.label);
}

std::vector<PredictionRecord> TemperatureScaler::apply(
    std::span<const PredictionRecord> records) const {
  std::vector<PredictionRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(apply(r));
  return out;
}

double mean_nll(std::span<const PredictionRecord> records, double temperature) {
  if (records.empty()) throw InputError("mean_nll: no records");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  double sum = 0.0;
  for (const auto& r : records) {
    double top = -INFINITY;
    for (double z : r.logits) top = std::max(top, z / temperature);
    double s = 0.0;
    for (double z : r.logits) s += std::exp(z / temperature - top);
    sum -= r.logits[r.label] / temperature - top - std::log(s);
  }
  return sum / static_cast<double>(records.size());
}

TemperatureScaler fit_temperature(std::span<const PredictionRecord> validation,
                                  double log_tolerance) {
  if (validation.empty()) throw InputError("fit_temperature: empty validation set");
  if (!(log_tolerance > 0.0)) throw ConfigError("fit_temperature: tolerance must be positive");
  const double lo_bound = std::log(0.05), hi_bound = std::log(20.0);
  const auto f = [&](double log_t) { return mean_nll(validation, std::exp(log_t)); };

  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo_bound, b = hi_bound;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > log_tolerance) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }

  TemperatureScaler best;
  best.nll_before = f(0.0);
  double best_log = 0.0, best_nll = best.nll_before;
  for (double cand : {0.5 * (a + b), lo_bound, hi_bound}) {
    const double v = f(cand);
    if (v < best_nll) {
      best_nll = v;
      best_log = cand;
    }
  }
  best.temperature = std::exp(best_log);
  best.nll_after = best_nll;
  best.warning = best_log - lo_bound < 2.0 * log_tolerance || hi_bound - best_log < 2.0 * log_tolerance;
  return best;
}

void write_reliability_csv(std::ostream& out, const CalibrationReport& report) {
  out << "bin_lo,bin_hi,count,avg_conf,avg_acc\n";
  for (const auto& b : report.bins) {
    out << text::fixed(b.lo) << ',' << text::fixed(b.hi) << ',' << b.count << ','
        << text::fixed(b.mean_confidence) << ',' << text::fixed(b.mean_accuracy) << '\n';
  }
  out << "# ece=" << text::fixed(report.ece) << '\n';
  out << "# acc=" << text::fixed(report.accuracy) << '\n';
}

void write_reliability_csv(const std::filesystem::path& path, const CalibrationReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_reliability_csv(out, report);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace limcal
