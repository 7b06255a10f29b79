#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "limcal/calibration.hpp"
#include "limcal/errors.hpp"
#include "limcal/rng.hpp"

using namespace limcal;

namespace {

// Groups records by an independently computed bin key and applies the ECE
// definition directly.
double brute_force_ece(const std::vector<Scored>& s, std::size_t bins) {
  std::map<long, std::vector<const Scored*>> groups;
  for (const auto& r : s) {
    long key = static_cast<long>(std::floor(r.confidence * static_cast<double>(bins)));
    if (key == static_cast<long>(bins)) key -= 1;
    groups[key].push_back(&r);
  }
  double ece = 0.0;
  for (const auto& [key, members] : groups) {
    double conf = 0.0, acc = 0.0;
    for (const Scored* m : members) {
      conf += m->confidence;
      acc += m->correct;
    }
    const double n = static_cast<double>(members.size());
    ece += n / static_cast<double>(s.size()) * std::abs(conf / n - acc / n);
  }
  return ece;
}

std::vector<PredictionRecord> random_records(Rng& rng, std::size_t n, double scale) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> logits(4);
    for (double& z : logits) z = scale * rng.normal();
    const auto label = static_cast<std::uint32_t>(rng.below(4));
    logits[label] += scale * 0.8;
    out.push_back(make_record(logits, label));
  }
  return out;
}

}  // namespace

TEST(Confidence, MaximumSoftmaxProbability) {
  EXPECT_DOUBLE_EQ(confidence_msp(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0.25);
  EXPECT_DOUBLE_EQ(confidence_msp(std::vector<double>{0, 1, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(confidence_msp(std::vector<double>{0.5, 0.3, 0.1, 0.1}), 0.5);
}

TEST(Confidence, Entropy) {
  EXPECT_NEAR(confidence_entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0.0, 1e-15);
  EXPECT_DOUBLE_EQ(confidence_entropy(std::vector<double>{0, 0, 1, 0}), 1.0);
  EXPECT_NEAR(confidence_entropy(std::vector<double>{0.5, 0.5, 0, 0}), 0.5, 1e-15);
}

TEST(Confidence, Margin) {
  EXPECT_DOUBLE_EQ(confidence_margin(std::vector<double>{1, 0, 0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(confidence_margin(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0.0);
  EXPECT_NEAR(confidence_margin(std::vector<double>{0.6, 0.25, 0.1, 0.05}), 0.35, 1e-15);
  EXPECT_THROW(confidence_margin(std::vector<double>{1.0}, 2), InputError);
}

TEST(Records, PredictionIsLowestIndexArgmax) {
  const auto r = make_record(std::vector<double>{1.0, 3.0, 3.0, 0.0}, 2);
  EXPECT_EQ(r.predicted, 1u);
  EXPECT_FALSE(r.correct);
  for (double c : r.confidences) {
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 1.0);
  }
  EXPECT_THROW(make_record(std::vector<double>{1.0, 2.0}, 2), InputError);
}

TEST(Ece, AllConfidentSixtyPercentAccurate) {
  std::vector<Scored> s;
  for (int i = 0; i < 10; ++i) s.push_back({1.0, i < 6});
  const auto r = compute_ece(s);
  EXPECT_EQ(r.ece, 0.4);
  EXPECT_EQ(r.bins.back().count, 10u);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.6);
}

TEST(Ece, PerfectlyCalibratedStream) {
  Rng rng(1);
  std::vector<Scored> s;
  for (int i = 0; i < 100000; ++i) {
    const double q = rng.uniform();
    s.push_back({q, rng.bernoulli(q)});
  }
  EXPECT_LT(compute_ece(s).ece, 0.01);
}

TEST(Ece, HandBuiltRecordsMatchBruteForce) {
  std::vector<Scored> s;
  const double confs[] = {0.05, 0.12, 0.31, 0.33, 0.34, 0.36, 0.38, 0.39, 0.61, 0.62,
                          0.64, 0.65, 0.66, 0.67, 0.68, 0.69, 0.35, 0.30, 0.60, 0.10};
  for (int i = 0; i < 20; ++i) s.push_back({confs[i], i % 3 != 0});
  const auto r = compute_ece(s, 3);
  EXPECT_NEAR(r.ece, brute_force_ece(s, 3), 1e-12);
  std::size_t total = 0;
  for (const auto& b : r.bins) total += b.count;
  EXPECT_EQ(total, 20u);
}

TEST(Ece, RandomRecordsMatchBruteForce) {
  Rng rng(2);
  for (std::size_t bins : {1u, 7u, 10u, 15u}) {
    std::vector<Scored> s;
    for (int i = 0; i < 1000; ++i) {
      const double c = i % 50 == 0 ? 1.0 : rng.uniform();
      s.push_back({c, rng.bernoulli(0.5)});
    }
    EXPECT_NEAR(compute_ece(s, bins).ece, brute_force_ece(s, bins), 1e-12);
  }
}

TEST(Ece, PermutationInvariantAndBounded) {
  Rng rng(3);
  std::vector<Scored> s;
  for (int i = 0; i < 500; ++i) s.push_back({rng.uniform(), rng.bernoulli(0.3)});
  const double e = compute_ece(s).ece;
  rng.shuffle(std::span(s));
  EXPECT_NEAR(compute_ece(s).ece, e, 1e-12);
  EXPECT_GE(e, 0.0);
  EXPECT_LE(e, 1.0);
}

TEST(Ece, ZeroWhenBinsAreCalibrated) {
  std::vector<Scored> s = {{0.25, true}, {0.25, false}, {0.25, false}, {0.25, false},
                           {0.75, true}, {0.75, true}, {0.75, true}, {0.75, false}};
  EXPECT_EQ(compute_ece(s).ece, 0.0);
}

TEST(Ece, BinEdgesAndErrors) {
  const auto r = compute_ece(std::vector<Scored>{{0.1, true}, {0.0, false}, {1.0, true}}, 10);
  EXPECT_EQ(r.bins[1].count, 1u);  // 0.1 opens bin [0.1, 0.2)
  EXPECT_EQ(r.bins[0].count, 1u);
  EXPECT_EQ(r.bins[9].count, 1u);
  EXPECT_DOUBLE_EQ(r.bins[9].hi, 1.0);
  EXPECT_THROW(compute_ece(std::vector<Scored>{}), InputError);
  EXPECT_THROW(compute_ece(std::vector<Scored>{{1.5, true}}), InputError);
}

TEST(Temperature, LargeTemperatureFlattens) {
  TemperatureScaler ts;
  ts.temperature = 100.0;
  const auto r = ts.apply(make_record(std::vector<double>{0.3, -0.1, 0.1, 0.2}, 0));
  EXPECT_NEAR(r.confidence_for(Estimator::msp), 0.25, 1e-3);
}

TEST(Temperature, NeverWorseThanIdentityAndPreservesLabels) {
  Rng rng(4);
  for (double scale : {0.3, 1.0, 6.0}) {
    const auto val = random_records(rng, 500, scale);
    const TemperatureScaler ts = fit_temperature(val);
    EXPECT_LE(ts.nll_after, ts.nll_before);
    EXPECT_LE(mean_nll(val, ts.temperature), mean_nll(val, 1.0));
    for (const auto& r : val) EXPECT_EQ(ts.apply(r).predicted, r.predicted);
  }
}

TEST(Temperature, ScalingConsistency) {
  Rng rng(5);
  auto val = random_records(rng, 500, 5.0);
  const double t = fit_temperature(val).temperature;
  for (auto& r : val) {
    for (double& z : r.logits) z /= 2.0;
  }
  const double t_half = fit_temperature(val).temperature;
  EXPECT_NEAR(t_half / t, 0.5, 0.5 * 0.05);
}

TEST(Temperature, OverconfidentLogitsGetHeated) {
  Rng rng(6);
  std::vector<PredictionRecord> val;
  for (int i = 0; i < 400; ++i) {
    std::vector<double> logits(4, 0.0);
    logits[rng.below(4)] = 8.0;  // confident, right a quarter of the time
    val.push_back(make_record(logits, static_cast<std::uint32_t>(rng.below(4))));
  }
  const auto ts = fit_temperature(val);
  EXPECT_GT(ts.temperature, 2.0);
  EXPECT_LT(compute_ece(ts.apply(val), Estimator::msp).ece, compute_ece(val, Estimator::msp).ece);
}

TEST(Temperature, SeparableSingleLabelSetWarns) {
  std::vector<PredictionRecord> val;
  for (int i = 0; i < 50; ++i) val.push_back(make_record(std::vector<double>{3.0, 0.0, 0.0, 0.0}, 0));
  const auto ts = fit_temperature(val);
  EXPECT_TRUE(ts.warning);
  EXPECT_NEAR(ts.temperature, 0.05, 1e-3);
  EXPECT_THROW(fit_temperature(std::vector<PredictionRecord>{}), InputError);
}

TEST(ReliabilityCsv, Format) {
  std::vector<Scored> s = {{0.95, true}, {0.15, false}, {0.55, true}};
  std::ostringstream out;
  write_reliability_csv(out, compute_ece(s, 2));
  EXPECT_EQ(out.str(),
            "bin_lo,bin_hi,count,avg_conf,avg_acc\n"
            "0.000000,0.500000,1,0.150000,0.000000\n"
            "0.500000,1.000000,2,0.750000,1.000000\n"
            "# ece=0.216667\n"
            "# acc=0.666667\n");
}
