#include "veritas/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "veritas/errors.hpp"
#include "veritas/io.hpp"

namespace veritas {

double ConfidenceScaler::operator()(const UncertaintyBundle& b) const {
  const double value = measure_value(b, measure);
  double c = 0.0;
  switch (measure) {
    case Measure::lcs:
    case Measure::margin: c = value; break;
    case Measure::entropy:
    case Measure::softmax_entropy: c = 1.0 - value / std::log(static_cast<double>(num_classes)); break;
    case Measure::aleatoric:
      if (degenerate()) return 0.5;
      c = 1.0 - (value - aleatoric_min) / (aleatoric_max - aleatoric_min);
      break;
    default: c = 1.0 - value; break;
  }
  return std::clamp(c, 0.0, 1.0);
}

ConfidenceScaler fit_confidence_scaler(const std::vector<PredictionRecord>& dev, Measure measure) {
  ConfidenceScaler s;
  s.measure = measure;
  s.num_classes = record_class_count(dev);
  if (measure == Measure::aleatoric) {
    s.aleatoric_min = s.aleatoric_max = dev.front().bundle.aleatoric;
    for (const auto& r : dev) {
      s.aleatoric_min = std::min(s.aleatoric_min, r.bundle.aleatoric);
      s.aleatoric_max = std::max(s.aleatoric_max, r.bundle.aleatoric);
    }
    if (s.degenerate()) warn("aleatoric dev range is empty; all aleatoric confidences set to 0.5");
  }
  return s;
}

std::vector<ConfidenceRecord> to_confidence_records(const std::vector<PredictionRecord>& records,
                                                    const ConfidenceScaler& scaler) {
  std::vector<ConfidenceRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({scaler(r.bundle), r.correct});
  return out;
}

std::size_t bin_index(double confidence, std::size_t bins) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw InvalidInput("confidence must be in [0, 1], got " + format_double(confidence));
  }
  const auto m = static_cast<std::size_t>(std::ceil(confidence * static_cast<double>(bins)));
  return std::clamp<std::size_t>(m, 1, bins);
}

std::vector<ReliabilityBin> reliability_bins(const std::vector<ConfidenceRecord>& records, std::size_t bins) {
  if (bins == 0) throw ConfigError("bin count must be >= 1");
  std::vector<ReliabilityBin> out(bins);
  std::vector<double> conf_sum(bins, 0.0), hits(bins, 0.0);
  for (std::size_t m = 0; m < bins; ++m) {
    out[m].index = m + 1;
    out[m].lower = static_cast<double>(m) / static_cast<double>(bins);
    out[m].upper = static_cast<double>(m + 1) / static_cast<double>(bins);
  }
  for (const auto& r : records) {
    const std::size_t m = bin_index(r.confidence, bins) - 1;
    out[m].count++;
    conf_sum[m] += r.confidence;
    hits[m] += r.correct ? 1.0 : 0.0;
  }
  for (std::size_t m = 0; m < bins; ++m) {
    if (out[m].count == 0) continue;
    out[m].defined = true;
    out[m].mean_confidence = conf_sum[m] / static_cast<double>(out[m].count);
    out[m].accuracy = hits[m] / static_cast<double>(out[m].count);
  }
  return out;
}

double ece(const std::vector<ConfidenceRecord>& records, std::size_t bins) {
  if (records.empty()) throw ConfigError("ece needs at least one record");
  double total = 0.0;
  for (const auto& b : reliability_bins(records, bins)) {
    if (b.defined) total += static_cast<double>(b.count) * std::abs(b.accuracy - b.mean_confidence);
  }
  return total / static_cast<double>(records.size());
}

CalibrationMap CalibrationMap::identity(std::size_t bins) {
  if (bins == 0) throw ConfigError("bin count must be >= 1");
  CalibrationMap map;
  map.bins = bins;
  map.dev_count.assign(bins, 0);
  for (std::size_t m = 1; m <= bins; ++m) map.calibrated.push_back((static_cast<double>(m) - 0.5) / static_cast<double>(bins));
  return map;
}

double CalibrationMap::lower_edge(std::size_t index) const {
  return static_cast<double>(index - 1) / static_cast<double>(bins);
}

double CalibrationMap::upper_edge(std::size_t index) const {
  return static_cast<double>(index) / static_cast<double>(bins);
}

CalibrationMap fit_histogram_binning(const std::vector<ConfidenceRecord>& dev, std::size_t bins) {
  if (dev.empty()) throw ConfigError("histogram binning needs at least one dev record");
  auto map = CalibrationMap::identity(bins);
  for (const auto& b : reliability_bins(dev, bins)) {
    map.dev_count[b.index - 1] = b.count;
    if (b.defined) map.calibrated[b.index - 1] = b.accuracy;
  }
  return map;
}

double apply_calibration(const CalibrationMap& map, double confidence) {
  return map.calibrated[bin_index(confidence, map.bins) - 1];
}

std::vector<ConfidenceRecord> apply_calibration(const CalibrationMap& map, const std::vector<ConfidenceRecord>& records) {
  std::vector<ConfidenceRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({apply_calibration(map, r.confidence), r.correct});
  return out;
}

CalibrationReport calibrate(const std::vector<PredictionRecord>& dev, const std::vector<PredictionRecord>& test,
                            Measure measure, std::size_t bins) {
  if (test.empty()) throw ConfigError("calibration needs at least one test record");
  if (record_class_count(dev) != record_class_count(test)) throw ConfigError("dev and test records disagree on the class count");
  const auto scaler = fit_confidence_scaler(dev, measure);
  const auto dev_conf = to_confidence_records(dev, scaler);
  const auto test_conf = to_confidence_records(test, scaler);
  CalibrationReport r;
  r.measure = std::string(to_string(measure));
  r.bins = bins;
  r.n_dev = dev.size();
  r.n_test = test.size();
  r.map = fit_histogram_binning(dev_conf, bins);
  const auto after = apply_calibration(r.map, test_conf);
  r.ece_before = ece(test_conf, bins);
  r.ece_after = ece(after, bins);
  r.reliability_before = reliability_bins(test_conf, bins);
  r.reliability_after = reliability_bins(after, bins);
  return r;
}

std::string calibration_reports_to_csv(const std::vector<CalibrationReport>& reports) {
  std::ostringstream out;
  out << "measure,ece_before,ece_after,M,n_dev,n_test\n";
  for (const auto& r : reports) {
    out << r.measure << ',' << format_double(r.ece_before) << ',' << format_double(r.ece_after) << ',' << r.bins
        << ',' << r.n_dev << ',' << r.n_test << '\n';
  }
  return out.str();
}

std::string reliability_to_csv(const std::vector<CalibrationReport>& reports) {
  std::ostringstream out;
  out << "measure,stage,bin,lower,upper,count,mean_confidence,accuracy\n";
  auto emit = [&](const std::string& measure, const char* stage, const std::vector<ReliabilityBin>& bins) {
    for (const auto& b : bins) {
      out << measure << ',' << stage << ',' << b.index << ',' << format_double(b.lower) << ','
          << format_double(b.upper) << ',' << b.count << ',';
      if (b.defined) {
        out << format_double(b.mean_confidence) << ',' << format_double(b.accuracy) << '\n';
      } else {
        out << "NA,NA\n";
      }
    }
  };
  for (const auto& r : reports) {
    emit(r.measure, "before", r.reliability_before);
    emit(r.measure, "after", r.reliability_after);
  }
  return out.str();
}

}  // namespace veritas
