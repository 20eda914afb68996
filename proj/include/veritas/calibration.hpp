#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "veritas/records.hpp"

namespace veritas {

struct ConfidenceRecord {
  double confidence = 0.0;
  bool correct = false;
};

/// Converts one measure's values to confidences in [0, 1].
/// lcs and margin pass through; entropies are divided by ln C before 1 - u;
/// aleatoric is min-max scaled with dev-set stats and clipped.
struct ConfidenceScaler {
  Measure measure = Measure::variation_ratio;
  std::size_t num_classes = 3;
  double aleatoric_min = 0.0;
  double aleatoric_max = 1.0;

  bool degenerate() const noexcept { return !(aleatoric_max > aleatoric_min); }
  double operator()(const UncertaintyBundle& b) const;
};

/// Takes the class count and, for aleatoric, min/max from the dev records.
/// A zero-width aleatoric range warns and maps every aleatoric confidence to 0.5.
ConfidenceScaler fit_confidence_scaler(const std::vector<PredictionRecord>& dev, Measure measure);

std::vector<ConfidenceRecord> to_confidence_records(const std::vector<PredictionRecord>& records,
                                                    const ConfidenceScaler& scaler);

/// 1-based bin for confidence c: ceil(c * M), with c = 0 in bin 1.
std::size_t bin_index(double confidence, std::size_t bins);

/// Throws ConfigError on empty input or M = 0, InvalidInput for confidences outside [0, 1].
double ece(const std::vector<ConfidenceRecord>& records, std::size_t bins);

struct ReliabilityBin {
  std::size_t index = 1;  // 1-based
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  bool defined = false;  // false for empty bins
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

std::vector<ReliabilityBin> reliability_bins(const std::vector<ConfidenceRecord>& records, std::size_t bins);

struct CalibrationMap {
  std::size_t bins = 10;
  std::vector<double> calibrated;     // per bin
  std::vector<std::size_t> dev_count; // per bin

  static CalibrationMap identity(std::size_t bins);
  double lower_edge(std::size_t index) const;  // 1-based bin
  double upper_edge(std::size_t index) const;
};

/// Each bin maps to its dev accuracy; empty bins map to their midpoint.
CalibrationMap fit_histogram_binning(const std::vector<ConfidenceRecord>& dev, std::size_t bins);
double apply_calibration(const CalibrationMap& map, double confidence);
std::vector<ConfidenceRecord> apply_calibration(const CalibrationMap& map, const std::vector<ConfidenceRecord>& records);

struct CalibrationReport {
  std::string measure;
  double ece_before = 0.0;
  double ece_after = 0.0;
  std::size_t bins = 10;
  std::size_t n_dev = 0;
  std::size_t n_test = 0;
  CalibrationMap map;
  std::vector<ReliabilityBin> reliability_before;
  std::vector<ReliabilityBin> reliability_after;
};

/// Fits the scaler and histogram binning on dev, reports test ECE before and after.
CalibrationReport calibrate(const std::vector<PredictionRecord>& dev, const std::vector<PredictionRecord>& test,
                            Measure measure, std::size_t bins);

/// measure,ece_before,ece_after,M,n_dev,n_test
std::string calibration_reports_to_csv(const std::vector<CalibrationReport>& reports);
/// measure,stage,bin,lower,upper,count,mean_confidence,accuracy (empty bins print NA)
std::string reliability_to_csv(const std::vector<CalibrationReport>& reports);

}  // namespace veritas
