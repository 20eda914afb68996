#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "veritas/conversation.hpp"
#include "veritas/uncertainty.hpp"

namespace veritas {

/// Per-tree outcome: the unit of rejection and calibration.
struct PredictionRecord {
  std::string tree_id;
  Label gold = Label::true_rumour;
  Label predicted = Label::true_rumour;
  bool correct = false;
  UncertaintyBundle bundle;
  int fold = 0;

  std::size_t num_classes() const noexcept { return bundle.mean_probs.size(); }
  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

PredictionRecord make_record(std::string tree_id, Label gold, UncertaintyBundle bundle, int fold = 0);

/// Class count shared by all records; throws DataError on mixed widths or an empty list.
std::size_t record_class_count(const std::vector<PredictionRecord>& records);

/// Header: tree_id,label,pred,vr,entropy,variance,aleatoric,lcs,margin,ratio,softmax_entropy,p_0..p_{C-1},fold
std::string records_to_csv(const std::vector<PredictionRecord>& records);
/// Columns are located by header name; `fold` is optional (default 0). Throws ParseError.
std::vector<PredictionRecord> records_from_csv(std::string_view text);
void save_records(const std::string& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> load_records(const std::string& path);

/// Accuracy, per-class F1 and macro-F over classes 0..C-1.
struct MetricsReport {
  double accuracy = 0.0;
  double macro_f = 0.0;
  std::vector<double> per_class_f1;
  std::vector<bool> f1_undefined;  // true where the class was never predicted
  std::size_t n_instances = 0;
};

/// Throws InvalidInput on empty or mismatched input, DataError for labels outside [0, C).
MetricsReport evaluate(const std::vector<int>& gold, const std::vector<int>& pred, std::size_t num_classes);
MetricsReport evaluate(const std::vector<PredictionRecord>& records, std::size_t num_classes);

std::string metrics_to_json(const MetricsReport& report);

}  // namespace veritas
