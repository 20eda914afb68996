#include "veritas/records.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include <json.hpp>

#include "veritas/errors.hpp"
#include "veritas/io.hpp"

namespace veritas {

PredictionRecord make_record(std::string tree_id, Label gold, UncertaintyBundle bundle, int fold) {
  PredictionRecord r;
  r.tree_id = std::move(tree_id);
  r.gold = gold;
  r.predicted = label_from_index(static_cast<int>(bundle.predicted_class));
  r.correct = r.gold == r.predicted;
  r.bundle = std::move(bundle);
  r.fold = fold;
  return r;
}

std::size_t record_class_count(const std::vector<PredictionRecord>& records) {
  if (records.empty()) throw DataError("no prediction records");
  const std::size_t c = records.front().num_classes();
  for (const auto& r : records) {
    if (r.num_classes() != c) throw DataError("records disagree on the class count (" + r.tree_id + ")");
  }
  return c;
}

namespace {

const std::vector<std::string> kScoreColumns{"vr",  "entropy", "variance", "aleatoric",
                                             "lcs", "margin",  "ratio",    "softmax_entropy"};

double* score_field(UncertaintyBundle& b, std::size_t i) {
  double* fields[] = {&b.variation_ratio, &b.entropy,        &b.variance,      &b.aleatoric,
                      &b.softmax_lcs,     &b.softmax_margin, &b.softmax_ratio, &b.softmax_entropy};
  return fields[i];
}

double parse_number(const std::string& text, std::size_t line) {
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ParseError("records line " + std::to_string(line) + ": bad number '" + text + "'");
  }
  return value;
}

}  // namespace

std::string records_to_csv(const std::vector<PredictionRecord>& records) {
  std::ostringstream out;
  const std::size_t c = records.empty() ? 0 : record_class_count(records);
  out << "tree_id,label,pred";
  for (const auto& name : kScoreColumns) out << ',' << name;
  for (std::size_t k = 0; k < c; ++k) out << ",p_" << k;
  out << ",fold\n";
  for (const auto& r : records) {
    auto b = r.bundle;
    out << r.tree_id << ',' << to_string(r.gold) << ',' << to_string(r.predicted);
    for (std::size_t i = 0; i < kScoreColumns.size(); ++i) out << ',' << format_double(*score_field(b, i));
    for (double p : r.bundle.mean_probs) out << ',' << format_double(p);
    out << ',' << r.fold << '\n';
  }
  return out.str();
}

std::vector<PredictionRecord> records_from_csv(std::string_view text) {
  const auto rows = parse_csv(text);
  if (rows.empty()) throw ParseError("records file has no header");
  const auto& header = rows.front();
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  auto require = [&](const std::string& name) {
    const auto it = column.find(name);
    if (it == column.end()) throw ParseError("records header is missing column '" + name + "'");
    return it->second;
  };
  const std::size_t id_col = require("tree_id"), label_col = require("label"), pred_col = require("pred");
  std::vector<std::size_t> score_cols;
  for (const auto& name : kScoreColumns) score_cols.push_back(require(name));
  std::vector<std::size_t> prob_cols;
  while (column.count("p_" + std::to_string(prob_cols.size()))) {
    prob_cols.push_back(column.at("p_" + std::to_string(prob_cols.size())));
  }
  if (prob_cols.size() < 2) throw ParseError("records need at least p_0 and p_1");
  const auto fold_it = column.find("fold");

  std::vector<PredictionRecord> records;
  for (std::size_t line = 1; line < rows.size(); ++line) {
    const auto& row = rows[line];
    if (row.size() != header.size()) {
      throw ParseError("records line " + std::to_string(line + 1) + ": expected " + std::to_string(header.size()) +
                       " fields, got " + std::to_string(row.size()));
    }
    PredictionRecord r;
    r.tree_id = row[id_col];
    r.gold = parse_label(row[label_col]);
    r.predicted = parse_label(row[pred_col]);
    r.correct = r.gold == r.predicted;
    for (std::size_t i = 0; i < score_cols.size(); ++i) *score_field(r.bundle, i) = parse_number(row[score_cols[i]], line + 1);
    for (auto col : prob_cols) r.bundle.mean_probs.push_back(parse_number(row[col], line + 1));
    r.bundle.predicted_class = static_cast<std::size_t>(class_index(r.predicted));
    if (fold_it != column.end()) r.fold = static_cast<int>(parse_number(row[fold_it->second], line + 1));
    records.push_back(std::move(r));
  }
  return records;
}

void save_records(const std::string& path, const std::vector<PredictionRecord>& records) {
  write_file(path, records_to_csv(records));
}

std::vector<PredictionRecord> load_records(const std::string& path) { return records_from_csv(read_file(path)); }

MetricsReport evaluate(const std::vector<int>& gold, const std::vector<int>& pred, std::size_t num_classes) {
  if (gold.empty()) throw InvalidInput("evaluate needs at least one instance");
  if (gold.size() != pred.size()) throw InvalidInput("evaluate: gold and prediction lengths differ");
  const int c = static_cast<int>(num_classes);
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= c || pred[i] < 0 || pred[i] >= c) {
      throw DataError("label outside the " + std::to_string(num_classes) + "-class set at instance " +
                      std::to_string(i));
    }
    if (gold[i] == pred[i]) {
      ++hits;
      ++tp[gold[i]];
    } else {
      ++fp[pred[i]];
      ++fn[gold[i]];
    }
  }
  MetricsReport m;
  m.n_instances = gold.size();
  m.accuracy = static_cast<double>(hits) / static_cast<double>(gold.size());
  for (std::size_t k = 0; k < num_classes; ++k) {
    const double denom = static_cast<double>(2 * tp[k] + fp[k] + fn[k]);
    m.per_class_f1.push_back(denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp[k]) / denom);
    m.f1_undefined.push_back(tp[k] + fp[k] == 0);
    m.macro_f += m.per_class_f1.back();
  }
  m.macro_f /= static_cast<double>(num_classes);
  return m;
}

MetricsReport evaluate(const std::vector<PredictionRecord>& records, std::size_t num_classes) {
  std::vector<int> gold, pred;
  for (const auto& r : records) {
    gold.push_back(class_index(r.gold));
    pred.push_back(class_index(r.predicted));
  }
  return evaluate(gold, pred, num_classes);
}

std::string metrics_to_json(const MetricsReport& report) {
  nlohmann::ordered_json doc;
  doc["n_instances"] = report.n_instances;
  doc["accuracy"] = report.accuracy;
  doc["macro_f"] = report.macro_f;
  doc["per_class_f1"] = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < report.per_class_f1.size(); ++k) {
    doc["per_class_f1"][std::string(to_string(label_from_index(static_cast<int>(k))))] = report.per_class_f1[k];
  }
  std::vector<std::string> undefined;
  for (std::size_t k = 0; k < report.f1_undefined.size(); ++k) {
    if (report.f1_undefined[k]) undefined.emplace_back(to_string(label_from_index(static_cast<int>(k))));
  }
  doc["f1_undefined"] = undefined;
  return doc.dump(2) + "\n";
}

}  // namespace veritas
