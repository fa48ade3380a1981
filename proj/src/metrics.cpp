#include "cbamnet/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

namespace cbamnet {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& row : counts)
    t = std::accumulate(row.begin(), row.end(), t);
  return t;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
  return t;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& true_labels,
                                 const std::vector<int>& predicted_labels,
                                 int num_classes,
                                 std::vector<std::string> class_names) {
  if (true_labels.size() != predicted_labels.size())
    throw ValueError("confusion_matrix: label list lengths differ");
  ConfusionMatrix cm;
  cm.counts.assign(num_classes, std::vector<std::int64_t>(num_classes, 0));
  if (class_names.empty())
    for (int c = 0; c < num_classes; ++c)
      class_names.push_back("class" + std::to_string(c));
  cm.class_names = std::move(class_names);
  for (size_t i = 0; i < true_labels.size(); ++i) {
    const int t = true_labels[i], p = predicted_labels[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw ValueError("confusion_matrix: label out of range at sample " +
                       std::to_string(i));
    ++cm.counts[t][p];
  }
  return cm;
}

ClassMetrics precision_recall_f1(const ConfusionMatrix& cm) {
  const int k = cm.num_classes();
  if (k == 0) throw ValueError("precision_recall_f1: empty matrix");
  ClassMetrics m;
  for (int c = 0; c < k; ++c) {
    std::int64_t col = 0, row = 0;
    for (int i = 0; i < k; ++i) {
      col += cm.counts[i][c];
      row += cm.counts[c][i];
    }
    const double tp = static_cast<double>(cm.counts[c][c]);
    const double p = col > 0 ? tp / static_cast<double>(col) : 0.0;
    const double r = row > 0 ? tp / static_cast<double>(row) : 0.0;
    const double f = p + r > 0 ? 2.0 * p * r / (p + r) : 0.0;
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(f);
    m.support.push_back(row);
    m.macro_precision += p / k;
    m.macro_recall += r / k;
    m.macro_f1 += f / k;
  }
  m.accuracy = accuracy(cm);
  return m;
}

double accuracy(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw ValueError("accuracy: empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

std::vector<std::optional<double>> roc_auc_ovr(
    const std::vector<std::vector<float>>& probability_rows,
    const std::vector<int>& true_labels) {
  if (probability_rows.size() != true_labels.size())
    throw ValueError("roc_auc_ovr: row count does not match label count");
  if (probability_rows.empty()) throw ValueError("roc_auc_ovr: empty input");
  const int k = static_cast<int>(probability_rows[0].size());
  std::vector<std::optional<double>> out(k);
  for (int c = 0; c < k; ++c) {
    // Rank the class-c scores; AUC = (rank-sum of positives - offset) / (P*N),
    // with average ranks over tied scores giving the half-credit rule.
    std::vector<size_t> idx(probability_rows.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      return probability_rows[a][c] < probability_rows[b][c];
    });
    std::vector<double> rank(idx.size());
    for (size_t i = 0; i < idx.size();) {
      size_t j = i;
      while (j < idx.size() &&
             probability_rows[idx[j]][c] == probability_rows[idx[i]][c])
        ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j - 1)) /
                             2.0 + 1.0;
      for (size_t t = i; t < j; ++t) rank[idx[t]] = avg;
      i = j;
    }
    std::int64_t pos = 0;
    double pos_rank_sum = 0;
    for (size_t i = 0; i < rank.size(); ++i)
      if (true_labels[i] == c) {
        ++pos;
        pos_rank_sum += rank[i];
      }
    const std::int64_t neg = static_cast<std::int64_t>(rank.size()) - pos;
    if (pos == 0 || neg == 0) continue;  // undefined -> absent
    out[c] = (pos_rank_sum -
              static_cast<double>(pos) * (static_cast<double>(pos) + 1) / 2.0) /
             (static_cast<double>(pos) * static_cast<double>(neg));
  }
  return out;
}

std::string metrics_report_json(
    const ConfusionMatrix& cm, const ClassMetrics& metrics,
    const std::vector<std::optional<double>>& auc) {
  using json = nlohmann::ordered_json;
  json matrix = json::array();
  for (const auto& row : cm.counts) matrix.push_back(row);
  json per_class = json::array();
  for (int c = 0; c < cm.num_classes(); ++c) {
    json entry = {{"name", cm.class_names[c]},
                  {"precision", metrics.precision[c]},
                  {"recall", metrics.recall[c]},
                  {"f1", metrics.f1[c]},
                  {"support", metrics.support[c]}};
    if (c < static_cast<int>(auc.size()) && auc[c])
      entry["auc"] = *auc[c];
    else
      entry["auc"] = nullptr;
    per_class.push_back(entry);
  }
  json report = {{"accuracy", metrics.accuracy},
                 {"confusion_matrix", matrix},
                 {"per_class", per_class},
                 {"macro",
                  {{"precision", metrics.macro_precision},
                   {"recall", metrics.macro_recall},
                   {"f1", metrics.macro_f1}}}};
  return report.dump(2) + "\n";
}

}  // namespace cbamnet
