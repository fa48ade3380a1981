#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cbamnet/common.hpp"

namespace cbamnet {

/// K x K counts, rows = true class, columns = predicted class.
struct ConfusionMatrix {
  std::vector<std::vector<std::int64_t>> counts;
  std::vector<std::string> class_names;

  int num_classes() const { return static_cast<int>(counts.size()); }
  std::int64_t total() const;
  std::int64_t trace() const;
};

struct ClassMetrics {
  std::vector<double> precision, recall, f1;
  std::vector<std::int64_t> support;  // row sums
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double accuracy = 0;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& true_labels,
                                 const std::vector<int>& predicted_labels,
                                 int num_classes,
                                 std::vector<std::string> class_names = {});

/// Per-class P/R/F1 plus unweighted macro averages; zero denominators yield 0.
ClassMetrics precision_recall_f1(const ConfusionMatrix& cm);

/// trace/total; rejects an empty matrix.
double accuracy(const ConfusionMatrix& cm);

/// One-vs-rest AUC per class via the Mann-Whitney rank statistic with
/// half-credit for ties. A class with no positives or no negatives gets an
/// absent (nullopt) AUC.
std::vector<std::optional<double>> roc_auc_ovr(
    const std::vector<std::vector<float>>& probability_rows,
    const std::vector<int>& true_labels);

/// JSON report with keys accuracy, confusion_matrix,
/// per_class[{name,precision,recall,f1,support,auc}], macro{...}.
std::string metrics_report_json(
    const ConfusionMatrix& cm, const ClassMetrics& metrics,
    const std::vector<std::optional<double>>& auc);

}  // namespace cbamnet
