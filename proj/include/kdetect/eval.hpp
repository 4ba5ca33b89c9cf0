#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kdetect/boxes.hpp"

namespace kdetect {

struct EvalConfig {
    double iou_threshold = 0.5;
    double confidence_step = 0.01;  // F1 sweep grid over [0, 1]
    double operating_conf = 0.0;    // threshold for the reported TP/FP/FN counts
    bool eleven_point = false;      // 11-point AP instead of all-point interpolation
};

void validate(const EvalConfig& cfg);

struct MetricsReport {
    double ppv = 0.0;
    double sensitivity = 0.0;
    double map50 = 0.0;
    double f1_best = 0.0;
    double conf_at_f1_best = 0.0;
    std::vector<std::pair<double, double>> pr_curve;  // (recall, precision)
    std::vector<std::pair<double, double>> f1_curve;  // (confidence, f1)
    long tp = 0, fp = 0, fn = 0;
    bool ppv_degenerate = false;  // no predictions at the operating threshold
    double operating_conf = 0.0;
    // metrics at a literal 0.5 confidence operating point
    double ppv_at_conf50 = 0.0;
    double sensitivity_at_conf50 = 0.0;
};

// Greedy one-to-one matching in descending confidence order (ties: larger
// best IoU, then input order); a prediction takes the highest-IoU unmatched
// ground truth at or above the threshold.
struct MatchResult {
    std::vector<int> order;       // prediction indices in match order
    std::vector<char> is_tp;      // aligned with order
    std::vector<char> gt_matched; // aligned with the ground-truth list
};
MatchResult match(const std::vector<Detection>& preds, const std::vector<BoxLabel>& gts,
                  double iou_threshold);

// PPV and sensitivity from TP/FP/FN counts. With zero predictions PPV is
// reported as 1.0 and flagged degenerate; with zero ground truth sensitivity
// is 1.0.
struct PrPoint {
    double ppv = 0.0;
    double sensitivity = 0.0;
    bool ppv_degenerate = false;
};
PrPoint pr_metrics(long tp, long fp, long n_gt);

// Whole-dataset evaluation: predictions and ground truth aligned per image.
MetricsReport evaluate(const std::vector<std::vector<Detection>>& preds,
                       const std::vector<std::vector<BoxLabel>>& gts, const EvalConfig& cfg);

// Single-class average precision over the globally ranked prediction list.
double average_precision(const std::vector<std::vector<Detection>>& preds,
                         const std::vector<std::vector<BoxLabel>>& gts, const EvalConfig& cfg);

// Per-patient roll-up: pooled PPV/sensitivity per patient, then averaged.
struct PatientRollup {
    double mean_ppv = 0.0;
    double mean_sensitivity = 0.0;
    long n_patients = 0;
};
PatientRollup patient_rollup(const std::vector<std::vector<Detection>>& preds,
                             const std::vector<std::vector<BoxLabel>>& gts,
                             const std::vector<std::string>& patient_ids, const EvalConfig& cfg);

// Mean and population standard deviation (divisor n) per metric.
struct MetricAggregate {
    double mean = 0.0;
    double stddev = 0.0;
};
struct BenchmarkAggregate {
    MetricAggregate ppv, sensitivity, map50;
    int n = 0;
};
BenchmarkAggregate aggregate_benchmarks(const std::vector<MetricsReport>& reports);

std::string report_to_json(const MetricsReport& report);
void write_curves_csv(const MetricsReport& report, const std::filesystem::path& pr_path,
                      const std::filesystem::path& f1_path);

}  // namespace kdetect
