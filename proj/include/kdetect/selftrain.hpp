#pragma once

#include <filesystem>

#include "kdetect/eval.hpp"
#include "kdetect/manifest.hpp"
#include "kdetect/train.hpp"

namespace kdetect {

// Knobs of the three-step procedure: ten independent 80/20 patient splits,
// pseudo-labeling of unannotated scans with the best primary model, and
// warm-started retraining on the union minus anything linked to each
// benchmark's test patients.
struct SelfTrainPlan {
    int n_benchmarks = 10;
    double test_fraction = 0.20;
    double pseudo_conf_threshold = 0.25;
    int max_pseudo_boxes_per_slice = 2;
    double nms_iou = 0.45;
    bool exclude_test_linked = true;
    bool warm_start = true;
    std::string warm_start_source = "own";  // "own" | "best"
    bool include_empty_slices = true;
    std::uint64_t seed = 0;
    // confidence floor for predictions fed to the evaluator; the reported
    // operating point comes from EvalConfig
    double eval_conf_floor = 0.01;
};

void validate(const SelfTrainPlan& plan);

struct BenchmarkRecord {
    int benchmark_id = 0;
    bool failed = false;
    std::string failure;
    std::string split_hash;
    std::vector<std::string> train_patients;
    std::vector<std::string> test_patients;
    std::string primary_weights_path;  // relative to the output root
    std::string primary_weights_hash;
    MetricsReport primary_report;
    PatientRollup primary_rollup;
    std::vector<std::string> final_train_patients;
    std::vector<std::string> final_train_series;
    std::string final_weights_path;
    std::string final_weights_hash;
    MetricsReport final_report;
    PatientRollup final_rollup;
};

struct RunLedger {
    int best_benchmark_id = 0;
    std::string best_weights_hash;
    long pseudo_series = 0;
    long pseudo_slices = 0;
    long pseudo_boxes = 0;
    std::vector<BenchmarkRecord> benchmarks;
};

// argmax map50, ties broken by ppv, then sensitivity, then lowest id;
// failed benchmarks are skipped. Throws AllBenchmarksDiverged when none
// survive.
int select_best_benchmark(const std::vector<BenchmarkRecord>& records);

void save_ledger(const RunLedger& ledger, const std::filesystem::path& path);
RunLedger load_ledger(const std::filesystem::path& path);

// Re-audits a persisted ledger: per-benchmark train/test patient
// disjointness and artifact hash verification against out_root.
void audit_ledger(const RunLedger& ledger, const std::filesystem::path& out_root);

struct SelfTrainResult {
    RunLedger ledger;
    Manifest manifest;  // with pseudo-label provenance applied
    BenchmarkAggregate primary_aggregate;
    BenchmarkAggregate final_aggregate;
};

// The full three-step run. Writes weights, pseudo-labels, run_ledger.json,
// report.json, report.md and best-model curve CSVs under out_root; every
// byte is a pure function of (manifest, plan, train config, eval config).
SelfTrainResult run_selftrain(const Manifest& manifest, const SelfTrainPlan& plan,
                              const TrainConfig& train_cfg, const EvalConfig& eval_cfg,
                              const std::filesystem::path& data_root,
                              const std::filesystem::path& out_root, int jobs = 1,
                              const ProgressFn& progress = {});

// Table-2-shaped outputs.
std::string selftrain_report_json(const SelfTrainResult& result);
std::string selftrain_report_markdown(const SelfTrainResult& result);

}  // namespace kdetect
