#include "kdetect/selftrain.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>
#include <thread>
#include <tuple>

#include "kdetect/dataset.hpp"
#include "kdetect/errors.hpp"
#include "kdetect/hash.hpp"
#include "kdetect/preprocess.hpp"
#include "kdetect/rng.hpp"
#include "kdetect/weights_io.hpp"

namespace kdetect {

using nlohmann::json;

namespace {

void emit(const ProgressFn& progress, const std::string& line) {
    if (progress) progress(line);
}

// deterministic fan-out: each worker owns index i mod jobs
void parallel_over(int n, int jobs, const std::function<void(int)>& fn) {
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> workers;
    std::mutex error_mutex;
    std::exception_ptr first_error;
    for (int w = 0; w < jobs; ++w)
        workers.emplace_back([&, w]() {
            for (int i = w; i < n; i += jobs) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    for (std::thread& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::vector<const ManifestEntry*> series_of(const Manifest& manifest,
                                            AnnotationSource source) {
    std::vector<const ManifestEntry*> out;
    for (const ManifestEntry& e : manifest.entries)
        if (e.annotation_source == source) out.push_back(&e);
    std::sort(out.begin(), out.end(), [](const ManifestEntry* a, const ManifestEntry* b) {
        return a->series_path < b->series_path;
    });
    return out;
}

std::string split_hash(const SplitAssignment& split) {
    std::string canon = "test:";
    for (const std::string& p : split.test_patients) canon += p + ",";
    canon += "|train:";
    for (const std::string& p : split.train_patients) canon += p + ",";
    return hex64(fnv1a64(canon));
}

struct EvalSet {
    std::vector<Sample> samples;
    std::vector<std::string> patients;
};

EvalSet load_eval_set(const Manifest& manifest, const std::set<std::string>& patients,
                      const std::filesystem::path& data_root, int image_size) {
    EvalSet set;
    for (const ManifestEntry* e : series_of(manifest, AnnotationSource::human)) {
        if (!patients.contains(e->patient_id)) continue;
        for (Sample& s : load_series_samples(data_root, e->series_path, LabelSource::human, {},
                                             image_size, true)) {
            set.samples.push_back(std::move(s));
            set.patients.push_back(e->patient_id);
        }
    }
    return set;
}

MetricsReport evaluate_on(const GridDetector& net, const ModelWeights& weights,
                          const EvalSet& set, const SelfTrainPlan& plan,
                          const EvalConfig& eval_cfg, PatientRollup& rollup) {
    std::vector<std::vector<Detection>> preds;
    std::vector<std::vector<BoxLabel>> gts;
    preds.reserve(set.samples.size());
    gts.reserve(set.samples.size());
    for (const Sample& s : set.samples) {
        preds.push_back(net.predict(weights, s.image, plan.eval_conf_floor, plan.nms_iou,
                                    plan.max_pseudo_boxes_per_slice));
        gts.push_back(s.boxes);
    }
    rollup = patient_rollup(preds, gts, set.patients, eval_cfg);
    return evaluate(preds, gts, eval_cfg);
}

json metrics_to_json(const MetricsReport& r) {
    json j;
    j["ppv"] = r.ppv;
    j["sensitivity"] = r.sensitivity;
    j["map50"] = r.map50;
    j["f1_best"] = r.f1_best;
    j["conf_at_f1_best"] = r.conf_at_f1_best;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["fn"] = r.fn;
    j["ppv_degenerate"] = r.ppv_degenerate;
    j["operating_conf"] = r.operating_conf;
    j["ppv_at_conf50"] = r.ppv_at_conf50;
    j["sensitivity_at_conf50"] = r.sensitivity_at_conf50;
    return j;
}

MetricsReport metrics_from_json(const json& j) {
    MetricsReport r;
    r.ppv = j.value("ppv", 0.0);
    r.sensitivity = j.value("sensitivity", 0.0);
    r.map50 = j.value("map50", 0.0);
    r.f1_best = j.value("f1_best", 0.0);
    r.conf_at_f1_best = j.value("conf_at_f1_best", 0.0);
    r.tp = j.value("tp", 0L);
    r.fp = j.value("fp", 0L);
    r.fn = j.value("fn", 0L);
    r.ppv_degenerate = j.value("ppv_degenerate", false);
    r.operating_conf = j.value("operating_conf", 0.0);
    r.ppv_at_conf50 = j.value("ppv_at_conf50", 0.0);
    r.sensitivity_at_conf50 = j.value("sensitivity_at_conf50", 0.0);
    return r;
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_std(double v) {
    char buf[32];
    if (v >= 0.005)
        std::snprintf(buf, sizeof(buf), "%.2f", v);
    else if (v >= 0.0005)
        std::snprintf(buf, sizeof(buf), "%.3f", v);
    else
        std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

}  // namespace

void validate(const SelfTrainPlan& plan) {
    if (plan.n_benchmarks < 1) throw ConfigError("n_benchmarks must be >= 1");
    if (!(plan.test_fraction > 0.0 && plan.test_fraction < 1.0))
        throw ConfigError("test_fraction must be in (0, 1)");
    if (plan.pseudo_conf_threshold < 0.0 || plan.pseudo_conf_threshold > 1.0)
        throw ConfigError("pseudo_conf_threshold must be in [0, 1]");
    if (plan.eval_conf_floor < 0.0 || plan.eval_conf_floor > 1.0)
        throw ConfigError("eval_conf_floor must be in [0, 1]");
    if (!(plan.nms_iou > 0.0 && plan.nms_iou < 1.0)) throw ConfigError("nms_iou must be in (0, 1)");
    if (plan.max_pseudo_boxes_per_slice < 1)
        throw ConfigError("max_pseudo_boxes_per_slice must be >= 1");
    if (plan.warm_start_source != "own" && plan.warm_start_source != "best")
        throw ConfigError("warm_start_source must be 'own' or 'best'");
}

int select_best_benchmark(const std::vector<BenchmarkRecord>& records) {
    const BenchmarkRecord* best = nullptr;
    for (const BenchmarkRecord& r : records) {
        if (r.failed) continue;
        if (!best) {
            best = &r;
            continue;
        }
        const auto key = [](const BenchmarkRecord& x) {
            return std::make_tuple(x.primary_report.map50, x.primary_report.ppv,
                                   x.primary_report.sensitivity, -x.benchmark_id);
        };
        if (key(r) > key(*best)) best = &r;
    }
    if (!best) throw AllBenchmarksDiverged("every benchmark failed during primary training");
    return best->benchmark_id;
}

SelfTrainResult run_selftrain(const Manifest& manifest, const SelfTrainPlan& plan,
                              const TrainConfig& train_cfg, const EvalConfig& eval_cfg,
                              const std::filesystem::path& data_root,
                              const std::filesystem::path& out_root, int jobs,
                              const ProgressFn& progress) {
    validate(plan);
    validate(train_cfg);
    validate(eval_cfg);
    validate(manifest);
    std::filesystem::create_directories(out_root);

    const GridDetector net(train_cfg);
    std::mutex progress_mutex;
    const ProgressFn locked_progress = [&](const std::string& line) {
        std::lock_guard<std::mutex> lock(progress_mutex);
        emit(progress, line);
    };

    // ---- step 1: ten primary benchmarks over human-annotated patients ----
    std::set<std::string> human_patients;
    for (const ManifestEntry* e : series_of(manifest, AnnotationSource::human))
        human_patients.insert(e->patient_id);
    const std::vector<SplitAssignment> splits =
        make_benchmarks({human_patients.begin(), human_patients.end()}, plan.n_benchmarks,
                        plan.test_fraction, plan.seed);

    SelfTrainResult result;
    result.ledger.benchmarks.resize(static_cast<std::size_t>(plan.n_benchmarks));

    parallel_over(plan.n_benchmarks, jobs, [&](int idx) {
        const SplitAssignment& split = splits[static_cast<std::size_t>(idx)];
        BenchmarkRecord& record = result.ledger.benchmarks[static_cast<std::size_t>(idx)];
        record.benchmark_id = split.benchmark_id;
        record.split_hash = split_hash(split);
        record.train_patients.assign(split.train_patients.begin(), split.train_patients.end());
        record.test_patients.assign(split.test_patients.begin(), split.test_patients.end());

        std::vector<Sample> train_set;
        for (const ManifestEntry* e : series_of(manifest, AnnotationSource::human)) {
            if (!split.train_patients.contains(e->patient_id)) continue;
            for (Sample& s :
                 load_series_samples(data_root, e->series_path, LabelSource::human, {},
                                     train_cfg.image_size, plan.include_empty_slices))
                train_set.push_back(std::move(s));
        }

        TrainConfig cfg = train_cfg;
        cfg.seed = derive_seed(train_cfg.seed, 0x57EB1000ULL + static_cast<std::uint64_t>(split.benchmark_id));
        locked_progress("{\"event\":\"primary_train_start\",\"benchmark\":" +
                        std::to_string(split.benchmark_id) + ",\"train_slices\":" +
                        std::to_string(train_set.size()) + "}");
        try {
            const TrainResult trained = train_detector(cfg, train_set, nullptr, locked_progress);
            const std::string rel = "weights/primary_b" + std::to_string(split.benchmark_id) + ".rdw";
            save_weights(trained.best_weights, out_root / rel);
            record.primary_weights_path = rel;
            record.primary_weights_hash = hex64(hash_file(out_root / rel));

            const EvalSet test_set =
                load_eval_set(manifest, split.test_patients, data_root, train_cfg.image_size);
            record.primary_report = evaluate_on(net, trained.best_weights, test_set, plan,
                                                eval_cfg, record.primary_rollup);
            locked_progress("{\"event\":\"primary_eval\",\"benchmark\":" +
                            std::to_string(split.benchmark_id) + ",\"map50\":" +
                            std::to_string(record.primary_report.map50) + "}");
        } catch (const DivergedTraining& e) {
            record.failed = true;
            record.failure = e.what();
        } catch (const NonFiniteUpdate& e) {
            record.failed = true;
            record.failure = e.what();
        } catch (const NonFiniteActivation& e) {
            record.failed = true;
            record.failure = e.what();
        }
    });

    result.ledger.best_benchmark_id = select_best_benchmark(result.ledger.benchmarks);
    const BenchmarkRecord& best_record =
        result.ledger.benchmarks[static_cast<std::size_t>(result.ledger.best_benchmark_id - 1)];
    result.ledger.best_weights_hash = best_record.primary_weights_hash;
    const ModelWeights best_weights = load_weights(out_root / best_record.primary_weights_path);
    locked_progress("{\"event\":\"best_primary\",\"benchmark\":" +
                    std::to_string(result.ledger.best_benchmark_id) + "}");

    // ---- step 2: pseudo-label every unannotated series with the best model ----
    result.manifest = manifest;
    const std::filesystem::path pseudo_root = out_root / "pseudo_labels";
    for (ManifestEntry& entry : result.manifest.entries) {
        if (entry.annotation_source != AnnotationSource::none) continue;
        long boxes_written = 0;
        for (const std::string& base : list_slice_basenames(data_root, entry.series_path)) {
            std::filesystem::path image_path = data_root / "images" / entry.series_path / (base + ".nii");
            if (!std::filesystem::exists(image_path)) image_path += ".gz";
            const SliceImage slice = read_slice_nifti(image_path);
            const Eigen::ArrayXXd input =
                resize_bilinear(slice.pixels, train_cfg.image_size, train_cfg.image_size);
            const std::vector<Detection> dets =
                net.predict(best_weights, input, plan.pseudo_conf_threshold, plan.nms_iou,
                            plan.max_pseudo_boxes_per_slice);
            write_predictions(dets, pseudo_root / entry.series_path / (base + ".txt"));
            boxes_written += static_cast<long>(dets.size());
        }
        entry.annotation_source = AnnotationSource::pseudo;
        entry.pseudo_model_id = result.ledger.best_weights_hash;
        entry.pseudo_conf_threshold = plan.pseudo_conf_threshold;
        result.ledger.pseudo_series += 1;
        result.ledger.pseudo_slices += entry.slice_count;
        result.ledger.pseudo_boxes += boxes_written;
    }
    save_manifest(result.manifest, out_root / "manifest.jsonl");
    locked_progress("{\"event\":\"pseudolabel_done\",\"series\":" +
                    std::to_string(result.ledger.pseudo_series) + ",\"boxes\":" +
                    std::to_string(result.ledger.pseudo_boxes) + "}");

    // ---- step 3: warm-started finals on human + pseudo minus test patients ----
    parallel_over(plan.n_benchmarks, jobs, [&](int idx) {
        const SplitAssignment& split = splits[static_cast<std::size_t>(idx)];
        BenchmarkRecord& record = result.ledger.benchmarks[static_cast<std::size_t>(idx)];
        if (record.failed) return;

        std::set<std::string> final_patients;
        std::vector<Sample> train_set;
        const auto add_series = [&](const ManifestEntry* e, LabelSource source) {
            for (Sample& s : load_series_samples(data_root, e->series_path, source, pseudo_root,
                                                 train_cfg.image_size, plan.include_empty_slices))
                train_set.push_back(std::move(s));
            final_patients.insert(e->patient_id);
            record.final_train_series.push_back(e->series_path);
        };

        for (const ManifestEntry* e : series_of(result.manifest, AnnotationSource::human)) {
            if (!split.train_patients.contains(e->patient_id)) continue;
            add_series(e, LabelSource::human);
        }
        for (const ManifestEntry* e : series_of(result.manifest, AnnotationSource::pseudo)) {
            if (plan.exclude_test_linked && split.test_patients.contains(e->patient_id)) continue;
            add_series(e, LabelSource::pseudo);
        }

        // leakage audit at assembly: a test-patient scan in the train set is
        // a hard failure, not a warning
        for (const std::string& p : final_patients)
            if (split.test_patients.contains(p))
                throw LeakageDetected("patient " + p + " is in both final-train and test of benchmark " +
                                      std::to_string(split.benchmark_id));
        record.final_train_patients.assign(final_patients.begin(), final_patients.end());

        const ModelWeights* init = nullptr;
        ModelWeights warm;
        if (plan.warm_start) {
            const std::string source_path = plan.warm_start_source == "best"
                                                ? best_record.primary_weights_path
                                                : record.primary_weights_path;
            warm = load_weights(out_root / source_path);
            init = &warm;
        }

        TrainConfig cfg = train_cfg;
        cfg.seed = derive_seed(train_cfg.seed, 0xF1A71000ULL + static_cast<std::uint64_t>(split.benchmark_id));
        locked_progress("{\"event\":\"final_train_start\",\"benchmark\":" +
                        std::to_string(split.benchmark_id) + ",\"train_slices\":" +
                        std::to_string(train_set.size()) + "}");
        try {
            const TrainResult trained = train_detector(cfg, train_set, init, locked_progress);
            const std::string rel = "weights/final_b" + std::to_string(split.benchmark_id) + ".rdw";
            save_weights(trained.best_weights, out_root / rel);
            record.final_weights_path = rel;
            record.final_weights_hash = hex64(hash_file(out_root / rel));

            const EvalSet test_set =
                load_eval_set(manifest, split.test_patients, data_root, train_cfg.image_size);
            record.final_report = evaluate_on(net, trained.best_weights, test_set, plan,
                                              eval_cfg, record.final_rollup);
            locked_progress("{\"event\":\"final_eval\",\"benchmark\":" +
                            std::to_string(split.benchmark_id) + ",\"map50\":" +
                            std::to_string(record.final_report.map50) + "}");
        } catch (const DivergedTraining& e) {
            record.failed = true;
            record.failure = e.what();
        } catch (const NonFiniteUpdate& e) {
            record.failed = true;
            record.failure = e.what();
        } catch (const NonFiniteActivation& e) {
            record.failed = true;
            record.failure = e.what();
        }
    });

    // aggregates over surviving benchmarks
    std::vector<MetricsReport> primary_reports, final_reports;
    for (const BenchmarkRecord& r : result.ledger.benchmarks) {
        if (r.failed) continue;
        primary_reports.push_back(r.primary_report);
        final_reports.push_back(r.final_report);
    }
    result.primary_aggregate = aggregate_benchmarks(primary_reports);
    result.final_aggregate = aggregate_benchmarks(final_reports);

    save_ledger(result.ledger, out_root / "run_ledger.json");
    audit_ledger(result.ledger, out_root);

    {
        std::ofstream json_out(out_root / "report.json", std::ios::binary | std::ios::trunc);
        json_out << selftrain_report_json(result) << "\n";
        std::ofstream md_out(out_root / "report.md", std::ios::binary | std::ios::trunc);
        md_out << selftrain_report_markdown(result);
    }

    // Figure-style curves for the best benchmark's models
    const BenchmarkRecord& best = result.ledger.benchmarks[static_cast<std::size_t>(result.ledger.best_benchmark_id - 1)];
    write_curves_csv(best.primary_report, out_root / "curves" / "primary_best_pr.csv",
                     out_root / "curves" / "primary_best_f1.csv");
    write_curves_csv(best.final_report, out_root / "curves" / "final_best_pr.csv",
                     out_root / "curves" / "final_best_f1.csv");
    return result;
}

void save_ledger(const RunLedger& ledger, const std::filesystem::path& path) {
    json j;
    j["best_benchmark_id"] = ledger.best_benchmark_id;
    j["best_weights_hash"] = ledger.best_weights_hash;
    j["pseudo_series"] = ledger.pseudo_series;
    j["pseudo_slices"] = ledger.pseudo_slices;
    j["pseudo_boxes"] = ledger.pseudo_boxes;
    j["benchmarks"] = json::array();
    for (const BenchmarkRecord& r : ledger.benchmarks) {
        json b;
        b["benchmark_id"] = r.benchmark_id;
        b["failed"] = r.failed;
        if (r.failed) b["failure"] = r.failure;
        b["split_hash"] = r.split_hash;
        b["train_patients"] = r.train_patients;
        b["test_patients"] = r.test_patients;
        b["primary_weights_path"] = r.primary_weights_path;
        b["primary_weights_hash"] = r.primary_weights_hash;
        b["primary_report"] = metrics_to_json(r.primary_report);
        b["primary_rollup"] = {{"mean_ppv", r.primary_rollup.mean_ppv},
                               {"mean_sensitivity", r.primary_rollup.mean_sensitivity},
                               {"n_patients", r.primary_rollup.n_patients}};
        b["final_train_patients"] = r.final_train_patients;
        b["final_train_series"] = r.final_train_series;
        b["final_weights_path"] = r.final_weights_path;
        b["final_weights_hash"] = r.final_weights_hash;
        b["final_report"] = metrics_to_json(r.final_report);
        b["final_rollup"] = {{"mean_ppv", r.final_rollup.mean_ppv},
                             {"mean_sensitivity", r.final_rollup.mean_sensitivity},
                             {"n_patients", r.final_rollup.n_patients}};
        j["benchmarks"].push_back(std::move(b));
    }
    std::filesystem::path parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
}

RunLedger load_ledger(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw FormatError("run ledger is not valid JSON: " + path.string());

    RunLedger ledger;
    ledger.best_benchmark_id = j.at("best_benchmark_id").get<int>();
    ledger.best_weights_hash = j.at("best_weights_hash").get<std::string>();
    ledger.pseudo_series = j.value("pseudo_series", 0L);
    ledger.pseudo_slices = j.value("pseudo_slices", 0L);
    ledger.pseudo_boxes = j.value("pseudo_boxes", 0L);
    for (const json& b : j.at("benchmarks")) {
        BenchmarkRecord r;
        r.benchmark_id = b.at("benchmark_id").get<int>();
        r.failed = b.value("failed", false);
        r.failure = b.value("failure", std::string());
        r.split_hash = b.value("split_hash", std::string());
        r.train_patients = b.value("train_patients", std::vector<std::string>());
        r.test_patients = b.value("test_patients", std::vector<std::string>());
        r.primary_weights_path = b.value("primary_weights_path", std::string());
        r.primary_weights_hash = b.value("primary_weights_hash", std::string());
        if (b.contains("primary_report")) r.primary_report = metrics_from_json(b.at("primary_report"));
        if (b.contains("primary_rollup")) {
            r.primary_rollup.mean_ppv = b.at("primary_rollup").value("mean_ppv", 0.0);
            r.primary_rollup.mean_sensitivity = b.at("primary_rollup").value("mean_sensitivity", 0.0);
            r.primary_rollup.n_patients = b.at("primary_rollup").value("n_patients", 0L);
        }
        r.final_train_patients = b.value("final_train_patients", std::vector<std::string>());
        r.final_train_series = b.value("final_train_series", std::vector<std::string>());
        r.final_weights_path = b.value("final_weights_path", std::string());
        r.final_weights_hash = b.value("final_weights_hash", std::string());
        if (b.contains("final_report")) r.final_report = metrics_from_json(b.at("final_report"));
        if (b.contains("final_rollup")) {
            r.final_rollup.mean_ppv = b.at("final_rollup").value("mean_ppv", 0.0);
            r.final_rollup.mean_sensitivity = b.at("final_rollup").value("mean_sensitivity", 0.0);
            r.final_rollup.n_patients = b.at("final_rollup").value("n_patients", 0L);
        }
        ledger.benchmarks.push_back(std::move(r));
    }
    return ledger;
}

void audit_ledger(const RunLedger& ledger, const std::filesystem::path& out_root) {
    int best_seen = 0;
    for (const BenchmarkRecord& r : ledger.benchmarks) {
        if (r.benchmark_id == ledger.best_benchmark_id) ++best_seen;
        if (r.failed) continue;
        std::set<std::string> test(r.test_patients.begin(), r.test_patients.end());
        for (const std::string& p : r.final_train_patients)
            if (test.contains(p))
                throw LeakageDetected("ledger: patient " + p + " leaks into benchmark " +
                                      std::to_string(r.benchmark_id));
        for (const auto& [rel, expected] :
             {std::pair{r.primary_weights_path, r.primary_weights_hash},
              std::pair{r.final_weights_path, r.final_weights_hash}}) {
            if (rel.empty()) continue;
            const std::filesystem::path file = out_root / rel;
            if (!std::filesystem::exists(file))
                throw IoFailure("ledger references missing artifact " + file.string());
            if (hex64(hash_file(file)) != expected)
                throw FormatError("artifact hash mismatch for " + file.string());
        }
    }
    if (best_seen != 1)
        throw FormatError("ledger must name exactly one best benchmark");
}

std::string selftrain_report_json(const SelfTrainResult& result) {
    json j;
    j["best_benchmark_id"] = result.ledger.best_benchmark_id;
    j["benchmarks"] = json::array();
    for (const BenchmarkRecord& r : result.ledger.benchmarks) {
        json b;
        b["benchmark_id"] = r.benchmark_id;
        b["failed"] = r.failed;
        b["primary"] = metrics_to_json(r.primary_report);
        b["final"] = metrics_to_json(r.final_report);
        j["benchmarks"].push_back(std::move(b));
    }
    const auto agg_json = [](const BenchmarkAggregate& a) {
        json g;
        g["ppv"] = {{"mean", a.ppv.mean}, {"std", a.ppv.stddev}};
        g["sensitivity"] = {{"mean", a.sensitivity.mean}, {"std", a.sensitivity.stddev}};
        g["map50"] = {{"mean", a.map50.mean}, {"std", a.map50.stddev}};
        g["n"] = a.n;
        return g;
    };
    j["average"] = {{"primary", agg_json(result.primary_aggregate)},
                    {"final", agg_json(result.final_aggregate)}};
    return j.dump(2);
}

std::string selftrain_report_markdown(const SelfTrainResult& result) {
    std::string md;
    md += "| Benchmark | Primary PPV | Primary Sensitivity | Primary mAP@0.5 "
          "| Final PPV | Final Sensitivity | Final mAP@0.5 |\n";
    md += "|---|---|---|---|---|---|---|\n";
    for (const BenchmarkRecord& r : result.ledger.benchmarks) {
        if (r.failed) {
            md += "| " + std::to_string(r.benchmark_id) + " | failed | failed | failed "
                  "| failed | failed | failed |\n";
            continue;
        }
        md += "| " + std::to_string(r.benchmark_id) + " | " + fmt2(r.primary_report.ppv) + " | " +
              fmt2(r.primary_report.sensitivity) + " | " + fmt2(r.primary_report.map50) + " | " +
              fmt2(r.final_report.ppv) + " | " + fmt2(r.final_report.sensitivity) + " | " +
              fmt2(r.final_report.map50) + " |\n";
    }
    const auto avg_cell = [](const MetricAggregate& a) {
        return fmt2(a.mean) + " ± " + fmt_std(a.stddev);
    };
    md += "| Average performance | " + avg_cell(result.primary_aggregate.ppv) + " | " +
          avg_cell(result.primary_aggregate.sensitivity) + " | " +
          avg_cell(result.primary_aggregate.map50) + " | " + avg_cell(result.final_aggregate.ppv) +
          " | " + avg_cell(result.final_aggregate.sensitivity) + " | " +
          avg_cell(result.final_aggregate.map50) + " |\n";
    return md;
}

}  // namespace kdetect
