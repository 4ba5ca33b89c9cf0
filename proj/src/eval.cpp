#include "kdetect/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>

#include "kdetect/errors.hpp"

namespace kdetect {

namespace {

struct RankedPred {
    double confidence;
    std::size_t image;
    std::size_t index_in_image;
    bool is_tp = false;
};

// Per-image greedy matching restricted to predictions with conf >= cutoff.
void match_counts(const std::vector<std::vector<Detection>>& preds,
                  const std::vector<std::vector<BoxLabel>>& gts, double iou_threshold,
                  double cutoff, long& tp, long& fp, long& n_gt) {
    tp = fp = n_gt = 0;
    for (std::size_t img = 0; img < preds.size(); ++img) {
        std::vector<Detection> kept;
        for (const Detection& d : preds[img])
            if (d.confidence >= cutoff) kept.push_back(d);
        const MatchResult m = match(kept, gts[img], iou_threshold);
        for (char t : m.is_tp) (t ? tp : fp) += 1;
        n_gt += static_cast<long>(gts[img].size());
    }
}

}  // namespace

void validate(const EvalConfig& cfg) {
    if (!(cfg.iou_threshold > 0.0 && cfg.iou_threshold < 1.0))
        throw ConfigError("iou_threshold must be in (0, 1)");
    const double steps = 1.0 / cfg.confidence_step;
    if (!(cfg.confidence_step > 0.0) || std::abs(steps - std::round(steps)) > 1e-9)
        throw ConfigError("confidence_step must divide 1 exactly");
    if (cfg.operating_conf < 0.0 || cfg.operating_conf > 1.0)
        throw ConfigError("operating_conf must be in [0, 1]");
}

MatchResult match(const std::vector<Detection>& preds, const std::vector<BoxLabel>& gts,
                  double iou_threshold) {
    MatchResult result;
    result.gt_matched.assign(gts.size(), 0);

    // precompute every IoU; order predictions by confidence, then best IoU
    std::vector<std::vector<double>> ious(preds.size(), std::vector<double>(gts.size(), 0.0));
    std::vector<double> best_iou(preds.size(), 0.0);
    for (std::size_t p = 0; p < preds.size(); ++p)
        for (std::size_t g = 0; g < gts.size(); ++g) {
            ious[p][g] = iou(preds[p].box, gts[g]);
            best_iou[p] = std::max(best_iou[p], ious[p][g]);
        }

    result.order.resize(preds.size());
    std::iota(result.order.begin(), result.order.end(), 0);
    std::stable_sort(result.order.begin(), result.order.end(), [&](int a, int b) {
        const auto ua = static_cast<std::size_t>(a), ub = static_cast<std::size_t>(b);
        if (preds[ua].confidence != preds[ub].confidence)
            return preds[ua].confidence > preds[ub].confidence;
        return best_iou[ua] > best_iou[ub];
    });

    result.is_tp.assign(preds.size(), 0);
    for (std::size_t rank = 0; rank < result.order.size(); ++rank) {
        const auto p = static_cast<std::size_t>(result.order[rank]);
        double best = -1.0;
        std::ptrdiff_t best_g = -1;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (result.gt_matched[g]) continue;
            if (ious[p][g] >= iou_threshold && ious[p][g] > best) {
                best = ious[p][g];
                best_g = static_cast<std::ptrdiff_t>(g);
            }
        }
        if (best_g >= 0) {
            result.gt_matched[static_cast<std::size_t>(best_g)] = 1;
            result.is_tp[rank] = 1;
        }
    }
    return result;
}

PrPoint pr_metrics(long tp, long fp, long n_gt) {
    PrPoint p;
    if (tp + fp == 0) {
        p.ppv = 1.0;
        p.ppv_degenerate = true;
    } else {
        p.ppv = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    p.sensitivity = n_gt == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(n_gt);
    return p;
}

double average_precision(const std::vector<std::vector<Detection>>& preds,
                         const std::vector<std::vector<BoxLabel>>& gts, const EvalConfig& cfg) {
    if (preds.size() != gts.size()) throw ShapeMismatch("prediction/ground-truth image counts differ");
    long n_gt = 0;
    for (const auto& g : gts) n_gt += static_cast<long>(g.size());
    if (n_gt == 0) throw ZeroGroundTruth("average precision needs at least one ground-truth box");

    // per-image greedy matching, then a global confidence ranking
    std::vector<RankedPred> ranked;
    for (std::size_t img = 0; img < preds.size(); ++img) {
        const MatchResult m = match(preds[img], gts[img], cfg.iou_threshold);
        for (std::size_t rank = 0; rank < m.order.size(); ++rank) {
            const auto p = static_cast<std::size_t>(m.order[rank]);
            ranked.push_back({preds[img][p].confidence, img, p, m.is_tp[rank] != 0});
        }
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const RankedPred& a, const RankedPred& b) {
        return a.confidence > b.confidence;
    });

    // one PR point per distinct confidence; tie groups are atomic so the
    // sweep is independent of tie ordering
    std::vector<double> precision, recall;
    long tp = 0, fp = 0;
    for (std::size_t k = 0; k < ranked.size();) {
        std::size_t end = k;
        while (end < ranked.size() && ranked[end].confidence == ranked[k].confidence) {
            (ranked[end].is_tp ? tp : fp) += 1;
            ++end;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
        k = end;
    }

    if (cfg.eleven_point) {
        double sum = 0.0;
        for (int i = 0; i <= 10; ++i) {
            const double r = i / 10.0;
            double best = 0.0;
            for (std::size_t k = 0; k < recall.size(); ++k)
                if (recall[k] >= r) best = std::max(best, precision[k]);
            sum += best;
        }
        return sum / 11.0;
    }

    // all-point interpolation: area under the precision envelope
    double ap = 0.0;
    double prev_recall = 0.0;
    for (std::size_t k = 0; k < recall.size(); ++k) {
        double envelope = 0.0;
        for (std::size_t m = k; m < precision.size(); ++m) envelope = std::max(envelope, precision[m]);
        ap += (recall[k] - prev_recall) * envelope;
        prev_recall = recall[k];
    }
    return ap;
}

MetricsReport evaluate(const std::vector<std::vector<Detection>>& preds,
                       const std::vector<std::vector<BoxLabel>>& gts, const EvalConfig& cfg) {
    validate(cfg);
    if (preds.size() != gts.size()) throw ShapeMismatch("prediction/ground-truth image counts differ");

    MetricsReport report;
    report.operating_conf = cfg.operating_conf;

    long n_gt_total = 0;
    for (const auto& g : gts) n_gt_total += static_cast<long>(g.size());

    long tp = 0, fp = 0, n_gt = 0;
    match_counts(preds, gts, cfg.iou_threshold, cfg.operating_conf, tp, fp, n_gt);
    const PrPoint at_op = pr_metrics(tp, fp, n_gt);
    report.tp = tp;
    report.fp = fp;
    report.fn = n_gt - tp;
    report.ppv = at_op.ppv;
    report.sensitivity = at_op.sensitivity;
    report.ppv_degenerate = at_op.ppv_degenerate;

    match_counts(preds, gts, cfg.iou_threshold, 0.5, tp, fp, n_gt);
    const PrPoint at_half = pr_metrics(tp, fp, n_gt);
    report.ppv_at_conf50 = at_half.ppv;
    report.sensitivity_at_conf50 = at_half.sensitivity;

    report.map50 = n_gt_total > 0 ? average_precision(preds, gts, cfg) : 0.0;

    // PR curve along the global ranking
    {
        std::vector<RankedPred> ranked;
        for (std::size_t img = 0; img < preds.size(); ++img) {
            const MatchResult m = match(preds[img], gts[img], cfg.iou_threshold);
            for (std::size_t rank = 0; rank < m.order.size(); ++rank)
                ranked.push_back({preds[img][static_cast<std::size_t>(m.order[rank])].confidence,
                                  img, 0, m.is_tp[rank] != 0});
        }
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const RankedPred& a, const RankedPred& b) {
                             return a.confidence > b.confidence;
                         });
        long ctp = 0, cfp = 0;
        for (const RankedPred& r : ranked) {
            (r.is_tp ? ctp : cfp) += 1;
            const double prec = static_cast<double>(ctp) / static_cast<double>(ctp + cfp);
            const double rec =
                n_gt_total > 0 ? static_cast<double>(ctp) / static_cast<double>(n_gt_total) : 1.0;
            report.pr_curve.emplace_back(rec, prec);
        }
    }

    // F1 sweep on the confidence grid; the lowest confidence wins ties
    const int n_steps = static_cast<int>(std::llround(1.0 / cfg.confidence_step));
    double best_f1 = -1.0;
    double best_conf = 0.0;
    for (int i = 0; i <= n_steps; ++i) {
        const double c = static_cast<double>(i) * cfg.confidence_step;
        match_counts(preds, gts, cfg.iou_threshold, c, tp, fp, n_gt);
        const PrPoint pr = pr_metrics(tp, fp, n_gt);
        const double denom = pr.ppv + pr.sensitivity;
        const double f1 = denom > 0.0 ? 2.0 * pr.ppv * pr.sensitivity / denom : 0.0;
        report.f1_curve.emplace_back(c, f1);
        if (f1 > best_f1) {
            best_f1 = f1;
            best_conf = c;
        }
    }
    report.f1_best = best_f1;
    report.conf_at_f1_best = best_conf;
    return report;
}

PatientRollup patient_rollup(const std::vector<std::vector<Detection>>& preds,
                             const std::vector<std::vector<BoxLabel>>& gts,
                             const std::vector<std::string>& patient_ids, const EvalConfig& cfg) {
    if (preds.size() != gts.size() || preds.size() != patient_ids.size())
        throw ShapeMismatch("patient roll-up inputs must be aligned");
    std::map<std::string, std::array<long, 3>> counts;  // tp, fp, n_gt
    for (std::size_t img = 0; img < preds.size(); ++img) {
        std::vector<Detection> kept;
        for (const Detection& d : preds[img])
            if (d.confidence >= cfg.operating_conf) kept.push_back(d);
        const MatchResult m = match(kept, gts[img], cfg.iou_threshold);
        auto& c = counts[patient_ids[img]];
        for (char t : m.is_tp) (t ? c[0] : c[1]) += 1;
        c[2] += static_cast<long>(gts[img].size());
    }
    PatientRollup roll;
    for (const auto& [patient, c] : counts) {
        const PrPoint pr = pr_metrics(c[0], c[1], c[2]);
        roll.mean_ppv += pr.ppv;
        roll.mean_sensitivity += pr.sensitivity;
        roll.n_patients += 1;
    }
    if (roll.n_patients > 0) {
        roll.mean_ppv /= static_cast<double>(roll.n_patients);
        roll.mean_sensitivity /= static_cast<double>(roll.n_patients);
    }
    return roll;
}

BenchmarkAggregate aggregate_benchmarks(const std::vector<MetricsReport>& reports) {
    if (reports.size() < 2)
        throw TooFewReports("need >= 2 reports, got " + std::to_string(reports.size()));

    const auto aggregate = [&](auto field) {
        MetricAggregate agg;
        for (const MetricsReport& r : reports) agg.mean += field(r);
        agg.mean /= static_cast<double>(reports.size());
        double ss = 0.0;
        for (const MetricsReport& r : reports) {
            const double d = field(r) - agg.mean;
            ss += d * d;
        }
        agg.stddev = std::sqrt(ss / static_cast<double>(reports.size()));
        return agg;
    };

    BenchmarkAggregate out;
    out.n = static_cast<int>(reports.size());
    out.ppv = aggregate([](const MetricsReport& r) { return r.ppv; });
    out.sensitivity = aggregate([](const MetricsReport& r) { return r.sensitivity; });
    out.map50 = aggregate([](const MetricsReport& r) { return r.map50; });
    return out;
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["ppv"] = report.ppv;
    j["sensitivity"] = report.sensitivity;
    j["map50"] = report.map50;
    j["f1_best"] = report.f1_best;
    j["conf_at_f1_best"] = report.conf_at_f1_best;
    j["tp"] = report.tp;
    j["fp"] = report.fp;
    j["fn"] = report.fn;
    j["ppv_degenerate"] = report.ppv_degenerate;
    j["operating_conf"] = report.operating_conf;
    j["ppv_at_conf50"] = report.ppv_at_conf50;
    j["sensitivity_at_conf50"] = report.sensitivity_at_conf50;
    j["pr_curve"] = report.pr_curve;
    j["f1_curve"] = report.f1_curve;
    return j.dump(2);
}

void write_curves_csv(const MetricsReport& report, const std::filesystem::path& pr_path,
                      const std::filesystem::path& f1_path) {
    const auto write_csv = [](const std::vector<std::pair<double, double>>& rows,
                              const std::string& header, const std::filesystem::path& path) {
        std::filesystem::path parent = path.parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
        out << header << "\n";
        char buf[80];
        for (const auto& [a, b] : rows) {
            std::snprintf(buf, sizeof(buf), "%.6f,%.6f\n", a, b);
            out << buf;
        }
    };
    write_csv(report.pr_curve, "recall,precision", pr_path);
    write_csv(report.f1_curve, "confidence,f1", f1_path);
}

}  // namespace kdetect
