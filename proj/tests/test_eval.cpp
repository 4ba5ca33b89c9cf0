#include "kdetect/eval.hpp"

#include <cmath>

#include "doctest.h"
#include "kdetect/errors.hpp"
#include "kdetect/rng.hpp"
#include "support/test_support.hpp"

using namespace kdetect;

namespace {

BoxLabel box_at(double cx, double cy, double w, double h) { return {0, cx, cy, w, h}; }

// paper Table 2, columns in row order benchmark 1..10
const std::vector<double> kPrimaryPpv = {0.93, 0.97, 0.97, 0.93, 0.93, 0.93, 0.92, 0.93, 0.93, 0.95};
const std::vector<double> kPrimarySens = {0.87, 0.91, 0.97, 0.83, 0.85, 0.86, 0.85, 0.85, 0.87, 0.88};
const std::vector<double> kPrimaryMap = {0.91, 0.95, 0.95, 0.88, 0.90, 0.88, 0.87, 0.90, 0.91, 0.92};
const std::vector<double> kFinalPpv = {0.98, 0.99, 0.99, 0.96, 0.97, 0.98, 0.95, 0.91, 0.90, 0.92};
const std::vector<double> kFinalSens = {0.98, 0.98, 0.99, 0.98, 0.98, 0.98, 0.97, 0.98, 0.98, 0.98};
const std::vector<double> kFinalMap = {0.97, 0.96, 0.98, 0.95, 0.97, 0.95, 0.92, 0.95, 0.94, 0.96};

std::vector<MetricsReport> reports_from(const std::vector<double>& ppv,
                                        const std::vector<double>& sens,
                                        const std::vector<double>& map) {
    std::vector<MetricsReport> reports(ppv.size());
    for (std::size_t i = 0; i < ppv.size(); ++i) {
        reports[i].ppv = ppv[i];
        reports[i].sensitivity = sens[i];
        reports[i].map50 = map[i];
    }
    return reports;
}

}  // namespace

TEST_CASE("greedy matching: duplicate hits become false positives") {
    const BoxLabel gt = box_at(0.5, 0.5, 0.3, 0.3);
    BoxLabel near = gt;
    near.cx += 0.02;
    const std::vector<Detection> preds = {{gt, 0.9}, {near, 0.8}};
    const MatchResult m = match(preds, {gt}, 0.5);
    REQUIRE(m.is_tp.size() == 2);
    CHECK(m.is_tp[0] == 1);
    CHECK(m.is_tp[1] == 0);
    CHECK(m.gt_matched[0] == 1);
}

TEST_CASE("no predictions leaves every ground truth unmatched") {
    const MatchResult m = match({}, {box_at(0.3, 0.3, 0.2, 0.2), box_at(0.7, 0.7, 0.2, 0.2)}, 0.5);
    CHECK(m.is_tp.empty());
    CHECK(m.gt_matched == std::vector<char>{0, 0});
}

TEST_CASE("the IoU threshold is strict: 0.49 misses at 0.5") {
    // width chosen so IoU = 0.49: one-dimensional offset d gives
    // IoU = (w - d) / (w + d); w=0.3, IoU=0.49 -> d = 0.3*0.51/1.49
    const BoxLabel gt = box_at(0.4, 0.5, 0.3, 0.3);
    BoxLabel off = gt;
    off.cx += 0.3 * 0.51 / 1.49 + 1e-9;
    REQUIRE(iou(gt, off) < 0.5);
    REQUIRE(iou(gt, off) > 0.489);
    const MatchResult m = match({{off, 0.9}}, {gt}, 0.5);
    CHECK(m.is_tp[0] == 0);
}

TEST_CASE("one ground truth is never claimed by two predictions") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<BoxLabel> gts;
        for (int g = 0; g < 3; ++g)
            gts.push_back(box_at(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.25, 0.25));
        std::vector<Detection> preds;
        for (int p = 0; p < 6; ++p)
            preds.push_back({box_at(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.25, 0.25),
                             rng.uniform()});
        const MatchResult m = match(preds, gts, 0.5);
        long tp = 0;
        for (char t : m.is_tp) tp += t;
        long matched = 0;
        for (char g : m.gt_matched) matched += g;
        CHECK(tp == matched);  // one-to-one
    }
}

TEST_CASE("ppv and sensitivity definitions including degenerate cases") {
    const PrPoint a = pr_metrics(2, 1, 2);
    CHECK(a.ppv == doctest::Approx(2.0 / 3.0));
    CHECK(a.sensitivity == doctest::Approx(1.0));
    CHECK_FALSE(a.ppv_degenerate);

    const PrPoint empty = pr_metrics(0, 0, 5);
    CHECK(empty.ppv == 1.0);
    CHECK(empty.ppv_degenerate);
    CHECK(empty.sensitivity == 0.0);

    const PrPoint perfect = pr_metrics(4, 0, 4);
    CHECK(perfect.ppv == 1.0);
    CHECK(perfect.sensitivity == 1.0);
}

TEST_CASE("the three-prediction AP example evaluates to 0.8333") {
    // 2 GT in separate images; ranked preds TP(0.9), FP(0.8), TP(0.7)
    const BoxLabel g1 = box_at(0.3, 0.3, 0.2, 0.2);
    const BoxLabel g2 = box_at(0.7, 0.7, 0.2, 0.2);
    std::vector<std::vector<Detection>> preds(2);
    std::vector<std::vector<BoxLabel>> gts(2);
    gts[0] = {g1};
    gts[1] = {g2};
    preds[0] = {{g1, 0.9}, {box_at(0.3, 0.8, 0.1, 0.1), 0.8}};
    preds[1] = {{g2, 0.7}};
    EvalConfig cfg;
    const double ap = average_precision(preds, gts, cfg);
    CHECK(ap == doctest::Approx(0.5 + 0.5 * (2.0 / 3.0)).epsilon(1e-12));
    CHECK(ap == doctest::Approx(test::brute_force_ap(preds, gts, 0.5)).epsilon(1e-12));
}

TEST_CASE("perfect and null detectors bound AP") {
    const BoxLabel g = box_at(0.5, 0.5, 0.4, 0.4);
    std::vector<std::vector<BoxLabel>> gts = {{g}};
    EvalConfig cfg;
    CHECK(average_precision({{{g, 1.0}}}, gts, cfg) == 1.0);
    CHECK(average_precision({{{box_at(0.1, 0.1, 0.1, 0.1), 1.0}}}, gts, cfg) == 0.0);
    CHECK_THROWS_AS(average_precision({{}}, {{}}, cfg), ZeroGroundTruth);
}

TEST_CASE("sweep AP equals the brute-force oracle on randomized instances") {
    Rng rng(2718);
    EvalConfig cfg;
    for (int trial = 0; trial < 60; ++trial) {
        const int n_images = 1 + static_cast<int>(rng.uniform_int(3));
        std::vector<std::vector<Detection>> preds(static_cast<std::size_t>(n_images));
        std::vector<std::vector<BoxLabel>> gts(static_cast<std::size_t>(n_images));
        long n_gt = 0;
        for (int img = 0; img < n_images; ++img) {
            const int gn = static_cast<int>(rng.uniform_int(4));
            const int pn = static_cast<int>(rng.uniform_int(5));
            for (int g = 0; g < gn; ++g) {
                gts[img].push_back(box_at(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                                          rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)));
                ++n_gt;
            }
            for (int p = 0; p < pn; ++p) {
                BoxLabel b = gts[img].empty() || rng.uniform() < 0.4
                                 ? box_at(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                                          rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3))
                                 : gts[img][rng.uniform_int(gts[img].size())];
                if (rng.uniform() < 0.5) b.cx = std::min(1.0 - b.w / 2, b.cx + rng.uniform(0.0, 0.1));
                // confidences on a coarse grid so ties occur
                preds[img].push_back({b, std::round(rng.uniform() * 20.0) / 20.0});
            }
        }
        if (n_gt == 0) continue;
        CHECK(average_precision(preds, gts, cfg) ==
              doctest::Approx(test::brute_force_ap(preds, gts, cfg.iou_threshold)).epsilon(1e-12));
    }
}

TEST_CASE("f1 sweep reports the peak and the lowest peak confidence") {
    const BoxLabel g = box_at(0.5, 0.5, 0.4, 0.4);
    std::vector<std::vector<Detection>> preds = {{{g, 0.8}}};
    std::vector<std::vector<BoxLabel>> gts = {{g}};
    EvalConfig cfg;
    cfg.operating_conf = 0.25;
    const MetricsReport report = evaluate(preds, gts, cfg);
    CHECK(report.f1_best == doctest::Approx(1.0));
    CHECK(report.conf_at_f1_best == 0.0);  // perfect from the lowest grid point
    CHECK(report.map50 == doctest::Approx(1.0));
    CHECK(report.ppv == 1.0);
    CHECK(report.sensitivity == 1.0);

    // F1 from stated ppv/sensitivity: 2*0.97*0.92/(0.97+0.92)
    const PrPoint p{0.97, 0.92, false};
    CHECK(2 * p.ppv * p.sensitivity / (p.ppv + p.sensitivity) == doctest::Approx(0.9443).epsilon(1e-3));
}

TEST_CASE("rising operating confidence never raises TP, FP or sensitivity") {
    Rng rng(31415);
    std::vector<std::vector<Detection>> preds(3);
    std::vector<std::vector<BoxLabel>> gts(3);
    for (int img = 0; img < 3; ++img) {
        for (int g = 0; g < 3; ++g)
            gts[img].push_back(box_at(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), 0.2, 0.2));
        for (int p = 0; p < 5; ++p) {
            BoxLabel b = gts[img][rng.uniform_int(3)];
            b.cx += rng.uniform(-0.05, 0.05);
            preds[img].push_back({b, rng.uniform()});
        }
    }
    EvalConfig cfg;
    long prev_tp = -1, prev_fp = -1;
    double prev_sens = 2.0;
    for (double c = 0.0; c <= 1.0; c += 0.1) {
        cfg.operating_conf = c;
        const MetricsReport r = evaluate(preds, gts, cfg);
        if (prev_tp >= 0) {
            CHECK(r.tp <= prev_tp);
            CHECK(r.fp <= prev_fp);
            CHECK(r.sensitivity <= prev_sens);
        }
        prev_tp = r.tp;
        prev_fp = r.fp;
        prev_sens = r.sensitivity;
    }
}

TEST_CASE("pr_curve recall is non-decreasing as emitted") {
    Rng rng(161);
    std::vector<std::vector<Detection>> preds(2);
    std::vector<std::vector<BoxLabel>> gts(2);
    for (int img = 0; img < 2; ++img) {
        gts[img].push_back(box_at(0.4, 0.4, 0.3, 0.3));
        for (int p = 0; p < 4; ++p) {
            BoxLabel b = gts[img][0];
            b.cx += rng.uniform(-0.1, 0.1);
            preds[img].push_back({b, rng.uniform()});
        }
    }
    const MetricsReport r = evaluate(preds, gts, EvalConfig{});
    for (std::size_t i = 1; i < r.pr_curve.size(); ++i)
        CHECK(r.pr_curve[i].first >= r.pr_curve[i - 1].first);
}

TEST_CASE("aggregation reproduces the published Table 2 arithmetic") {
    const auto primary = reports_from(kPrimaryPpv, kPrimarySens, kPrimaryMap);
    const auto final_reports = reports_from(kFinalPpv, kFinalSens, kFinalMap);

    const BenchmarkAggregate p = aggregate_benchmarks(primary);
    CHECK(std::abs(p.ppv.mean - 0.94) <= 0.005);
    CHECK(std::abs(p.sensitivity.mean - 0.87) <= 0.005);
    CHECK(std::abs(p.map50.mean - 0.91) <= 0.005);
    // published 0.87 +- 0.04: population std of the sensitivity column
    CHECK(p.sensitivity.stddev == doctest::Approx(0.038).epsilon(0.02));

    const BenchmarkAggregate f = aggregate_benchmarks(final_reports);
    CHECK(std::abs(f.ppv.mean - 0.95) <= 0.005 + 1e-12);
    CHECK(std::abs(f.sensitivity.mean - 0.98) <= 0.005);
    CHECK(std::abs(f.map50.mean - 0.95) <= 0.005 + 1e-12);
    // the +-0.004 column: population (divisor n) standard deviation
    CHECK(std::abs(f.sensitivity.stddev - 0.004) <= 0.0005);

    // identical reports have zero spread
    std::vector<MetricsReport> constant(5, primary[0]);
    const BenchmarkAggregate c = aggregate_benchmarks(constant);
    CHECK(c.ppv.stddev == 0.0);
    CHECK(c.ppv.mean == primary[0].ppv);

    CHECK_THROWS_AS(aggregate_benchmarks({primary[0]}), TooFewReports);
}

TEST_CASE("eleven-point AP stays within [0,1] and tracks the all-point value") {
    const BoxLabel g = box_at(0.5, 0.5, 0.4, 0.4);
    std::vector<std::vector<Detection>> preds = {{{g, 0.9}}};
    std::vector<std::vector<BoxLabel>> gts = {{g}};
    EvalConfig cfg;
    cfg.eleven_point = true;
    CHECK(average_precision(preds, gts, cfg) == doctest::Approx(1.0));
}
