#include "kdetect/manifest.hpp"

#include "doctest.h"
#include "kdetect/errors.hpp"
#include "support/test_support.hpp"

using namespace kdetect;

namespace {

std::vector<std::string> patient_ids(int n) {
    std::vector<std::string> out;
    for (int i = 0; i < n; ++i) out.push_back("P" + std::to_string(1000 + i));
    return out;
}

}  // namespace

TEST_CASE("223 patients at fraction 0.2 split 45/178 in every benchmark") {
    const auto splits = make_benchmarks(patient_ids(223), 10, 0.20, 42);
    REQUIRE(splits.size() == 10);
    for (const SplitAssignment& s : splits) {
        CHECK(s.test_patients.size() == 45);
        CHECK(s.train_patients.size() == 178);
    }
}

TEST_CASE("splits are deterministic in the seed and patient-disjoint") {
    const auto a = make_benchmarks(patient_ids(40), 10, 0.2, 7);
    const auto b = make_benchmarks(patient_ids(40), 10, 0.2, 7);
    for (int i = 0; i < 10; ++i) {
        CHECK(a[i].test_patients == b[i].test_patients);
        CHECK(a[i].train_patients == b[i].train_patients);
        for (const std::string& p : a[i].test_patients)
            CHECK_FALSE(a[i].train_patients.contains(p));
        CHECK(a[i].test_patients.size() + a[i].train_patients.size() == 40);
    }
    const auto c = make_benchmarks(patient_ids(40), 10, 0.2, 8);
    bool any_difference = false;
    for (int i = 0; i < 10; ++i) any_difference |= a[i].test_patients != c[i].test_patients;
    CHECK(any_difference);
}

TEST_CASE("assignment ignores the incoming patient order") {
    std::vector<std::string> forward = patient_ids(20);
    std::vector<std::string> reversed(forward.rbegin(), forward.rend());
    const auto a = make_benchmarks(forward, 3, 0.2, 5);
    const auto b = make_benchmarks(reversed, 3, 0.2, 5);
    for (int i = 0; i < 3; ++i) CHECK(a[i].test_patients == b[i].test_patients);
}

TEST_CASE("too few patients is an error") {
    CHECK_THROWS_AS(make_benchmarks(patient_ids(4), 10, 0.2, 0), TooFewPatients);
    CHECK_THROWS_AS(make_benchmarks(patient_ids(10), 10, 1.0, 0), ConfigError);
}

TEST_CASE("manifest JSONL round trips every field") {
    test::TempDir tmp("manifest");
    Manifest manifest;
    ManifestEntry a;
    a.patient_id = "P001";
    a.study_id = "S001";
    a.series_path = "P001_S001";
    a.slice_count = 16;
    a.annotation_source = AnnotationSource::human;
    a.split = Split::train;
    a.benchmark_id = 3;
    a.empty_slices = {0, 15};
    manifest.entries.push_back(a);

    ManifestEntry b;
    b.patient_id = "P002";
    b.study_id = "S001";
    b.series_path = "P002_S001";
    b.slice_count = 16;
    b.annotation_source = AnnotationSource::pseudo;
    b.pseudo_model_id = "deadbeef";
    b.pseudo_conf_threshold = 0.25;
    manifest.entries.push_back(b);

    save_manifest(manifest, tmp / "m.jsonl");
    const Manifest back = load_manifest(tmp / "m.jsonl");
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].patient_id == "P001");
    CHECK(back.entries[0].split == Split::train);
    CHECK(back.entries[0].benchmark_id == 3);
    CHECK(back.entries[0].empty_slices == std::vector<int>{0, 15});
    CHECK(back.entries[1].annotation_source == AnnotationSource::pseudo);
    CHECK(back.entries[1].pseudo_model_id == "deadbeef");
    CHECK(back.entries[1].pseudo_conf_threshold == 0.25);

    // saving again is byte-identical
    save_manifest(back, tmp / "m2.jsonl");
    CHECK(test::read_bytes(tmp / "m.jsonl") == test::read_bytes(tmp / "m2.jsonl"));
}

TEST_CASE("duplicate keys and contradictory splits are rejected") {
    Manifest manifest;
    ManifestEntry a;
    a.patient_id = "P001";
    a.study_id = "S001";
    a.series_path = "X";
    manifest.entries.push_back(a);
    manifest.entries.push_back(a);
    CHECK_THROWS_AS(validate(manifest), ConfigError);

    Manifest split_conflict;
    ManifestEntry t = a;
    t.series_path = "X1";
    t.split = Split::train;
    t.benchmark_id = 1;
    ManifestEntry u = a;
    u.series_path = "X2";
    u.split = Split::test;
    u.benchmark_id = 1;
    split_conflict.entries = {t, u};
    CHECK_THROWS_AS(validate(split_conflict), ConfigError);

    // the same patient may sit in different splits of different benchmarks
    u.benchmark_id = 2;
    Manifest ok;
    ok.entries = {t, u};
    CHECK_NOTHROW(validate(ok));
}
