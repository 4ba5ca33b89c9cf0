#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace kdetect {

enum class AnnotationSource { human, pseudo, none };
enum class Split { train, test, unassigned };

std::string to_string(AnnotationSource s);
std::string to_string(Split s);
AnnotationSource annotation_source_from_string(const std::string& s);
Split split_from_string(const std::string& s);

// One series of one study of one patient; series_path is the directory key
// shared by the image and label trees.
struct ManifestEntry {
    std::string patient_id;
    std::string study_id;
    std::string series_path;
    int slice_count = 0;
    AnnotationSource annotation_source = AnnotationSource::none;
    Split split = Split::unassigned;
    std::optional<int> benchmark_id;
    // pseudo-label provenance, set by the self-training step
    std::string pseudo_model_id;
    double pseudo_conf_threshold = 0.0;
    // slices with no annotated box (kept as negatives, filterable)
    std::vector<int> empty_slices;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
};

// Enforces key uniqueness and per-benchmark patient split consistency.
void validate(const Manifest& manifest);

// JSON-lines persistence, one entry per line, keys sorted.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

// One benchmark's patient-level split.
struct SplitAssignment {
    int benchmark_id = 0;
    std::set<std::string> test_patients;
    std::set<std::string> train_patients;
};

// Independent uniform shuffles per benchmark, seeded as seed + benchmark_id
// (ids are 1-based); test size is round(n_patients * test_fraction). Patients
// are canonicalized (sorted, deduplicated) before shuffling so assignments do
// not depend on manifest ordering.
std::vector<SplitAssignment> make_benchmarks(std::vector<std::string> patients,
                                             int n_benchmarks = 10, double test_fraction = 0.20,
                                             std::uint64_t seed = 0);

}  // namespace kdetect
