#include "kdetect/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "kdetect/errors.hpp"
#include "kdetect/rng.hpp"

namespace kdetect {

using nlohmann::json;

std::string to_string(AnnotationSource s) {
    switch (s) {
        case AnnotationSource::human: return "human";
        case AnnotationSource::pseudo: return "pseudo";
        case AnnotationSource::none: return "none";
    }
    return "none";
}

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::unassigned: return "unassigned";
    }
    return "unassigned";
}

AnnotationSource annotation_source_from_string(const std::string& s) {
    if (s == "human") return AnnotationSource::human;
    if (s == "pseudo") return AnnotationSource::pseudo;
    if (s == "none") return AnnotationSource::none;
    throw ConfigError("unknown annotation_source '" + s + "'");
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    if (s == "unassigned") return Split::unassigned;
    throw ConfigError("unknown split '" + s + "'");
}

void validate(const Manifest& manifest) {
    std::set<std::array<std::string, 3>> keys;
    // (benchmark_id, patient_id) -> split seen
    std::map<std::pair<int, std::string>, Split> patient_split;
    for (const ManifestEntry& e : manifest.entries) {
        if (!keys.insert({e.patient_id, e.study_id, e.series_path}).second)
            throw ConfigError("duplicate manifest key " + e.patient_id + "/" + e.study_id + "/" +
                              e.series_path);
        if (e.benchmark_id && e.split != Split::unassigned) {
            const auto key = std::make_pair(*e.benchmark_id, e.patient_id);
            const auto [it, inserted] = patient_split.emplace(key, e.split);
            if (!inserted && it->second != e.split)
                throw ConfigError("patient " + e.patient_id + " is both train and test in benchmark " +
                                  std::to_string(*e.benchmark_id));
        }
    }
}

namespace {

json entry_to_json(const ManifestEntry& e) {
    json j;
    j["patient_id"] = e.patient_id;
    j["study_id"] = e.study_id;
    j["series_path"] = e.series_path;
    j["slice_count"] = e.slice_count;
    j["annotation_source"] = to_string(e.annotation_source);
    j["split"] = to_string(e.split);
    if (e.benchmark_id) j["benchmark_id"] = *e.benchmark_id;
    if (e.annotation_source == AnnotationSource::pseudo) {
        j["pseudo_model_id"] = e.pseudo_model_id;
        j["pseudo_conf_threshold"] = e.pseudo_conf_threshold;
    }
    if (!e.empty_slices.empty()) j["empty_slices"] = e.empty_slices;
    return j;
}

ManifestEntry entry_from_json(const json& j) {
    ManifestEntry e;
    e.patient_id = j.at("patient_id").get<std::string>();
    e.study_id = j.at("study_id").get<std::string>();
    e.series_path = j.at("series_path").get<std::string>();
    e.slice_count = j.at("slice_count").get<int>();
    e.annotation_source = annotation_source_from_string(j.at("annotation_source").get<std::string>());
    e.split = split_from_string(j.at("split").get<std::string>());
    if (j.contains("benchmark_id")) e.benchmark_id = j.at("benchmark_id").get<int>();
    if (j.contains("pseudo_model_id")) e.pseudo_model_id = j.at("pseudo_model_id").get<std::string>();
    if (j.contains("pseudo_conf_threshold"))
        e.pseudo_conf_threshold = j.at("pseudo_conf_threshold").get<double>();
    if (j.contains("empty_slices")) e.empty_slices = j.at("empty_slices").get<std::vector<int>>();
    return e;
}

}  // namespace

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    validate(manifest);
    std::filesystem::path parent = path.parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot open " + path.string() + " for writing");
    for (const ManifestEntry& e : manifest.entries) out << entry_to_json(e).dump() << "\n";
    if (!out) throw IoFailure("write failed for " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open " + path.string());
    Manifest manifest;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw MalformedLine(path.string() + ":" + std::to_string(lineno) + " is not valid JSON");
        manifest.entries.push_back(entry_from_json(j));
    }
    validate(manifest);
    return manifest;
}

std::vector<SplitAssignment> make_benchmarks(std::vector<std::string> patients, int n_benchmarks,
                                             double test_fraction, std::uint64_t seed) {
    std::sort(patients.begin(), patients.end());
    patients.erase(std::unique(patients.begin(), patients.end()), patients.end());
    if (patients.size() < 5)
        throw TooFewPatients("need >= 5 patients, got " + std::to_string(patients.size()));
    if (!(test_fraction > 0.0 && test_fraction < 1.0))
        throw ConfigError("test_fraction must be in (0, 1)");
    if (n_benchmarks < 1) throw ConfigError("n_benchmarks must be >= 1");

    const auto n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(patients.size())));

    std::vector<SplitAssignment> out;
    out.reserve(static_cast<std::size_t>(n_benchmarks));
    for (int b = 1; b <= n_benchmarks; ++b) {
        std::vector<std::string> shuffled = patients;
        Rng rng(seed + static_cast<std::uint64_t>(b));
        rng.shuffle(shuffled);
        SplitAssignment a;
        a.benchmark_id = b;
        for (std::size_t i = 0; i < shuffled.size(); ++i)
            (i < n_test ? a.test_patients : a.train_patients).insert(shuffled[i]);
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace kdetect
