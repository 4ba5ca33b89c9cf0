#include "kdetect/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "kdetect/errors.hpp"

namespace kdetect {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (!known.contains(key))
            throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PipelineConfig parse_pipeline_config(const std::string& json_text) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("configuration is not valid JSON");
    if (!j.is_object()) throw ConfigError("configuration root must be an object");

    reject_unknown(j,
                   {"paths", "normalization", "normalize_before_resample", "train", "eval",
                    "selftrain", "phantom", "log_level"},
                   "config root");

    PipelineConfig cfg;
    read(j, "normalize_before_resample", cfg.normalize_before_resample);
    if (j.contains("paths")) {
        const json& p = j.at("paths");
        reject_unknown(p, {"data_root", "output_root"}, "paths");
        std::string s;
        read(p, "data_root", s);
        cfg.data_root = s;
        s.clear();
        read(p, "output_root", s);
        cfg.output_root = s;
    }
    if (j.contains("normalization")) {
        const json& p = j.at("normalization");
        reject_unknown(p, {"sigma_hat", "p_hi", "background_fraction"}, "normalization");
        read(p, "sigma_hat", cfg.normalization.sigma_hat);
        read(p, "p_hi", cfg.normalization.p_hi);
        read(p, "background_fraction", cfg.normalization.background_fraction);
    }
    if (j.contains("train")) {
        const json& p = j.at("train");
        reject_unknown(p,
                       {"learning_rate", "batch_size", "beta1", "beta2", "epsilon", "weight_decay",
                        "epochs", "seed", "grid_size", "image_size", "boxes_per_cell",
                        "hflip_augment", "lambda_box", "lambda_obj", "lambda_noobj", "lambda_cls",
                        "anchor_prior"},
                       "train");
        read(p, "learning_rate", cfg.train.learning_rate);
        read(p, "batch_size", cfg.train.batch_size);
        read(p, "beta1", cfg.train.beta1);
        read(p, "beta2", cfg.train.beta2);
        read(p, "epsilon", cfg.train.epsilon);
        read(p, "weight_decay", cfg.train.weight_decay);
        read(p, "epochs", cfg.train.epochs);
        read(p, "seed", cfg.train.seed);
        read(p, "grid_size", cfg.train.grid_size);
        read(p, "image_size", cfg.train.image_size);
        read(p, "boxes_per_cell", cfg.train.boxes_per_cell);
        read(p, "hflip_augment", cfg.train.hflip_augment);
        read(p, "lambda_box", cfg.train.lambda_box);
        read(p, "lambda_obj", cfg.train.lambda_obj);
        read(p, "lambda_noobj", cfg.train.lambda_noobj);
        read(p, "lambda_cls", cfg.train.lambda_cls);
        read(p, "anchor_prior", cfg.train.anchor_prior);
    }
    if (j.contains("eval")) {
        const json& p = j.at("eval");
        reject_unknown(p, {"iou_threshold", "confidence_step", "operating_conf", "eleven_point"},
                       "eval");
        read(p, "iou_threshold", cfg.eval.iou_threshold);
        read(p, "confidence_step", cfg.eval.confidence_step);
        read(p, "operating_conf", cfg.eval.operating_conf);
        read(p, "eleven_point", cfg.eval.eleven_point);
    }
    if (j.contains("selftrain")) {
        const json& p = j.at("selftrain");
        reject_unknown(p,
                       {"n_benchmarks", "test_fraction", "pseudo_conf_threshold",
                        "max_pseudo_boxes_per_slice", "nms_iou", "exclude_test_linked",
                        "warm_start", "warm_start_source", "include_empty_slices", "seed",
                        "eval_conf_floor"},
                       "selftrain");
        read(p, "n_benchmarks", cfg.selftrain.n_benchmarks);
        read(p, "test_fraction", cfg.selftrain.test_fraction);
        read(p, "pseudo_conf_threshold", cfg.selftrain.pseudo_conf_threshold);
        read(p, "max_pseudo_boxes_per_slice", cfg.selftrain.max_pseudo_boxes_per_slice);
        read(p, "nms_iou", cfg.selftrain.nms_iou);
        read(p, "exclude_test_linked", cfg.selftrain.exclude_test_linked);
        read(p, "warm_start", cfg.selftrain.warm_start);
        read(p, "warm_start_source", cfg.selftrain.warm_start_source);
        read(p, "include_empty_slices", cfg.selftrain.include_empty_slices);
        read(p, "seed", cfg.selftrain.seed);
        read(p, "eval_conf_floor", cfg.selftrain.eval_conf_floor);
    }
    if (j.contains("phantom")) {
        const json& p = j.at("phantom");
        reject_unknown(p,
                       {"n_patients", "slices_per_patient", "slice_extent", "unannotated_fraction",
                        "linked_series_every", "background_level", "noise_sigma", "min_area_px",
                        "seed"},
                       "phantom");
        read(p, "n_patients", cfg.phantom.n_patients);
        read(p, "slices_per_patient", cfg.phantom.slices_per_patient);
        long extent = cfg.phantom.slice_extent;
        read(p, "slice_extent", extent);
        cfg.phantom.slice_extent = extent;
        read(p, "unannotated_fraction", cfg.phantom.unannotated_fraction);
        read(p, "linked_series_every", cfg.phantom.linked_series_every);
        read(p, "background_level", cfg.phantom.background_level);
        read(p, "noise_sigma", cfg.phantom.noise_sigma);
        read(p, "min_area_px", cfg.phantom.min_area_px);
        read(p, "seed", cfg.phantom.seed);
    }
    read(j, "log_level", cfg.log_level);
    return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open config " + path.string());
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_pipeline_config(text);
}

void validate(const PipelineConfig& cfg, bool require_paths) {
    validate(cfg.normalization);
    validate(cfg.train);
    validate(cfg.eval);
    validate(cfg.selftrain);
    if (cfg.log_level != "debug" && cfg.log_level != "info" && cfg.log_level != "quiet")
        throw ConfigError("log_level must be debug, info or quiet");
    if (require_paths) {
        if (cfg.data_root.empty() || !std::filesystem::exists(cfg.data_root))
            throw ConfigError("paths.data_root does not resolve: '" + cfg.data_root.string() + "'");
        if (cfg.output_root.empty())
            throw ConfigError("paths.output_root must be set");
    }
}

}  // namespace kdetect
