#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <sstream>

#include "kdetect/config.hpp"
#include "kdetect/dataset.hpp"
#include "kdetect/dicom.hpp"
#include "kdetect/errors.hpp"
#include "kdetect/hash.hpp"
#include "kdetect/nifti.hpp"
#include "kdetect/phantom.hpp"
#include "kdetect/rng.hpp"
#include "kdetect/selftrain.hpp"
#include "kdetect/weights_io.hpp"

namespace {

using namespace kdetect;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const LeakageDetected*>(&e)) return 5;
    if (dynamic_cast<const AllBenchmarksDiverged*>(&e)) return 6;
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const FormatError*>(&e)) return 3;
    if (dynamic_cast<const IoError*>(&e)) return 4;
    return 1;
}

struct GlobalOpts {
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::string config_path;
    bool quiet = false;
};

PipelineConfig load_config_or_default(const GlobalOpts& global) {
    PipelineConfig cfg;
    if (!global.config_path.empty()) cfg = load_pipeline_config(global.config_path);
    if (global.seed) {
        cfg.train.seed = *global.seed;
        cfg.selftrain.seed = *global.seed;
        cfg.phantom.seed = *global.seed;
    }
    return cfg;
}

ProgressFn stderr_progress(const GlobalOpts& global) {
    if (global.quiet) return {};
    return [](const std::string& line) { std::cerr << line << "\n"; };
}

NiftiDtype dtype_from_string(const std::string& name) {
    if (name == "uint8") return NiftiDtype::uint8;
    if (name == "int16") return NiftiDtype::int16;
    if (name == "int32") return NiftiDtype::int32;
    if (name == "float32") return NiftiDtype::float32;
    if (name == "float64") return NiftiDtype::float64;
    throw ConfigError("unknown dtype '" + name + "'");
}

Eigen::Vector3d parse_spacing(const std::string& text) {
    Eigen::Vector3d spacing;
    std::stringstream ss(text);
    std::string item;
    int i = 0;
    while (std::getline(ss, item, ',') && i < 3) spacing[i++] = std::stod(item);
    if (i == 1) spacing[1] = spacing[2] = spacing[0];
    else if (i != 3) throw ConfigError("spacing needs 1 or 3 comma-separated values");
    return spacing;
}

void write_norm_sidecar(const std::filesystem::path& next_to, const NormalizationParams& params,
                        double sigma_used) {
    nlohmann::json j;
    j["sigma_hat"] = sigma_used;
    j["p_hi"] = params.p_hi;
    j["background_fraction"] = params.background_fraction;
    std::ofstream out(next_to.string() + ".norm.json", std::ios::binary | std::ios::trunc);
    out << j.dump(2) << "\n";
}

std::string series_stem(const std::filesystem::path& p) {
    std::string name = p.filename().string();
    for (const char* suffix : {".nii.gz", ".nii"}) {
        const std::string s = suffix;
        if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0)
            return name.substr(0, name.size() - s.size());
    }
    return name;
}

// ---- subcommand bodies ----

int cmd_convert(const GlobalOpts& global, const std::string& in, const std::string& out,
                const std::string& resample, const std::string& normalize,
                const std::string& slices_dir, const std::string& slice_format,
                const std::string& dtype) {
    const PipelineConfig cfg = load_config_or_default(global);
    Volume vol = std::filesystem::is_directory(in) ? read_dicom_series(in) : read_nifti(in);
    if (normalize != "rician" && normalize != "none" && !normalize.empty())
        throw ConfigError("--normalize must be 'rician' or 'none'");

    double sigma_used = -1.0;
    const auto apply_normalize = [&]() {
        if (normalize == "rician") vol = rician_normalize(vol, cfg.normalization, sigma_used);
    };
    if (cfg.normalize_before_resample) apply_normalize();
    if (!resample.empty()) vol = resample_isotropic(vol, parse_spacing(resample));
    if (!cfg.normalize_before_resample) apply_normalize();

    write_nifti(vol, out, dtype_from_string(dtype));
    if (sigma_used >= 0.0) write_norm_sidecar(out, cfg.normalization, sigma_used);

    if (!slices_dir.empty()) {
        if (sigma_used < 0.0 && (vol.data.minCoeff() < 0.0 || vol.data.maxCoeff() > 1.0))
            throw ConfigError("slice export needs a [0,1] volume; pass --normalize rician");
        const std::string base = series_stem(out);
        for (const SliceImage& s : extract_axial_slices(vol)) {
            char zbuf[16];
            std::snprintf(zbuf, sizeof(zbuf), "_z%03d", static_cast<int>(s.slice_index));
            const std::filesystem::path dir(slices_dir);
            std::filesystem::create_directories(dir);
            if (slice_format == "pgm")
                write_pgm(s, dir / (base + zbuf + ".pgm"));
            else
                write_slice_nifti(s, dir / (base + zbuf + ".nii"));
        }
    }
    std::cout << "wrote " << out << " (" << vol.nx() << "x" << vol.ny() << "x" << vol.nz() << ")\n";
    return 0;
}

int cmd_build_dataset(const GlobalOpts& global, const std::string& volumes_dir,
                      const std::string& masks_dir, const std::string& out_root,
                      const std::string& resample, int min_area) {
    const PipelineConfig cfg = load_config_or_default(global);
    const Eigen::Vector3d target = resample.empty() ? Eigen::Vector3d(1, 1, 1) : parse_spacing(resample);

    std::vector<std::filesystem::path> volume_files;
    for (const auto& entry : std::filesystem::directory_iterator(volumes_dir))
        if (entry.is_regular_file()) volume_files.push_back(entry.path());
    std::sort(volume_files.begin(), volume_files.end());
    if (volume_files.empty()) throw IoFailure("no volumes in " + volumes_dir);

    Manifest manifest;
    const std::filesystem::path root(out_root);
    for (const std::filesystem::path& vol_path : volume_files) {
        const std::string series = series_stem(vol_path);
        const std::string patient = series.substr(0, series.find('_'));

        Volume vol = read_nifti(vol_path);
        double sigma_used = 0.0;
        if (cfg.normalize_before_resample) {
            vol = rician_normalize(vol, cfg.normalization, sigma_used);
            vol = resample_isotropic(vol, target);
        } else {
            vol = resample_isotropic(vol, target);
            vol = rician_normalize(vol, cfg.normalization, sigma_used);
        }
        vol.source_id = series;

        std::optional<Volume> mask;
        for (const char* suffix : {".nii.gz", ".nii"}) {
            const std::filesystem::path candidate = std::filesystem::path(masks_dir) / (series + suffix);
            if (std::filesystem::exists(candidate)) {
                Volume m = resample_isotropic(read_nifti(candidate), target);
                m.data = (m.data > 0.5).cast<double>();  // crisp after interpolation
                mask = std::move(m);
                break;
            }
        }

        ManifestEntry entry;
        entry.patient_id = patient;
        entry.study_id = series.size() > patient.size() ? series.substr(patient.size() + 1) : "S001";
        entry.series_path = series;
        entry.annotation_source = mask ? AnnotationSource::human : AnnotationSource::none;

        const std::vector<SliceImage> slices = extract_axial_slices(vol);
        entry.slice_count = static_cast<int>(slices.size());
        for (const SliceImage& s : slices) {
            char zbuf[16];
            std::snprintf(zbuf, sizeof(zbuf), "_z%03d", static_cast<int>(s.slice_index));
            const std::string base = series + zbuf;
            write_slice_nifti(s, root / "images" / series / (base + ".nii"));
            if (mask) {
                const std::vector<BoxLabel> boxes = mask_to_boxes(mask->slice(s.slice_index), min_area);
                write_labels(boxes, root / "labels" / series / (base + ".txt"));
                if (boxes.empty()) entry.empty_slices.push_back(static_cast<int>(s.slice_index));
            }
        }
        write_norm_sidecar(root / "images" / series / "normalization", cfg.normalization, sigma_used);
        manifest.entries.push_back(std::move(entry));
    }
    save_manifest(manifest, root / "manifest.jsonl");
    std::cout << "dataset with " << manifest.entries.size() << " series at " << out_root << "\n";
    return 0;
}

int cmd_train(const GlobalOpts& global, const std::string& data_root, const std::string& out,
              const std::string& init_path) {
    const PipelineConfig cfg = load_config_or_default(global);
    validate(cfg.train);
    const Manifest manifest = load_manifest(std::filesystem::path(data_root) / "manifest.jsonl");

    std::vector<Sample> samples;
    for (const ManifestEntry& e : manifest.entries) {
        if (e.annotation_source != AnnotationSource::human) continue;
        for (Sample& s : load_series_samples(data_root, e.series_path, LabelSource::human, {},
                                             cfg.train.image_size,
                                             cfg.selftrain.include_empty_slices))
            samples.push_back(std::move(s));
    }

    ModelWeights init;
    const ModelWeights* init_ptr = nullptr;
    if (!init_path.empty()) {
        init = load_weights(init_path);
        init_ptr = &init;
    }
    const TrainResult result = train_detector(cfg.train, samples, init_ptr, stderr_progress(global));
    save_weights(result.best_weights, out);
    const std::filesystem::path final_path = std::filesystem::path(out).string() + ".final";
    save_weights(result.weights, final_path);
    std::cout << "trained on " << samples.size() << " slices; best epoch " << result.best_epoch
              << " (loss " << result.epoch_loss[static_cast<std::size_t>(result.best_epoch - 1)]
              << "); weights at " << out << "\n";
    return 0;
}

int cmd_detect(const GlobalOpts& global, const std::string& weights_path,
               const std::string& images_dir, const std::string& out_dir, double conf, double nms_iou,
               int max_boxes) {
    const PipelineConfig cfg = load_config_or_default(global);
    const GridDetector net(cfg.train);
    const ModelWeights weights = load_weights(weights_path);

    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(images_dir))
        if (entry.is_regular_file() && entry.path().string().find(".nii") != std::string::npos)
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoFailure("no .nii slices in " + images_dir);

    long total = 0;
    for (const std::filesystem::path& f : files) {
        const SliceImage slice = read_slice_nifti(f);
        const Eigen::ArrayXXd input =
            resize_bilinear(slice.pixels, cfg.train.image_size, cfg.train.image_size);
        const std::vector<Detection> dets = net.predict(weights, input, conf, nms_iou, max_boxes);
        write_predictions(dets, std::filesystem::path(out_dir) / (series_stem(f) + ".txt"));
        total += static_cast<long>(dets.size());
    }
    std::cout << "wrote predictions for " << files.size() << " slices (" << total << " boxes)\n";
    return 0;
}

int cmd_eval(const GlobalOpts& global, const std::string& pred_dir, const std::string& gt_dir,
             const std::string& out_path, const std::string& curves_dir) {
    const PipelineConfig cfg = load_config_or_default(global);
    validate(cfg.eval);

    std::set<std::string> basenames;
    for (const std::string& dir : {gt_dir, pred_dir}) {
        if (!std::filesystem::is_directory(dir)) continue;
        for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().extension() == ".txt")
                basenames.insert(std::filesystem::relative(entry.path(), dir).string());
    }
    if (basenames.empty()) throw IoFailure("no label files under " + gt_dir + " or " + pred_dir);

    std::vector<std::vector<Detection>> preds;
    std::vector<std::vector<BoxLabel>> gts;
    for (const std::string& base : basenames) {
        const std::filesystem::path gt_file = std::filesystem::path(gt_dir) / base;
        const std::filesystem::path pred_file = std::filesystem::path(pred_dir) / base;
        gts.push_back(std::filesystem::exists(gt_file) ? read_labels(gt_file)
                                                       : std::vector<BoxLabel>{});
        preds.push_back(std::filesystem::exists(pred_file) ? read_predictions(pred_file)
                                                           : std::vector<Detection>{});
    }

    const MetricsReport report = evaluate(preds, gts, cfg.eval);
    if (!out_path.empty()) {
        std::filesystem::path parent = std::filesystem::path(out_path).parent_path();
        if (!parent.empty()) std::filesystem::create_directories(parent);
        std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
        out << report_to_json(report) << "\n";
    }
    if (!curves_dir.empty())
        write_curves_csv(report, std::filesystem::path(curves_dir) / "pr_curve.csv",
                         std::filesystem::path(curves_dir) / "f1_curve.csv");
    std::cout << "ppv " << report.ppv << "  sensitivity " << report.sensitivity << "  map50 "
              << report.map50 << "  f1_best " << report.f1_best << " @ conf "
              << report.conf_at_f1_best << "\n";
    return 0;
}

int cmd_selftrain(const GlobalOpts& global) {
    if (global.config_path.empty()) throw ConfigError("selftrain needs --config");
    PipelineConfig cfg = load_config_or_default(global);
    validate(cfg, true);

    const Manifest manifest = load_manifest(cfg.data_root / "manifest.jsonl");
    const SelfTrainResult result =
        run_selftrain(manifest, cfg.selftrain, cfg.train, cfg.eval, cfg.data_root, cfg.output_root,
                      global.jobs, stderr_progress(global));
    std::cout << selftrain_report_markdown(result);
    std::cout << "best benchmark: " << result.ledger.best_benchmark_id << "\n";
    return 0;
}

int cmd_phantom(const GlobalOpts& global, const std::string& out_root, int patients, int slices,
                long extent, double unannotated, double noise, double background) {
    PipelineConfig cfg = load_config_or_default(global);
    CorpusSpec spec = cfg.phantom;
    if (patients > 0) spec.n_patients = patients;
    if (slices > 0) spec.slices_per_patient = slices;
    if (extent > 0) spec.slice_extent = extent;
    if (unannotated >= 0.0) spec.unannotated_fraction = unannotated;
    if (noise >= 0.0) spec.noise_sigma = noise;
    if (background >= 0.0) spec.background_level = background;
    if (global.seed) spec.seed = *global.seed;

    const Manifest manifest = generate_corpus(spec, out_root);
    long annotated = 0;
    for (const ManifestEntry& e : manifest.entries)
        if (e.annotation_source == AnnotationSource::human) ++annotated;
    std::cout << "phantom corpus: " << manifest.entries.size() << " series (" << annotated
              << " annotated) at " << out_root << "\n";
    return 0;
}

int cmd_report(const GlobalOpts&, const std::string& ledger_path, const std::string& format,
               const std::string& artifacts_root) {
    const RunLedger ledger = load_ledger(ledger_path);
    if (!artifacts_root.empty()) audit_ledger(ledger, artifacts_root);

    SelfTrainResult result;
    result.ledger = ledger;
    std::vector<MetricsReport> primary, final_reports;
    for (const BenchmarkRecord& r : ledger.benchmarks) {
        if (r.failed) continue;
        primary.push_back(r.primary_report);
        final_reports.push_back(r.final_report);
    }
    result.primary_aggregate = aggregate_benchmarks(primary);
    result.final_aggregate = aggregate_benchmarks(final_reports);

    if (format == "json")
        std::cout << selftrain_report_json(result) << "\n";
    else
        std::cout << selftrain_report_markdown(result);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kidney detection pipeline: ingest, preprocess, self-train, evaluate"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOpts global;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "override every configured seed");
    app.add_option("--jobs", global.jobs, "parallel benchmark workers")->check(CLI::PositiveNumber);
    app.add_option("--config", global.config_path, "pipeline configuration JSON");
    app.add_flag("--quiet", global.quiet, "suppress progress events on stderr");

    std::function<int()> action;

    // convert
    auto* convert = app.add_subcommand("convert", "DICOM series or NIfTI in, preprocessed NIfTI out");
    {
        static std::string in, out, resample, normalize = "none", slices, slice_format = "nii",
                           dtype = "float32";
        convert->add_option("--in", in, "input NIfTI file or DICOM directory")
            ->required()
            ->check(CLI::ExistingPath);
        convert->add_option("--out", out, "output NIfTI path (.nii or .nii.gz)")->required();
        convert->add_option("--resample", resample, "target spacing in mm, e.g. 1,1,1");
        convert->add_option("--normalize", normalize, "rician or none");
        convert->add_option("--slices", slices, "also export axial slices to this directory");
        convert->add_option("--slice-format", slice_format, "nii or pgm")
            ->check(CLI::IsMember({"nii", "pgm"}));
        convert->add_option("--dtype", dtype, "output datatype")
            ->check(CLI::IsMember({"uint8", "int16", "int32", "float32", "float64"}));
        convert->callback([&]() {
            action = [&]() {
                return cmd_convert(global, in, out, resample, normalize, slices, slice_format, dtype);
            };
        });
    }

    // build-dataset
    auto* build = app.add_subcommand("build-dataset", "volumes + masks to slices, labels, manifest");
    {
        static std::string volumes, masks, out, resample = "1,1,1";
        static int min_area = 16;
        build->add_option("--volumes", volumes, "directory of volume NIfTI files")
            ->required()
            ->check(CLI::ExistingDirectory);
        build->add_option("--masks", masks, "directory of mask NIfTI files")
            ->required()
            ->check(CLI::ExistingDirectory);
        build->add_option("--out", out, "dataset root to create")->required();
        build->add_option("--resample", resample, "target spacing in mm");
        build->add_option("--min-area", min_area, "minimum component area in pixels");
        build->callback([&]() {
            action = [&]() { return cmd_build_dataset(global, volumes, masks, out, resample, min_area); };
        });
    }

    // train
    auto* train_cmd = app.add_subcommand("train", "train the detector on human-annotated series");
    {
        static std::string data, out, init;
        train_cmd->add_option("--data", data, "dataset root")->required()->check(CLI::ExistingDirectory);
        train_cmd->add_option("--out", out, "output weights path")->required();
        train_cmd->add_option("--init", init, "warm-start weights")->check(CLI::ExistingFile);
        train_cmd->callback([&]() { action = [&]() { return cmd_train(global, data, out, init); }; });
    }

    // detect
    auto* detect = app.add_subcommand("detect", "run the detector over a directory of slices");
    {
        static std::string weights, images, out;
        static double conf = 0.25, nms_iou = 0.45;
        static int max_boxes = 2;
        detect->add_option("--weights", weights, "RDW1 weights file")->required()->check(CLI::ExistingFile);
        detect->add_option("--images", images, "directory of 2-D slice NIfTI files")
            ->required()
            ->check(CLI::ExistingDirectory);
        detect->add_option("--out", out, "directory for prediction text files")->required();
        detect->add_option("--conf", conf, "confidence threshold");
        detect->add_option("--nms", nms_iou, "NMS IoU threshold");
        detect->add_option("--max-boxes", max_boxes, "detections kept per slice");
        detect->callback([&]() {
            action = [&]() { return cmd_detect(global, weights, images, out, conf, nms_iou, max_boxes); };
        });
    }

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate prediction files against labels");
    {
        static std::string pred, gt, out, curves;
        eval_cmd->add_option("--pred", pred, "directory of prediction .txt files")->required();
        eval_cmd->add_option("--gt", gt, "directory of ground-truth .txt files")
            ->required()
            ->check(CLI::ExistingDirectory);
        eval_cmd->add_option("--out", out, "metrics report JSON path");
        eval_cmd->add_option("--curves", curves, "directory for PR/F1 curve CSVs");
        eval_cmd->callback([&]() { action = [&]() { return cmd_eval(global, pred, gt, out, curves); }; });
    }

    // selftrain
    auto* selftrain_cmd =
        app.add_subcommand("selftrain", "the full three-step procedure from a config file");
    selftrain_cmd->callback([&]() { action = [&]() { return cmd_selftrain(global); }; });

    // phantom
    auto* phantom_cmd = app.add_subcommand("phantom", "generate a synthetic ground-truth corpus");
    {
        static std::string out;
        static int patients = 0, slices = 0;
        static long extent = 0;
        static double unannotated = -1.0, noise = -1.0, background = -1.0;
        phantom_cmd->add_option("--out", out, "corpus root to create")->required();
        phantom_cmd->add_option("--patients", patients, "number of synthetic patients");
        phantom_cmd->add_option("--slices", slices, "slices per patient (>= 14)");
        phantom_cmd->add_option("--extent", extent, "square slice extent in voxels");
        phantom_cmd->add_option("--unannotated", unannotated, "fraction of unannotated patients");
        phantom_cmd->add_option("--noise", noise, "noise sigma as a fraction of contrast");
        phantom_cmd->add_option("--background", background, "background signal level");
        phantom_cmd->callback([&]() {
            action = [&]() {
                return cmd_phantom(global, out, patients, slices, extent, unannotated, noise, background);
            };
        });
    }

    // report
    auto* report_cmd = app.add_subcommand("report", "render a run ledger as a table");
    {
        static std::string ledger, format = "md", root;
        report_cmd->add_option("--ledger", ledger, "run_ledger.json path")->required()->check(CLI::ExistingFile);
        report_cmd->add_option("--format", format, "md or json")->check(CLI::IsMember({"md", "json"}));
        report_cmd->add_option("--root", root, "output root; enables artifact hash auditing");
        report_cmd->callback([&]() { action = [&]() { return cmd_report(global, ledger, format, root); }; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints usage or error
        return e.get_exit_code() == 0 ? 0 : 2;
    }
    if (seed_opt->count() > 0) global.seed = seed_value;

    try {
        return action ? action() : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
}
