#include "kdetect/dataset.hpp"

#include <algorithm>

#include "kdetect/boxes.hpp"
#include "kdetect/errors.hpp"
#include "kdetect/preprocess.hpp"

namespace kdetect {

std::vector<std::string> list_slice_basenames(const std::filesystem::path& data_root,
                                              const std::string& series) {
    const std::filesystem::path dir = data_root / "images" / series;
    if (!std::filesystem::is_directory(dir))
        throw IoFailure("no image directory for series " + series + " under " + data_root.string());
    std::vector<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::filesystem::path& p = entry.path();
        if (p.extension() == ".nii")
            names.push_back(p.stem().string());
        else if (p.extension() == ".gz" && p.stem().extension() == ".nii")
            names.push_back(p.stem().stem().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

std::vector<Sample> load_series_samples(const std::filesystem::path& data_root,
                                        const std::string& series, LabelSource source,
                                        const std::filesystem::path& pseudo_root, int image_size,
                                        bool include_empty) {
    std::vector<Sample> samples;
    for (const std::string& base : list_slice_basenames(data_root, series)) {
        std::filesystem::path image_path = data_root / "images" / series / (base + ".nii");
        if (!std::filesystem::exists(image_path)) image_path += ".gz";
        const SliceImage slice = read_slice_nifti(image_path);

        Sample sample;
        sample.id = series + "/" + base;
        sample.image = resize_bilinear(slice.pixels, image_size, image_size);

        if (source == LabelSource::human) {
            const std::filesystem::path label = data_root / "labels" / series / (base + ".txt");
            if (std::filesystem::exists(label)) sample.boxes = read_labels(label);
        } else if (source == LabelSource::pseudo) {
            const std::filesystem::path label = pseudo_root / series / (base + ".txt");
            if (std::filesystem::exists(label))
                for (const Detection& d : read_predictions(label)) sample.boxes.push_back(d.box);
        }
        if (!include_empty && sample.boxes.empty()) continue;
        samples.push_back(std::move(sample));
    }
    return samples;
}

}  // namespace kdetect
