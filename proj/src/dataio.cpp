#include "npnet/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "npnet/errors.hpp"
#include "npnet/ops.hpp"
#include "npnet/rng.hpp"

namespace fs = std::filesystem;

namespace npnet {

DatasetLayout layout_from_string(const std::string& text) {
    if (text == "cvc") return DatasetLayout::Cvc;
    if (text == "skin") return DatasetLayout::Skin;
    if (text == "luna") return DatasetLayout::Luna;
    if (text == "generic") return DatasetLayout::Generic;
    throw ConfigError("unknown dataset layout '" + text +
                      "' (expected cvc, skin, luna or generic)");
}

void DatasetSpec::validate() const {
    if (target_size) {
        auto [h, w] = *target_size;
        if (h < 8 || w < 8 || h % 8 != 0 || w % 8 != 0) {
            std::ostringstream msg;
            msg << "target size " << w << "x" << h
                << " must be a positive multiple of 8";
            throw ConfigError(msg.str());
        }
    }
    if (!(split_fraction > 0.0f && split_fraction < 1.0f)) {
        throw ConfigError("split fraction must lie in (0, 1)");
    }
}

namespace {

// Directory conventions per layout: candidate (image dir, mask dir)
// pairs tried in order, plus a suffix stripped from mask stems before
// pairing. Every layout falls back to the generic images/masks pair.
struct LayoutRule {
    std::vector<std::pair<std::string, std::string>> dirs;
    std::string mask_suffix;
};

LayoutRule layout_rule(DatasetLayout layout) {
    switch (layout) {
        case DatasetLayout::Cvc:
            return {{{"Original", "Ground Truth"}, {"images", "masks"}}, ""};
        case DatasetLayout::Skin:
            return {{{"images", "masks"}}, "_segmentation"};
        case DatasetLayout::Luna:
            return {{{"2d_images", "2d_masks"}, {"images", "masks"}}, "_mask"};
        case DatasetLayout::Generic:
            return {{{"images", "masks"}}, ""};
    }
    return {{{"images", "masks"}}, ""};
}

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::map<std::string, std::string> scan_dir(const fs::path& dir,
                                            const std::string& strip_suffix) {
    std::map<std::string, std::string> by_stem;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !has_image_extension(entry.path())) {
            continue;
        }
        std::string stem = entry.path().stem().string();
        if (!strip_suffix.empty() && stem.ends_with(strip_suffix)) {
            stem = stem.substr(0, stem.size() - strip_suffix.size());
        }
        by_stem[stem] = entry.path().string();
    }
    return by_stem;
}

}  // namespace

IndexResult index_dataset(const DatasetSpec& spec) {
    spec.validate();
    fs::path root(spec.root);
    if (!fs::exists(root)) {
        throw DataError("dataset root does not exist: " + spec.root);
    }
    LayoutRule rule = layout_rule(spec.layout);

    fs::path image_dir, mask_dir;
    bool found = false;
    for (const auto& [img, msk] : rule.dirs) {
        if (fs::exists(root / img) && fs::exists(root / msk)) {
            image_dir = root / img;
            mask_dir = root / msk;
            found = true;
            break;
        }
    }
    if (!found) {
        std::ostringstream msg;
        msg << "no image/mask directories under " << spec.root << " (tried";
        for (const auto& [img, msk] : rule.dirs) {
            msg << " '" << img << "'+'" << msk << "'";
        }
        msg << ")";
        throw DataError(msg.str());
    }

    auto images = scan_dir(image_dir, "");
    auto masks = scan_dir(mask_dir, rule.mask_suffix);

    IndexResult result;
    for (const auto& [stem, image_path] : images) {
        auto it = masks.find(stem);
        if (it == masks.end()) {
            result.warnings.push_back("image without mask, skipped: " +
                                      image_path);
            continue;
        }
        cv::Mat probe = cv::imread(image_path, cv::IMREAD_COLOR);
        if (probe.empty()) {
            result.warnings.push_back("undecodable image, skipped: " +
                                      image_path);
            continue;
        }
        SampleRecord record;
        record.stem = stem;
        record.image_path = image_path;
        record.mask_path = it->second;
        record.original_h = probe.rows;
        record.original_w = probe.cols;
        result.records.push_back(std::move(record));
    }
    for (const auto& [stem, mask_path] : masks) {
        if (images.find(stem) == images.end()) {
            result.warnings.push_back("mask without image, skipped: " +
                                      mask_path);
        }
    }
    // std::map iteration is already lexicographic by stem
    if (result.records.empty()) {
        throw DataError("no image/mask pairs found under " + spec.root);
    }
    return result;
}

void split_records(std::vector<SampleRecord>& records, float fraction,
                   std::uint32_t seed) {
    if (records.size() < 2) {
        throw DataError("need at least 2 records to split, got " +
                        std::to_string(records.size()));
    }
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    auto train_count = static_cast<std::size_t>(
        std::floor(static_cast<double>(fraction) * records.size()));
    if (train_count < 1 || train_count >= records.size()) {
        std::ostringstream msg;
        msg << "split fraction " << fraction << " leaves an empty side for "
            << records.size() << " records";
        throw DataError(msg.str());
    }
    for (std::size_t i = 0; i < order.size(); ++i) {
        records[order[i]].split = i < train_count ? Split::Train : Split::Test;
    }
}

namespace {

std::vector<std::uint8_t> nearest_resize_bytes(
    const std::vector<std::uint8_t>& src, int in_h, int in_w, int out_h,
    int out_w) {
    std::vector<std::uint8_t> dst(static_cast<std::size_t>(out_h) * out_w);
    for (int oy = 0; oy < out_h; ++oy) {
        int sy = static_cast<int>((oy + 0.5) * in_h / out_h);
        if (sy >= in_h) sy = in_h - 1;
        for (int ox = 0; ox < out_w; ++ox) {
            int sx = static_cast<int>((ox + 0.5) * in_w / out_w);
            if (sx >= in_w) sx = in_w - 1;
            dst[static_cast<std::size_t>(oy) * out_w + ox] =
                src[static_cast<std::size_t>(sy) * in_w + sx];
        }
    }
    return dst;
}

void check_divisible(int h, int w, const std::string& path) {
    if (h % 8 != 0 || w % 8 != 0) {
        std::ostringstream msg;
        msg << path << ": size " << w << "x" << h
            << " is not divisible by 8; set a target size that is a "
               "multiple of 8";
        throw DataError(msg.str());
    }
}

}  // namespace

Tensor load_image_tensor(const std::string& path,
                         std::optional<std::pair<int, int>> target_size) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw DataError("cannot decode image: " + path);

    Tensor image(1, 3, bgr.rows, bgr.cols);
    for (int y = 0; y < bgr.rows; ++y) {
        const cv::Vec3b* row = bgr.ptr<cv::Vec3b>(y);
        for (int x = 0; x < bgr.cols; ++x) {
            image.at(0, 0, y, x) = static_cast<float>(row[x][2]) / 255.0f;
            image.at(0, 1, y, x) = static_cast<float>(row[x][1]) / 255.0f;
            image.at(0, 2, y, x) = static_cast<float>(row[x][0]) / 255.0f;
        }
    }
    if (target_size && (target_size->first != bgr.rows ||
                        target_size->second != bgr.cols)) {
        image = bilinear_resize(image, target_size->first, target_size->second);
    }
    check_divisible(image.h(), image.w(), path);
    return image;
}

Sample load_sample(const SampleRecord& record, const DatasetSpec& spec) {
    Sample sample;
    sample.id = record.stem;
    sample.image = load_image_tensor(record.image_path, spec.target_size);

    cv::Mat gray = cv::imread(record.mask_path, cv::IMREAD_GRAYSCALE);
    if (gray.empty()) throw DataError("cannot decode mask: " + record.mask_path);

    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(gray.rows) *
                                    gray.cols);
    for (int y = 0; y < gray.rows; ++y) {
        const std::uint8_t* row = gray.ptr<std::uint8_t>(y);
        for (int x = 0; x < gray.cols; ++x) {
            bytes[static_cast<std::size_t>(y) * gray.cols + x] = row[x];
        }
    }
    int mask_h = gray.rows, mask_w = gray.cols;
    if (spec.target_size &&
        (mask_h != spec.target_size->first || mask_w != spec.target_size->second)) {
        bytes = nearest_resize_bytes(bytes, mask_h, mask_w,
                                     spec.target_size->first,
                                     spec.target_size->second);
        mask_h = spec.target_size->first;
        mask_w = spec.target_size->second;
    }
    if (mask_h != sample.image.h() || mask_w != sample.image.w()) {
        std::ostringstream msg;
        msg << "mask " << record.mask_path << " is " << mask_w << "x" << mask_h
            << " but image is " << sample.image.w() << "x" << sample.image.h();
        throw DataError(msg.str());
    }

    sample.mask = LabelMap(1, mask_h, mask_w);
    for (std::size_t i = 0; i < bytes.size(); ++i) {
        sample.mask.data[i] = bytes[i] >= 128 ? 1 : 0;
    }
    return sample;
}

std::vector<Sample> load_split(const IndexResult& index,
                               const DatasetSpec& spec, Split split) {
    std::vector<Sample> samples;
    for (const SampleRecord& record : index.records) {
        if (record.split == split) {
            samples.push_back(load_sample(record, spec));
        }
    }
    return samples;
}

void write_mask_png(const LabelMap& mask, const std::string& path) {
    cv::Mat out(mask.h, mask.w, CV_8UC1);
    for (int y = 0; y < mask.h; ++y) {
        std::uint8_t* row = out.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.w; ++x) {
            row[x] = mask.at(0, y, x) != 0 ? 255 : 0;
        }
    }
    if (!cv::imwrite(path, out)) {
        throw DataError("cannot write mask: " + path);
    }
}

void write_rgb_png(const Tensor& image, const std::string& path) {
    if (image.n() != 1 || image.c() != 3) {
        throw ShapeError("write_rgb_png: expects a (1, 3, h, w) tensor, got " +
                         image.shape().str());
    }
    cv::Mat out(image.h(), image.w(), CV_8UC3);
    for (int y = 0; y < image.h(); ++y) {
        cv::Vec3b* row = out.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image.w(); ++x) {
            auto clamp_byte = [](float v) {
                float scaled = v * 255.0f;
                if (scaled < 0.0f) scaled = 0.0f;
                if (scaled > 255.0f) scaled = 255.0f;
                return static_cast<std::uint8_t>(scaled + 0.5f);
            };
            row[x][0] = clamp_byte(image.at(0, 2, y, x));
            row[x][1] = clamp_byte(image.at(0, 1, y, x));
            row[x][2] = clamp_byte(image.at(0, 0, y, x));
        }
    }
    if (!cv::imwrite(path, out)) {
        throw DataError("cannot write image: " + path);
    }
}

void write_overlay_png(const Tensor& image, const LabelMap& mask,
                       const std::string& path) {
    if (image.h() != mask.h || image.w() != mask.w) {
        throw ShapeError("overlay: image and mask sizes differ");
    }
    cv::Mat out(mask.h, mask.w, CV_8UC3);
    for (int y = 0; y < mask.h; ++y) {
        cv::Vec3b* row = out.ptr<cv::Vec3b>(y);
        for (int x = 0; x < mask.w; ++x) {
            float r = image.at(0, 0, y, x);
            float g = image.at(0, 1, y, x);
            float b = image.at(0, 2, y, x);
            if (mask.at(0, y, x) != 0) {
                r = 0.5f * r + 0.5f;  // blend toward red
                g = 0.5f * g;
                b = 0.5f * b;
            }
            row[x][0] = static_cast<std::uint8_t>(std::min(255.0f, b * 255.0f));
            row[x][1] = static_cast<std::uint8_t>(std::min(255.0f, g * 255.0f));
            row[x][2] = static_cast<std::uint8_t>(std::min(255.0f, r * 255.0f));
        }
    }
    if (!cv::imwrite(path, out)) {
        throw DataError("cannot write overlay: " + path);
    }
}

}  // namespace npnet
