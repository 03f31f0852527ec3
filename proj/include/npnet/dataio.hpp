#ifndef NPNET_DATAIO_HPP
#define NPNET_DATAIO_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "npnet/tensor.hpp"
#include "npnet/trainer.hpp"

namespace npnet {

enum class DatasetLayout { Cvc, Skin, Luna, Generic };

DatasetLayout layout_from_string(const std::string& text);

struct DatasetSpec {
    std::string root;
    DatasetLayout layout = DatasetLayout::Generic;
    // (h, w); unset keeps native sizes (which must be multiples of 8)
    std::optional<std::pair<int, int>> target_size;
    float split_fraction = 0.8f;
    std::uint32_t split_seed = 0;

    void validate() const;
};

enum class Split { Train, Test };

struct SampleRecord {
    std::string stem;
    std::string image_path;
    std::string mask_path;
    int original_h = 0;
    int original_w = 0;
    Split split = Split::Train;
};

struct IndexResult {
    std::vector<SampleRecord> records;
    std::vector<std::string> warnings;  // unpaired or undecodable files
};

// Pairs images with masks by shared stem across the layout's image and
// mask directories, in deterministic lexicographic order. Unpaired
// files become warnings and are excluded; an empty result is an error.
IndexResult index_dataset(const DatasetSpec& spec);

// Seeded shuffle, then train = floor(fraction * N). Assigns .split in
// place; both sides must end up non-empty.
void split_records(std::vector<SampleRecord>& records, float fraction,
                   std::uint32_t seed);

// Image: RGB, /255, bilinear-resized to target_size when set.
// Mask: single channel, nearest-neighbor-resized, binarized at 128.
Sample load_sample(const SampleRecord& record, const DatasetSpec& spec);

std::vector<Sample> load_split(const IndexResult& index,
                               const DatasetSpec& spec, Split split);

// Standalone image loading for prediction; same conventions as
// load_sample's image path.
Tensor load_image_tensor(const std::string& path,
                         std::optional<std::pair<int, int>> target_size);

// 8-bit PNG of the foreground mask (0/255).
void write_mask_png(const LabelMap& mask, const std::string& path);

// 8-bit RGB PNG from a (1, 3, h, w) tensor of [0, 1] values.
void write_rgb_png(const Tensor& image, const std::string& path);

// Input blended with the mask at alpha 0.5 (red foreground tint).
void write_overlay_png(const Tensor& image, const LabelMap& mask,
                       const std::string& path);

}  // namespace npnet

#endif
