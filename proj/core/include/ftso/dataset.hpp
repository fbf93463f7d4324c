#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ftso/tensor.hpp"

namespace ftso {

struct Batch {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
};

struct Dataset {
  Tensor images;  // [N, C, H, W], normalized per channel
  std::vector<int> labels;
  int num_classes = 0;
  // Disjoint index sets into images/labels.
  std::vector<int> search_train;
  std::vector<int> search_val;
  std::vector<int> eval_train;
  std::vector<int> test;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  int channels() const { return static_cast<int>(images.dim(1)); }
  int height() const { return static_cast<int>(images.dim(2)); }
  int width() const { return static_cast<int>(images.dim(3)); }
};

struct DatasetSpec {
  std::string source = "blobs";  // blobs | stripes | idx | csv
  // Synthetic generators.
  int classes = 2;
  int samples = 400;
  int channels = 3;
  int height = 8;
  int width = 8;
  double noise = 1.0;
  std::uint64_t seed = 0;
  // File sources.
  std::string images_path;  // idx images, or the csv file
  std::string labels_path;  // idx labels
  bool csv_header = false;
  std::string csv_label_column = "last";  // first | last
  // search-train, search-val, eval-train, test
  std::array<double, 4> split = {0.25, 0.25, 0.3, 0.2};
  std::uint64_t split_seed = 0;
};

Dataset load_dataset(const DatasetSpec& spec);

// Raw loaders (no normalization, no splits).
struct RawImages {
  Tensor images;
  std::vector<int> labels;
};
RawImages read_idx(const std::string& images_path, const std::string& labels_path);
RawImages read_csv(const std::string& path, int channels, int height, int width, bool header,
                   bool label_first);
RawImages gaussian_blobs(int classes, int samples, int channels, int height, int width,
                         double noise, std::uint64_t seed);
RawImages striped_textures(int classes, int samples, int channels, int height, int width,
                           double noise, std::uint64_t seed);

void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::uint8_t>& pixels, int n, int height, int width,
               const std::vector<std::uint8_t>& labels);

// Zero mean, unit variance per channel (channels with zero variance are only centred).
void normalize_per_channel(Tensor& images);

Batch make_batch(const Dataset& d, std::span<const int> indices);

// Seeded Fisher-Yates permutation of items.
std::vector<int> shuffled(std::span<const int> items, std::uint64_t seed);

}  // namespace ftso
