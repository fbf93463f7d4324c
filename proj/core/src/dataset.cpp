#include "ftso/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "ftso/error.hpp"
#include "ftso/seed.hpp"

namespace ftso {

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError(path + ": truncated IDX header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

int check_labels(const std::vector<int>& labels, int declared_classes) {
  int max_label = -1;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw DataError("negative label at sample " + std::to_string(i));
    max_label = std::max(max_label, labels[i]);
  }
  const int classes = declared_classes > 0 ? declared_classes : max_label + 1;
  if (classes < 2) throw DataError("dataset needs at least 2 classes, found " + std::to_string(classes));
  if (max_label >= classes) {
    throw DataError("label " + std::to_string(max_label) + " outside [0, " +
                    std::to_string(classes) + ")");
  }
  return classes;
}

}  // namespace

RawImages read_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw DataError("cannot open IDX images '" + images_path + "'");
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw DataError("cannot open IDX labels '" + labels_path + "'");

  const std::uint32_t magic_img = read_be32(img, images_path);
  if (magic_img != 0x00000803) {
    std::ostringstream os;
    os << images_path << ": IDX magic number 0x" << std::hex << magic_img
       << ", expected 0x00000803 (unsigned byte, 3 dimensions)";
    throw DataError(os.str());
  }
  const std::uint32_t magic_lab = read_be32(lab, labels_path);
  if (magic_lab != 0x00000801) {
    std::ostringstream os;
    os << labels_path << ": IDX magic number 0x" << std::hex << magic_lab
       << ", expected 0x00000801 (unsigned byte, 1 dimension)";
    throw DataError(os.str());
  }
  const std::uint32_t n = read_be32(img, images_path);
  const std::uint32_t h = read_be32(img, images_path);
  const std::uint32_t w = read_be32(img, images_path);
  const std::uint32_t nl = read_be32(lab, labels_path);
  if (n != nl) {
    throw DataError("IDX files disagree on sample count: " + std::to_string(n) + " images, " +
                    std::to_string(nl) + " labels");
  }
  if (n == 0 || h == 0 || w == 0) throw DataError(images_path + ": empty IDX image set");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n) * plane);
  if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
    throw DataError(images_path + ": truncated pixel data");
  }
  std::vector<unsigned char> raw_labels(n);
  if (!lab.read(reinterpret_cast<char*>(raw_labels.data()), n)) {
    throw DataError(labels_path + ": truncated label data");
  }
  RawImages r;
  r.images = Tensor({static_cast<std::int64_t>(n), 1, static_cast<std::int64_t>(h),
                     static_cast<std::int64_t>(w)});
  for (std::size_t i = 0; i < pixels.size(); ++i) r.images[i] = pixels[i] / 255.0;
  r.labels.assign(raw_labels.begin(), raw_labels.end());
  return r;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const std::vector<std::uint8_t>& pixels, int n, int height, int width,
               const std::vector<std::uint8_t>& labels) {
  if (pixels.size() != static_cast<std::size_t>(n) * height * width ||
      labels.size() != static_cast<std::size_t>(n)) {
    throw DataError("write_idx: buffer sizes do not match the header");
  }
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!img || !lab) throw DataError("write_idx: cannot open output files");
  write_be32(img, 0x00000803);
  write_be32(img, static_cast<std::uint32_t>(n));
  write_be32(img, static_cast<std::uint32_t>(height));
  write_be32(img, static_cast<std::uint32_t>(width));
  img.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  write_be32(lab, 0x00000801);
  write_be32(lab, static_cast<std::uint32_t>(n));
  lab.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

RawImages read_csv(const std::string& path, int channels, int height, int width, bool header,
                   bool label_first) {
  if (channels < 1 || height < 1 || width < 1) throw DataError("csv: image shape must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open CSV '" + path + "'");
  const std::size_t pixels = static_cast<std::size_t>(channels) * height * width;
  std::vector<double> data;
  std::vector<int> labels;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (header && row == 1) continue;
    if (line.empty()) continue;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (fields.size() != pixels + 1) {
      throw DataError(path + ": ragged row " + std::to_string(row) + " has " +
                      std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(pixels + 1));
    }
    const std::size_t label_col = label_first ? 0 : pixels;
    for (std::size_t col = 0; col < fields.size(); ++col) {
      const std::string_view f = fields[col];
      if (col == label_col) {
        int v = 0;
        const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
        if (res.ec != std::errc() || res.ptr != f.data() + f.size()) {
          throw DataError(path + ": row " + std::to_string(row) + ", column " +
                          std::to_string(col + 1) + ": label '" + std::string(f) +
                          "' is not an integer");
        }
        labels.push_back(v);
      } else {
        double v = 0.0;
        const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
        if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size() ||
            !std::isfinite(v)) {
          throw DataError(path + ": row " + std::to_string(row) + ", column " +
                          std::to_string(col + 1) + ": '" + std::string(f) +
                          "' is not a number");
        }
        data.push_back(v);
      }
    }
  }
  if (labels.empty()) throw DataError(path + ": no data rows");
  RawImages r;
  r.images = Tensor({static_cast<std::int64_t>(labels.size()), channels, height, width},
                    std::move(data));
  r.labels = std::move(labels);
  return r;
}

RawImages gaussian_blobs(int classes, int samples, int channels, int height, int width,
                         double noise, std::uint64_t seed) {
  if (classes < 2) throw DataError("blobs: class count must be >= 2");
  if (samples < classes) throw DataError("blobs: need at least one sample per class");
  std::mt19937_64 rng(derive_seed(seed, 0xb10b));
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const std::size_t per_image = plane * channels;
  // Class mean: a per-channel offset plus a fixed spatial pattern.
  std::vector<double> means(per_image * classes);
  for (int c = 0; c < classes; ++c) {
    for (int ch = 0; ch < channels; ++ch) {
      const double offset = normal(rng);
      for (std::size_t i = 0; i < plane; ++i)
        means[(c * channels + ch) * plane + i] = offset + 0.5 * normal(rng);
    }
  }
  RawImages r;
  r.images = Tensor({samples, channels, height, width});
  r.labels.resize(static_cast<std::size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    const int c = s % classes;
    r.labels[static_cast<std::size_t>(s)] = c;
    for (std::size_t i = 0; i < per_image; ++i)
      r.images[s * per_image + i] = means[c * per_image + i] + noise * normal(rng);
  }
  return r;
}

RawImages striped_textures(int classes, int samples, int channels, int height, int width,
                           double noise, std::uint64_t seed) {
  if (classes < 2) throw DataError("stripes: class count must be >= 2");
  if (samples < classes) throw DataError("stripes: need at least one sample per class");
  std::mt19937_64 rng(derive_seed(seed, 0x57e1));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  RawImages r;
  r.images = Tensor({samples, channels, height, width});
  r.labels.resize(static_cast<std::size_t>(samples));
  for (int s = 0; s < samples; ++s) {
    const int c = s % classes;
    r.labels[static_cast<std::size_t>(s)] = c;
    const double theta = std::numbers::pi * c / classes;
    const double freq = 1.0 + (c % 3);
    const double phi = phase(rng);
    for (int ch = 0; ch < channels; ++ch)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double t = (y * std::cos(theta) + x * std::sin(theta)) / height;
          r.images.at(s, ch, y, x) =
              std::sin(2.0 * std::numbers::pi * freq * t + phi) + noise * normal(rng);
        }
  }
  return r;
}

void normalize_per_channel(Tensor& images) {
  if (images.rank() != 4) throw ShapeError("normalize_per_channel: expected [N,C,H,W]");
  const std::int64_t n = images.dim(0), c = images.dim(1);
  const std::int64_t plane = images.dim(2) * images.dim(3);
  for (std::int64_t ch = 0; ch < c; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const double* p = images.ptr() + (i * c + ch) * plane;
      for (std::int64_t k = 0; k < plane; ++k) sum += p[k];
    }
    const double count = static_cast<double>(n * plane);
    const double mean = sum / count;
    for (std::int64_t i = 0; i < n; ++i) {
      const double* p = images.ptr() + (i * c + ch) * plane;
      for (std::int64_t k = 0; k < plane; ++k) sq += (p[k] - mean) * (p[k] - mean);
    }
    const double sd = std::sqrt(sq / count);
    const double inv = sd > 0.0 ? 1.0 / sd : 1.0;
    for (std::int64_t i = 0; i < n; ++i) {
      double* p = images.ptr() + (i * c + ch) * plane;
      for (std::int64_t k = 0; k < plane; ++k) p[k] = (p[k] - mean) * inv;
    }
  }
}

Dataset load_dataset(const DatasetSpec& spec) {
  RawImages raw;
  int declared = 0;
  if (spec.source == "blobs") {
    raw = gaussian_blobs(spec.classes, spec.samples, spec.channels, spec.height, spec.width,
                         spec.noise, spec.seed);
    declared = spec.classes;
  } else if (spec.source == "stripes") {
    raw = striped_textures(spec.classes, spec.samples, spec.channels, spec.height, spec.width,
                           spec.noise, spec.seed);
    declared = spec.classes;
  } else if (spec.source == "idx") {
    raw = read_idx(spec.images_path, spec.labels_path);
  } else if (spec.source == "csv") {
    if (spec.csv_label_column != "first" && spec.csv_label_column != "last") {
      throw DataError("data.csv_label_column must be 'first' or 'last'");
    }
    raw = read_csv(spec.images_path, spec.channels, spec.height, spec.width, spec.csv_header,
                   spec.csv_label_column == "first");
  } else {
    throw DataError("unknown data.source '" + spec.source + "'");
  }

  double total = 0.0;
  for (double f : spec.split) {
    if (!(f >= 0.0)) throw DataError("split fractions must be >= 0");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("split fractions must sum to 1");

  Dataset d;
  d.num_classes = check_labels(raw.labels, declared);
  d.images = std::move(raw.images);
  d.labels = std::move(raw.labels);
  normalize_per_channel(d.images);

  const auto n = d.size();
  std::vector<int> all(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = static_cast<int>(i);
  const auto order = shuffled(all, derive_seed(spec.split_seed, 0x5b11));
  std::array<std::int64_t, 4> counts{};
  std::int64_t used = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    counts[i] = static_cast<std::int64_t>(std::floor(spec.split[i] * static_cast<double>(n)));
    used += counts[i];
  }
  counts[3] = n - used;
  std::array<std::vector<int>*, 4> parts = {&d.search_train, &d.search_val, &d.eval_train, &d.test};
  std::int64_t pos = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    parts[i]->assign(order.begin() + pos, order.begin() + pos + counts[i]);
    pos += counts[i];
  }
  return d;
}

std::vector<int> shuffled(std::span<const int> items, std::uint64_t seed) {
  std::vector<int> out(items.begin(), items.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = out.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(i));
    std::swap(out[i - 1], out[j]);
  }
  return out;
}

Batch make_batch(const Dataset& d, std::span<const int> indices) {
  if (indices.empty()) throw DataError("make_batch: empty batch");
  const std::int64_t c = d.images.dim(1), h = d.images.dim(2), w = d.images.dim(3);
  const std::int64_t per = c * h * w;
  Batch b;
  b.images = Tensor({static_cast<std::int64_t>(indices.size()), c, h, w});
  b.labels.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int idx = indices[i];
    if (idx < 0 || idx >= d.size()) throw DataError("make_batch: index out of range");
    std::copy_n(d.images.ptr() + idx * per, per, b.images.ptr() + static_cast<std::int64_t>(i) * per);
    b.labels.push_back(d.labels[static_cast<std::size_t>(idx)]);
  }
  return b;
}

}  // namespace ftso
