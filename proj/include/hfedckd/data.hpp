// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "hfedckd/rng.hpp"
#include "hfedckd/tensor.hpp"

namespace hfedckd {

struct Dataset {
  TensorValue features;    // samples x input_extent
  std::vector<int> labels; // in [0, class_count)
  std::size_t class_count = 0;
  std::string split;       // "train" or "test"

  std::size_t sample_count() const { return labels.size(); }
  std::size_t input_extent() const { return features.cols(); }
};

struct PartitionMap {
  std::vector<std::vector<std::size_t>> client_indices;
  double dirichlet_alpha = 0.0;
};

/// Normalized class counts over the given indices. Empty index lists fall
/// back to a uniform row; *was_empty reports that case when provided.
inline std::vector<double> label_histogram(const Dataset& data,
                                           const std::vector<std::size_t>& indices,
                                           bool* was_empty = nullptr) {
  std::vector<double> hist(data.class_count, 0.0);
  if (was_empty) *was_empty = indices.empty();
  if (indices.empty()) {
    std::fill(hist.begin(), hist.end(), 1.0 / static_cast<double>(data.class_count));
    return hist;
  }
  for (std::size_t idx : indices) {
    if (idx >= data.sample_count())
      throw ShapeError("label_histogram: index " + std::to_string(idx) + " out of range");
    hist[static_cast<std::size_t>(data.labels[idx])] += 1.0;
  }
  for (double& h : hist) h /= static_cast<double>(indices.size());
  return hist;
}

/// Class-wise Dirichlet dealing: for each class, client proportions are drawn
/// from Dir(alpha * 1_N) and that class's (shuffled) indices are dealt by the
/// cumulative shares. Empty clients are repaired from the largest client.
inline PartitionMap dirichlet_partition(const Dataset& data, std::size_t n_clients,
                                        double alpha, std::uint64_t seed) {
  if (n_clients == 0) throw ConfigError("dirichlet_partition: need at least one client");
  if (alpha <= 0.0) throw ConfigError("dirichlet_partition: alpha must be positive");
  if (data.sample_count() == 0) throw ConfigError("dirichlet_partition: empty dataset");
  if (n_clients > data.sample_count())
    throw ConfigError("dirichlet_partition: " + std::to_string(n_clients) +
                      " clients exceed " + std::to_string(data.sample_count()) +
                      " train samples");

  PartitionMap map;
  map.dirichlet_alpha = alpha;
  map.client_indices.assign(n_clients, {});

  std::vector<std::vector<std::size_t>> by_class(data.class_count);
  for (std::size_t i = 0; i < data.sample_count(); ++i)
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  Rng rng = make_rng(seed, SeedTag::Partition);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (std::vector<std::size_t>& members : by_class) {
    if (members.empty()) continue;
    for (std::size_t i = members.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(members[i - 1], members[pick(rng)]);
    }
    std::vector<double> share(n_clients);
    double total = 0.0;
    for (double& s : share) {
      s = gamma(rng);
      total += s;
    }
    if (total <= 0.0) {  // extreme-alpha underflow
      std::fill(share.begin(), share.end(), 1.0);
      total = static_cast<double>(n_clients);
    }
    // cumulative-share boundaries give an exact split of this class
    std::size_t dealt = 0;
    double cum = 0.0;
    for (std::size_t c = 0; c < n_clients; ++c) {
      cum += share[c] / total;
      const auto boundary = (c + 1 == n_clients)
                                ? members.size()
                                : std::min(members.size(),
                                           static_cast<std::size_t>(cum * static_cast<double>(
                                                                        members.size())));
      for (; dealt < boundary; ++dealt) map.client_indices[c].push_back(members[dealt]);
    }
  }

  // keep every client trainable
  for (std::size_t c = 0; c < n_clients; ++c) {
    while (map.client_indices[c].empty()) {
      std::size_t largest = 0;
      for (std::size_t k = 1; k < n_clients; ++k)
        if (map.client_indices[k].size() > map.client_indices[largest].size()) largest = k;
      if (map.client_indices[largest].size() <= 1)
        throw ConfigError("dirichlet_partition: cannot repair empty client");
      map.client_indices[c].push_back(map.client_indices[largest].back());
      map.client_indices[largest].pop_back();
    }
  }
  for (std::vector<std::size_t>& idx : map.client_indices) std::sort(idx.begin(), idx.end());
  return map;
}

// ---------------------------------------------------------------------------
// IDX loader (big-endian, magic-numbered image/label pairs)

namespace detail {

inline std::uint32_t read_be32(std::ifstream& in, const std::string& field) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = in.get();
    if (c == EOF) throw ParseError("idx: truncated while reading " + field);
    v = (v << 8) | static_cast<std::uint32_t>(static_cast<unsigned char>(c));
  }
  return v;
}

}  // namespace detail

/// Load an IDX image/label pair; pixels are scaled to [0, 1].
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        const std::string& split = "train") {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open idx image file: " + images_path);
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open idx label file: " + labels_path);

  const std::uint32_t img_magic = detail::read_be32(img, "image magic");
  if (img_magic != 0x00000803u)
    throw ParseError("idx: bad image magic in " + images_path + " (got " +
                     std::to_string(img_magic) + ", want 2051)");
  const std::uint32_t lab_magic = detail::read_be32(lab, "label magic");
  if (lab_magic != 0x00000801u)
    throw ParseError("idx: bad label magic in " + labels_path + " (got " +
                     std::to_string(lab_magic) + ", want 2049)");

  const std::uint32_t n_images = detail::read_be32(img, "image count");
  const std::uint32_t rows = detail::read_be32(img, "image rows");
  const std::uint32_t cols = detail::read_be32(img, "image cols");
  const std::uint32_t n_labels = detail::read_be32(lab, "label count");
  if (n_images != n_labels)
    throw ParseError("idx: image count " + std::to_string(n_images) +
                     " does not match label count " + std::to_string(n_labels));

  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  Dataset data;
  data.features = TensorValue::zeros({n_images, pixels});
  data.labels.resize(n_images);

  std::vector<char> buf(pixels);
  int max_label = -1;
  for (std::uint32_t i = 0; i < n_images; ++i) {
    img.read(buf.data(), static_cast<std::streamsize>(pixels));
    if (img.gcount() != static_cast<std::streamsize>(pixels))
      throw ParseError("idx: truncated image payload at sample " + std::to_string(i));
    double* row = data.features.data.data() + static_cast<std::size_t>(i) * pixels;
    for (std::size_t p = 0; p < pixels; ++p)
      row[p] = static_cast<double>(static_cast<unsigned char>(buf[p])) / 255.0;
    const int c = lab.get();
    if (c == EOF) throw ParseError("idx: truncated label payload at sample " + std::to_string(i));
    data.labels[i] = static_cast<int>(static_cast<unsigned char>(c));
    max_label = std::max(max_label, data.labels[i]);
  }
  data.class_count = static_cast<std::size_t>(max_label) + 1;
  data.split = split;
  return data;
}

// ---------------------------------------------------------------------------
// UCI-HAR loader (whitespace-separated feature/label text files)

namespace detail {

inline constexpr std::size_t kUciharWidth = 561;
inline constexpr std::size_t kUciharClasses = 6;

inline Dataset load_ucihar_split(const std::filesystem::path& x_path,
                                 const std::filesystem::path& y_path,
                                 const std::string& split) {
  std::ifstream xf(x_path);
  if (!xf) throw IoError("cannot open " + x_path.string());
  std::ifstream yf(y_path);
  if (!yf) throw IoError("cannot open " + y_path.string());

  std::vector<double> values;
  std::size_t rows = 0;
  std::string line;
  while (std::getline(xf, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++rows;
    std::size_t width = 0;
    const char* p = line.c_str();
    char* end = nullptr;
    while (true) {
      while (*p == ' ' || *p == '\t') ++p;
      if (*p == '\0' || *p == '\r') break;
      const double v = std::strtod(p, &end);
      if (end == p)
        throw ParseError(x_path.string() + ": bad numeric token at row " +
                         std::to_string(rows));
      values.push_back(v);
      ++width;
      p = end;
    }
    if (width != kUciharWidth)
      throw ParseError(x_path.string() + ": row " + std::to_string(rows) + " has " +
                       std::to_string(width) + " features, expected " +
                       std::to_string(kUciharWidth));
  }

  Dataset data;
  data.features = TensorValue({rows, kUciharWidth}, std::move(values));
  data.labels.reserve(rows);
  std::size_t y_rows = 0;
  while (std::getline(yf, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++y_rows;
    const long raw = std::strtol(line.c_str(), nullptr, 10);
    if (raw < 1 || raw > static_cast<long>(kUciharClasses))
      throw ParseError(y_path.string() + ": unknown label '" + std::to_string(raw) +
                       "' at row " + std::to_string(y_rows));
    data.labels.push_back(static_cast<int>(raw - 1));  // 1..6 -> 0..5
  }
  if (y_rows != rows)
    throw ParseError(y_path.string() + ": " + std::to_string(y_rows) +
                     " labels for " + std::to_string(rows) + " feature rows");
  data.class_count = kUciharClasses;
  data.split = split;
  return data;
}

inline std::filesystem::path ucihar_file(const std::filesystem::path& dir,
                                         const std::string& sub, const std::string& file) {
  const std::filesystem::path nested = dir / sub / file;
  if (std::filesystem::exists(nested)) return nested;
  return dir / file;
}

}  // namespace detail

/// Load the UCI-HAR corpus from `dir` (accepts both the upstream
/// train/X_train.txt layout and a flat directory).
inline std::pair<Dataset, Dataset> load_ucihar(const std::string& dir) {
  const std::filesystem::path root(dir);
  Dataset train = detail::load_ucihar_split(
      detail::ucihar_file(root, "train", "X_train.txt"),
      detail::ucihar_file(root, "train", "y_train.txt"), "train");
  Dataset test = detail::load_ucihar_split(
      detail::ucihar_file(root, "test", "X_test.txt"),
      detail::ucihar_file(root, "test", "y_test.txt"), "test");
  return {std::move(train), std::move(test)};
}

/// Gaussian blobs, one mean per class on a scaled simplex, unit within-class
/// variance. Labels cycle over classes, so marginals are seed-independent.
inline Dataset synthetic_mixture(std::size_t class_count, std::size_t input_extent,
                                 std::size_t samples, std::uint64_t seed,
                                 double separation = 4.0,
                                 const std::string& split = "train") {
  if (class_count == 0 || input_extent == 0 || samples == 0)
    throw ConfigError("synthetic_mixture: all extents must be positive");
  Dataset data;
  data.class_count = class_count;
  data.split = split;
  data.features = TensorValue::zeros({samples, input_extent});
  data.labels.resize(samples);
  Rng rng = make_rng(seed, SeedTag::Synthetic);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < samples; ++i) {
    const int y = static_cast<int>(i % class_count);
    data.labels[i] = y;
    double* row = data.features.data.data() + i * input_extent;
    for (std::size_t d = 0; d < input_extent; ++d) row[d] = noise(rng);
    row[static_cast<std::size_t>(y) % input_extent] += separation;
  }
  return data;
}

}  // namespace hfedckd
