// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "hfedckd/model.hpp"

namespace hfedckd {

// Checkpoint format: a shape table followed by a flat run of little-endian
// doubles.
//   u32  tensor count
//   per tensor: u32 rank, then rank x u64 extents
//   all tensor payloads, row-major doubles, little-endian
// A sidecar "<path>.manifest" records the model spec and the build seed as
// key = value text.

namespace detail {

inline void write_le(std::ofstream& out, std::uint64_t v, std::size_t bytes) {
  for (std::size_t i = 0; i < bytes; ++i)
    out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t read_le(std::ifstream& in, std::size_t bytes, const char* field) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == EOF) throw ParseError(std::string("checkpoint truncated while reading ") + field);
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

inline void write_double_le(std::ofstream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  write_le(out, bits, 8);
}

inline double read_double_le(std::ifstream& in, const char* field) {
  const std::uint64_t bits = read_le(in, 8, field);
  double d;
  std::memcpy(&d, &bits, sizeof(d));
  return d;
}

}  // namespace detail

inline void save_tensors(const std::vector<const TensorValue*>& tensors,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  detail::write_le(out, tensors.size(), 4);
  for (const TensorValue* t : tensors) {
    detail::write_le(out, t->shape.size(), 4);
    for (std::size_t e : t->shape) detail::write_le(out, e, 8);
  }
  for (const TensorValue* t : tensors)
    for (double d : t->data) detail::write_double_le(out, d);
  if (!out) throw IoError("checkpoint write failed: " + path);
}

inline std::vector<TensorValue> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  const std::uint64_t count = detail::read_le(in, 4, "tensor count");
  std::vector<TensorValue> tensors;
  tensors.reserve(count);
  for (std::uint64_t t = 0; t < count; ++t) {
    const std::uint64_t rank = detail::read_le(in, 4, "tensor rank");
    if (rank > 8) throw ParseError("checkpoint: implausible tensor rank");
    std::vector<std::size_t> shape;
    for (std::uint64_t r = 0; r < rank; ++r)
      shape.push_back(static_cast<std::size_t>(detail::read_le(in, 8, "tensor extent")));
    tensors.push_back(TensorValue::zeros(std::move(shape)));
  }
  for (TensorValue& t : tensors)
    for (double& d : t.data) d = detail::read_double_le(in, "tensor payload");
  return tensors;
}

inline void save_model(const SplitModel& model, std::uint64_t seed, const std::string& path) {
  std::vector<const TensorValue*> tensors;
  for (const TensorValue* p : parameters(model.encoder)) tensors.push_back(p);
  for (const TensorValue* p : parameters(model.classifier)) tensors.push_back(p);
  save_tensors(tensors, path);

  std::ofstream manifest(path + ".manifest");
  if (!manifest) throw IoError("cannot write checkpoint manifest: " + path + ".manifest");
  manifest << "family = " << family_name(model.spec.family) << "\n"
           << "capacity = " << model.spec.capacity << "\n"
           << "input_extent = " << model.spec.input_extent << "\n"
           << "feature_extent = " << model.spec.feature_extent << "\n"
           << "class_count = " << model.spec.class_count << "\n"
           << "seed = " << seed << "\n";
}

inline SplitModel load_model(const std::string& path) {
  ModelSpec spec;
  std::uint64_t seed = 0;
  {
    std::ifstream manifest(path + ".manifest");
    if (!manifest) throw IoError("missing checkpoint manifest: " + path + ".manifest");
    std::string line;
    while (std::getline(manifest, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      const auto trim = [](std::string& s) {
        s.erase(0, s.find_first_not_of(" \t"));
        const auto last = s.find_last_not_of(" \t\r");
        s.erase(last == std::string::npos ? 0 : last + 1);
      };
      trim(key);
      trim(value);
      if (key == "family") spec.family = family_from_name(value);
      else if (key == "capacity") spec.capacity = std::stod(value);
      else if (key == "input_extent") spec.input_extent = std::stoul(value);
      else if (key == "feature_extent") spec.feature_extent = std::stoul(value);
      else if (key == "class_count") spec.class_count = std::stoul(value);
      else if (key == "seed") seed = std::stoull(value);
    }
  }
  SplitModel model = build_model(spec, seed);
  std::vector<TensorValue> tensors = load_tensors(path);
  std::vector<TensorValue*> params;
  for (TensorValue* p : parameters(model.encoder)) params.push_back(p);
  for (TensorValue* p : parameters(model.classifier)) params.push_back(p);
  if (tensors.size() != params.size())
    throw ParseError("checkpoint tensor count " + std::to_string(tensors.size()) +
                     " does not match model parameter count " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (tensors[i].shape != params[i]->shape)
      throw ParseError("checkpoint tensor " + std::to_string(i) + " has shape " +
                       shape_string(tensors[i]) + ", model expects " +
                       shape_string(*params[i]));
    *params[i] = std::move(tensors[i]);
  }
  return model;
}

}  // namespace hfedckd
