// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "hfedckd/checkpoint.hpp"
#include "hfedckd/model.hpp"
#include "oracles.hpp"

using namespace hfedckd;

namespace {

ModelSpec spec_of(ModelFamily family, double capacity = 1.0) {
  ModelSpec s;
  s.family = family;
  s.capacity = capacity;
  s.input_extent = 6;
  s.feature_extent = 5;
  s.class_count = 3;
  return s;
}

}  // namespace

TEST_CASE("build_model is deterministic in (spec, seed)") {
  const ModelSpec s = spec_of(ModelFamily::Standard);
  const SplitModel a = build_model(s, 123);
  const SplitModel b = build_model(s, 123);
  REQUIRE(a.encoder.size() == b.encoder.size());
  for (std::size_t l = 0; l < a.encoder.size(); ++l) {
    CHECK(a.encoder[l].weights.data == b.encoder[l].weights.data);
    CHECK(a.encoder[l].bias.data == b.encoder[l].bias.data);
  }
  const SplitModel c = build_model(s, 124);
  CHECK(a.encoder[0].weights.data != c.encoder[0].weights.data);
}

TEST_CASE("capacity halves every hidden width, floored at 4") {
  const SplitModel full = build_model(spec_of(ModelFamily::Deep, 1.0), 1);
  const SplitModel half = build_model(spec_of(ModelFamily::Deep, 0.5), 1);
  REQUIRE(full.encoder.size() == half.encoder.size());
  for (std::size_t l = 0; l + 1 < full.encoder.size(); ++l) {
    const std::size_t fw = full.encoder[l].out_extent();
    const std::size_t hw = half.encoder[l].out_extent();
    CHECK(hw == std::max<std::size_t>(fw / 2, 4));
  }
  // projection width is the shared feature extent, never scaled
  CHECK(half.encoder.back().out_extent() == 5);

  const SplitModel quarter = build_model(spec_of(ModelFamily::Compact, 0.25), 1);
  const SplitModel compact = build_model(spec_of(ModelFamily::Compact, 1.0), 1);
  CHECK(parameter_count(quarter) < parameter_count(compact));
}

TEST_CASE("encoder depths differ across families; classifier is one layer") {
  CHECK(build_model(spec_of(ModelFamily::Compact), 1).encoder.size() == 2);
  CHECK(build_model(spec_of(ModelFamily::Standard), 1).encoder.size() == 3);
  CHECK(build_model(spec_of(ModelFamily::Deep), 1).encoder.size() == 4);
  CHECK(build_model(spec_of(ModelFamily::Deep), 1).classifier.size() == 1);
}

TEST_CASE("encode/classify composition equals the monolithic forward") {
  std::mt19937_64 rng(9);
  for (ModelFamily fam : {ModelFamily::Compact, ModelFamily::Standard, ModelFamily::Deep}) {
    const SplitModel m = build_model(spec_of(fam), 77);
    const TensorValue x = oracles::random_tensor({4, 6}, rng);

    const EncodeResult enc = encode(m, x);
    const TensorValue via_split = classify(m, enc.features);

    LayerStack whole = m.encoder;
    whole.insert(whole.end(), m.classifier.begin(), m.classifier.end());
    const TensorValue monolithic = forward(whole, x);

    REQUIRE(via_split.shape == monolithic.shape);
    for (std::size_t i = 0; i < via_split.size(); ++i)
      CHECK(std::abs(via_split.data[i] - monolithic.data[i]) < 1e-12);

    CHECK(enc.layer_features.size() == m.encoder.size());
    CHECK(enc.features.cols() == m.spec.feature_extent);
  }
}

TEST_CASE("classify matches the naive matrix-product oracle") {
  std::mt19937_64 rng(15);
  const SplitModel m = build_model(spec_of(ModelFamily::Standard), 5);
  const TensorValue z = oracles::random_tensor({3, 5}, rng);
  const TensorValue got = classify(m, z);
  const TensorValue want = oracles::naive_forward(m.classifier, z);
  for (std::size_t i = 0; i < got.size(); ++i)
    CHECK(got.data[i] == Catch::Approx(want.data[i]).margin(1e-12));
  CHECK_THROWS_AS(classify(m, oracles::random_tensor({3, 4}, rng)), ShapeError);
}

TEST_CASE("classify with zero weights returns the bias row") {
  SplitModel m = build_model(spec_of(ModelFamily::Compact), 2);
  for (double& w : m.classifier[0].weights.data) w = 0.0;
  m.classifier[0].bias = TensorValue({3}, {0.5, -1.0, 2.0});
  std::mt19937_64 rng(1);
  const TensorValue logits = classify(m, oracles::random_tensor({4, 5}, rng));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(logits.at(r, c) == Catch::Approx(m.classifier[0].bias.data[c]));
}

TEST_CASE("assign_specs follows the 40/30/30 rule") {
  const auto specs10 = assign_specs(10, Heterogeneity::WidthScaled, 3, 6, 5, 3);
  std::size_t full = 0, half = 0, quarter = 0;
  for (const ModelSpec& s : specs10) {
    if (s.capacity == 1.0) ++full;
    else if (s.capacity == 0.5) ++half;
    else ++quarter;
  }
  CHECK(full == 4);
  CHECK(half == 3);
  CHECK(quarter == 3);

  const auto specs20 = assign_specs(20, Heterogeneity::Families, 3, 6, 5, 3);
  std::size_t deep = 0, standard = 0, compact = 0;
  for (const ModelSpec& s : specs20) {
    if (s.family == ModelFamily::Deep) ++deep;
    else if (s.family == ModelFamily::Standard) ++standard;
    else ++compact;
  }
  CHECK(deep == 8);
  CHECK(standard == 6);
  CHECK(compact == 6);

  const auto one = assign_specs(1, Heterogeneity::WidthScaled, 3, 6, 5, 3);
  REQUIRE(one.size() == 1);
  CHECK(one[0].capacity == 1.0);  // largest spec
  const auto one_fam = assign_specs(1, Heterogeneity::Families, 3, 6, 5, 3);
  CHECK(one_fam[0].family == ModelFamily::Deep);
}

TEST_CASE("assign_specs proportions deviate by at most one client") {
  for (std::size_t n : {3u, 7u, 13u, 50u, 99u}) {
    const auto specs = assign_specs(n, Heterogeneity::WidthScaled, 11, 6, 5, 3);
    std::size_t counts[3] = {0, 0, 0};
    for (const ModelSpec& s : specs) {
      if (s.capacity == 1.0) ++counts[0];
      else if (s.capacity == 0.5) ++counts[1];
      else ++counts[2];
    }
    const double ratios[3] = {0.4, 0.3, 0.3};
    for (int i = 0; i < 3; ++i)
      CHECK(std::abs(static_cast<double>(counts[i]) - ratios[i] * static_cast<double>(n)) <=
            1.0);
    // shared extents across every spec of the run
    for (const ModelSpec& s : specs) {
      CHECK(s.feature_extent == 5);
      CHECK(s.class_count == 3);
    }
  }
}

TEST_CASE("checkpoint round-trips a model bit-exactly") {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "hfedckd_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "model.bin").string();

  const SplitModel saved = build_model(spec_of(ModelFamily::Standard, 0.5), 321);
  save_model(saved, 321, path);
  const SplitModel loaded = load_model(path);

  CHECK(loaded.spec.family == saved.spec.family);
  CHECK(loaded.spec.capacity == saved.spec.capacity);
  REQUIRE(loaded.encoder.size() == saved.encoder.size());
  for (std::size_t l = 0; l < saved.encoder.size(); ++l) {
    CHECK(loaded.encoder[l].weights.data == saved.encoder[l].weights.data);
    CHECK(loaded.encoder[l].bias.data == saved.encoder[l].bias.data);
  }
  CHECK(loaded.classifier[0].weights.data == saved.classifier[0].weights.data);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint payload is little-endian doubles after the shape table") {
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "hfedckd_ckpt_le";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "t.bin").string();

  TensorValue t({1, 2}, {1.0, -2.5});
  save_tensors({&t}, path);

  std::ifstream in(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  // u32 count, u32 rank, 2 x u64 extents, then payload
  REQUIRE(bytes.size() == 4 + 4 + 16 + 16);
  CHECK(bytes[0] == 1);  // count LE
  CHECK(bytes[4] == 2);  // rank LE
  CHECK(bytes[8] == 1);  // extent 1
  CHECK(bytes[16] == 2); // extent 2
  // IEEE-754 little-endian 1.0 = 00 00 00 00 00 00 f0 3f
  CHECK(bytes[24 + 6] == 0xf0);
  CHECK(bytes[24 + 7] == 0x3f);
  std::filesystem::remove_all(dir);
}
