#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "clfa/data.hpp"
#include "clfa/encoders.hpp"
#include "clfa/fixture.hpp"
#include "clfa/grad_check.hpp"
#include "test_util.hpp"

using namespace clfa;

namespace {

data::Image ramp_image(std::size_t h, std::size_t w, std::size_t c = 1) {
  data::Image img{h, w, c, std::vector<double>(h * w * c)};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = 0.01 * static_cast<double>(i % 97);
  return img;
}

encoders::TextEncoderConfig small_text(bool positional = true) {
  return {.vocab_size = 16, .width = 8, .layers = 2, .max_length = 10, .ffn_hidden = 12, .dropout = 0.1,
          .positional = positional};
}

encoders::ImageEncoderConfig small_image(bool positional = true) {
  return {.image_height = 8, .image_width = 8, .channels = 1, .patch = 4, .width = 8, .layers = 2, .ffn_hidden = 12,
          .dropout = 0.1, .positional = positional};
}

double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("patchify") {
  SUBCASE("224x224 at patch 32 gives a 7x7 grid") {
    auto p = encoders::patchify(ramp_image(224, 224), 32);
    CHECK(p.shape() == Shape{49, 1024});
  }
  SUBCASE("16x16 at patch 8 gives 4 patches in row-major order") {
    auto img = ramp_image(16, 16);
    auto p = encoders::patchify(img, 8);
    CHECK(p.shape() == Shape{4, 64});
    // Patch 1 is the top-right block; its first entry is pixel (0, 8).
    CHECK(p.at(1, 0) == img.at(0, 8, 0));
    // Patch 2, entry (r=1, c=2) is pixel (9, 2).
    CHECK(p.at(2, 8 + 2) == img.at(9, 2, 0));
  }
  SUBCASE("constant image gives identical patches") {
    data::Image img{16, 16, 1, std::vector<double>(256, 0.25)};
    auto p = encoders::patchify(img, 8);
    for (std::size_t r = 1; r < 4; ++r)
      for (std::size_t j = 0; j < 64; ++j) CHECK(p.at(r, j) == p.at(0, j));
  }
  CHECK_THROWS_AS(encoders::patchify(ramp_image(16, 12), 8), DimensionError);
}

TEST_CASE("text encoder") {
  nn::ParameterStore store(3);
  encoders::TextEncoder enc(store, "text", small_text());
  const nn::ForwardContext eval{};

  const std::vector<std::uint32_t> tokens{3, 7, 1, 9, 2};
  const std::vector<std::uint8_t> mask(5, 1);
  auto out = enc(tokens, mask, eval);
  CHECK(out.shape() == Shape{5, 8});

  SUBCASE("masked pad content never reaches unmasked positions") {
    const std::vector<std::uint32_t> a{3, 7, 1, 0, 0};
    const std::vector<std::uint32_t> b{3, 7, 1, 0, 11};
    const std::vector<std::uint8_t> m{1, 1, 1, 0, 0};
    auto ya = enc(a, m, eval);
    auto yb = enc(b, m, eval);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 8; ++j) CHECK(ya.at(i, j) == yb.at(i, j));
  }
  SUBCASE("fixed seed and input are bit-identical across constructions") {
    nn::ParameterStore store2(3);
    encoders::TextEncoder enc2(store2, "text", small_text());
    CHECK(testutil::to_vector(enc2(tokens, mask, eval)) == testutil::to_vector(out));
  }
  SUBCASE("out-of-vocabulary id") {
    const std::vector<std::uint32_t> bad{3, 16};
    const std::vector<std::uint8_t> m{1, 1};
    CHECK_THROWS_AS(enc(bad, m, eval), encoders::VocabularyError);
  }
}

TEST_CASE("image encoder") {
  nn::ParameterStore store(4);
  encoders::ImageEncoder enc(store, "image", small_image());
  auto img = ramp_image(8, 8);
  CHECK(enc(img, {}).shape() == Shape{4, 8});

  SUBCASE("16x16 desk image at patch 8 gives 4 rows") {
    nn::ParameterStore s(1);
    encoders::ImageEncoder desk(s, "image", {});
    CHECK(desk(ramp_image(16, 16), {}).shape() == Shape{4, 64});
  }

  SUBCASE("without positions, swapping two patches swaps their outputs") {
    nn::ParameterStore s(4);
    encoders::ImageEncoder plain(s, "image", small_image(false));
    auto swapped = img;
    // Exchange patch 0 (top-left) and patch 3 (bottom-right).
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) std::swap(swapped.pixels[r * 8 + c], swapped.pixels[(r + 4) * 8 + c + 4]);
    auto y = plain(img, {});
    auto ys = plain(swapped, {});
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(std::abs(y.at(0, j) - ys.at(3, j)) < 1e-12);
      CHECK(std::abs(y.at(3, j) - ys.at(0, j)) < 1e-12);
      CHECK(std::abs(y.at(1, j) - ys.at(1, j)) < 1e-12);
    }
  }

  SUBCASE("patch projection gradients") {
    const nn::ForwardContext ctx{true, 2, 0, 1};
    auto w = testutil::random_tensor({4, 8}, 5, 1.0, false);
    auto report = grad_check([&] { return ops::sum(ops::mul(enc(img, ctx), w)); },
                             {enc.patch_projection().weight(), enc.patch_projection().bias()});
    CHECK(report.max_rel_error < 1e-4);
  }
}

TEST_CASE("synthetic teacher") {
  const auto ds = data::generate_synthetic(1000, 11, 2);
  const encoders::SyntheticTeacher teacher({.width = 32, .latent_dims = 9, .noise = 0.1, .seed = 11});
  CHECK(teacher.width() == 32);
  CHECK(teacher.variant() == encoders::TeacherVariant::synthetic);

  auto first = teacher.embed(ds.samples[0]);
  auto again = teacher.embed(ds.samples[0]);
  CHECK(testutil::to_vector(first.text) == testutil::to_vector(again.text));
  CHECK(testutil::to_vector(first.image) == testutil::to_vector(again.image));
  CHECK_FALSE(first.text.requires_grad());
  CHECK_FALSE(first.image.requires_grad());
  for (const auto& t : teacher.frozen_tensors()) CHECK_FALSE(t.requires_grad());

  // Monte-Carlo: matched text/image pairs are more similar than mismatched ones.
  double matched = 0.0, mismatched = 0.0;
  const std::size_t n = ds.size();
  for (std::size_t i = 0; i < n; ++i) {
    auto a = teacher.embed(ds.samples[i]);
    auto b = teacher.embed(ds.samples[(i + 1) % n]);
    matched += cosine(a.text.data(), a.image.data());
    mismatched += cosine(a.text.data(), b.image.data());
  }
  CHECK(matched / n > mismatched / n + 0.3);

  data::Sample bare;
  bare.id = 5;
  CHECK_THROWS_AS(teacher.embed(bare), encoders::LookupError);
}

TEST_CASE("fixture teacher reproduces file values bit-exactly") {
  const auto ds = data::generate_synthetic(20, 3, 2);
  const encoders::SyntheticTeacher source({.width = 32, .latent_dims = 9, .noise = 0.1, .seed = 3});
  const auto bytes = io::encode_fixture(io::make_fixture(ds.samples, encoders::embed_all(source, ds.samples), false));
  const auto file = io::decode_fixture(bytes);
  const encoders::FixtureTeacher teacher(file);
  CHECK(teacher.width() == 32);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto e = teacher.embed(ds.samples[i]);
    CHECK(testutil::to_vector(e.text) == file.records[i].text);
    CHECK(testutil::to_vector(e.image) == file.records[i].image);
  }
  data::Sample missing;
  missing.id = 999;
  CHECK_THROWS_AS(teacher.embed(missing), encoders::LookupError);
}
