#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "derm/augment.hpp"
#include "derm/error.hpp"
#include "derm/image.hpp"
#include "derm/rng.hpp"
#include "test_util.hpp"

using namespace derm;

namespace {

Image noise_image(int h, int w, std::uint64_t seed) {
  Image img(h, w);
  Rng rng(seed);
  for (float& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

void expect_contract(const Image& img) {
  ASSERT_EQ(img.height, 224);
  ASSERT_EQ(img.width, 224);
  ASSERT_EQ(img.pixels.size(), 224u * 224 * 3);
  for (float v : img.pixels) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

}  // namespace

TEST(PreprocessEval, ResizesToInputSize) {
  expect_contract(preprocess_eval(noise_image(450, 600, 1)));
  const Image same = noise_image(224, 224, 2);
  EXPECT_EQ(preprocess_eval(same), same);
  const Image flat = preprocess_eval(Image(123, 321, 0.37f));
  for (float v : flat.pixels) EXPECT_NEAR(v, 0.37f, 1e-6);
  EXPECT_THROW(preprocess_eval(Image()), DataError);
}

TEST(AugmentTrain, AllTogglesOffIsEval) {
  TransformSpec off;
  off.rotate = off.hflip = off.vflip = off.crop = off.cutout = false;
  const Image img = noise_image(192, 256, 3);
  EXPECT_EQ(augment_train(img, off, 5), preprocess_eval(img));
}

TEST(AugmentTrain, DeterministicUnderSeed) {
  const Image img = noise_image(192, 256, 4);
  const TransformSpec spec;
  EXPECT_EQ(augment_train(img, spec, 11), augment_train(img, spec, 11));
  EXPECT_NE(augment_train(img, spec, 11), augment_train(img, spec, 12));
  for (int s = 0; s < 20; ++s) expect_contract(augment_train(img, spec, static_cast<std::uint64_t>(s)));
}

TEST(AugmentTrain, ValidationErrors) {
  const Image img = noise_image(50, 50, 5);
  TransformSpec bad;
  bad.cutout_side = 224;
  EXPECT_THROW(augment_train(img, bad, 0), ConfigError);
  bad = {};
  bad.crop_scale_min = 0.0;
  EXPECT_THROW(augment_train(img, bad, 0), ConfigError);
  bad = {};
  bad.crop_scale_max = 1.2;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.output_size = 256;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Geometry, FlipsAreInvolutions) {
  const Image img = noise_image(17, 23, 6);
  EXPECT_EQ(flip_horizontal(flip_horizontal(img)), img);
  EXPECT_EQ(flip_vertical(flip_vertical(img)), img);
  EXPECT_EQ(flip_horizontal(img).at(3, 0, 1), img.at(3, 22, 1));
  EXPECT_EQ(flip_vertical(img).at(0, 5, 2), img.at(16, 5, 2));
}

TEST(Geometry, RotationKeepsShapeRangeAndReflects) {
  const Image img = noise_image(40, 60, 7);
  const Image r = rotate(img, 37.0);
  EXPECT_EQ(r.height, 40);
  EXPECT_EQ(r.width, 60);
  // Reflected borders leave no constant-black corners.
  EXPECT_GT(r.at(0, 0, 0) + r.at(0, 0, 1) + r.at(0, 0, 2), 0.0f);
  const Image zero = rotate(img, 0.0);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(zero.pixels[i], img.pixels[i], 1e-5);
}

TEST(Geometry, CutoutZeroesExactlySideSquared) {
  for (int side : {1, 8, 32}) {
    Image img(100, 80, 1.0f);
    apply_cutout(img, 10, 20, side);
    int zero = 0;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) zero += img.at(y, x, 0) == 0.f && img.at(y, x, 1) == 0.f && img.at(y, x, 2) == 0.f;
    EXPECT_EQ(zero, side * side);
  }
  Image img(10, 10, 1.0f);
  EXPECT_THROW(apply_cutout(img, 5, 5, 6), std::invalid_argument);
  EXPECT_THROW(crop(img, 0, 0, 11, 5), std::invalid_argument);
  EXPECT_EQ(crop(noise_image(10, 10, 1), 2, 3, 4, 5).width, 5);
}

TEST(Tta, VariantsContract) {
  const Image img = noise_image(150, 200, 8);
  const auto one = tta_variants(img, 1, 7);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0], preprocess_eval(img));
  const auto a = tta_variants(img, 10, 7);
  const auto b = tta_variants(img, 10, 7);
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a, b);
  for (const auto& v : a) expect_contract(v);
  EXPECT_EQ(a[0], preprocess_eval(img));
  EXPECT_THROW(tta_variants(img, 0, 7), ConfigError);
  EXPECT_FALSE(tta_spec().cutout);
  EXPECT_FALSE(tta_spec().crop);
}

TEST(ImageIo, PngRoundTripAndReadErrors) {
  const auto dir = testutil::temp_dir("image");
  Image img(5, 7);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(i % 256) / 255.0f;
  write_png(img, dir / "a.png");
  const Image back = read_image(dir / "a.png", "a");
  ASSERT_EQ(back.height, 5);
  ASSERT_EQ(back.width, 7);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1e-6);
  // Channel order survives the round trip.
  Image red(2, 2);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) red.at(y, x, 0) = 1.0f;
  write_png(red, dir / "red.png");
  EXPECT_EQ(read_image(dir / "red.png").at(1, 1, 0), 1.0f);
  EXPECT_EQ(read_image(dir / "red.png").at(1, 1, 2), 0.0f);

  std::vector<float> gray{0.0f, 0.5f, 1.0f, 0.25f};
  write_gray_png(gray, 2, 2, dir / "g.png");
  int h = 0, w = 0;
  const auto g = read_gray_png(dir / "g.png", h, w);
  ASSERT_EQ(h, 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(g[i], gray[i], 0.5 / 255 + 1e-7);

  std::ofstream(dir / "broken.jpg") << "not an image";
  try {
    read_image(dir / "broken.jpg", "ISIC_1");
    FAIL();
  } catch (const ImageReadError& e) {
    EXPECT_EQ(e.image_id(), "ISIC_1");
  }
  EXPECT_THROW(read_image(dir / "missing.jpg", "m"), ImageReadError);
  std::filesystem::remove_all(dir);
}

TEST(ImageIo, BatchLayoutIsNchw) {
  Image img(2, 3);
  img.at(1, 2, 1) = 0.5f;
  const Tensor t = to_batch(std::vector<Image>{Image(2, 3), img});
  EXPECT_EQ(t.shape(), (Shape{2, 3, 2, 3}));
  EXPECT_EQ(t.at(1, 1, 1, 2), 0.5f);
}
