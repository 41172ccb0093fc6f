#include "brule/deform.hpp"
#include "brule/heatmap.hpp"
#include "brule/image_io.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

using namespace brule;

namespace {

WarpSpec rotation_about_center(double theta) {
  Mat2 r;
  r << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  const Vec2 c(0.5, 0.5);
  return WarpSpec::from_affine({r, c - r * c});
}

Image gradient_image(int h, int w) {
  Image img(h, w, 1);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double x = (j + 0.5) / w, y = (i + 0.5) / h;
      img.at(i, j, 0) = 0.5 + 0.3 * std::sin(2.0 * x + 1.0) * std::cos(1.5 * y);
    }
  return img;
}

Image random_image(std::mt19937_64& rng, int h, int w, int c) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, c);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("brule_test_" + name);
}

}  // namespace

TEST(WarpSpec, RejectsStrongElasticFields) {
  std::vector<Vec2> grid(16, Vec2(0.0, 0.0));
  grid[5] = Vec2(1.0, 0.0);
  EXPECT_NO_THROW(WarpSpec(AffineMap::identity(), 4, grid, 0.1, 0));
  EXPECT_THROW(WarpSpec(AffineMap::identity(), 4, grid, 0.2, 0), InvalidArgument);
  EXPECT_THROW(WarpSpec(AffineMap::identity(), 4, std::vector<Vec2>(15, Vec2::Zero()), 0.0, 0), InvalidArgument);
  EXPECT_THROW(WarpSpec(AffineMap::identity(), 1, std::vector<Vec2>(1, Vec2::Zero()), 0.0, 0), InvalidArgument);
  EXPECT_THROW(WarpSpec(AffineMap::identity(), 4, grid, -0.1, 0), InvalidArgument);
}

TEST(SampleWarp, ZeroRangesGiveIdentity) {
  const auto g = sample_warp(DeformSampler::none(7));
  EXPECT_EQ(g.affine().linear, Mat2::Identity());
  EXPECT_EQ(g.affine().translation, Vec2::Zero());
  EXPECT_FALSE(g.has_elastic());
  EXPECT_EQ(g.seed(), 7u);
}

TEST(SampleWarp, SameSeedSameWarp) {
  DeformSampler s;
  s.seed = 1234;
  const auto a = sample_warp(s), b = sample_warp(s);
  EXPECT_EQ(a.affine().linear, b.affine().linear);
  EXPECT_EQ(a.affine().translation, b.affine().translation);
  EXPECT_EQ(a.elastic_alpha(), b.elastic_alpha());
  EXPECT_EQ(a.elastic_grid(), b.elastic_grid());
  s.seed = 1235;
  EXPECT_NE(sample_warp(s).affine().linear, a.affine().linear);
}

TEST(SampleWarp, RotationHistogramIsUniform) {
  DeformSampler s;
  std::mt19937_64 rng(41);
  constexpr int kSamples = 1000, kBins = 10;
  std::vector<int> counts(kBins, 0);
  for (int k = 0; k < kSamples; ++k) {
    const auto g = sample_warp(s, rng);
    const Mat2& a = g.affine().linear;
    const double theta = std::atan2(a(1, 0), a(0, 0));
    ASSERT_LE(std::abs(theta), s.rotation_range + 1e-12);
    const int bin = std::min(kBins - 1, static_cast<int>((theta + s.rotation_range) / (2 * s.rotation_range) * kBins));
    ++counts[static_cast<std::size_t>(bin)];
  }
  const double expected = static_cast<double>(kSamples) / kBins;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 99th percentile of chi-square with 9 degrees of freedom.
  EXPECT_LT(chi2, 21.666);
}

TEST(SampleWarp, SampledWarpsRespectTheBoundAndRanges) {
  DeformSampler s;
  s.alpha_min = 0.03;  // force the strongest elastic fields
  std::mt19937_64 rng(42);
  for (int k = 0; k < 200; ++k) {
    const auto g = sample_warp(s, rng);
    EXPECT_TRUE(WarpSpec::satisfies_injectivity_bound(g.grid_size(), WarpSpec::max_displacement(g.elastic_grid()),
                                                      g.elastic_alpha()));
    const double scale = std::sqrt(g.affine().linear.determinant());
    EXPECT_GE(scale, 0.9 - 1e-12);
    EXPECT_LE(scale, 1.1 + 1e-12);
  }
}

TEST(WarpPoints, IdentityAndTranslation) {
  std::mt19937_64 rng(43);
  const auto s = oracle::random_set(rng, 20);
  EXPECT_EQ(warp_points(WarpSpec::identity(), s), s);
  const Vec2 t(0.125, -0.0625);
  const auto moved = warp_points(WarpSpec::from_affine(AffineMap::translation_only(t)), s);
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(moved[i], Vec2(s[i] + t));
}

TEST(WarpPoints, RotationThenInverseRotation) {
  std::mt19937_64 rng(44);
  const auto s = oracle::random_set(rng, 30);
  for (double theta : {0.1, 0.26, -0.2, 1.3}) {
    const auto back = warp_points(rotation_about_center(-theta), warp_points(rotation_about_center(theta), s));
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_LT((back[i] - s[i]).norm(), 1e-9);
  }
}

TEST(WarpPoints, ZeroAlphaIsExactlyAffine) {
  DeformSampler sampler;
  sampler.alpha_max = 0.0;
  std::mt19937_64 rng(45);
  const auto s = oracle::random_set(rng, 25);
  for (int k = 0; k < 20; ++k) {
    const auto g = sample_warp(sampler, rng);
    const auto w = warp_points(g, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      EXPECT_LT((w[i] - (g.affine().linear * s[i] + g.affine().translation)).norm(), 1e-12);
  }
}

TEST(WarpPoints, PureAndReproducibleUnderSeed) {
  std::mt19937_64 rng(46);
  const auto s = oracle::random_set(rng, 10);
  DeformSampler sampler;
  sampler.seed = 99;
  const auto g = sample_warp(sampler);
  EXPECT_EQ(warp_points(g, s), warp_points(g, s));
  EXPECT_EQ(warp_points(sample_warp(sampler), s), warp_points(g, s));
  const auto img = gradient_image(16, 16);
  EXPECT_EQ(warp_image(g, img), warp_image(sample_warp(sampler), img));
}

TEST(WarpPoints, NoFoldOversAcrossSampledWarps) {
  DeformSampler sampler;
  sampler.alpha_min = 0.02;
  std::mt19937_64 rng(47);
  constexpr int kGrid = 64;
  std::vector<Vec2> image_of(kGrid * kGrid);
  for (int k = 0; k < 1000; ++k) {
    const auto g = sample_warp(sampler, rng);
    for (int i = 0; i < kGrid; ++i)
      for (int j = 0; j < kGrid; ++j)
        image_of[static_cast<std::size_t>(i * kGrid + j)] =
            g.forward(Vec2(static_cast<double>(j) / (kGrid - 1), static_cast<double>(i) / (kGrid - 1)));
    auto cross = [](const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); };
    for (int i = 0; i + 1 < kGrid; ++i)
      for (int j = 0; j + 1 < kGrid; ++j) {
        const Vec2& p00 = image_of[static_cast<std::size_t>(i * kGrid + j)];
        const Vec2& p01 = image_of[static_cast<std::size_t>(i * kGrid + j + 1)];
        const Vec2& p10 = image_of[static_cast<std::size_t>((i + 1) * kGrid + j)];
        const Vec2& p11 = image_of[static_cast<std::size_t>((i + 1) * kGrid + j + 1)];
        // Every corner of the image quad turns the same way as the source quad.
        ASSERT_GT(cross(p01 - p00, p10 - p00), 0.0) << "warp " << k;
        ASSERT_GT(cross(p11 - p01, p00 - p01), 0.0) << "warp " << k;
        ASSERT_GT(cross(p10 - p11, p01 - p11), 0.0) << "warp " << k;
        ASSERT_GT(cross(p00 - p10, p11 - p10), 0.0) << "warp " << k;
      }
  }
}

TEST(WarpSpec, JacobianMatchesFiniteDifferences) {
  DeformSampler sampler;
  sampler.alpha_min = 0.03;
  std::mt19937_64 rng(48);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (int k = 0; k < 20; ++k) {
    const auto g = sample_warp(sampler, rng);
    const Vec2 x(u(rng), u(rng));
    const double h = 1e-6;
    Mat2 fd;
    fd.col(0) = (g.forward(x + Vec2(h, 0)) - g.forward(x - Vec2(h, 0))) / (2 * h);
    fd.col(1) = (g.forward(x + Vec2(0, h)) - g.forward(x - Vec2(0, h))) / (2 * h);
    EXPECT_LT((fd - g.jacobian(x)).norm(), 1e-6);
  }
}

TEST(WarpSpec, InverseUndoesForwardMap) {
  DeformSampler sampler;
  sampler.alpha_min = 0.03;
  std::mt19937_64 rng(49);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  for (int k = 0; k < 50; ++k) {
    const auto g = sample_warp(sampler, rng);
    const Vec2 x(u(rng), u(rng));
    // Five contraction steps leave at most lip^5 * alpha * max|d| in the
    // elastic frame; the affine inverse stretches that by 1 / min scale.
    const double lip = 2.0 * std::numbers::sqrt2 * g.elastic_alpha() *
                       WarpSpec::max_displacement(g.elastic_grid()) * (g.grid_size() - 1);
    const double bound = std::pow(lip, 5) * g.elastic_alpha() * WarpSpec::max_displacement(g.elastic_grid()) / 0.9;
    EXPECT_LE((g.inverse(g.forward(x)) - x).norm(), bound + 1e-15);
    EXPECT_LT((g.inverse(g.forward(x), 60) - x).norm(), 1e-12);
  }
}

TEST(WarpImage, IdentityIsBitExact) {
  std::mt19937_64 rng(50);
  const auto img = random_image(rng, 17, 23, 3);
  EXPECT_EQ(warp_image(WarpSpec::identity(), img), img);
}

TEST(WarpImage, OnePixelShiftLeavesBlackBorder) {
  std::mt19937_64 rng(51);
  const int h = 12, w = 20;
  const auto img = random_image(rng, h, w, 1);
  const auto out = warp_image(WarpSpec::from_affine(AffineMap::translation_only(Vec2(1.0 / w, 0.0))), img);
  for (int i = 0; i < h; ++i) {
    EXPECT_EQ(out.at(i, 0, 0), 0.0);
    for (int j = 1; j < w; ++j) EXPECT_EQ(out.at(i, j, 0), img.at(i, j - 1, 0));
  }
  const auto down = warp_image(WarpSpec::from_affine(AffineMap::translation_only(Vec2(0.0, 1.0 / h))), img);
  for (int j = 0; j < w; ++j) {
    EXPECT_EQ(down.at(0, j, 0), 0.0);
    for (int i = 1; i < h; ++i) EXPECT_EQ(down.at(i, j, 0), img.at(i - 1, j, 0));
  }
}

TEST(WarpImage, RoundTripOnSmoothImage) {
  const int n = 96;
  const auto img = gradient_image(n, n);
  DeformSampler sampler;
  std::mt19937_64 rng(52);
  for (int k = 0; k < 10; ++k) {
    const auto g = sample_warp(sampler, rng);
    const auto back = unwarp_image(g, warp_image(g, img));
    double err = 0.0;
    int count = 0;
    const double margin = 3.0 / n;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Vec2 y((j + 0.5) / n, (i + 0.5) / n);
        const Vec2 gy = g.forward(y);
        // Skip pixels whose round trip passes through the padded border.
        if (y.minCoeff() < margin || y.maxCoeff() > 1 - margin || gy.minCoeff() < margin || gy.maxCoeff() > 1 - margin)
          continue;
        err += std::abs(back.at(i, j, 0) - img.at(i, j, 0));
        ++count;
      }
    ASSERT_GT(count, n * n / 3);
    EXPECT_LT(err / count, 0.02) << "warp " << k;
  }
}

TEST(WarpImage, RejectsSingularAffine) {
  Mat2 flat;
  flat << 1.0, 0.0, 0.0, 1e-9;
  const auto g = WarpSpec::from_affine({flat, Vec2::Zero()});
  EXPECT_THROW(warp_image(g, Image(4, 4, 1)), DegenerateError);
  EXPECT_THROW(warp_heatmap(g, Heatmap(4, 4)), DegenerateError);
}

TEST(WarpHeatmap, IdentityAndRenormalization) {
  std::mt19937_64 rng(53);
  const HeatmapParams params{64, 64, 0.02, 2};
  const auto s = oracle::random_set(rng, 12, 0.2, 0.8);
  const auto hm = render_heatmap(s, params);
  EXPECT_EQ(warp_heatmap(WarpSpec::identity(), hm).data(), hm.data());
  DeformSampler sampler;
  for (int k = 0; k < 10; ++k) EXPECT_NEAR(warp_heatmap(sample_warp(sampler, rng), hm).sum(), 1.0, 1e-6);
  const auto raw = render_heatmap(s, params, false);
  const auto g = WarpSpec::from_affine(AffineMap::translation_only(Vec2(1.0 / 64, 0.0)));
  EXPECT_FALSE(warp_heatmap(g, raw).is_normalized(1e-6));
}

TEST(WarpHeatmap, ConsistentWithRenderingWarpedPoints) {
  std::mt19937_64 rng(54);
  const HeatmapParams params{64, 64, 0.02, 2};
  DeformSampler sampler;
  for (int k = 0; k < 20; ++k) {
    const auto s = oracle::random_set(rng, 20, 0.25, 0.75);
    const auto g = sample_warp(sampler, rng);
    const auto moved = warp_points(g, s);
    // Same graph on both sides: the warp may reorder nearest neighbors.
    const auto graph = knn_graph(s, params.k);
    const auto a = render_heatmap(moved, graph, params, true);
    const auto b = warp_heatmap(g, render_heatmap(s, graph, params, true));
    // Gap relative to the self-entropy; bilinear resampling widens the blur
    // by a fraction of a pixel, so the raw gap scales with log(#pixels).
    const double self = heatmap_cross_entropy(a, a);
    EXPECT_LT(std::abs(heatmap_cross_entropy(a, b) - self) / self, 0.05) << "warp " << k;
  }
}

TEST(ImageIo, PngRoundTrips) {
  std::mt19937_64 rng(55);
  for (int depth : {8, 16})
    for (int channels : {1, 3}) {
      auto img = random_image(rng, 9, 13, channels);
      const int max = depth == 16 ? 65535 : 255;
      for (auto& v : img.data()) v = std::round(v * max) / max;
      const auto path = temp_path("rt_" + std::to_string(depth) + "_" + std::to_string(channels) + ".png");
      write_png(img, path.string(), depth);
      EXPECT_EQ(read_png(path.string()), img);
      std::filesystem::remove(path);
    }
}

TEST(ImageIo, PgmRoundTripsAndParsesAscii) {
  std::mt19937_64 rng(56);
  auto img = random_image(rng, 7, 5, 1);
  for (auto& v : img.data()) v = std::round(v * 65535) / 65535;
  EXPECT_EQ(parse_pgm(encode_pgm(img, 16)), img);
  const auto ascii = parse_pgm("P2\n# comment\n2 2\n4\n0 1\n2 4\n");
  EXPECT_EQ(ascii.data(), (std::vector<double>{0.0, 0.25, 0.5, 1.0}));
  EXPECT_THROW(parse_pgm("P6\n1 1\n255\n\x01"), ParseError);
  EXPECT_THROW(parse_pgm("P5\n4 4\n255\n\x01"), ParseError);
  EXPECT_THROW(parse_pgm("P2\n1 1\n4\n9\n"), ParseError);
}

TEST(ImageIo, RejectsGarbagePng) {
  const auto path = temp_path("garbage.png");
  write_file_atomic(path, "not a png at all");
  EXPECT_THROW(read_png(path.string()), ParseError);
  std::filesystem::remove(path);
  EXPECT_THROW(read_png(temp_path("missing.png").string()), Error);
}
