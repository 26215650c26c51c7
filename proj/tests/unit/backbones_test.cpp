#include <gtest/gtest.h>

#include "geoaware/backbones/geo_stub.hpp"
#include "geoaware/backbones/layer_select.hpp"
#include "geoaware/backbones/pixel_encoder.hpp"
#include "geoaware/deskworld/viewpoints.hpp"
#include "test_support.hpp"

using namespace geoaware;
using namespace geoaware::backbones;
using deskworld::CameraPose;
using deskworld::ViewCategory;
using testsupport::expect_grad_matches;
using testsupport::probe;
using testsupport::random_tensor;
using TensorD = nn::Tensor<double>;

namespace {

double max_abs_diff(const TensorD& a, const TensorD& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.at(i) - b.at(i)));
    }
    return worst;
}

// Two seen cameras plus novel draws from every band.
std::vector<CameraPose> camera_suite(std::uint64_t seed) {
    auto cams = deskworld::seen_cameras();
    for (auto c : {ViewCategory::novel_small, ViewCategory::novel_medium, ViewCategory::novel_large}) {
        const auto extra = deskworld::sample_viewpoints(c, c == ViewCategory::novel_large ? 2 : 1, seed).cameras;
        cams.insert(cams.end(), extra.begin(), extra.end());
    }
    return cams;
}

deskworld::SceneState scene(std::uint64_t seed) {
    const auto tasks = deskworld::make_tasks();
    return deskworld::reset(tasks[seed % tasks.size()], seed);
}

} // namespace

TEST(GeoStub, AlphaScheduleEndpointsAndMonotone) {
    const GeoStubConfig cfg;
    EXPECT_EQ(cfg.alpha(1), 0.0);
    EXPECT_EQ(cfg.alpha(cfg.layers), 1.0);
    for (std::size_t l = 2; l <= cfg.layers; ++l) {
        EXPECT_GE(cfg.alpha(l), cfg.alpha(l - 1));
    }
}

TEST(GeoStub, PyramidShape) {
    const GeoBackbone geo;
    const auto pyr = geo.features(scene(1), deskworld::seen_cameras()[0], 1);
    ASSERT_EQ(pyr.layers.size(), 12u);
    EXPECT_EQ(pyr.view_index, 1u);
    for (const auto& l : pyr.layers) {
        EXPECT_EQ(l.shape(), (nn::Shape{16, 32}));
        EXPECT_FALSE(l.requires_grad());
    }
}

TEST(GeoStub, DeepestLayerIsViewInvariant) {
    const GeoBackbone geo;
    double worst = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto sc = scene(s);
        const auto cams = camera_suite(s);
        ASSERT_EQ(cams.size(), 6u);
        const auto ref = geo.features(sc, cams[0]).layers.back();
        for (std::size_t c = 1; c < cams.size(); ++c) {
            worst = std::max(worst, max_abs_diff(ref, geo.features(sc, cams[c]).layers.back()));
        }
    }
    EXPECT_LE(worst, 1e-9);
}

TEST(GeoStub, FirstLayerDependsOnView) {
    const GeoBackbone geo;
    const auto seen = deskworld::seen_cameras();
    for (std::uint64_t s = 0; s < 10; ++s) {
        const auto sc = scene(s);
        EXPECT_GT(max_abs_diff(geo.features(sc, seen[0]).layers.front(), geo.features(sc, seen[1]).layers.front()),
                  1e-3)
            << "seed " << s;
    }
}

TEST(GeoStub, Deterministic) {
    const GeoBackbone a, b;
    const auto sc = scene(3);
    const auto cam = deskworld::seen_cameras()[1];
    const auto pa = a.features(sc, cam), pb = b.features(sc, cam);
    for (std::size_t l = 0; l < pa.layers.size(); ++l) {
        EXPECT_TRUE(std::equal(pa.layers[l].values().begin(), pa.layers[l].values().end(),
                               pb.layers[l].values().begin()));
    }
    EXPECT_EQ(a.lift_hash(), b.lift_hash());
    EXPECT_NE(a.lift_hash(), GeoBackbone(GeoStubConfig{12, 32, 16, 7}).lift_hash());
}

TEST(GeoStub, TokenIsLiftOfMixedRawVector) {
    // Oracle: rebuild one token from the raw halves and the lift matrix.
    const GeoBackbone geo;
    const auto sc = scene(5);
    const auto cam = deskworld::seen_cameras()[0];
    std::vector<double> view, world;
    geo.raw_halves(sc, cam, view, world);
    const std::size_t l = 7, j = 2;
    const auto pyr = geo.features(sc, cam);
    const double a = 6.0 / 11.0;
    const auto& m = geo.lift(l);
    for (std::size_t e = 0; e < 32; ++e) {
        double t = 0.0;
        for (std::size_t c = 0; c < kRawWidth; ++c) {
            t += ((1 - a) * view[j * kRawWidth + c] + a * world[j * kRawWidth + c]) * m[c * 32 + e];
        }
        EXPECT_NEAR(pyr.layers[l - 1].at(j * 32 + e), t, 1e-12);
    }
    // Keypoint slots past the scene's 9 keypoints are zero tokens.
    for (std::size_t e = 0; e < 32; ++e) {
        EXPECT_EQ(pyr.layers[l - 1].at(15 * 32 + e), 0.0);
    }
}

TEST(GeoStub, RawViewHalfMatchesProjection) {
    const GeoBackbone geo;
    const auto sc = scene(2);
    const auto cam = deskworld::seen_cameras()[1];
    std::vector<double> view, world;
    geo.raw_halves(sc, cam, view, world);
    const auto p = deskworld::project(cam, sc.object(deskworld::kRedBlock).pos);
    EXPECT_NEAR(view[1 * kRawWidth + 0], p.u / 32.0, 1e-12);
    EXPECT_NEAR(view[1 * kRawWidth + 1], p.v / 32.0, 1e-12);
    EXPECT_NEAR(view[1 * kRawWidth + 2], p.depth, 1e-12);
    EXPECT_EQ(view[1 * kRawWidth + 3], 1.0);
    EXPECT_EQ(world[1 * kRawWidth + 0], sc.object(deskworld::kRedBlock).pos[0]);
    EXPECT_EQ(world[1 * kRawWidth + 4 + static_cast<int>(Keypoint::red_block)], 1.0);
}

TEST(GeoStub, KeypointBehindCameraGetsClampedDepthAndNoVisibility) {
    const GeoBackbone geo;
    const auto sc = scene(0);
    CameraPose cam;
    cam.position = {0.6, 0.0, 0.3};
    cam.look_at = {1.6, 0.0, 0.3}; // looking away from the table
    std::vector<double> view, world;
    geo.raw_halves(sc, cam, view, world);
    for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_EQ(view[j * kRawWidth + 2], 0.0) << j;
        EXPECT_EQ(view[j * kRawWidth + 3], 0.0) << j;
    }
}

TEST(GeoStub, RejectsBadConfig) {
    EXPECT_THROW(GeoBackbone(GeoStubConfig{1, 32, 16, 0}), ConfigError);
    EXPECT_THROW(GeoBackbone(GeoStubConfig{12, 32, 4, 0}).features(scene(0), deskworld::seen_cameras()[0]),
                 ConfigError);
}

TEST(LayerSelect, EvenMatchesIndexFormula) {
    for (std::size_t m : {12u, 24u}) {
        for (std::size_t l : {1u, 2u, 4u, 6u}) {
            const auto got = select_layer_indices(m, {SelectMode::even, l});
            ASSERT_EQ(got.size(), l);
            for (std::size_t i = 0; i < l; ++i) {
                EXPECT_EQ(got[i], static_cast<std::size_t>(std::floor((i + 1.0) * m / (l + 1.0))));
            }
        }
    }
    EXPECT_EQ(select_layer_indices(12, {SelectMode::even, 4}), (std::vector<std::size_t>{2, 4, 7, 9}));
}

TEST(LayerSelect, EvenStaysStrictlyIncreasing) {
    const auto got = select_layer_indices(4, {SelectMode::even, 4});
    EXPECT_EQ(got, (std::vector<std::size_t>{1, 2, 3, 4}));
}

TEST(LayerSelect, AllAndLast) {
    EXPECT_EQ(select_layer_indices(12, {SelectMode::all, 0}).size(), 12u);
    EXPECT_EQ(select_layer_indices(12, {SelectMode::last, 4}), (std::vector<std::size_t>{9, 10, 11, 12}));
    EXPECT_EQ(select_layer_indices(12, {SelectMode::last, 1}), (std::vector<std::size_t>{12}));
}

TEST(LayerSelect, Errors) {
    EXPECT_THROW(select_layer_indices(12, {SelectMode::even, 13}), ConfigError);
    EXPECT_THROW(select_layer_indices(12, {SelectMode::last, 0}), ConfigError);
    EXPECT_THROW(parse_layer_selection("middle4"), ConfigError);
    EXPECT_THROW(parse_layer_selection("even"), ConfigError);
}

TEST(LayerSelect, ParseRoundTrip) {
    for (const std::string s : {"all", "even4", "last4", "last1", "even2"}) {
        EXPECT_EQ(to_string(parse_layer_selection(s)), s);
    }
    EXPECT_EQ(parse_layer_selection("even(4)"), (LayerSelection{SelectMode::even, 4}));
}

TEST(LayerSelect, SelectsPyramidLayers) {
    const GeoBackbone geo;
    const auto pyr = geo.features(scene(4), deskworld::seen_cameras()[0]);
    const auto sel = select_layers(pyr, {SelectMode::even, 4});
    ASSERT_EQ(sel.size(), 4u);
    EXPECT_EQ(max_abs_diff(sel[2], pyr.layers[6]), 0.0);
}

namespace {

nn::ParamStore<double> pixel_params(std::uint64_t seed, std::size_t lang = 6, std::size_t repr = 5) {
    nn::ParamStore<double> ps;
    Rng rng(seed);
    add_pixel_encoder(ps, lang, repr, rng);
    return ps;
}

} // namespace

TEST(PixelEncoder, FilmIdentityEqualsUnconditionedPath) {
    auto ps = pixel_params(1);
    for (auto& v : ps.get("pix.film.w").mutable_values()) {
        v = 0.0;
    }
    for (auto& v : ps.get("pix.film.b").mutable_values()) {
        v = 0.0;
    }
    Rng rng(2);
    const auto img = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
    const auto lang = random_tensor({2, 6}, rng);
    const auto out = pixel_features(ps, img, lang);
    const auto plain = pixel_head(ps, nn::reshape(pixel_trunk(ps, img), {2, 32, 4}));
    EXPECT_LE(max_abs_diff(out, plain), 1e-12);
}

TEST(PixelEncoder, LanguageChangesOutput) {
    const auto ps = pixel_params(3);
    Rng rng(4);
    const auto img = random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
    const auto a = pixel_features(ps, img, random_tensor({1, 6}, rng));
    const auto b = pixel_features(ps, img, random_tensor({1, 6}, rng));
    EXPECT_GT(max_abs_diff(a, b), 1e-6);
    EXPECT_EQ(a.shape(), (nn::Shape{1, 5}));
}

TEST(PixelEncoder, RejectsWrongShapes) {
    const auto ps = pixel_params(5);
    Rng rng(6);
    EXPECT_THROW(pixel_features(ps, random_tensor({1, 1, 8, 8}, rng), random_tensor({1, 6}, rng)), DimensionError);
    EXPECT_THROW(pixel_features(ps, random_tensor({3, 8, 8}, rng), random_tensor({1, 6}, rng)), DimensionError);
    EXPECT_THROW(pixel_features(ps, random_tensor({2, 3, 8, 8}, rng), random_tensor({1, 6}, rng)), DimensionError);
}

TEST(PixelEncoder, GradientMatchesFiniteDifferences) {
    const auto ps = pixel_params(7);
    auto [names, tensors] = testsupport::trainable_inputs(ps);
    Rng rng(8);
    tensors.push_back(random_tensor({2, 3, 8, 8}, rng, 0.0, 1.0));
    tensors.push_back(random_tensor({2, 6}, rng));
    expect_grad_matches(
        [&](const std::vector<TensorD>& in) {
            const auto store = testsupport::shared_store(names, in);
            return probe(pixel_features(store, in[in.size() - 2], in.back()), 9);
        },
        tensors, 1e-4, 40);
}

TEST(PixelEncoder, ImageLayoutIsChannelFirst) {
    deskworld::Image img;
    img.width = 2;
    img.height = 1;
    img.pixels = {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f};
    std::vector<double> out(6);
    write_image_chw(img, out.data());
    EXPECT_EQ(out, (std::vector<double>{0.1f, 0.4f, 0.2f, 0.5f, 0.3f, 0.6f}));
}
