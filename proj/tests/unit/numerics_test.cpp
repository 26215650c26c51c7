#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "geoaware/numerics/adamw.hpp"
#include "geoaware/numerics/grad_check.hpp"
#include "geoaware/numerics/ops.hpp"
#include "geoaware/numerics/param_store.hpp"
#include "test_support.hpp"

using namespace geoaware;
using namespace geoaware::nn;
using testsupport::expect_grad_matches;
using testsupport::max_rel_diff;
using testsupport::numeric_gradient;
using testsupport::probe;
using testsupport::random_tensor;
using TensorD = Tensor<double>;


TEST(Tensor, RejectsBadShapes) {
    EXPECT_THROW(TensorD({2, 0}, {}), DimensionError);
    EXPECT_THROW(TensorD({2, 2}, {1, 2, 3}), DimensionError);
}

TEST(Tensor, NonFiniteResultThrows) {
    TensorD a({1}, {1e308});
    EXPECT_THROW(scale(a, 10.0), NumericError);
}

TEST(Matmul, IdentityAndHandArithmetic) {
    Rng rng(1);
    auto x = random_tensor({3, 4}, rng);
    TensorD eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto y = matmul(eye, x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(y.at(i), x.at(i));
    }
    auto z = matmul(TensorD({1, 2}, {1, 2}), TensorD({2, 1}, {3, 4}));
    EXPECT_EQ(z.item(), 11.0);
    EXPECT_THROW(matmul(TensorD({2, 3}, std::vector<double>(6, 1)), TensorD({2, 3}, std::vector<double>(6, 1))),
                 DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        expect_grad_matches([&](const auto& in) { return probe(matmul(in[0], in[1]), seed + 100); },
                            {random_tensor({5, 4}, rng), random_tensor({4, 3}, rng)});
    }
}

TEST(Conv1d, IdentityKernelAndHandArithmetic) {
    Rng rng(2);
    auto x = random_tensor({1, 6}, rng);
    auto y = conv1d(x, TensorD({1, 1, 1}, {1.0}), TensorD({1}, {0.0}));
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(y.at(i), x.at(i));
    }
    auto z = conv1d(TensorD({1, 3}, {1, 2, 3}), TensorD({1, 1, 2}, {1, 1}), TensorD({1}, {0.0}));
    ASSERT_EQ(z.shape(), (Shape{1, 2}));
    EXPECT_EQ(z.at(0), 3.0);
    EXPECT_EQ(z.at(1), 5.0);
}

TEST(Conv1d, OutputExtentAndErrors) {
    auto x = TensorD::zeros({2, 7});
    auto k = TensorD::zeros({3, 2, 3});
    auto b = TensorD::zeros({3});
    EXPECT_EQ(conv1d(x, k, b, 2, 1).shape(), (Shape{3, 4}));
    EXPECT_EQ(conv1d(x, k, b, 1, 1).shape(), (Shape{3, 7}));
    EXPECT_THROW(conv1d(TensorD::zeros({2, 1}), k, b), DimensionError);
}

TEST(Conv1d, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const std::size_t stride = 1 + seed % 2, pad = seed % 3;
        expect_grad_matches(
            [&](const auto& in) { return probe(conv1d(in[0], in[1], in[2], stride, pad), seed + 7); },
            {random_tensor({3, 8}, rng), random_tensor({4, 3, 3}, rng), random_tensor({4}, rng)});
    }
}

TEST(Conv1d, BatchedMatchesPerSample) {
    Rng rng(3);
    auto x = random_tensor({2, 3, 5}, rng);
    auto k = random_tensor({2, 3, 3}, rng);
    auto b = random_tensor({2}, rng);
    auto y = conv1d(x, k, b, 1, 1);
    for (std::size_t s = 0; s < 2; ++s) {
        auto xs = reshape(slice(x, 0, s, s + 1), {3, 5});
        auto ys = conv1d(xs, k, b, 1, 1);
        for (std::size_t i = 0; i < ys.size(); ++i) {
            EXPECT_EQ(ys.at(i), y.at(s * ys.size() + i));
        }
    }
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        expect_grad_matches([&](const auto& in) { return probe(conv2d(in[0], in[1], in[2], 2, 1), seed + 9); },
                            {random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng),
                             random_tensor({3}, rng)});
    }
}

TEST(Conv2d, MatchesDirectLoop) {
    Rng rng(4);
    auto x = random_tensor({1, 2, 4, 4}, rng);
    auto k = random_tensor({1, 2, 3, 3}, rng);
    auto b = TensorD({1}, {0.25});
    auto y = conv2d(x, k, b, 2, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    for (int oy = 0; oy < 2; ++oy) {
        for (int ox = 0; ox < 2; ++ox) {
            double acc = 0.25;
            for (int c = 0; c < 2; ++c) {
                for (int i = 0; i < 3; ++i) {
                    for (int j = 0; j < 3; ++j) {
                        const int iy = oy * 2 + i - 1, ix = ox * 2 + j - 1;
                        if (iy >= 0 && iy < 4 && ix >= 0 && ix < 4) {
                            acc += k.at((c * 3 + i) * 3 + j) * x.at((c * 4 + iy) * 4 + ix);
                        }
                    }
                }
            }
            EXPECT_NEAR(y.at(oy * 2 + ox), acc, 1e-12);
        }
    }
}

TEST(AdaptivePool, IdentityMeanAndBins) {
    Rng rng(5);
    auto x = random_tensor({2, 5}, rng);
    auto same = adaptive_avg_pool1d(x, 5);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_EQ(same.at(i), x.at(i));
    }
    EXPECT_DOUBLE_EQ(adaptive_avg_pool1d(TensorD({1, 3}, {2, 4, 6}), 1).item(), 4.0);

    // N=7, out=3: spans {0..2}, {2..4}, {4..6}.
    const std::vector<std::pair<std::size_t, std::size_t>> spans{{0, 3}, {2, 5}, {4, 7}};
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(adaptive_bin(i, 7, 3), spans[i]);
    }
    auto y = adaptive_avg_pool1d(TensorD({1, 7}, {0, 1, 2, 3, 4, 5, 6}), 3);
    EXPECT_DOUBLE_EQ(y.at(0), 1.0);
    EXPECT_DOUBLE_EQ(y.at(1), 3.0);
    EXPECT_DOUBLE_EQ(y.at(2), 5.0);
}

TEST(AdaptivePool, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        expect_grad_matches([&](const auto& in) { return probe(adaptive_avg_pool1d(in[0], 3), seed); },
                            {random_tensor({2, 3, 7}, rng)});
    }
}

TEST(Elementwise, ReluSoftmaxValues) {
    auto r = relu(TensorD({2}, {-1.0, 2.0}));
    EXPECT_EQ(r.at(0), 0.0);
    EXPECT_EQ(r.at(1), 2.0);
    auto s = softmax(TensorD({1, 2}, {0.0, 0.0}));
    EXPECT_DOUBLE_EQ(s.at(0), 0.5);
    EXPECT_DOUBLE_EQ(s.at(1), 0.5);
    Rng rng(6);
    auto p = softmax(random_tensor({4, 9}, rng, -5, 5));
    for (std::size_t i = 0; i < 4; ++i) {
        double total = 0;
        for (std::size_t j = 0; j < 9; ++j) {
            total += p.at(i * 9 + j);
        }
        EXPECT_NEAR(total, 1.0, 1e-6);
    }
}

TEST(LayerNorm, NormalizesRows) {
    Rng rng(7);
    auto x = random_tensor({3, 16}, rng, -4, 9);
    auto y = layer_norm(x, TensorD::full({16}, 1.0), TensorD::zeros({16}));
    for (std::size_t i = 0; i < 3; ++i) {
        double m = 0, v = 0;
        for (std::size_t j = 0; j < 16; ++j) {
            m += y.at(i * 16 + j);
        }
        m /= 16;
        for (std::size_t j = 0; j < 16; ++j) {
            v += (y.at(i * 16 + j) - m) * (y.at(i * 16 + j) - m);
        }
        v /= 16;
        EXPECT_NEAR(m, 0.0, 1e-5);
        EXPECT_NEAR(v, 1.0, 1e-5);
    }
}

TEST(Primitives, GradientsMatchFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        auto a = random_tensor({3, 5}, rng);
        auto b = random_tensor({3, 5}, rng);
        auto bias = random_tensor({5}, rng);
        expect_grad_matches([&](const auto& in) { return probe(add(in[0], in[1]), seed); }, {a, b});
        expect_grad_matches([&](const auto& in) { return probe(sub(in[0], in[1]), seed); }, {a, b});
        expect_grad_matches([&](const auto& in) { return probe(mul(in[0], in[1]), seed); }, {a, b});
        expect_grad_matches([&](const auto& in) { return probe(scale(in[0], 1.7), seed); }, {a});
        expect_grad_matches([&](const auto& in) { return probe(add_bias(in[0], in[1]), seed); }, {a, bias});
        expect_grad_matches([&](const auto& in) { return probe(relu(in[0]), seed); }, {a});
        expect_grad_matches([&](const auto& in) { return probe(softmax(in[0]), seed); }, {a});
        expect_grad_matches([&](const auto& in) { return probe(transpose(in[0]), seed); }, {a});
        expect_grad_matches([&](const auto& in) { return probe(reshape(in[0], {5, 3}), seed); }, {a});
        expect_grad_matches([&](const auto& in) { return mean(mul(in[0], in[0])); }, {a});
        expect_grad_matches(
            [&](const auto& in) { return probe(layer_norm(in[0], in[1], in[2]), seed); },
            {random_tensor({3, 6}, rng), random_tensor({6}, rng), random_tensor({6}, rng)});
        expect_grad_matches([&](const auto& in) { return probe(concat<double>({in[0], in[1]}, 1), seed); }, {a, b});
        expect_grad_matches([&](const auto& in) { return probe(concat<double>({in[0], in[1]}, 0), seed); }, {a, b});
        expect_grad_matches([&](const auto& in) { return probe(slice(in[0], 1, 1, 4), seed); }, {a});
        expect_grad_matches([&](const auto& in) { return probe(embedding_lookup(in[0], {2, 0, 2}), seed); }, {a});
        expect_grad_matches([&](const auto& in) { return probe(add_tiled(in[0], in[1]), seed); },
                            {random_tensor({6, 5}, rng), random_tensor({3, 5}, rng)});
        expect_grad_matches([&](const auto& in) { return probe(film(in[0], in[1], in[2]), seed); },
                            {random_tensor({2, 3, 4}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)});
        expect_grad_matches([&](const auto& in) { return mse_loss(in[0], in[1]); }, {a, b});
        expect_grad_matches([&](const auto& in) { return cross_entropy(in[0], {1, 4, 0}); }, {a});
    }
}

TEST(Attention, GradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        expect_grad_matches([&](const auto& in) { return probe(causal_self_attention(in[0], 2, 4, 2), seed); },
                            {random_tensor({8, 12}, rng)});
    }
}

TEST(Attention, SingleTokenPassesValue) {
    Rng rng(8);
    auto qkv = random_tensor({1, 12}, rng);
    auto y = causal_self_attention(qkv, 1, 1, 2);
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_NEAR(y.at(j), qkv.at(8 + j), 1e-15);
    }
    EXPECT_THROW(causal_self_attention(random_tensor({1, 9}, rng), 1, 1, 2), ConfigError);
}

TEST(Attention, LaterTokensDoNotAffectEarlierOutputs) {
    Rng rng(9);
    auto qkv = random_tensor({5, 12}, rng);
    auto base = causal_self_attention(qkv, 1, 5, 2);
    auto bumped = qkv.clone();
    for (std::size_t j = 0; j < 12; ++j) {
        bumped.mutable_values()[3 * 12 + j] += 0.5;
    }
    auto changed = causal_self_attention(bumped, 1, 5, 2);
    for (std::size_t i = 0; i < 3 * 4; ++i) {
        EXPECT_EQ(base.at(i), changed.at(i));
    }
}

TEST(Losses, MseValues) {
    TensorD p({2}, {1.0, 3.0});
    EXPECT_EQ(mse_loss(p, p).item(), 0.0);
    EXPECT_EQ(mse_loss(p, TensorD({2}, {0.0, 2.0})).item(), 1.0);
    EXPECT_EQ(mse_loss(TensorD({2, 1}, {0.0, 2.0}), TensorD({2, 1}, {0.0, 0.0})).item(), 2.0);
    EXPECT_THROW(mse_loss(p, TensorD({3}, {0, 0, 0})), DimensionError);
}

TEST(Losses, MaskedMseIgnoresMaskedEntries) {
    TensorD p({4}, {1.0, 1.0, 50.0, 50.0});
    TensorD t({4}, {0.0, 0.0, 0.0, 0.0});
    const std::vector<double> mask{1, 1, 0, 0};
    EXPECT_EQ(masked_mse_loss(p, t, std::span<const double>(mask)).item(), 1.0);
}

TEST(Losses, CrossEntropyValues) {
    EXPECT_NEAR(cross_entropy(TensorD({1, 4}, {0, 0, 0, 0}), {2}).item(), std::log(4.0), 1e-12);
    EXPECT_NEAR(cross_entropy(TensorD({1, 3}, {0, 200, 0}), {1}).item(), 0.0, 1e-12);
    EXPECT_THROW(cross_entropy(TensorD({1, 3}, {0, 0, 0}), {3}), DimensionError);
}

TEST(Backward, AccumulatesAcrossUses) {
    TensorD x({1}, {3.0}, true);
    add(mul(x, x), x).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 7.0);
}

TEST(AdamW, ZeroGradientDecaysExactly) {
    ParamStore<double> ps;
    ps.add("w", TensorD({3}, {1.0, -2.0, 0.5}, true));
    AdamW<double> opt({.lr = 0.1, .weight_decay = 0.01});
    for (int s = 0; s < 3; ++s) {
        ps.get("w").mutable_grad();
        const std::vector<double> before(ps.get("w").values().begin(), ps.get("w").values().end());
        opt.step(ps);
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_DOUBLE_EQ(ps.get("w").at(i), before[i] * (1 - 0.001));
        }
    }
    EXPECT_EQ(opt.step_count(), 3u);
}

TEST(AdamW, MatchesHandRecurrence) {
    ParamStore<double> ps;
    ps.add("p", TensorD({1}, {0.5}, true));
    const double lr = 0.01, b1 = 0.8, b2 = 0.9, eps = 1e-8, wd = 0.1, g = 2.0;
    AdamW<double> opt({lr, b1, b2, eps, wd});
    ps.get("p").mutable_grad()[0] = g;
    opt.step(ps);
    // m = 0.2*2 = 0.4, v = 0.1*4 = 0.4, m_hat = 2, v_hat = 4
    const double expected = 0.5 - lr * (2.0 / (2.0 + eps) + wd * 0.5);
    EXPECT_NEAR(ps.get("p").item(), expected, 1e-15);
    EXPECT_FALSE(ps.get("p").has_grad());
}

TEST(AdamW, FrozenUntouchedAndMissingGradRejected) {
    ParamStore<double> ps;
    ps.add("a", TensorD({2}, {1.0, 2.0}, true));
    ps.add("frozen", TensorD({2}, {3.0, 4.0}), true);
    AdamW<double> opt;
    const auto frozen_hash = ps.hash({"frozen"});
    EXPECT_THROW(opt.step(ps), StateError);
    ps.get("a").mutable_grad()[0] = 1.0;
    opt.step(ps);
    EXPECT_EQ(ps.hash({"frozen"}), frozen_hash);
    EXPECT_THROW(opt.step(ps, {"frozen"}), StateError);
}

TEST(ParamStore, UniqueNamesAndFrozenSubset) {
    ParamStore<double> ps;
    ps.add("x", TensorD::zeros({1}));
    EXPECT_THROW(ps.add("x", TensorD::zeros({1})), StateError);
    EXPECT_THROW(ps.freeze("missing"), StateError);
}

TEST(GradCheck, SquareAtThree) {
    auto r = grad_check([](const auto& in) { return mul(in[0], in[0]); }, {TensorD({1}, {3.0})});
    EXPECT_LE(r.max_rel_error, 1e-8);
}

TEST(GradCheck, DetectsWrongBackward) {
    auto r = grad_check([](const auto& in) { return sum(scale_grad(mul(in[0], in[0]), 0.5)); },
                        {TensorD({2}, {1.0, -2.0})});
    EXPECT_GT(r.max_rel_error, 0.1);
}

TEST(GradCheck, AgreesWithIndependentOracle) {
    Rng rng(11);
    auto a = random_tensor({4, 3}, rng);
    auto b = random_tensor({3, 2}, rng);
    auto f = [](const std::vector<TensorD>& in) { return mean(relu(matmul(in[0], in[1]))); };
    EXPECT_LE(grad_check(f, {a, b}).max_rel_error, 1e-6);
}
