#include <cmath>
#include <vector>

#include "doctest.h"
#include "npnet/errors.hpp"
#include "npnet/ops.hpp"
#include "npnet/ref_ops.hpp"
#include "npnet/rng.hpp"
#include "testutil.hpp"

using namespace npnet;
using testutil::bitwise_equal;
using testutil::random_tensor;

namespace {

ConvSpec make_spec(Rng& rng, int in_c, int out_c, int kernel, int stride,
                   int dilation, int padding, bool bias) {
    ConvSpec spec;
    spec.in_channels = in_c;
    spec.out_channels = out_c;
    spec.kernel = kernel;
    spec.stride = stride;
    spec.dilation = dilation;
    spec.padding = padding;
    spec.weight = random_tensor(rng, Shape{out_c, in_c, kernel, kernel}, 0.5f);
    if (bias) spec.bias = random_tensor(rng, Shape{1, out_c, 1, 1}, 0.5f);
    return spec;
}

}  // namespace

TEST_CASE("conv2d all-ones 3x3 kernel sums the window") {
    Tensor x(1, 1, 3, 3);
    for (int i = 0; i < 9; ++i) x[i] = static_cast<float>(i + 1);
    ConvSpec spec;
    spec.in_channels = 1;
    spec.out_channels = 1;
    spec.kernel = 3;
    spec.weight = Tensor::full(Shape{1, 1, 3, 3}, 1.0f);

    Tensor oracle = ref::conv2d(x, spec);
    REQUIRE(oracle.shape() == Shape{1, 1, 1, 1});
    CHECK(oracle[0] == doctest::Approx(45.0f));

    Tensor y = conv2d(x, spec);
    CHECK(y[0] == 45.0f);
}

TEST_CASE("conv2d 1x1 identity kernel") {
    Rng rng(7);
    Tensor x = random_tensor(rng, Shape{1, 1, 4, 5});
    ConvSpec spec;
    spec.in_channels = 1;
    spec.out_channels = 1;
    spec.kernel = 1;
    spec.weight = Tensor::full(Shape{1, 1, 1, 1}, 1.0f);
    CHECK(bitwise_equal(conv2d(x, spec), x));
}

TEST_CASE("conv2d stride-2 output dims") {
    Rng rng(3);
    Tensor x(1, 3, 224, 224);
    ConvSpec spec = make_spec(rng, 3, 4, 3, 2, 1, 1, false);
    Tensor y = conv2d(x, spec);
    CHECK(y.h() == 112);
    CHECK(y.w() == 112);
}

TEST_CASE("conv2d dilation-5 effective extent") {
    Rng rng(4);
    Tensor x = random_tensor(rng, Shape{1, 1, 11, 11});
    ConvSpec spec = make_spec(rng, 1, 1, 3, 1, 5, 0, false);
    Tensor y = conv2d(x, spec);
    CHECK(y.h() == 1);
    CHECK(y.w() == 1);
}

TEST_CASE("conv2d rejects channel mismatch with a diagnostic") {
    Rng rng(5);
    Tensor x(1, 4, 8, 8);
    ConvSpec spec = make_spec(rng, 3, 2, 3, 1, 1, 1, false);
    CHECK_THROWS_WITH_AS(conv2d(x, spec),
                         doctest::Contains("4 channels"), ShapeError);
}

TEST_CASE("conv2d rejects empty outputs") {
    Rng rng(6);
    Tensor x(1, 1, 4, 4);
    ConvSpec spec = make_spec(rng, 1, 1, 3, 1, 5, 0, false);
    CHECK_THROWS_AS(conv2d(x, spec), ShapeError);
}

TEST_CASE("parallel conv2d matches serial reference bitwise") {
    Rng rng(11);
    struct Case {
        Shape in;
        int out_c, kernel, stride, dilation, padding;
        bool bias;
    };
    const Case cases[] = {
        {{2, 3, 16, 13}, 5, 3, 1, 1, 1, true},
        {{1, 4, 15, 15}, 3, 3, 2, 1, 1, false},
        {{1, 2, 20, 18}, 4, 3, 1, 5, 5, false},
        {{2, 6, 9, 9}, 2, 1, 1, 1, 0, true},
    };
    for (const Case& c : cases) {
        CAPTURE(c.in.str());
        Tensor x = random_tensor(rng, c.in);
        ConvSpec spec = make_spec(rng, c.in.c, c.out_c, c.kernel, c.stride,
                                  c.dilation, c.padding, c.bias);
        Tensor fast = conv2d(x, spec);
        Tensor slow = ref::conv2d(x, spec);
        CHECK(bitwise_equal(fast, slow));

        Tensor upstream = random_tensor(rng, fast.shape());
        Tensor gx_fast(x.shape()), gw_fast(spec.weight.shape());
        Tensor gx_slow(x.shape()), gw_slow(spec.weight.shape());
        Tensor gb_fast, gb_slow;
        if (c.bias) {
            gb_fast = Tensor(1, c.out_c, 1, 1);
            gb_slow = Tensor(1, c.out_c, 1, 1);
        }
        conv2d_backward(x, spec, upstream, &gx_fast, &gw_fast,
                        c.bias ? &gb_fast : nullptr);
        ref::conv2d_backward(x, spec, upstream, &gx_slow, &gw_slow,
                             c.bias ? &gb_slow : nullptr);
        CHECK(bitwise_equal(gx_fast, gx_slow));
        CHECK(bitwise_equal(gw_fast, gw_slow));
        if (c.bias) CHECK(bitwise_equal(gb_fast, gb_slow));
    }
}

TEST_CASE("conv2d is linear for bias-free specs") {
    Rng rng(12);
    Tensor x = random_tensor(rng, Shape{1, 3, 10, 10});
    Tensor y = random_tensor(rng, Shape{1, 3, 10, 10});
    ConvSpec spec = make_spec(rng, 3, 4, 3, 1, 1, 1, false);
    const float alpha = 0.7f, beta = -1.3f;

    Tensor mixed(x.shape());
    for (std::size_t i = 0; i < mixed.size(); ++i) {
        mixed[i] = alpha * x[i] + beta * y[i];
    }
    Tensor lhs = conv2d(mixed, spec);
    Tensor cx = conv2d(x, spec);
    Tensor cy = conv2d(y, spec);
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        CHECK(std::abs(lhs[i] - (alpha * cx[i] + beta * cy[i])) <= 1e-4f);
    }
}

TEST_CASE("conv2d output dims match a placement enumeration") {
    // enumeration oracle: count window placements directly
    auto placements = [](int in, int kernel, int stride, int dilation,
                         int padding) {
        int extent = dilation * (kernel - 1) + 1;
        int count = 0;
        for (int start = 0; start * stride + extent <= in + 2 * padding;
             ++start) {
            ++count;
        }
        return count;
    };
    struct Combo {
        int kernel, stride, dilation, padding;
    };
    const Combo combos[] = {
        {3, 2, 1, 1}, {3, 1, 1, 1}, {3, 1, 5, 5},
        {3, 1, 15, 15}, {3, 1, 20, 20}, {1, 1, 1, 0},
    };
    Rng rng(13);
    for (const Combo& c : combos) {
        int extent = c.dilation * (c.kernel - 1) + 1;
        int lo = extent > 64 ? 64 : extent;
        for (int h = lo; h <= 64; ++h) {
            for (int w = lo; w <= 64; ++w) {
                int expect_h = placements(h, c.kernel, c.stride, c.dilation,
                                          c.padding);
                int expect_w = placements(w, c.kernel, c.stride, c.dilation,
                                          c.padding);
                REQUIRE(conv_out_dim(h, c.kernel, c.stride, c.dilation,
                                     c.padding) == expect_h);
                REQUIRE(conv_out_dim(w, c.kernel, c.stride, c.dilation,
                                     c.padding) == expect_w);
            }
        }
        // run the kernel itself at the range edges
        for (int h : {lo, 64}) {
            for (int w : {lo, 64}) {
                Tensor x = random_tensor(rng, Shape{1, 1, h, w});
                ConvSpec spec = make_spec(rng, 1, 1, c.kernel, c.stride,
                                          c.dilation, c.padding, false);
                Tensor y = conv2d(x, spec);
                CHECK(y.h() == placements(h, c.kernel, c.stride, c.dilation,
                                          c.padding));
                CHECK(y.w() == placements(w, c.kernel, c.stride, c.dilation,
                                          c.padding));
            }
        }
    }
}

TEST_CASE("batchnorm zeroes a constant channel in train mode") {
    Tensor x = Tensor::full(Shape{1, 1, 2, 2}, 3.25f);
    BatchNormState state = BatchNormState::make(1);
    Tensor y = batchnorm(x, state);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0f);
}

TEST_CASE("batchnorm normalizes to zero mean unit variance") {
    Tensor x(1, 1, 2, 2);
    x[0] = 1.0f;
    x[1] = 2.0f;
    x[2] = 3.0f;
    x[3] = 4.0f;
    // direct oracle: mean 2.5, population variance 1.25
    BatchNormState state = BatchNormState::make(1);
    Tensor y = batchnorm(x, state);
    float mean = (y[0] + y[1] + y[2] + y[3]) / 4.0f;
    float var = 0.0f;
    for (int i = 0; i < 4; ++i) var += (y[i] - mean) * (y[i] - mean);
    var /= 4.0f;
    CHECK(std::abs(mean) <= 1e-6f);
    CHECK(std::abs(var - 1.0f) <= 1e-4f);
    CHECK(y[0] == doctest::Approx((1.0f - 2.5f) / std::sqrt(1.25f + 1e-5f)));
    // running stats moved toward the batch: 0.9*0 + 0.1*2.5
    CHECK(state.running_mean[0] == doctest::Approx(0.25f));
    CHECK(state.running_var[0] == doctest::Approx(0.9f + 0.1f * 1.25f));
}

TEST_CASE("batchnorm eval with identity stats is the identity up to epsilon") {
    Rng rng(21);
    Tensor x = random_tensor(rng, Shape{2, 3, 4, 4});
    BatchNormState state = BatchNormState::make(3);
    state.mode = BnMode::Eval;
    Tensor y = batchnorm(x, state);
    CHECK(testutil::max_abs_diff(x, y) <= 1e-4f);
}

TEST_CASE("batchnorm train output has unit statistics per channel") {
    Rng rng(22);
    Tensor x = random_tensor(rng, Shape{2, 4, 8, 8}, 2.0f);
    BatchNormState state = BatchNormState::make(4);
    Tensor y = batchnorm(x, state);
    const int per_channel = 2 * 8 * 8;
    for (int c = 0; c < 4; ++c) {
        double sum = 0.0, sq = 0.0;
        for (int n = 0; n < 2; ++n) {
            for (int yy = 0; yy < 8; ++yy) {
                for (int xx = 0; xx < 8; ++xx) {
                    sum += y.at(n, c, yy, xx);
                }
            }
        }
        double mean = sum / per_channel;
        for (int n = 0; n < 2; ++n) {
            for (int yy = 0; yy < 8; ++yy) {
                for (int xx = 0; xx < 8; ++xx) {
                    double d = y.at(n, c, yy, xx) - mean;
                    sq += d * d;
                }
            }
        }
        double var = sq / per_channel;
        CHECK(std::abs(mean) <= 1e-4);
        CHECK(std::abs(var - 1.0) <= 1e-3);
    }
}

TEST_CASE("batchnorm rejects channel mismatch") {
    Tensor x(1, 3, 4, 4);
    BatchNormState state = BatchNormState::make(2);
    CHECK_THROWS_AS(batchnorm(x, state), ShapeError);
}

TEST_CASE("batchnorm rejects single-element channels in train mode") {
    Tensor x(1, 2, 1, 1);
    BatchNormState state = BatchNormState::make(2);
    CHECK_THROWS_AS(batchnorm(x, state), ShapeError);
}

TEST_CASE("parallel batchnorm matches serial reference bitwise") {
    Rng rng(23);
    Tensor x = random_tensor(rng, Shape{2, 5, 7, 6});
    for (BnMode mode : {BnMode::Train, BnMode::Eval}) {
        BatchNormState fast_state = BatchNormState::make(5);
        BatchNormState slow_state = BatchNormState::make(5);
        for (std::size_t i = 0; i < fast_state.gamma.size(); ++i) {
            fast_state.gamma[i] = slow_state.gamma[i] = 1.0f + 0.3f * rng.normal();
            fast_state.beta[i] = slow_state.beta[i] = 0.3f * rng.normal();
        }
        fast_state.mode = slow_state.mode = mode;
        Tensor fast = batchnorm(x, fast_state);
        Tensor slow = ref::batchnorm(x, slow_state);
        CHECK(bitwise_equal(fast, slow));
        CHECK(bitwise_equal(fast_state.running_mean, slow_state.running_mean));
        CHECK(bitwise_equal(fast_state.running_var, slow_state.running_var));
    }
}

TEST_CASE("activation point values") {
    Tensor x(1, 1, 1, 3);
    x[0] = -2.0f;
    x[1] = 0.0f;
    x[2] = 3.0f;
    Tensor r = activate(x, Activation::Relu);
    CHECK(r[0] == 0.0f);
    CHECK(r[2] == 3.0f);
    Tensor s = activate(x, Activation::Sigmoid);
    CHECK(s[1] == doctest::Approx(0.5f));

    // sigmoid'(0) = 0.25
    Tensor upstream = Tensor::full(x.shape(), 1.0f);
    Tensor grad = activate_backward(s, Activation::Sigmoid, upstream);
    CHECK(grad[1] == doctest::Approx(0.25f));
}

TEST_CASE("global_avg_pool means and shape") {
    Tensor x(1, 1, 2, 2);
    x[0] = 1.0f;
    x[1] = 2.0f;
    x[2] = 3.0f;
    x[3] = 4.0f;
    Tensor y = global_avg_pool(x);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == doctest::Approx(2.5f));

    Tensor constant = Tensor::full(Shape{2, 3, 4, 5}, -1.5f);
    Tensor pooled = global_avg_pool(constant);
    REQUIRE(pooled.shape() == Shape{2, 3, 1, 1});
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        CHECK(pooled[i] == doctest::Approx(-1.5f));
    }

    Rng rng(31);
    Tensor random = random_tensor(rng, Shape{2, 4, 6, 6});
    CHECK(bitwise_equal(global_avg_pool(random), ref::global_avg_pool(random)));
}

TEST_CASE("bilinear_resize identity and constant") {
    Rng rng(32);
    Tensor x = random_tensor(rng, Shape{1, 3, 6, 7});
    CHECK(bitwise_equal(bilinear_resize(x, 6, 7), x));

    Tensor constant = Tensor::full(Shape{1, 2, 3, 3}, 0.75f);
    Tensor resized = bilinear_resize(constant, 9, 5);
    double sum = 0.0;
    for (std::size_t i = 0; i < resized.size(); ++i) {
        CHECK(resized[i] == 0.75f);
        sum += resized[i];
    }
    CHECK(sum / static_cast<double>(resized.size()) == doctest::Approx(0.75));
}

TEST_CASE("bilinear_resize corner clamps to the source corner") {
    Tensor x(1, 1, 2, 2);
    x[0] = 1.0f;
    x[1] = 2.0f;
    x[2] = 3.0f;
    x[3] = 4.0f;
    Tensor y = bilinear_resize(x, 4, 4);
    // (dst + 0.5) * 0.5 - 0.5 = -0.25 for dst 0, clamped to source (0, 0)
    CHECK(y.at(0, 0, 0, 0) == 1.0f);
    CHECK(y.at(0, 0, 3, 3) == 4.0f);
}

TEST_CASE("bilinear_resize matches the per-pixel reference formula") {
    Rng rng(33);
    Tensor x = random_tensor(rng, Shape{1, 2, 5, 9});
    const int out_h = 8, out_w = 6;
    Tensor y = bilinear_resize(x, out_h, out_w);
    // independent formula evaluation
    for (int c = 0; c < 2; ++c) {
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                double sy = (oy + 0.5) * 5.0 / out_h - 0.5;
                double sx = (ox + 0.5) * 9.0 / out_w - 0.5;
                sy = std::min(std::max(sy, 0.0), 4.0);
                sx = std::min(std::max(sx, 0.0), 8.0);
                int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
                int y1 = std::min(y0 + 1, 4), x1 = std::min(x0 + 1, 8);
                float fy = static_cast<float>(sy - y0);
                float fx = static_cast<float>(sx - x0);
                float expect =
                    x.at(0, c, y0, x0) * (1 - fy) * (1 - fx) +
                    x.at(0, c, y0, x1) * (1 - fy) * fx +
                    x.at(0, c, y1, x0) * fy * (1 - fx) +
                    x.at(0, c, y1, x1) * fy * fx;
                CHECK(y.at(0, c, oy, ox) == doctest::Approx(expect));
            }
        }
    }
    CHECK(bitwise_equal(y, ref::bilinear_resize(x, out_h, out_w)));
}

TEST_CASE("concat_channels stacks and slices back") {
    Rng rng(41);
    Tensor a = random_tensor(rng, Shape{1, 3, 4, 4});
    Tensor zeros(1, 2, 4, 4);
    Tensor cat = concat_channels(a, zeros);
    REQUIRE(cat.shape() == Shape{1, 5, 4, 4});
    CHECK(bitwise_equal(slice_channels(cat, 0, 3), a));
    CHECK(bitwise_equal(slice_channels(cat, 3, 2), zeros));

    Tensor b(1, 3, 5, 4);
    CHECK_THROWS_AS(concat_channels(a, b), ShapeError);

    // four-way concat of 64-channel pieces
    Tensor piece(1, 64, 2, 2);
    Tensor four = concat_channels(concat_channels(piece, piece),
                                  concat_channels(piece, piece));
    CHECK(four.c() == 256);
}

TEST_CASE("channel_scale broadcast") {
    Rng rng(42);
    Tensor x = random_tensor(rng, Shape{2, 3, 4, 4});

    Tensor ones = Tensor::full(Shape{2, 3, 1, 1}, 1.0f);
    CHECK(bitwise_equal(channel_scale(x, ones), x));

    Tensor zeros(2, 3, 1, 1);
    Tensor scaled = channel_scale(x, zeros);
    for (std::size_t i = 0; i < scaled.size(); ++i) CHECK(scaled[i] == 0.0f);

    Tensor halves = Tensor::full(Shape{1, 1, 1, 1}, 0.5f);
    Tensor two = Tensor::full(Shape{1, 1, 2, 2}, 2.0f);
    Tensor one = channel_scale(two, halves);
    for (std::size_t i = 0; i < one.size(); ++i) CHECK(one[i] == 1.0f);

    Tensor bad(2, 4, 1, 1);
    CHECK_THROWS_AS(channel_scale(x, bad), ShapeError);
}

TEST_CASE("softmax_cross_entropy uniform and saturated cases") {
    // all-zero logits, two classes: ln 2
    Tensor logits(1, 2, 4, 4);
    LabelMap target(1, 4, 4);
    CrossEntropyResult uniform = softmax_cross_entropy(logits, target);
    CHECK(uniform.loss == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(uniform.loss >= 0.0f);

    // +20 margin on the true class saturates
    Tensor confident(1, 2, 4, 4);
    for (int y = 0; y < 4; ++y) {
        for (int x = 0; x < 4; ++x) confident.at(0, 0, y, x) = 20.0f;
    }
    CrossEntropyResult sat = softmax_cross_entropy(confident, target);
    CHECK(sat.loss < 1e-6f);

    // gradient at a uniform pixel: (softmax - onehot) / pixels
    const float inv = 1.0f / 16.0f;
    CHECK(uniform.grad_logits.at(0, 0, 0, 0) ==
          doctest::Approx(-0.5f * inv));
    CHECK(uniform.grad_logits.at(0, 1, 0, 0) ==
          doctest::Approx(0.5f * inv));

    // out-of-range class
    LabelMap bad(1, 4, 4);
    bad.data[3] = 2;
    CHECK_THROWS_AS(softmax_cross_entropy(logits, bad), DataError);
}

TEST_CASE("softmax_cross_entropy equals ln(K) on zero logits") {
    for (int classes : {2, 3, 5}) {
        Tensor logits(2, classes, 3, 3);
        LabelMap target(2, 3, 3);
        CrossEntropyResult r = softmax_cross_entropy(logits, target);
        CHECK(r.loss ==
              doctest::Approx(std::log(static_cast<double>(classes)))
                  .epsilon(1e-6));
    }
}

TEST_CASE("softmax_cross_entropy is non-negative on random inputs") {
    Rng rng(61);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor logits = random_tensor(rng, Shape{2, 3, 4, 4}, 5.0f);
        LabelMap target(2, 4, 4);
        for (auto& v : target.data) {
            v = static_cast<std::int32_t>(rng.below(3));
        }
        CrossEntropyResult r = softmax_cross_entropy(logits, target);
        CHECK(r.loss >= 0.0f);
        CHECK(std::isfinite(r.loss));
        CHECK(r.grad_logits.all_finite());
    }
}

TEST_CASE("operators keep finite inputs finite") {
    Rng rng(51);
    Tensor x = random_tensor(rng, Shape{2, 4, 8, 8}, 10.0f);
    ConvSpec spec = make_spec(rng, 4, 4, 3, 1, 1, 1, true);
    CHECK(conv2d(x, spec).all_finite());
    CHECK(activate(x, Activation::Sigmoid).all_finite());
    CHECK(activate(x, Activation::Relu).all_finite());
    BatchNormState state = BatchNormState::make(4);
    CHECK(batchnorm(x, state).all_finite());
    CHECK(bilinear_resize(x, 13, 3).all_finite());
    CHECK(global_avg_pool(x).all_finite());
}
