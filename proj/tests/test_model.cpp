#include <array>
#include <cmath>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "npnet/errors.hpp"
#include "npnet/model.hpp"
#include "npnet/rng.hpp"
#include "testutil.hpp"

using namespace npnet;
using testutil::bitwise_equal;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

// closed-form parameter count derived from the config alone
long long closed_form_params(const ModelConfig& cfg) {
    long long total = 0;
    long long in = cfg.in_channels;
    for (int i = 0; i < 3; ++i) {
        long long out = cfg.widths[i];
        total += 9 * in * out + 2 * 9 * out * out;  // three conv weights
        total += 3 * 2 * out;                       // three bn gamma/beta
        if (cfg.attention != AttentionKind::None) {
            long long red = out / cfg.reduction;
            total += out * red + red;  // reduce w + b
            total += red * out + out;  // expand w + b
        }
        in = out;
    }
    long long c3 = cfg.widths[2];
    long long half = c3 / 2;
    total += 4 * (9 * c3 * half + 2 * half);  // branches + their bn
    total += 2 * c3 * c3 + 2 * c3;            // fuse1 + bn
    total += 2 * c3 * c3 + 2 * c3;            // fuse2 + bn
    total += c3 * cfg.num_classes + cfg.num_classes;  // classifier
    return total;
}

// brute force: walk every parameter tensor and count elements one by one
long long enumerate_params(const Model& model) {
    long long total = 0;
    for (const Parameter& p : model.params()) {
        for (std::size_t i = 0; i < p.value.size(); ++i) ++total;
    }
    return total;
}

// placement enumeration, independent of conv_out_dim
int enumerate_out_dim(int in, int kernel, int stride, int dilation,
                      int padding) {
    int extent = dilation * (kernel - 1) + 1;
    int count = 0;
    for (int start = 0; start * stride + extent <= in + 2 * padding; ++start) {
        ++count;
    }
    return count;
}

// naive loop counter: one increment per multiply-accumulate
long long loop_count_macs(const CostReport& report) {
    long long total = 0;
    for (const LayerCost& l : report.layers) {
        if (l.kind == "bn") continue;
        for (int co = 0; co < l.out_ch; ++co) {
            for (int oy = 0; oy < l.out_h; ++oy) {
                for (int ox = 0; ox < l.out_w; ++ox) {
                    total += static_cast<long long>(l.in_ch) * l.kernel *
                             l.kernel;
                }
            }
        }
    }
    return total;
}

long long attention_macs(const CostReport& report) {
    long long total = 0;
    for (const LayerCost& l : report.layers) {
        if (l.name.find("attn") == 0) total += l.macs;
    }
    return total;
}

}  // namespace

TEST_CASE("build_npnet is deterministic for a fixed seed") {
    ModelConfig cfg;
    Model a = build_npnet(cfg, 5);
    Model b = build_npnet(cfg, 5);
    REQUIRE(a.params().size() == b.params().size());
    for (std::size_t i = 0; i < a.params().size(); ++i) {
        CHECK(a.params()[i].name == b.params()[i].name);
        CHECK(bitwise_equal(a.params()[i].value, b.params()[i].value));
    }
    Model c = build_npnet(cfg, 6);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params().size() && !any_diff; ++i) {
        any_diff = !bitwise_equal(a.params()[i].value, c.params()[i].value);
    }
    CHECK(any_diff);
}

TEST_CASE("attention=none differs from cam only by attention parameters") {
    ModelConfig cam_cfg;
    ModelConfig none_cfg;
    none_cfg.attention = AttentionKind::None;
    Model cam = build_npnet(cam_cfg, 1);
    Model none = build_npnet(none_cfg, 1);

    std::set<std::string> cam_names, none_names;
    for (const Parameter& p : cam.params()) cam_names.insert(p.name);
    for (const Parameter& p : none.params()) none_names.insert(p.name);

    for (const std::string& name : none_names) {
        CHECK(cam_names.count(name) == 1);
    }
    for (const std::string& name : cam_names) {
        if (none_names.count(name) == 0) {
            CHECK(name.find("attn") == 0);
        }
    }

    // the parameter-count difference has a closed form
    long long expected_diff = 0;
    for (int w : cam_cfg.widths) {
        expected_diff += 2LL * w * (w / cam_cfg.reduction) +
                         w / cam_cfg.reduction + w;
    }
    CHECK(count_params(cam) - count_params(none) == expected_diff);
}

TEST_CASE("default config parameter total matches both oracles") {
    ModelConfig cfg;
    Model model = build_npnet(cfg, 0);
    long long total = count_params(model);
    CHECK(total == closed_form_params(cfg));
    CHECK(total == enumerate_params(model));
    CHECK(total == 846096);
    // near the published figure, generous band
    CHECK(total >= 550000);
    CHECK(total <= 950000);
}

TEST_CASE("tiny config parameter total matches the hand enumeration") {
    ModelConfig cfg;
    cfg.widths = {1, 1, 2};
    cfg.reduction = 1;
    cfg.num_classes = 2;
    Model model = build_npnet(cfg, 0);
    CHECK(count_params(model) == closed_form_params(cfg));
    CHECK(count_params(model) == enumerate_params(model));
}

TEST_CASE("counting oracles agree on random small configs") {
    Rng rng(99);
    int checked = 0;
    while (checked < 6) {
        ModelConfig cfg;
        int r = 1 << rng.below(3);  // 1, 2 or 4
        cfg.reduction = r;
        cfg.widths = {r * static_cast<int>(1 + rng.below(4)),
                      r * static_cast<int>(1 + rng.below(4)),
                      r * static_cast<int>(1 + rng.below(4))};
        if (cfg.widths[2] % 2 != 0) continue;
        cfg.num_classes = 2 + static_cast<int>(rng.below(3));
        Model model = build_npnet(cfg, rng.next_u32());
        CHECK(count_params(model) == closed_form_params(cfg));
        CHECK(count_params(model) == enumerate_params(model));

        CostReport report = count_macs(model, 16, 24);
        CHECK(report.total_macs == loop_count_macs(report));
        CHECK(report.total_params == count_params(model));
        ++checked;
    }
}

TEST_CASE("basic blocks halve spatial dims") {
    ModelConfig cfg;
    Model model = build_npnet(cfg, 3);

    Tensor x(1, 3, 224, 224);
    Tensor b1 = model.block_forward(0, x, BnMode::Eval);
    REQUIRE(b1.shape() == Shape{1, 32, 112, 112});

    Tensor b2 = model.block_forward(1, b1, BnMode::Eval);
    Tensor b3 = model.block_forward(2, b2, BnMode::Eval);
    REQUIRE(b3.shape() == Shape{1, 128, 28, 28});  // exactly 1/8

    Tensor tall(1, 3, 384, 288);
    Tensor t3 = model.block_forward(
        2, model.block_forward(1, model.block_forward(0, tall, BnMode::Eval),
                               BnMode::Eval),
        BnMode::Eval);
    REQUIRE(t3.shape() == Shape{1, 128, 48, 36});
}

TEST_CASE("attention with zero weights halves the input") {
    ModelConfig cfg;
    cfg.widths = {16, 32, 32};
    cfg.reduction = 4;
    Model model = build_npnet(cfg, 7);
    for (const char* name :
         {"attn1.reduce.weight", "attn1.reduce.bias", "attn1.expand.weight",
          "attn1.expand.bias"}) {
        Parameter* p = model.find_param(name);
        REQUIRE(p != nullptr);
        p->value.fill(0.0f);
    }
    Rng rng(8);
    Tensor x = random_tensor(rng, Shape{2, 16, 6, 6});
    Tensor y = model.attention_forward(0, x);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(y[i] == 0.5f * x[i]);
    }
}

TEST_CASE("attention saturated gate passes the input through") {
    ModelConfig cfg;
    cfg.widths = {16, 32, 32};
    cfg.reduction = 4;
    Model model = build_npnet(cfg, 7);
    model.find_param("attn1.reduce.weight")->value.fill(0.0f);
    model.find_param("attn1.reduce.bias")->value.fill(0.0f);
    model.find_param("attn1.expand.weight")->value.fill(0.0f);
    model.find_param("attn1.expand.bias")->value.fill(100.0f);
    Rng rng(9);
    Tensor x = random_tensor(rng, Shape{1, 16, 5, 5});
    Tensor y = model.attention_forward(0, x);
    CHECK(bitwise_equal(y, x));  // sigmoid(100) rounds to exactly 1
}

TEST_CASE("se and cam attention agree numerically under shared weights") {
    ModelConfig se_cfg, cam_cfg;
    se_cfg.attention = AttentionKind::Se;
    cam_cfg.attention = AttentionKind::Cam;
    Model se = build_npnet(se_cfg, 17);
    Model cam = build_npnet(cam_cfg, 17);

    // inject cam's weights into se explicitly
    for (Parameter& p : se.params()) {
        if (p.name.find("attn") == 0) {
            p.value = cam.find_param(p.name)->value;
        }
    }
    Rng rng(18);
    for (int idx = 0; idx < 3; ++idx) {
        Tensor x = random_tensor(
            rng, Shape{2, se_cfg.widths[idx], 7, 5});
        Tensor ya = se.attention_forward(idx, x);
        Tensor yb = cam.attention_forward(idx, x);
        CHECK(max_abs_diff(ya, yb) <= 1e-6f);
    }
}

TEST_CASE("feature enhancement preserves shape and widths") {
    ModelConfig cfg;
    Model model = build_npnet(cfg, 2);
    Rng rng(10);
    Tensor x = random_tensor(rng, Shape{1, 128, 28, 28}, 0.3f);
    Tensor y = model.feature_enhancement_forward(x, BnMode::Eval);
    REQUIRE(y.shape() == x.shape());

    // structural checks via the cost breakdown
    CostReport report = count_macs(model, 224, 224);
    bool saw_fuse1 = false, saw_rate20 = false;
    for (const LayerCost& l : report.layers) {
        if (l.name == "fem.fuse1.conv") {
            saw_fuse1 = true;
            CHECK(l.in_ch == 256);  // four half-width branches concatenated
            CHECK(l.out_ch == 128);
        }
        if (l.name == "fem.branch4.conv") {
            saw_rate20 = true;
            CHECK(l.dilation == 20);
            CHECK(l.out_h == 28);
            CHECK(l.out_w == 28);
            CHECK(l.out_ch == 64);
        }
    }
    CHECK(saw_fuse1);
    CHECK(saw_rate20);
}

TEST_CASE("npnet_forward returns full-resolution logits") {
    ModelConfig cfg;
    Model model = build_npnet(cfg, 4);
    Tensor a(1, 3, 224, 224);
    REQUIRE(model.forward(a, BnMode::Eval).shape() == Shape{1, 2, 224, 224});
    Tensor b(1, 3, 384, 288);
    REQUIRE(model.forward(b, BnMode::Eval).shape() == Shape{1, 2, 384, 288});

    // eval mode is a pure function
    Rng rng(20);
    Tensor x = random_tensor(rng, Shape{1, 3, 32, 32}, 0.3f);
    Tensor first = model.forward(x, BnMode::Eval);
    Tensor second = model.forward(x, BnMode::Eval);
    CHECK(bitwise_equal(first, second));
}

TEST_CASE("concurrent eval-mode forwards agree") {
    ModelConfig cfg;
    cfg.widths = {8, 16, 32};
    cfg.reduction = 8;
    Model model = build_npnet(cfg, 19);
    Rng rng(20);
    Tensor x = random_tensor(rng, Shape{1, 3, 32, 32}, 0.3f);
    Tensor expected = model.forward(x, BnMode::Eval);

    std::array<Tensor, 4> results;
    {
        std::vector<std::thread> threads;
        for (int t = 0; t < 4; ++t) {
            threads.emplace_back([&, t] {
                results[t] = model.forward(x, BnMode::Eval);
            });
        }
        for (auto& th : threads) th.join();
    }
    for (const Tensor& r : results) {
        CHECK(bitwise_equal(r, expected));
    }
}

TEST_CASE("npnet_forward rejects bad inputs with a hint") {
    Model model = build_npnet(ModelConfig{}, 0);
    Tensor bad(1, 3, 225, 224);
    CHECK_THROWS_WITH_AS(model.forward(bad, BnMode::Eval),
                         doctest::Contains("multiple of 8"), ShapeError);
    Tensor wrong_channels(1, 4, 32, 32);
    CHECK_THROWS_AS(model.forward(wrong_channels, BnMode::Eval), ShapeError);
}

TEST_CASE("model config invariants are enforced") {
    ModelConfig bad_reduction;
    bad_reduction.widths = {30, 64, 128};  // 30 % 16 != 0
    CHECK_THROWS_AS(bad_reduction.validate(), ConfigError);

    ModelConfig odd_c3;
    odd_c3.widths = {32, 64, 144 + 1};
    CHECK_THROWS_AS(odd_c3.validate(), ConfigError);

    ModelConfig bad_rate;
    bad_rate.dilation_rates = {1, 5, 0, 20};
    CHECK_THROWS_AS(bad_rate.validate(), ConfigError);

    ModelConfig bad_classes;
    bad_classes.num_classes = 1;
    CHECK_THROWS_AS(bad_classes.validate(), ConfigError);
}

TEST_CASE("count_macs matches the reference magnitudes at their resolutions") {
    ModelConfig cfg;
    Model model = build_npnet(cfg, 0);

    CostReport at224 = count_macs(model, 224, 224);
    // single-layer oracle: conv 3->32, 3x3, output 112x112
    const LayerCost& first = at224.layers.front();
    REQUIRE(first.name == "block1.conv1");
    CHECK(first.macs == 10838016);
    CHECK(first.macs == 864LL * 12544);

    CHECK(at224.total_macs >= 0.8 * 0.99e9);
    CHECK(at224.total_macs <= 1.2 * 0.99e9);

    CostReport at384 = count_macs(model, 288, 384);
    CHECK(at384.total_macs >= 0.8 * 2.17e9);
    CHECK(at384.total_macs <= 1.2 * 2.17e9);

    CostReport at512 = count_macs(model, 512, 512);
    CHECK(at512.total_macs >= 0.8 * 5.15e9);
    CHECK(at512.total_macs <= 1.2 * 5.15e9);

    // area-scaling law: 384*288 / 224*224 = 2.204 within 0.5%
    double ratio = static_cast<double>(at384.total_macs) /
                   static_cast<double>(at224.total_macs);
    double area_ratio = (384.0 * 288.0) / (224.0 * 224.0);
    CHECK(std::abs(ratio - area_ratio) / area_ratio <= 0.005);

    // excluding the constant-cost attention layers the scaling is exact
    long long conv224 = at224.total_macs - attention_macs(at224);
    long long conv384 = at384.total_macs - attention_macs(at384);
    CHECK(conv224 * (384LL * 288) == conv384 * (224LL * 224));

    // params do not depend on resolution
    CHECK(at224.total_params == at512.total_params);
    CHECK(at224.total_params == count_params(model));
}
