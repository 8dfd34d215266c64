#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "wavenet/errors.hpp"
#include "wavenet/model.hpp"

using namespace wavenet;
using testutil::random_classes;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.num_classes = 8;
    cfg.residual_channels = 4;
    cfg.skip_channels = 4;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {1, 2, 4};
    cfg.validate();
    return cfg;
}

bool same_bits(const Tensor2D& a, const Tensor2D& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        if (a.data[i] != b.data[i]) return false;
    }
    return true;
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("receptive field matches the closed form") {
    ModelConfig undilated;
    undilated.num_classes = 4;
    undilated.residual_channels = 2;
    undilated.skip_channels = 2;
    undilated.filter_width = 2;
    undilated.dilation_schedule = {1, 1, 1, 1};
    CHECK(receptive_field(undilated) == 5);

    ModelConfig block;
    block.num_classes = 4;
    block.residual_channels = 2;
    block.skip_channels = 2;
    block.filter_width = 2;
    block.dilation_schedule = {1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
    CHECK(receptive_field(block) == 1024);

    ModelConfig stacked = block;
    for (int rep = 0; rep < 2; ++rep) {
        for (int d = 1; d <= 512; d *= 2) stacked.dilation_schedule.push_back(d);
    }
    CHECK(receptive_field(stacked) == 3070);
}

TEST_CASE("two-layer forward agrees with scalar arithmetic done by hand") {
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.residual_channels = 1;
    cfg.skip_channels = 1;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {2, 1};
    cfg.validate();

    WaveNetModel model(cfg, 0);
    model.input_embed.w(0, 0, 0) = 0.3f;
    model.input_embed.w(0, 1, 0) = -0.4f;
    model.input_embed.bias[0] = 0.05f;

    auto& l0 = model.layers[0];
    l0.filter.w(0, 0, 0) = 0.7f;
    l0.filter.w(1, 0, 0) = -0.6f;
    l0.filter.bias[0] = 0.1f;
    l0.gate.w(0, 0, 0) = -0.2f;
    l0.gate.w(1, 0, 0) = 0.5f;
    l0.gate.bias[0] = -0.3f;
    l0.skip.w(0, 0, 0) = 0.8f;
    l0.skip.bias[0] = 0.2f;
    l0.residual.w(0, 0, 0) = 0.4f;
    l0.residual.bias[0] = -0.1f;

    auto& l1 = model.layers[1];
    l1.filter.w(0, 0, 0) = 0.25f;
    l1.filter.w(1, 0, 0) = 0.9f;
    l1.filter.bias[0] = -0.15f;
    l1.gate.w(0, 0, 0) = 0.35f;
    l1.gate.w(1, 0, 0) = -0.45f;
    l1.gate.bias[0] = 0.05f;
    l1.skip.w(0, 0, 0) = -0.55f;
    l1.skip.bias[0] = 0.1f;

    model.head1.w(0, 0, 0) = 0.9f;
    model.head1.bias[0] = -0.05f;
    model.head2.w(0, 0, 0) = 0.6f;
    model.head2.w(0, 0, 1) = -0.7f;
    model.head2.bias[0] = 0.02f;
    model.head2.bias[1] = 0.03f;

    const std::vector<int> classes = {0, 1, 1, 0, 1};
    const ForwardResultT<float> out = model.forward(classes, {});
    REQUIRE(out.logits.timesteps == 5);
    REQUIRE(out.logits.channels == 2);

    const auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    std::vector<double> x(5), z0(5), x1(5), z1(5);
    for (int t = 0; t < 5; ++t) {
        x[t] = (classes[t] == 0 ? 0.3 : -0.4) + 0.05;
    }
    for (int t = 0; t < 5; ++t) {
        const double old0 = t >= 2 ? x[t - 2] : 0.0;
        const double f = 0.7 * old0 - 0.6 * x[t] + 0.1;
        const double g = -0.2 * old0 + 0.5 * x[t] - 0.3;
        z0[t] = std::tanh(f) * sigmoid(g);
        x1[t] = x[t] + 0.4 * z0[t] - 0.1;
    }
    for (int t = 0; t < 5; ++t) {
        const double old1 = t >= 1 ? x1[t - 1] : 0.0;
        const double f = 0.25 * old1 + 0.9 * x1[t] - 0.15;
        const double g = 0.35 * old1 - 0.45 * x1[t] + 0.05;
        z1[t] = std::tanh(f) * sigmoid(g);
    }
    for (int t = 0; t < 5; ++t) {
        const double skip_sum = (0.8 * z0[t] + 0.2) + (-0.55 * z1[t] + 0.1);
        const double mid = 0.9 * std::max(skip_sum, 0.0) - 0.05;
        const double r = std::max(mid, 0.0);
        const double logit0 = 0.6 * r + 0.02;
        const double logit1 = -0.7 * r + 0.03;
        CHECK(out.logits.at(t, 0) == doctest::Approx(logit0).epsilon(1e-5));
        CHECK(out.logits.at(t, 1) == doctest::Approx(logit1).epsilon(1e-5));
    }
}

TEST_CASE("perturbing position t leaves every earlier logit bit-identical") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        ModelConfig cfg = tiny_config();
        WaveNetModel model(cfg, 100 + static_cast<std::uint64_t>(trial));
        model.randomize_parameters(200 + static_cast<std::uint64_t>(trial));
        const int T = 24;
        std::vector<int> classes = random_classes(T, cfg.num_classes, rng);
        const ForwardResultT<float> base = model.forward(classes, {});
        const int t = 3 + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(T - 3)));
        const int p = t + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(T - t)));
        classes[static_cast<std::size_t>(p)] =
            (classes[static_cast<std::size_t>(p)] + 1) % cfg.num_classes;
        const ForwardResultT<float> moved = model.forward(classes, {});
        for (int u = 0; u < t; ++u) {
            for (int c = 0; c < cfg.num_classes; ++c) {
                REQUIRE(moved.logits.at(u, c) == base.logits.at(u, c));
            }
        }
    }
}

TEST_CASE("receptive field is tight under perturbation probing") {
    Rng rng(22);
    for (int trial = 0; trial < 3; ++trial) {
        ModelConfig cfg;
        cfg.num_classes = 4;
        cfg.residual_channels = 3;
        cfg.skip_channels = 3;
        cfg.filter_width = 2 + static_cast<int>(rng.next_below(2));
        const int n_layers = 2 + static_cast<int>(rng.next_below(3));
        cfg.dilation_schedule.clear();
        for (int i = 0; i < n_layers; ++i) {
            cfg.dilation_schedule.push_back(1 << rng.next_below(4));
        }
        if (receptive_field(cfg) <= cfg.filter_width) cfg.dilation_schedule.push_back(8);
        cfg.validate();
        const int rf = receptive_field(cfg);

        WaveNetModel seed_model(cfg, 7 + static_cast<std::uint64_t>(trial));
        seed_model.randomize_parameters(70 + static_cast<std::uint64_t>(trial));
        const WaveNetModelT<double> model = seed_model.cast<double>();
        const int T = rf + 3;
        std::vector<int> base = random_classes(T, cfg.num_classes, rng);
        const auto newest = [&](const std::vector<int>& cls) {
            const auto out = model.forward(cls, {});
            const auto row = out.logits.row(out.logits.timesteps - 1);
            return std::vector<double>(row.begin(), row.end());
        };
        const std::vector<double> baseline = newest(base);
        const auto moves = [&](int pos) {
            std::vector<int> mod = base;
            mod[static_cast<std::size_t>(pos)] =
                (mod[static_cast<std::size_t>(pos)] + 1) % cfg.num_classes;
            return newest(mod) != baseline;
        };
        CHECK(moves(T - 1 - (rf - 1)));
        CHECK_FALSE(moves(T - 1 - rf));
    }
}

TEST_CASE("fresh conditioning projections leave the logits untouched") {
    const std::vector<int> classes = {1, 5, 2, 7, 0, 3, 3, 6, 4, 1, 2, 5};

    ModelConfig plain = tiny_config();
    const WaveNetModel base_model(plain, 42);
    const ForwardResultT<float> base = base_model.forward(classes, {});

    SUBCASE("global") {
        ModelConfig cfg = tiny_config();
        cfg.global_dim = 3;
        const WaveNetModel model(cfg, 42);
        ConditioningInput cond;
        cond.global_vec = std::vector<float>{0.0f, 1.0f, 0.0f};
        const ForwardResultT<float> out = model.forward(classes, cond);
        CHECK(same_bits(out.logits, base.logits));
    }
    SUBCASE("local, both upsample modes") {
        for (const auto mode : {LocalUpsampleMode::transposed, LocalUpsampleMode::repeat}) {
            ModelConfig cfg = tiny_config();
            cfg.local_dim = 2;
            cfg.local_upsample_factor = 4;
            cfg.local_upsample_mode = mode;
            const WaveNetModel model(cfg, 42);
            Rng rng(1);
            ConditioningInput cond;
            cond.local_series = testutil::random_tensor<float>(3, 2, rng);
            const ForwardResultT<float> out = model.forward(classes, cond);
            CHECK(same_bits(out.logits, base.logits));
        }
    }
}

TEST_CASE("randomized conditioning separates the classes") {
    ModelConfig cfg = tiny_config();
    cfg.global_dim = 2;
    WaveNetModel model(cfg, 5);
    model.randomize_parameters(6);
    const std::vector<int> classes = {1, 5, 2, 7, 0, 3, 3, 6};
    ConditioningInput a, b;
    a.global_vec = std::vector<float>{1.0f, 0.0f};
    b.global_vec = std::vector<float>{0.0f, 1.0f};
    const auto la = model.forward(classes, a);
    const auto lb = model.forward(classes, b);
    CHECK_FALSE(same_bits(la.logits, lb.logits));
}

TEST_CASE("forward validates its conditioning inputs") {
    ModelConfig cfg = tiny_config();
    cfg.global_dim = 2;
    cfg.local_dim = 2;
    cfg.local_upsample_factor = 4;
    const WaveNetModel model(cfg, 0);
    const std::vector<int> classes(12, 1);

    ConditioningInput good;
    good.global_vec = std::vector<float>{1.0f, 0.0f};
    good.local_series = Tensor2D(3, 2);
    CHECK_NOTHROW(model.forward(classes, good));

    ConditioningInput missing_global = good;
    missing_global.global_vec.reset();
    CHECK_THROWS_AS(model.forward(classes, missing_global), ConfigError);

    ConditioningInput wrong_len = good;
    wrong_len.local_series = Tensor2D(4, 2);
    CHECK_THROWS_AS(model.forward(classes, wrong_len), ShapeError);

    ConditioningInput extra;
    extra.global_vec = std::vector<float>{1.0f, 0.0f};
    extra.local_series = Tensor2D(3, 2);
    const WaveNetModel plain_model(tiny_config(), 0);
    CHECK_THROWS_AS(plain_model.forward(classes, extra), ConfigError);

    const std::vector<int> bad_class = {1, 99};
    CHECK_THROWS_AS(model.forward(bad_class, good), DataError);
}

TEST_CASE("context stacks condition with a one-frame delay") {
    ModelConfig cfg;
    cfg.num_classes = 4;
    cfg.residual_channels = 3;
    cfg.skip_channels = 3;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {2};
    ContextStackConfig stack;
    stack.dilation_schedule = {1, 2};
    stack.channels = 3;
    stack.pool_factor = 4;
    cfg.context_stacks.push_back(stack);
    cfg.validate();
    CHECK(context_stack_receptive_field(cfg.context_stacks[0], cfg.filter_width) == 4);
    CHECK(context_crop(cfg) == 4);

    WaveNetModel seed_model(cfg, 9);
    seed_model.randomize_parameters(10);
    const WaveNetModelT<double> model = seed_model.cast<double>();
    Rng rng(23);
    std::vector<int> classes = random_classes(20, cfg.num_classes, rng);
    const auto row_at = [&](const std::vector<int>& cls, int u) {
        const auto out = model.forward(cls, {});
        const auto row = out.logits.row(u - out.crop);
        return std::vector<double>(row.begin(), row.end());
    };
    // Main stack reach at u=7 is positions {5,6,7}; pooled frame 1 (positions
    // 4..7) only reaches scored positions >= 8. Position 4 must be invisible.
    const std::vector<double> base = row_at(classes, 7);
    std::vector<int> mod = classes;
    mod[4] = (mod[4] + 1) % cfg.num_classes;
    CHECK(row_at(mod, 7) == base);
    // Frame 0 (positions 0..3) conditions u in [4, 8) through the stack even
    // though the main stack cannot see that far back.
    mod = classes;
    mod[0] = (mod[0] + 1) % cfg.num_classes;
    CHECK(row_at(mod, 7) != base);

    const std::vector<int> too_short(4, 0);
    CHECK_THROWS_AS(model.forward(too_short, {}), DataError);
}

TEST_CASE("context crop rounds the stack receptive field up to a frame edge") {
    ModelConfig cfg;
    cfg.num_classes = 4;
    cfg.residual_channels = 2;
    cfg.skip_channels = 2;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {2};
    ContextStackConfig stack;
    stack.dilation_schedule = {1, 2, 4};
    stack.channels = 2;
    stack.pool_factor = 4;
    cfg.context_stacks.push_back(stack);
    CHECK(context_stack_receptive_field(cfg.context_stacks[0], 2) == 8);
    CHECK(context_crop(cfg) == 8);
    stack.dilation_schedule = {1, 2, 4, 8};
    cfg.context_stacks[0] = stack;
    CHECK(context_crop(cfg) == 16); // rf 16 rounds to the next frame edge
}

TEST_CASE("a prefix forward reproduces the full forward's leading rows") {
    ModelConfig cfg = tiny_config();
    WaveNetModel model(cfg, 31);
    model.randomize_parameters(32);
    Rng rng(24);
    const std::vector<int> classes = random_classes(30, cfg.num_classes, rng);
    const std::vector<int> prefix(classes.begin(), classes.begin() + 18);
    const auto full = model.forward(classes, {});
    const auto head = model.forward(prefix, {});
    for (int t = 0; t < head.logits.timesteps; ++t) {
        for (int c = 0; c < cfg.num_classes; ++c) {
            REQUIRE(head.logits.at(t, c) == full.logits.at(t, c));
        }
    }
}

TEST_CASE("parameter count matches the analytic formula") {
    ModelConfig cfg = tiny_config();
    cfg.global_dim = 3;
    cfg.local_dim = 2;
    cfg.local_upsample_factor = 4;
    cfg.classifier = ClassifierConfig{3, 8};
    ContextStackConfig stack;
    stack.dilation_schedule = {1, 2};
    stack.channels = 3;
    stack.pool_factor = 8;
    cfg.context_stacks.push_back(stack);
    cfg.validate();
    const WaveNetModel model(cfg, 0);
    CHECK(model.count_parameters() == parameter_count(cfg));

    std::size_t walked = 0;
    visit_kernel_fields(model, cfg,
                        [&](const std::string&, const ConvKernel& k) { walked += k.param_count(); });
    CHECK(walked == parameter_count(cfg));
}

TEST_CASE("config json round-trips") {
    ModelConfig cfg = tiny_config();
    cfg.global_dim = 2;
    cfg.local_dim = 3;
    cfg.local_upsample_factor = 8;
    cfg.local_upsample_mode = LocalUpsampleMode::repeat;
    cfg.classifier = ClassifierConfig{4, 160};
    ContextStackConfig stack;
    stack.dilation_schedule = {1, 2, 4};
    stack.channels = 5;
    stack.pool_factor = 16;
    cfg.context_stacks.push_back(stack);

    const ModelConfig back = model_config_from_json(model_config_to_json(cfg));
    CHECK(back.num_classes == cfg.num_classes);
    CHECK(back.residual_channels == cfg.residual_channels);
    CHECK(back.skip_channels == cfg.skip_channels);
    CHECK(back.filter_width == cfg.filter_width);
    CHECK(back.dilation_schedule == cfg.dilation_schedule);
    CHECK(back.global_dim == cfg.global_dim);
    CHECK(back.local_dim == cfg.local_dim);
    CHECK(back.local_upsample_factor == cfg.local_upsample_factor);
    CHECK(back.local_upsample_mode == cfg.local_upsample_mode);
    REQUIRE(back.classifier.has_value());
    CHECK(back.classifier->num_labels == 4);
    CHECK(back.classifier->pool_factor == 160);
    REQUIRE(back.context_stacks.size() == 1);
    CHECK(back.context_stacks[0].dilation_schedule == stack.dilation_schedule);
    CHECK(back.context_stacks[0].channels == 5);
    CHECK(back.context_stacks[0].pool_factor == 16);

    CHECK_THROWS_AS(model_config_from_json("not json"), ConfigError);
    CHECK_THROWS_AS(model_config_from_json("{\"num_classes\": 1}"), ConfigError);
}

TEST_CASE("validate rejects degenerate configurations") {
    ModelConfig cfg = tiny_config();
    cfg.dilation_schedule.clear();
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config();
    cfg.dilation_schedule = {1}; // receptive field 2 == filter width
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config();
    cfg.num_classes = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = tiny_config();
    cfg.context_stacks.push_back(ContextStackConfig{});
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("initialization is deterministic and shared across variants") {
    const ModelConfig plain = tiny_config();
    const WaveNetModel a(plain, 77);
    const WaveNetModel b(plain, 77);
    const WaveNetModel c(plain, 78);
    CHECK(a.layers[0].filter.weights == b.layers[0].filter.weights);
    CHECK(a.layers[0].filter.weights != c.layers[0].filter.weights);

    // Skipping the zero-initialized kernels must not consume randomness, so a
    // conditioned variant shares every common weight with the plain model.
    ModelConfig conditioned = plain;
    conditioned.global_dim = 4;
    const WaveNetModel d(conditioned, 77);
    CHECK(d.input_embed.weights == a.input_embed.weights);
    CHECK(d.layers[2].gate.weights == a.layers[2].gate.weights);
    CHECK(d.head2.weights == a.head2.weights);
}

TEST_CASE("residual and conditioning kernels start at zero; randomize fills them") {
    ModelConfig cfg = tiny_config();
    cfg.global_dim = 2;
    WaveNetModel model(cfg, 1);
    const auto all_zero = [](const ConvKernel& k) {
        for (float w : k.weights) {
            if (w != 0.0f) return false;
        }
        for (float b : k.bias) {
            if (b != 0.0f) return false;
        }
        return true;
    };
    const auto any_nonzero = [&](const ConvKernel& k) { return !all_zero(k); };
    for (const auto& layer : model.layers) {
        CHECK(all_zero(layer.residual));
        CHECK(all_zero(layer.global_filter));
        CHECK(all_zero(layer.global_gate));
        CHECK(any_nonzero(layer.filter));
        CHECK(any_nonzero(layer.gate));
        CHECK(any_nonzero(layer.skip));
        CHECK(layer.filter.bias == std::vector<float>(layer.filter.bias.size(), 0.0f));
    }
    CHECK(any_nonzero(model.input_embed));
    model.randomize_parameters(2);
    for (const auto& layer : model.layers) {
        CHECK(any_nonzero(layer.residual));
        CHECK(any_nonzero(layer.global_filter));
    }
}

} // TEST_SUITE
