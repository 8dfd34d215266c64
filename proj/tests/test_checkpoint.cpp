#include <cstring>

#include "doctest.h"
#include "test_util.hpp"
#include "wavenet/checkpoint.hpp"
#include "wavenet/errors.hpp"

using namespace wavenet;
using testutil::read_bytes;
using testutil::TempDir;
using testutil::write_bytes;

namespace {

WaveNetModel make_model() {
    ModelConfig cfg;
    cfg.num_classes = 8;
    cfg.residual_channels = 4;
    cfg.skip_channels = 3;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {1, 2, 4};
    cfg.global_dim = 2;
    cfg.validate();
    WaveNetModel model(cfg, 12);
    model.randomize_parameters(13);
    return model;
}

/// Recompute and overwrite the trailing checksum so structural edits stay
/// "authentic" and reach the deeper validation layers.
void reseal(std::vector<unsigned char>& bytes) {
    const std::size_t body = bytes.size() - 8;
    const std::uint64_t sum =
        fnv1a64(std::span<const std::uint8_t>(bytes.data(), body));
    for (int i = 0; i < 8; ++i) {
        bytes[body + static_cast<std::size_t>(i)] =
            static_cast<unsigned char>((sum >> (8 * i)) & 0xFF);
    }
}

} // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("round trip restores config, weights and outputs bit-exactly") {
    TempDir dir;
    const WaveNetModel model = make_model();
    const std::string path = dir.file("m.ckpt");
    save_checkpoint(model, path);

    const WaveNetModel back = load_checkpoint(path);
    CHECK(back.config.num_classes == model.config.num_classes);
    CHECK(back.config.dilation_schedule == model.config.dilation_schedule);
    CHECK(back.config.global_dim == 2);
    CHECK(back.count_parameters() == model.count_parameters());

    bool identical = true;
    visit_kernel_fields(model, model.config, [&](const std::string& name, const ConvKernel& k) {
        visit_kernel_fields(back, back.config, [&](const std::string& name2, const ConvKernel& k2) {
            if (name == name2) {
                identical = identical && k.weights == k2.weights && k.bias == k2.bias;
            }
        });
    });
    CHECK(identical);

    const std::vector<int> classes = {0, 3, 1, 7, 2, 2, 5, 4, 6, 1};
    ConditioningInput cond;
    cond.global_vec = std::vector<float>{1.0f, 0.0f};
    const auto a = model.forward(classes, cond);
    const auto b = back.forward(classes, cond);
    CHECK(a.logits.data == b.logits.data);
}

TEST_CASE("saving twice produces identical bytes") {
    TempDir dir;
    const WaveNetModel model = make_model();
    save_checkpoint(model, dir.file("a.ckpt"));
    save_checkpoint(model, dir.file("b.ckpt"));
    CHECK(read_bytes(dir.file("a.ckpt")) == read_bytes(dir.file("b.ckpt")));
}

TEST_CASE("a flipped payload byte is caught by the checksum") {
    TempDir dir;
    save_checkpoint(make_model(), dir.file("m.ckpt"));
    auto bytes = read_bytes(dir.file("m.ckpt"));
    bytes[bytes.size() / 2] ^= 0x01;
    write_bytes(dir.file("bad.ckpt"), bytes);
    CHECK_THROWS_AS(load_checkpoint(dir.file("bad.ckpt")), IntegrityError);
}

TEST_CASE("truncation is caught") {
    TempDir dir;
    save_checkpoint(make_model(), dir.file("m.ckpt"));
    auto bytes = read_bytes(dir.file("m.ckpt"));
    bytes.resize(bytes.size() - 9);
    write_bytes(dir.file("short.ckpt"), bytes);
    CHECK_THROWS_AS(load_checkpoint(dir.file("short.ckpt")), IntegrityError);
}

TEST_CASE("a wrong magic with a valid checksum is a format error") {
    TempDir dir;
    save_checkpoint(make_model(), dir.file("m.ckpt"));
    auto bytes = read_bytes(dir.file("m.ckpt"));
    bytes[0] = 'X';
    reseal(bytes);
    write_bytes(dir.file("magic.ckpt"), bytes);
    CHECK_THROWS_AS(load_checkpoint(dir.file("magic.ckpt")), FormatError);
}

TEST_CASE("an unsupported version is a format error") {
    TempDir dir;
    save_checkpoint(make_model(), dir.file("m.ckpt"));
    auto bytes = read_bytes(dir.file("m.ckpt"));
    bytes[8] = 99; // version field sits right after the magic
    reseal(bytes);
    write_bytes(dir.file("ver.ckpt"), bytes);
    CHECK_THROWS_AS(load_checkpoint(dir.file("ver.ckpt")), FormatError);
}

TEST_CASE("a parameter count that disagrees with the config is a format error") {
    TempDir dir;
    save_checkpoint(make_model(), dir.file("m.ckpt"));
    auto bytes = read_bytes(dir.file("m.ckpt"));
    // Field layout: magic(8), version(4), config length(4), config, count(8).
    std::uint32_t cfg_len;
    std::memcpy(&cfg_len, bytes.data() + 12, 4);
    const std::size_t count_at = 16 + cfg_len;
    bytes[count_at] ^= 0x01;
    reseal(bytes);
    write_bytes(dir.file("count.ckpt"), bytes);
    CHECK_THROWS_AS(load_checkpoint(dir.file("count.ckpt")), FormatError);
}

TEST_CASE("missing files surface as IO errors") {
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/path/m.ckpt"), IoError);
}

} // TEST_SUITE
