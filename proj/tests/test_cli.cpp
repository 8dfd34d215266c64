#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include "doctest.h"
#include "test_util.hpp"
#include "wavenet/audio_io.hpp"

using testutil::read_bytes;
using testutil::read_text;
using testutil::TempDir;
using testutil::write_text;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

/// Runs the installed command line under a shell, capturing both streams.
RunResult run_cli(const TempDir& dir, const std::string& args) {
    const std::string out_path = dir.file("stdout.txt");
    const std::string err_path = dir.file("stderr.txt");
    const std::string cmd = std::string(WAVENET_CLI_PATH) + " " + args + " > " + out_path +
                            " 2> " + err_path;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WEXITSTATUS(status);
    r.out = read_text(out_path);
    r.err = read_text(err_path);
    return r;
}

const char* kTrainConfig = R"({
  "model": {
    "num_classes": 16,
    "residual_channels": 4,
    "skip_channels": 4,
    "filter_width": 2,
    "dilation_schedule": [1, 2, 4]
  },
  "train": {"segment_length": 64, "max_steps": 8, "seed": 3},
  "data": [
    {"synth": {"kind": "sine", "frequency_hz": 440, "duration_s": 0.02}}
  ]
})";

} // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit with code 2 and help with 0") {
    TempDir dir;
    CHECK(run_cli(dir, "").exit_code == 2);
    CHECK(run_cli(dir, "frobnicate").exit_code == 2);
    CHECK(run_cli(dir, "--help").exit_code == 0);
    CHECK(run_cli(dir, "train").exit_code == 2); // --config is required
}

TEST_CASE("a missing config file names the path and exits 2") {
    TempDir dir;
    const RunResult r = run_cli(dir, "train --config /no/such/config.json");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("/no/such/config.json") != std::string::npos);
}

TEST_CASE("train and generate complete and reproduce bit-identically") {
    TempDir dir;
    write_text(dir.file("run.json"), kTrainConfig);

    const std::string train_args =
        "train --config " + dir.file("run.json") + " --out " + dir.file("out");
    const RunResult first = run_cli(dir, train_args);
    CAPTURE(first.err);
    REQUIRE(first.exit_code == 0);
    CHECK(first.out.find("final loss") != std::string::npos);
    CHECK(std::filesystem::exists(dir.file("out/model.ckpt")));
    CHECK(std::filesystem::exists(dir.file("out/report.jsonl")));

    const RunResult second =
        run_cli(dir, "train --config " + dir.file("run.json") + " --out " + dir.file("out2"));
    REQUIRE(second.exit_code == 0);
    CHECK(first.out.substr(0, first.out.find('\n')) ==
          second.out.substr(0, second.out.find('\n')));

    const std::string gen_args = "generate --checkpoint " + dir.file("out/model.ckpt") +
                                 " --samples 300 --seed 5 --out ";
    const RunResult g1 = run_cli(dir, gen_args + dir.file("a.wav"));
    CAPTURE(g1.err);
    REQUIRE(g1.exit_code == 0);
    CHECK(g1.out.find("mean NLL") != std::string::npos);
    const RunResult g2 = run_cli(dir, gen_args + dir.file("b.wav"));
    REQUIRE(g2.exit_code == 0);
    CHECK(read_bytes(dir.file("a.wav")) == read_bytes(dir.file("b.wav")));

    const wavenet::ContinuousWaveform wave = wavenet::read_wav(dir.file("a.wav"));
    CHECK(wave.samples.size() == 300);

    const RunResult bad_class =
        run_cli(dir, gen_args + dir.file("c.wav") + " --global-class 1");
    CHECK(bad_class.exit_code == 2);

    const RunResult bad_steps =
        run_cli(dir, "train --config " + dir.file("run.json") + " --steps -3 --out " +
                         dir.file("out3"));
    CHECK(bad_steps.exit_code == 2);
}

TEST_CASE("self-check commands succeed") {
    TempDir dir;
    const RunResult codec = run_cli(dir, "codec-roundtrip");
    CHECK(codec.exit_code == 0);
    CHECK(codec.out.find("PASS") != std::string::npos);

    const RunResult probe = run_cli(dir, "probe-receptive-field");
    CHECK(probe.exit_code == 0);
    CHECK(probe.out.find("1024") != std::string::npos);
    CHECK(probe.out.find("PASS") != std::string::npos);

    const RunResult grad = run_cli(dir, "gradcheck");
    CHECK(grad.exit_code == 0);
    CHECK(grad.out.find("PASS") != std::string::npos);
}

} // TEST_SUITE
