#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wavenet/audio_io.hpp"
#include "wavenet/model.hpp"
#include "wavenet/training.hpp"

namespace wavenet {

/// One dataset clip: either a WAV file on disk or a synthetic spec, plus the
/// conditioning attached to it.
struct DataEntry {
    std::string wav_path;                // empty when synthetic
    std::optional<SyntheticSpec> synth;  // set when synthetic
    std::optional<int> global_class;
    std::optional<int> label;            // per-frame classifier label
    std::string local_features_path;     // JSON matrix file, empty when unused
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::vector<DataEntry> data;
    std::string output_dir = ".";
};

std::string train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const std::string& json_text);

/// Parse a config document. File paths are kept verbatim and not checked.
RunConfig parse_run_config(const std::string& json_text);

/// Read a config file, resolve relative data paths against its directory and
/// verify every referenced file exists.
RunConfig load_run_config(const std::string& path);

/// Materialize the dataset: decode or synthesize each clip, quantize with the
/// model's companding and attach conditioning plus frame labels.
Dataset build_dataset(const RunConfig& config);

} // namespace wavenet
