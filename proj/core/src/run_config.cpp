#include "wavenet/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "wavenet/codec.hpp"
#include "wavenet/errors.hpp"

namespace wavenet {

using nlohmann::json;

namespace {

json parse_document(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> known,
                         const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok = ok || it.key() == k;
        if (!ok) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
    }
}

SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "sine") return SynthKind::sine;
    if (s == "sine_mixture") return SynthKind::sine_mixture;
    if (s == "square") return SynthKind::square;
    if (s == "markov_noise") return SynthKind::markov_noise;
    throw ConfigError("unknown synth kind \"" + s +
                      "\"; expected sine, sine_mixture, square or markov_noise");
}

SyntheticSpec synth_from_json(const json& obj, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + ".synth must be an object");
    reject_unknown_keys(obj, {"kind", "frequency_hz", "amplitude", "duration_s", "seed",
                              "sample_rate_hz"},
                        where + ".synth");
    if (!obj.contains("kind")) throw ConfigError(where + ".synth is missing \"kind\"");
    SyntheticSpec spec;
    try {
        spec.kind = synth_kind_from_string(obj.at("kind").get<std::string>());
        spec.frequency_hz = obj.value("frequency_hz", spec.frequency_hz);
        spec.amplitude = obj.value("amplitude", spec.amplitude);
        spec.duration_s = obj.value("duration_s", spec.duration_s);
        spec.seed = obj.value("seed", spec.seed);
        spec.sample_rate_hz = obj.value("sample_rate_hz", spec.sample_rate_hz);
    } catch (const json::exception& e) {
        throw ConfigError(where + ".synth: " + e.what());
    }
    return spec;
}

DataEntry entry_from_json(const json& obj, std::size_t index) {
    const std::string where = "data[" + std::to_string(index) + "]";
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    reject_unknown_keys(obj, {"wav", "synth", "global_class", "label", "local_features"}, where);
    DataEntry entry;
    try {
        if (obj.contains("wav")) entry.wav_path = obj.at("wav").get<std::string>();
        if (obj.contains("synth")) entry.synth = synth_from_json(obj.at("synth"), where);
        if (obj.contains("global_class")) entry.global_class = obj.at("global_class").get<int>();
        if (obj.contains("label")) entry.label = obj.at("label").get<int>();
        if (obj.contains("local_features")) {
            entry.local_features_path = obj.at("local_features").get<std::string>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(where + ": " + e.what());
    }
    const bool has_wav = !entry.wav_path.empty();
    if (has_wav == entry.synth.has_value()) {
        throw ConfigError(where + " must set exactly one of \"wav\" or \"synth\"");
    }
    return entry;
}

Tensor2D load_local_features(const std::string& path, int local_dim) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open local feature file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const json doc = parse_document(buf.str(), "local feature file " + path);
    if (!doc.is_array() || doc.empty()) {
        throw DataError("local feature file " + path + " must hold a non-empty array of rows");
    }
    Tensor2D out(static_cast<int>(doc.size()), local_dim);
    for (std::size_t t = 0; t < doc.size(); ++t) {
        const json& row = doc[t];
        if (!row.is_array() || static_cast<int>(row.size()) != local_dim) {
            throw DataError("local feature file " + path + " row " + std::to_string(t) +
                            " does not have " + std::to_string(local_dim) + " values");
        }
        for (int c = 0; c < local_dim; ++c) {
            out.at(static_cast<int>(t), c) = row[static_cast<std::size_t>(c)].get<float>();
        }
    }
    return out;
}

} // namespace

std::string train_config_to_json(const TrainConfig& config) {
    json obj;
    obj["learning_rate"] = config.learning_rate;
    obj["adam_beta1"] = config.adam_beta1;
    obj["adam_beta2"] = config.adam_beta2;
    obj["adam_eps"] = config.adam_eps;
    obj["batch_segments"] = config.batch_segments;
    obj["segment_length"] = config.segment_length;
    obj["max_steps"] = config.max_steps;
    obj["seed"] = config.seed;
    obj["classifier_loss_weight"] = config.classifier_loss_weight;
    obj["validation_fraction"] = config.validation_fraction;
    obj["val_interval_steps"] = config.val_interval_steps;
    return obj.dump(2);
}

TrainConfig train_config_from_json(const std::string& json_text) {
    const json obj = parse_document(json_text, "train config");
    if (!obj.is_object()) throw ConfigError("train config must be an object");
    reject_unknown_keys(obj,
                        {"learning_rate", "adam_beta1", "adam_beta2", "adam_eps", "batch_segments",
                         "segment_length", "max_steps", "seed", "classifier_loss_weight",
                         "validation_fraction", "val_interval_steps"},
                        "train config");
    TrainConfig c;
    try {
        c.learning_rate = obj.value("learning_rate", c.learning_rate);
        c.adam_beta1 = obj.value("adam_beta1", c.adam_beta1);
        c.adam_beta2 = obj.value("adam_beta2", c.adam_beta2);
        c.adam_eps = obj.value("adam_eps", c.adam_eps);
        c.batch_segments = obj.value("batch_segments", c.batch_segments);
        c.segment_length = obj.value("segment_length", c.segment_length);
        c.max_steps = obj.value("max_steps", c.max_steps);
        c.seed = obj.value("seed", c.seed);
        c.classifier_loss_weight = obj.value("classifier_loss_weight", c.classifier_loss_weight);
        c.validation_fraction = obj.value("validation_fraction", c.validation_fraction);
        c.val_interval_steps = obj.value("val_interval_steps", c.val_interval_steps);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("train config: ") + e.what());
    }
    return c;
}

RunConfig parse_run_config(const std::string& json_text) {
    const json doc = parse_document(json_text, "run config");
    if (!doc.is_object()) throw ConfigError("run config must be an object");
    reject_unknown_keys(doc, {"model", "train", "data", "output_dir"}, "run config");
    if (!doc.contains("model")) throw ConfigError("run config is missing \"model\"");
    if (!doc.contains("data")) throw ConfigError("run config is missing \"data\"");

    RunConfig config;
    config.model = model_config_from_json(doc.at("model").dump());
    if (doc.contains("train")) config.train = train_config_from_json(doc.at("train").dump());
    try {
        config.output_dir = doc.value("output_dir", config.output_dir);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    const json& data = doc.at("data");
    if (!data.is_array() || data.empty()) {
        throw ConfigError("run config \"data\" must be a non-empty array");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        config.data.push_back(entry_from_json(data[i], i));
    }
    return config;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    RunConfig config = parse_run_config(buf.str());

    const std::filesystem::path base = std::filesystem::absolute(path).parent_path();
    auto resolve = [&](std::string& p) {
        if (p.empty()) return;
        std::filesystem::path fp(p);
        if (fp.is_relative()) p = (base / fp).string();
        if (!std::filesystem::exists(p)) {
            throw ConfigError("config references missing file " + p);
        }
    };
    for (auto& entry : config.data) {
        resolve(entry.wav_path);
        resolve(entry.local_features_path);
    }
    return config;
}

Dataset build_dataset(const RunConfig& config) {
    const ModelConfig& mc = config.model;
    const CompandingParams cp{255, mc.num_classes};

    Dataset dataset;
    std::vector<bool> seen_class(static_cast<std::size_t>(std::max(mc.global_dim, 0)), false);
    for (std::size_t i = 0; i < config.data.size(); ++i) {
        const DataEntry& entry = config.data[i];
        const std::string where = "data[" + std::to_string(i) + "]";

        ContinuousWaveform wave =
            entry.synth ? synth(*entry.synth) : read_wav(entry.wav_path);
        TrainingClip clip;
        clip.audio = quantize(wave, cp);
        const int len = static_cast<int>(clip.audio.classes.size());

        if (mc.global_dim > 0) {
            if (!entry.global_class) {
                throw ConfigError(where + " needs a global_class (model.global_dim is " +
                                  std::to_string(mc.global_dim) + ")");
            }
            const int c = *entry.global_class;
            if (c < 0 || c >= mc.global_dim) {
                throw ConfigError(where + " global_class " + std::to_string(c) +
                                  " out of range [0, " + std::to_string(mc.global_dim) + ")");
            }
            seen_class[static_cast<std::size_t>(c)] = true;
            clip.global_class = c;
        } else if (entry.global_class) {
            throw ConfigError(where + " sets global_class but model.global_dim is 0");
        }

        if (mc.local_dim > 0) {
            if (entry.local_features_path.empty()) {
                throw ConfigError(where + " needs local_features (model.local_dim is " +
                                  std::to_string(mc.local_dim) + ")");
            }
            Tensor2D feats = load_local_features(entry.local_features_path, mc.local_dim);
            if (feats.timesteps * mc.local_upsample_factor != len) {
                throw DataError(where + " local features cover " +
                                std::to_string(feats.timesteps * mc.local_upsample_factor) +
                                " samples after upsampling but the clip has " +
                                std::to_string(len));
            }
            clip.local_features = std::move(feats);
        } else if (!entry.local_features_path.empty()) {
            throw ConfigError(where + " sets local_features but model.local_dim is 0");
        }

        if (mc.classifier) {
            if (!entry.label) {
                throw ConfigError(where + " needs a label (model has a classifier head)");
            }
            const int label = *entry.label;
            if (label < 0 || label >= mc.classifier->num_labels) {
                throw ConfigError(where + " label " + std::to_string(label) +
                                  " out of range [0, " +
                                  std::to_string(mc.classifier->num_labels) + ")");
            }
            const int frames =
                (len + mc.classifier->pool_factor - 1) / mc.classifier->pool_factor;
            clip.frame_labels.assign(static_cast<std::size_t>(frames), label);
        }
        dataset.push_back(std::move(clip));
    }

    for (std::size_t c = 0; c < seen_class.size(); ++c) {
        if (!seen_class[c]) {
            throw ConfigError("global class " + std::to_string(c) +
                              " never appears in the data; class ids must cover [0, " +
                              std::to_string(mc.global_dim) + ")");
        }
    }
    return dataset;
}

} // namespace wavenet
