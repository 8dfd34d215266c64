#include "wavenet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace wavenet {

namespace {

constexpr char kMagic[8] = {'W', 'V', 'N', 'E', 'T', 'C', 'K', 'P'};

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
    append_u32(out, std::bit_cast<std::uint32_t>(v));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    void need(std::size_t n, const char* what) const {
        if (pos_ + n > bytes_.size()) {
            throw IntegrityError(std::string("checkpoint truncated while reading ") + what);
        }
    }

    std::uint32_t read_u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t read_u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    float read_f32(const char* what) { return std::bit_cast<float>(read_u32(what)); }

    std::string read_bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    std::size_t pos() const { return pos_; }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 14695981039346656037ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
    }
    return h;
}

void save_checkpoint(const WaveNetModel& model, const std::string& path) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    append_u32(out, kCheckpointVersion);
    const std::string cfg = model_config_to_json(model.config);
    append_u32(out, static_cast<std::uint32_t>(cfg.size()));
    out.insert(out.end(), cfg.begin(), cfg.end());
    append_u64(out, model.count_parameters());
    visit_kernel_fields(model, model.config, [&](const std::string&, const ConvKernel& k) {
        for (float w : k.weights) append_f32(out, w);
        for (float b : k.bias) append_f32(out, b);
    });
    append_u64(out, fnv1a64(out));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing checkpoint to " + path);
}

WaveNetModel load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw FormatError(path + " is not a model checkpoint (bad magic)");
    }
    if (bytes.size() < 16) throw IntegrityError("checkpoint truncated after magic");
    const std::uint64_t stored = [&] {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(bytes[bytes.size() - 8 + i]) << (8 * i);
        }
        return v;
    }();
    const std::uint64_t actual =
        fnv1a64(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 8));
    if (stored != actual) throw IntegrityError("checkpoint checksum mismatch in " + path);

    Reader r(bytes);
    r.read_bytes(8, "magic");
    const std::uint32_t version = r.read_u32("version");
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    const std::uint32_t cfg_len = r.read_u32("config length");
    const std::string cfg_text = r.read_bytes(cfg_len, "config");
    ModelConfig config;
    try {
        config = model_config_from_json(cfg_text);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint carries an invalid config: ") + e.what());
    }
    const std::uint64_t declared = r.read_u64("parameter count");
    if (declared != parameter_count(config)) {
        throw FormatError("checkpoint header declares " + std::to_string(declared) +
                          " parameters but its config implies " +
                          std::to_string(parameter_count(config)));
    }

    WaveNetModel model(config, 0);
    visit_kernel_fields(model, model.config, [&](const std::string& name, ConvKernel& k) {
        for (auto& w : k.weights) w = r.read_f32(name.c_str());
        for (auto& b : k.bias) b = r.read_f32(name.c_str());
    });
    if (r.pos() != bytes.size() - 8) {
        throw IntegrityError("checkpoint has trailing bytes after the parameter payload");
    }
    return model;
}

} // namespace wavenet
