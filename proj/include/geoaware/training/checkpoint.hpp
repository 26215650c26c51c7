#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "geoaware/config.hpp"
#include "geoaware/hash.hpp"
#include "geoaware/policy/network.hpp"

namespace geoaware::training {

inline constexpr char kCheckpointMagic[4] = {'G', 'A', 'V', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    RunConfig config;
    policy::Policy<float> policy;
    std::uint64_t step = 0;
};

namespace ckpt_detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename V>
void put(std::string& out, V v) {
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    out.append(buf, sizeof(V));
}

inline void put_string(std::string& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out += s;
}

class Reader {
public:
    explicit Reader(std::string_view data) : data_(data) {}

    template <typename V>
    V get() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, data_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }

    std::string string() { return bytes(get<std::uint32_t>()); }

    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw FormatError("checkpoint: truncated file");
        }
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

} // namespace ckpt_detail

/// Config snapshot stored in the checkpoint: the run config plus the
/// codebook flag.
inline Json checkpoint_config_json(const RunConfig& cfg, bool codebook_trained) {
    Json j = to_json(cfg);
    j["codebook_trained"] = codebook_trained;
    return j;
}

inline std::string serialize_checkpoint(const policy::Policy<float>& pol, const RunConfig& cfg, std::uint64_t step) {
    using ckpt_detail::put;
    using ckpt_detail::put_string;
    std::string out(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string json = checkpoint_config_json(cfg, pol.codebook_trained).dump();
    put<std::uint64_t>(out, json.size());
    out += json;
    const auto names = pol.params.names();
    put<std::uint64_t>(out, names.size());
    for (const auto& name : names) {
        const auto& t = pol.params.get(name);
        put_string(out, name);
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (const auto d : t.shape()) {
            put<std::uint64_t>(out, d);
        }
        out.append(reinterpret_cast<const char*>(t.values().data()), t.size() * sizeof(float));
    }
    const auto& frozen = pol.params.frozen_names();
    put<std::uint64_t>(out, frozen.size());
    for (const auto& name : frozen) {
        put_string(out, name);
    }
    put<std::uint64_t>(out, step);
    return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
    ckpt_detail::Reader r(bytes);
    if (r.bytes(4) != std::string(kCheckpointMagic, 4)) {
        throw FormatError("checkpoint: bad magic");
    }
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    }
    const auto json_len = r.get<std::uint64_t>();
    Json j;
    try {
        j = Json::parse(r.bytes(json_len));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: config blob: ") + e.what());
    }
    if (!j.contains("codebook_trained") || !j.at("codebook_trained").is_boolean()) {
        throw FormatError("checkpoint: config blob lacks codebook_trained");
    }
    const bool codebook_trained = j.at("codebook_trained").get<bool>();
    j.erase("codebook_trained");
    Checkpoint ck;
    ck.config = from_json(j);
    ck.config.validate();
    // The structure comes from the config; values come from the file.
    ck.policy = policy::make_policy<float>(ck.config.policy, ck.config.geo, 0);
    ck.policy.codebook_trained = codebook_trained;
    auto& ps = ck.policy.params;

    const auto count = r.get<std::uint64_t>();
    if (count != ps.names().size()) {
        throw FormatError("checkpoint: tensor count " + std::to_string(count) + " does not match config");
    }
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto name = r.string();
        if (!ps.contains(name)) {
            throw FormatError("checkpoint: unexpected tensor " + name);
        }
        auto& t = ps.get(name);
        const auto rank = r.get<std::uint32_t>();
        nn::Shape shape(rank);
        for (auto& d : shape) {
            d = r.get<std::uint64_t>();
        }
        if (shape != t.shape()) {
            throw FormatError("checkpoint: tensor " + name + " has shape " + nn::to_string(shape) + ", expected " +
                              nn::to_string(t.shape()));
        }
        const auto raw = r.bytes(t.size() * sizeof(float));
        std::memcpy(t.mutable_values().data(), raw.data(), raw.size());
    }
    const auto frozen_count = r.get<std::uint64_t>();
    std::set<std::string> frozen;
    for (std::uint64_t i = 0; i < frozen_count; ++i) {
        frozen.insert(r.string());
    }
    for (const auto& name : frozen) {
        if (!ps.contains(name)) {
            throw FormatError("checkpoint: frozen list names unknown tensor " + name);
        }
        ps.freeze(name);
    }
    for (const auto& name : ps.names()) {
        if (ps.is_frozen(name) && !frozen.contains(name)) {
            ps.unfreeze(name);
        }
    }
    ck.step = r.get<std::uint64_t>();
    if (!r.done()) {
        throw FormatError("checkpoint: trailing bytes");
    }
    return ck;
}

/// Writes atomically: a temporary sibling is renamed over `path`.
inline void save_checkpoint(const policy::Policy<float>& pol, const RunConfig& cfg, std::uint64_t step,
                            const std::string& path) {
    const std::string bytes = serialize_checkpoint(pol, cfg, step);
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw InputError("cannot write checkpoint " + path);
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw InputError("failed writing checkpoint " + path);
        }
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open checkpoint " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_checkpoint(ss.str());
}

/// Rejects a checkpoint whose network, backbone or simulator settings differ
/// from `expected`.
inline void require_compatible(const RunConfig& expected, const RunConfig& actual) {
    if (!(expected.policy == actual.policy)) {
        throw ConfigError("checkpoint policy config does not match the run config");
    }
    if (!(expected.geo == actual.geo)) {
        throw ConfigError("checkpoint geo backbone config does not match the run config");
    }
    if (!(expected.sim == actual.sim)) {
        throw ConfigError("checkpoint simulator config does not match the run config");
    }
}

inline Checkpoint load_checkpoint(const std::string& path, const RunConfig& expected) {
    auto ck = load_checkpoint(path);
    require_compatible(expected, ck.config);
    return ck;
}

inline std::string checkpoint_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw InputError("cannot open " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return hash_bytes(ss.str());
}

} // namespace geoaware::training
