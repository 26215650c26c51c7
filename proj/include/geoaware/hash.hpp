#pragma once

#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

namespace geoaware {

// FNV-1a, 64 bit. Used for reproducibility and frozen-weight fingerprints.
class Fnv1a {
public:
    void update(const void* data, std::size_t size) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            state_ ^= bytes[i];
            state_ *= 0x100000001b3ULL;
        }
    }

    template <typename T>
    void update(std::span<const T> values) {
        update(values.data(), values.size_bytes());
    }

    void update(std::string_view text) { update(text.data(), text.size()); }

    std::uint64_t digest() const { return state_; }

    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
        return buf;
    }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::string hash_bytes(std::string_view bytes) {
    Fnv1a h;
    h.update(bytes);
    return h.hex();
}

} // namespace geoaware
