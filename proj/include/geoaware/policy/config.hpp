#pragma once

#include <string>
#include <vector>

#include "geoaware/backbones/geo_stub.hpp"
#include "geoaware/backbones/layer_select.hpp"
#include "geoaware/deskworld/world.hpp"

namespace geoaware::policy {

enum class HeadKind { mlp, vqbet };
enum class BackboneKind { geo, pixel };

inline std::string to_string(HeadKind h) { return h == HeadKind::mlp ? "mlp" : "vqbet"; }
inline std::string to_string(BackboneKind b) { return b == BackboneKind::geo ? "geo" : "pixel"; }

inline HeadKind parse_head(const std::string& s) {
    if (s == "mlp") {
        return HeadKind::mlp;
    }
    if (s == "vqbet") {
        return HeadKind::vqbet;
    }
    throw ConfigError("unknown head kind: " + s);
}

inline BackboneKind parse_backbone(const std::string& s) {
    if (s == "geo") {
        return BackboneKind::geo;
    }
    if (s == "pixel") {
        return BackboneKind::pixel;
    }
    throw ConfigError("unknown backbone kind: " + s);
}

struct VQConfig {
    std::size_t codes = 32;  // K
    std::size_t latent = 8;  // d_z
    std::size_t hidden = 32; // encoder/decoder MLP width
    double beta = 0.25;      // commitment weight
    double offset_weight = 10.0;

    bool operator==(const VQConfig&) const = default;
};

inline std::vector<std::string> default_vocabulary() {
    std::vector<std::string> out;
    for (const auto& t : deskworld::make_tasks()) {
        out.push_back(t.instruction);
    }
    return out;
}

struct PolicyConfig {
    std::size_t repr = 64;     // D_repr
    std::size_t conv = 32;     // D_conv
    std::size_t hidden = 64;   // D_hidden
    std::size_t lang_emb = 32; // D_lang_emb
    std::size_t chunk = 1;     // T_c
    backbones::LayerSelection selection{backbones::SelectMode::even, 4};
    std::size_t trunk_layers = 2;
    std::size_t trunk_heads = 4;
    std::size_t ff_mult = 2;
    std::size_t views = 2;
    HeadKind head = HeadKind::mlp;
    BackboneKind backbone = BackboneKind::geo;
    VQConfig vq;
    std::vector<std::string> vocabulary = default_vocabulary();

    bool operator==(const PolicyConfig&) const = default;

    std::size_t action_dim() const { return deskworld::kActionDim * chunk; }
    std::size_t tokens() const { return views + 3; }

    void validate(const backbones::GeoStubConfig& geo) const {
        if (repr == 0 || conv == 0 || hidden == 0 || lang_emb == 0 || chunk == 0 || views == 0 || ff_mult == 0) {
            throw ConfigError("policy: widths, chunk and views must be positive");
        }
        if (trunk_heads == 0 || hidden % trunk_heads != 0) {
            throw ConfigError("policy: D_hidden " + std::to_string(hidden) + " not divisible by " +
                              std::to_string(trunk_heads) + " heads");
        }
        if (trunk_layers == 0) {
            throw ConfigError("policy: trunk needs at least one layer");
        }
        if (vq.codes < 2 || vq.latent == 0 || vq.hidden == 0) {
            throw ConfigError("policy: codebook needs K >= 2 and positive widths");
        }
        if (vocabulary.empty()) {
            throw ConfigError("policy: empty instruction vocabulary");
        }
        // Throws when L > M.
        (void)backbones::select_layer_indices(geo.layers, selection);
    }

    std::vector<std::size_t> selected_layers(const backbones::GeoStubConfig& geo) const {
        return backbones::select_layer_indices(geo.layers, selection);
    }
};

} // namespace geoaware::policy
