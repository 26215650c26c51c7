#pragma once

#include <algorithm>
#include <array>
#include <limits>
#include <string>
#include <vector>

#include "geoaware/backbones/pixel_encoder.hpp"
#include "geoaware/numerics/init.hpp"
#include "geoaware/policy/config.hpp"

namespace geoaware::policy {

using nn::ParamStore;
using nn::Shape;
using nn::Tensor;

/// Actions are regressed in normalized units: translation and rotation
/// deltas divided by the step clip, gripper unchanged.
inline constexpr std::array<double, deskworld::kActionDim> kActionScale{20.0, 20.0, 20.0, 20.0, 20.0, 20.0, 1.0};

/// Observation batch. Geo layers are channel-major [B × D_vggt × N_l], one
/// list per view; images are [B × 3 × H × W], one per view.
template <typename T>
struct PolicyInput {
    std::size_t batch = 0;
    std::vector<std::vector<Tensor<T>>> geo;
    std::vector<Tensor<T>> images;
    std::vector<std::size_t> lang_ids;
    Tensor<T> proprio; // [B × 7]
};

template <typename T>
struct Policy {
    PolicyConfig config;
    backbones::GeoStubConfig geo;
    ParamStore<T> params;
    bool codebook_trained = false;
};

inline std::size_t vocabulary_id(const PolicyConfig& cfg, const std::string& instruction) {
    const auto it = std::find(cfg.vocabulary.begin(), cfg.vocabulary.end(), instruction);
    if (it == cfg.vocabulary.end()) {
        throw VocabularyError("instruction not in vocabulary: \"" + instruction + "\"");
    }
    return static_cast<std::size_t>(it - cfg.vocabulary.begin());
}

/// Fresh parameters. Trainable weights are uniform in ±1/sqrt(fan_in); the
/// action token and positional embeddings are N(0, 0.02²); layer-norm gains
/// start at 1 and shifts at 0; the instruction table is N(0, 1) and frozen.
template <typename T>
Policy<T> make_policy(const PolicyConfig& cfg, const backbones::GeoStubConfig& geo, std::uint64_t seed) {
    cfg.validate(geo);
    Policy<T> pol{cfg, geo, {}, false};
    auto& ps = pol.params;
    Rng rng(mix_seed(seed, 0x9017));

    if (cfg.backbone == BackboneKind::geo) {
        const auto layers = cfg.selected_layers(geo);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string p = "vis.conv" + std::to_string(i);
            nn::add_uniform(ps, p + ".w", {cfg.conv, geo.width, 3}, geo.width * 3, rng);
            nn::add_uniform(ps, p + ".b", {cfg.conv}, geo.width * 3, rng);
        }
        nn::add_mlp2(ps, "vis.mlp", layers.size() * cfg.conv, cfg.repr, cfg.repr, rng);
    } else {
        backbones::add_pixel_encoder(ps, cfg.lang_emb, cfg.repr, rng);
    }

    {
        Rng table_rng(mix_seed(seed, 0x1a9e));
        std::vector<T> table(cfg.vocabulary.size() * cfg.lang_emb);
        for (auto& v : table) {
            v = static_cast<T>(table_rng.normal());
        }
        ps.add("lang.table", Tensor<T>({cfg.vocabulary.size(), cfg.lang_emb}, std::move(table)), true);
    }
    nn::add_mlp2(ps, "lang.mlp", cfg.lang_emb, cfg.repr, cfg.repr, rng);
    nn::add_mlp2(ps, "proprio.mlp", deskworld::kProprioDim, cfg.repr, cfg.repr, rng);

    nn::add_normal(ps, "trunk.action_token", {1, cfg.repr}, 0.02, rng);
    if (cfg.repr != cfg.hidden) {
        nn::add_linear(ps, "trunk.adapter", cfg.repr, cfg.hidden, rng);
    }
    nn::add_normal(ps, "trunk.pos", {cfg.tokens(), cfg.hidden}, 0.02, rng);
    for (std::size_t b = 0; b < cfg.trunk_layers; ++b) {
        const std::string p = "trunk.block" + std::to_string(b);
        nn::add_constant<T>(ps, p + ".ln1.g", {cfg.hidden}, T{1});
        nn::add_constant<T>(ps, p + ".ln1.b", {cfg.hidden}, T{0});
        nn::add_linear(ps, p + ".attn.qkv", cfg.hidden, 3 * cfg.hidden, rng);
        nn::add_linear(ps, p + ".attn.out", cfg.hidden, cfg.hidden, rng);
        nn::add_constant<T>(ps, p + ".ln2.g", {cfg.hidden}, T{1});
        nn::add_constant<T>(ps, p + ".ln2.b", {cfg.hidden}, T{0});
        nn::add_mlp2(ps, p + ".ff", cfg.hidden, cfg.ff_mult * cfg.hidden, cfg.hidden, rng);
    }
    nn::add_constant<T>(ps, "trunk.ln_f.g", {cfg.hidden}, T{1});
    nn::add_constant<T>(ps, "trunk.ln_f.b", {cfg.hidden}, T{0});

    if (cfg.head == HeadKind::mlp) {
        nn::add_mlp2(ps, "head.mlp", cfg.hidden, cfg.hidden, cfg.action_dim(), rng);
    } else {
        const auto& vq = cfg.vq;
        nn::add_uniform(ps, "vq.codes", {vq.codes, vq.latent}, vq.latent, rng);
        nn::add_mlp2(ps, "vq.enc", cfg.action_dim(), vq.hidden, vq.latent, rng);
        nn::add_mlp2(ps, "vq.dec", vq.latent, vq.hidden, cfg.action_dim(), rng);
        nn::add_linear(ps, "head.cls", cfg.hidden, vq.codes, rng);
        nn::add_mlp2(ps, "head.offset", cfg.hidden + vq.latent, cfg.hidden, cfg.action_dim(), rng);
    }
    return pol;
}

// ---------------------------------------------------------------------------
// Encoders

/// layers: L tensors [B × D_vggt × N_l] (channel-major). Per layer: dedicated
/// conv1d (k=3, pad 1) -> ReLU -> mean over tokens; concat -> 2-layer MLP.
template <typename T>
Tensor<T> project_vision(const ParamStore<T>& ps, const std::vector<Tensor<T>>& layers) {
    if (layers.empty()) {
        throw DimensionError("project_vision: no layers");
    }
    const Shape& ref = layers.front().shape();
    if (ref.size() != 3) {
        throw DimensionError("project_vision: layers must be [B×D×N], got " + nn::to_string(ref));
    }
    std::vector<Tensor<T>> pooled;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].shape() != ref) {
            throw DimensionError("project_vision: layer " + std::to_string(i) + " shape " +
                                 nn::to_string(layers[i].shape()) + " differs from " + nn::to_string(ref));
        }
        const std::string p = "vis.conv" + std::to_string(i);
        auto h = nn::relu(nn::conv1d(layers[i], ps.get(p + ".w"), ps.get(p + ".b"), 1, 1));
        pooled.push_back(nn::reshape(nn::adaptive_avg_pool1d(h, 1), {ref[0], h.dim(1)}));
    }
    return nn::apply_mlp2(ps, "vis.mlp", pooled.size() == 1 ? pooled.front() : nn::concat(pooled, 1));
}

/// Single-view convenience: token-major [N_l × D_vggt] layers, as produced by
/// the feature pyramid. Returns [1 × D_repr].
template <typename T>
Tensor<T> project_vision_tokens(const ParamStore<T>& ps, const std::vector<Tensor<T>>& layers) {
    std::vector<Tensor<T>> cm;
    for (const auto& l : layers) {
        if (l.rank() != 2) {
            throw DimensionError("project_vision: token layers must be [N×D]");
        }
        cm.push_back(nn::reshape(nn::transpose(l), {1, l.dim(1), l.dim(0)}));
    }
    return project_vision(ps, cm);
}

template <typename T>
Tensor<T> language_embedding(const ParamStore<T>& ps, const std::vector<std::size_t>& ids) {
    return nn::embedding_lookup(ps.get("lang.table"), ids);
}

template <typename T>
Tensor<T> encode_language(const ParamStore<T>& ps, const std::vector<std::size_t>& ids) {
    return nn::apply_mlp2(ps, "lang.mlp", language_embedding(ps, ids));
}

template <typename T>
Tensor<T> encode_proprio(const ParamStore<T>& ps, const Tensor<T>& state) {
    if (state.rank() != 2 || state.dim(1) != deskworld::kProprioDim) {
        throw DimensionError("encode_proprio: expected [B×7], got " + nn::to_string(state.shape()));
    }
    nn::ensure_finite<T>(state.values(), "encode_proprio input");
    return nn::apply_mlp2(ps, "proprio.mlp", state);
}

/// Per-view vision embeddings, each [B × D_repr].
template <typename T>
std::vector<Tensor<T>> encode_views(const Policy<T>& pol, const PolicyInput<T>& in) {
    const auto& cfg = pol.config;
    std::vector<Tensor<T>> out;
    if (cfg.backbone == BackboneKind::geo) {
        if (in.geo.size() != cfg.views) {
            throw DimensionError("policy: expected " + std::to_string(cfg.views) + " geo views, got " +
                                 std::to_string(in.geo.size()));
        }
        for (const auto& layers : in.geo) {
            out.push_back(project_vision(pol.params, layers));
        }
    } else {
        if (in.images.size() != cfg.views) {
            throw DimensionError("policy: expected " + std::to_string(cfg.views) + " images, got " +
                                 std::to_string(in.images.size()));
        }
        auto lang = language_embedding(pol.params, in.lang_ids);
        for (const auto& img : in.images) {
            out.push_back(backbones::pixel_features(pol.params, img, lang));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trunk

/// Stacks [view_1 .. view_V, lang, proprio, action] into [B·T × D_hidden]
/// rows (sample-major), adapts width and adds positional embeddings.
template <typename T>
Tensor<T> assemble_tokens(const ParamStore<T>& ps, const PolicyConfig& cfg, std::vector<Tensor<T>> parts) {
    const std::size_t b = parts.front().dim(0);
    parts.push_back(nn::add_tiled(Tensor<T>::zeros({b, cfg.repr}), ps.get("trunk.action_token")));
    const std::size_t t = parts.size();
    if (t != cfg.tokens()) {
        throw DimensionError("policy: token count " + std::to_string(t) + " != " + std::to_string(cfg.tokens()));
    }
    auto seq = nn::reshape(nn::concat(parts, 1), {b * t, cfg.repr});
    if (cfg.repr != cfg.hidden) {
        seq = nn::apply_linear(ps, "trunk.adapter", seq);
    }
    return nn::add_tiled(seq, ps.get("trunk.pos"));
}

/// Pre-norm causal transformer over [B·T × D] rows; returns every position
/// after the final layer norm.
template <typename T>
Tensor<T> trunk_all(const ParamStore<T>& ps, const PolicyConfig& cfg, const Tensor<T>& tokens, std::size_t batch) {
    if (cfg.trunk_heads == 0 || cfg.hidden % cfg.trunk_heads != 0) {
        throw ConfigError("trunk: D_hidden not divisible by heads");
    }
    const std::size_t seq = tokens.dim(0) / batch;
    auto x = tokens;
    for (std::size_t b = 0; b < cfg.trunk_layers; ++b) {
        const std::string p = "trunk.block" + std::to_string(b);
        auto a = nn::layer_norm(x, ps.get(p + ".ln1.g"), ps.get(p + ".ln1.b"));
        auto att = nn::causal_self_attention(nn::apply_linear(ps, p + ".attn.qkv", a), batch, seq, cfg.trunk_heads);
        x = nn::add(x, nn::apply_linear(ps, p + ".attn.out", att));
        auto f = nn::layer_norm(x, ps.get(p + ".ln2.g"), ps.get(p + ".ln2.b"));
        x = nn::add(x, nn::apply_mlp2(ps, p + ".ff", f));
    }
    return nn::layer_norm(x, ps.get("trunk.ln_f.g"), ps.get("trunk.ln_f.b"));
}

/// h_action: the last position of every sequence, [B × D_hidden].
template <typename T>
Tensor<T> trunk_forward(const ParamStore<T>& ps, const PolicyConfig& cfg, const Tensor<T>& tokens,
                        std::size_t batch) {
    const std::size_t seq = tokens.dim(0) / batch;
    std::vector<std::size_t> last(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        last[i] = i * seq + seq - 1;
    }
    return nn::embedding_lookup(trunk_all(ps, cfg, tokens, batch), last);
}

// ---------------------------------------------------------------------------
// Heads

template <typename T>
Tensor<T> mlp_head(const ParamStore<T>& ps, const Tensor<T>& h) {
    return nn::apply_mlp2(ps, "head.mlp", h);
}

/// Index of the nearest code (squared L2); ties resolve to the lowest index.
template <typename T>
std::size_t nearest_code(std::span<const T> z, std::span<const T> codes, std::size_t k) {
    const std::size_t d = z.size();
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
        double dist = 0.0;
        for (std::size_t e = 0; e < d; ++e) {
            const double diff = static_cast<double>(z[e]) - static_cast<double>(codes[c * d + e]);
            dist += diff * diff;
        }
        if (dist < best_d) {
            best_d = dist;
            best = c;
        }
    }
    return best;
}

template <typename T>
Tensor<T> vq_encode(const ParamStore<T>& ps, const Tensor<T>& actions) {
    return nn::apply_mlp2(ps, "vq.enc", actions);
}

template <typename T>
Tensor<T> vq_decode(const ParamStore<T>& ps, const Tensor<T>& z) {
    return nn::apply_mlp2(ps, "vq.dec", z);
}

/// Row-wise quantization of z_e [B × d_z]; returns the code indices.
template <typename T>
std::vector<std::size_t> vq_quantize(const ParamStore<T>& ps, const Tensor<T>& z_e) {
    const auto& codes = ps.get("vq.codes");
    const std::size_t k = codes.dim(0), d = codes.dim(1);
    if (z_e.rank() != 2 || z_e.dim(1) != d) {
        throw DimensionError("vq_quantize: latent width mismatch");
    }
    nn::ensure_finite<T>(z_e.values(), "vq_quantize input");
    std::vector<std::size_t> idx(z_e.dim(0));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = nearest_code(z_e.values().subspan(i * d, d), codes.values(), k);
    }
    return idx;
}

struct VQLossParts {
    double reconstruction = 0.0;
    double codebook = 0.0;
    double commitment = 0.0;
};

/// recon MSE(decode(st(z_e, e)), a) + MSE(sg(z_e), e) + beta · MSE(z_e, sg(e)).
/// `mask` (optional, same size as actions) restricts the reconstruction term.
template <typename T>
Tensor<T> vqvae_loss(const ParamStore<T>& ps, const VQConfig& vq, const Tensor<T>& actions,
                     std::span<const T> mask = {}, VQLossParts* parts = nullptr) {
    auto z_e = vq_encode(ps, actions);
    const auto idx = vq_quantize(ps, z_e);
    auto e = nn::embedding_lookup(ps.get("vq.codes"), idx);
    auto recon = vq_decode(ps, nn::straight_through(z_e, e));
    auto rec = mask.empty() ? nn::mse_loss(recon, actions) : nn::masked_mse_loss(recon, actions, mask);
    auto book = nn::mse_loss(z_e.detach(), e);
    auto commit = nn::mse_loss(z_e, e.detach());
    if (parts) {
        *parts = {static_cast<double>(rec.item()), static_cast<double>(book.item()),
                  static_cast<double>(commit.item())};
    }
    auto total = nn::add(rec, book);
    return vq.beta == 0.0 ? total : nn::add(total, nn::scale(commit, static_cast<T>(vq.beta)));
}

/// Code index of each expert action chunk under the current codebook.
template <typename T>
std::vector<std::size_t> vq_targets(const ParamStore<T>& ps, const Tensor<T>& actions) {
    nn::NoGradGuard guard;
    return vq_quantize(ps, vq_encode(ps, actions));
}

template <typename T>
Tensor<T> vqbet_logits(const ParamStore<T>& ps, const Tensor<T>& h) {
    return nn::apply_linear(ps, "head.cls", h);
}

/// decode(code_k) + offset(h, code_k) for the given per-row code choice.
template <typename T>
Tensor<T> vqbet_action(const ParamStore<T>& ps, const Tensor<T>& h, const std::vector<std::size_t>& codes) {
    auto e = nn::embedding_lookup(ps.get("vq.codes"), codes);
    auto offset = nn::apply_mlp2(ps, "head.offset", nn::concat<T>({h, e}, 1));
    return nn::add(vq_decode(ps, e), offset);
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits) {
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    std::vector<std::size_t> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        const auto row = logits.values().subspan(i * k, k);
        out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

template <typename T>
void require_codebook(const Policy<T>& pol) {
    if (pol.config.head == HeadKind::vqbet && !pol.codebook_trained) {
        throw StateError("vqbet head used before the codebook was trained");
    }
}

/// Inference path: argmax code plus offset.
template <typename T>
Tensor<T> vqbet_head(const Policy<T>& pol, const Tensor<T>& h) {
    require_codebook(pol);
    return vqbet_action(pol.params, h, argmax_rows(vqbet_logits(pol.params, h)));
}

/// cross_entropy(logits, code_gt) + offset_weight · MSE(decode(code_gt) + offset, a).
template <typename T>
Tensor<T> vqbet_loss(const Policy<T>& pol, const Tensor<T>& h, const Tensor<T>& actions,
                     const std::vector<std::size_t>& code_gt, std::span<const T> mask = {}) {
    require_codebook(pol);
    auto ce = nn::cross_entropy(vqbet_logits(pol.params, h), code_gt);
    auto pred = vqbet_action(pol.params, h, code_gt);
    auto off = mask.empty() ? nn::mse_loss(pred, actions) : nn::masked_mse_loss(pred, actions, mask);
    return nn::add(ce, nn::scale(off, static_cast<T>(pol.config.vq.offset_weight)));
}

// ---------------------------------------------------------------------------
// Composition

template <typename T>
Tensor<T> encode_sequence(const Policy<T>& pol, const PolicyInput<T>& in) {
    auto parts = encode_views(pol, in);
    parts.push_back(encode_language(pol.params, in.lang_ids));
    parts.push_back(encode_proprio(pol.params, in.proprio));
    return assemble_tokens(pol.params, pol.config, std::move(parts));
}

template <typename T>
Tensor<T> action_embedding(const Policy<T>& pol, const PolicyInput<T>& in) {
    return trunk_forward(pol.params, pol.config, encode_sequence(pol, in), in.batch);
}

/// Normalized action chunks [B × 7·T_c].
template <typename T>
Tensor<T> policy_forward(const Policy<T>& pol, const PolicyInput<T>& in) {
    auto h = action_embedding(pol, in);
    return pol.config.head == HeadKind::mlp ? mlp_head(pol.params, h) : vqbet_head(pol, h);
}

} // namespace geoaware::policy
