#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "geoaware/hash.hpp"
#include "geoaware/numerics/tensor.hpp"

namespace geoaware::nn {

/// Named parameters with a frozen subset. Names iterate in sorted order so
/// every traversal (optimizer, checkpoint, hashing) is deterministic.
template <typename T>
class ParamStore {
public:
    Tensor<T>& add(const std::string& name, Tensor<T> tensor, bool frozen = false) {
        if (entries_.contains(name)) {
            throw StateError("duplicate parameter name: " + name);
        }
        tensor.set_requires_grad(!frozen);
        if (frozen) {
            frozen_.insert(name);
        }
        return entries_.emplace(name, std::move(tensor)).first->second;
    }

    bool contains(const std::string& name) const { return entries_.contains(name); }

    const Tensor<T>& get(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw StateError("unknown parameter: " + name);
        }
        return it->second;
    }

    Tensor<T>& get(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) {
            throw StateError("unknown parameter: " + name);
        }
        return it->second;
    }

    void freeze(const std::string& name) {
        get(name).set_requires_grad(false);
        frozen_.insert(name);
    }

    void unfreeze(const std::string& name) {
        get(name).set_requires_grad(true);
        frozen_.erase(name);
    }

    bool is_frozen(const std::string& name) const { return frozen_.contains(name); }

    const std::set<std::string>& frozen_names() const { return frozen_; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        for (const auto& [name, _] : entries_) {
            out.push_back(name);
        }
        return out;
    }

    std::vector<std::string> trainable_names() const {
        std::vector<std::string> out;
        for (const auto& [name, _] : entries_) {
            if (!frozen_.contains(name)) {
                out.push_back(name);
            }
        }
        return out;
    }

    const std::map<std::string, Tensor<T>>& entries() const { return entries_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, t] : entries_) {
            n += t.size();
        }
        return n;
    }

    void zero_grad() {
        for (auto& [_, t] : entries_) {
            t.clear_grad();
        }
    }

    /// Fingerprint of names, shapes and values of the selected entries.
    std::string hash(const std::vector<std::string>& names) const {
        Fnv1a h;
        for (const auto& name : names) {
            const auto& t = get(name);
            h.update(name);
            h.update(std::span<const std::size_t>(t.shape()));
            h.update(t.values());
        }
        return h.hex();
    }

    std::string hash() const { return hash(names()); }

    /// Deep copy; the copy shares no storage with this store.
    ParamStore clone() const {
        ParamStore out;
        for (const auto& [name, t] : entries_) {
            out.add(name, t.detach(), frozen_.contains(name));
        }
        return out;
    }

private:
    std::map<std::string, Tensor<T>> entries_;
    std::set<std::string> frozen_;
};

} // namespace geoaware::nn
