#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hairseg/autodiff.hpp"

namespace hairseg {

// Ordered, name-addressed collection of trainable leaves. Insertion order is
// the canonical order for initialization, optimizer state, and serialization,
// so a fixed construction sequence makes everything downstream deterministic.
template <class T>
class ParamStoreT {
public:
    struct Entry {
        std::string name;
        VarT<T> var;
    };

    VarT<T>& add(std::string name, TensorT<T> init) {
        return add(std::move(name), VarT<T>(std::move(init), /*requires_grad=*/true));
    }

    VarT<T>& add(std::string name, VarT<T> var) {
        HS_CHECK_CONTRACT(!index_.contains(name), "duplicate parameter name: " << name);
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(var)});
        return entries_.back().var;
    }

    bool contains(std::string_view name) const {
        return index_.contains(std::string(name));
    }

    VarT<T>& at(std::string_view name) {
        auto it = index_.find(std::string(name));
        HS_CHECK_CONTRACT(it != index_.end(), "unknown parameter: " << name);
        return entries_[it->second].var;
    }
    const VarT<T>& at(std::string_view name) const {
        return const_cast<ParamStoreT*>(this)->at(name);
    }

    std::size_t count() const noexcept { return entries_.size(); }

    std::size_t scalar_count() const noexcept {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.var.size();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_) e.var.zero_grad();
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    Entry& operator[](std::size_t i) { return entries_[i]; }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using ParamStore = ParamStoreT<float>;

// Normalization gains and biases are conventionally excluded from decoupled
// weight decay; the naming scheme makes the rule a suffix check.
inline bool decay_exempt(std::string_view name) {
    auto ends_with = [&](std::string_view suffix) {
        return name.size() >= suffix.size() &&
               name.substr(name.size() - suffix.size()) == suffix;
    };
    return ends_with(".bias") || ends_with(".gamma") || ends_with(".beta");
}

} // namespace hairseg
