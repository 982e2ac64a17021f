#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <type_traits>

#include "selftrain/error.hpp"
#include "selftrain/text.hpp"

namespace selftrain {

/// Flat `section.key = value` text. Later assignments override earlier ones;
/// '#' starts a comment line. Serialization is sorted by key, so it is canonical.
class KeyValues {
public:
    static KeyValues parse(std::string_view content, const std::string& origin = "<config>") {
        KeyValues kv;
        std::size_t lineno = 0;
        for (auto raw : text::lines(content)) {
            ++lineno;
            const auto line = text::trim(raw);
            if (line.empty() || line.front() == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string_view::npos)
                throw ValidationError(origin + " line " + std::to_string(lineno) + ": expected key = value");
            const auto key = text::trim(line.substr(0, eq));
            if (key.empty()) throw ValidationError(origin + " line " + std::to_string(lineno) + ": empty key");
            kv.values_[std::string(key)] = std::string(text::trim(line.substr(eq + 1)));
        }
        return kv;
    }

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    bool has(const std::string& key) const { return values_.contains(key); }
    const std::map<std::string, std::string>& entries() const { return values_; }

    std::optional<std::string> get(const std::string& key) const {
        used_.insert(key);
        if (auto it = values_.find(key); it != values_.end()) return it->second;
        return std::nullopt;
    }

    template <typename T>
    void read(const std::string& key, T& out) const {
        const auto v = get(key);
        if (!v) return;
        if constexpr (std::is_same_v<T, bool>) {
            if (*v == "true" || *v == "1") out = true;
            else if (*v == "false" || *v == "0") out = false;
            else throw ValidationError("config key " + key + ": expected true/false, got '" + *v + "'");
        } else if constexpr (std::is_floating_point_v<T>) {
            const auto d = text::parse_double(*v);
            if (!d) throw ValidationError("config key " + key + ": expected a number, got '" + *v + "'");
            out = static_cast<T>(*d);
        } else if constexpr (std::is_integral_v<T>) {
            const auto i = text::parse_int<T>(*v);
            if (!i) throw ValidationError("config key " + key + ": expected an integer, got '" + *v + "'");
            out = *i;
        } else {
            out = *v;
        }
    }

    /// Rejects keys that no get/read call asked for (typos, stale options).
    void reject_unused(const std::string& origin) const {
        for (const auto& [k, v] : values_)
            if (!used_.contains(k)) throw ValidationError(origin + ": unknown key " + k);
    }

    std::string format() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

private:
    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

}  // namespace selftrain
