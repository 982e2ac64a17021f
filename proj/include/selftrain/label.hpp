#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace selftrain {

/// The six EEG event classes. Enumerator values are the on-disk label codes.
enum class LabelClass : std::uint8_t {
    SPSW = 1,
    PLED = 2,
    GPED = 3,
    ARTF = 4,
    EYEM = 5,
    BCKG = 6,
};

inline constexpr std::size_t kNumClasses = 6;

/// All classes in label-code order.
inline constexpr std::array<LabelClass, kNumClasses> kAllClasses = {
    LabelClass::SPSW, LabelClass::PLED, LabelClass::GPED,
    LabelClass::ARTF, LabelClass::EYEM, LabelClass::BCKG,
};

/// Rarest first. Used to break ties in labeling and classification.
inline constexpr std::array<LabelClass, kNumClasses> kRarityOrder = {
    LabelClass::SPSW, LabelClass::PLED, LabelClass::GPED,
    LabelClass::EYEM, LabelClass::ARTF, LabelClass::BCKG,
};

inline constexpr int code(LabelClass c) { return static_cast<int>(c); }

/// Zero-based index, suitable for std::array<T, kNumClasses>.
inline constexpr std::size_t index(LabelClass c) { return static_cast<std::size_t>(c) - 1; }

inline constexpr LabelClass class_at(std::size_t i) { return kAllClasses[i]; }

inline constexpr bool is_signal(LabelClass c) {
    return c == LabelClass::SPSW || c == LabelClass::PLED || c == LabelClass::GPED;
}

inline constexpr bool is_background(LabelClass c) { return !is_signal(c); }

/// Position in kRarityOrder; lower is rarer.
inline constexpr int rarity_rank(LabelClass c) {
    for (std::size_t i = 0; i < kRarityOrder.size(); ++i)
        if (kRarityOrder[i] == c) return static_cast<int>(i);
    return static_cast<int>(kRarityOrder.size());
}

inline std::optional<LabelClass> from_code(int code) {
    if (code < 1 || code > static_cast<int>(kNumClasses)) return std::nullopt;
    return static_cast<LabelClass>(code);
}

inline constexpr std::string_view name(LabelClass c) {
    switch (c) {
        case LabelClass::SPSW: return "SPSW";
        case LabelClass::PLED: return "PLED";
        case LabelClass::GPED: return "GPED";
        case LabelClass::ARTF: return "ARTF";
        case LabelClass::EYEM: return "EYEM";
        case LabelClass::BCKG: return "BCKG";
    }
    return "?";
}

inline std::optional<LabelClass> from_name(std::string_view s) {
    for (auto c : kAllClasses)
        if (name(c) == s) return c;
    return std::nullopt;
}

/// Fixed-size per-class table.
template <typename T>
using PerClass = std::array<T, kNumClasses>;

}  // namespace selftrain
