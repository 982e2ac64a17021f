#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/error.hpp"
#include "selftrain/label.hpp"
#include "selftrain/text.hpp"

namespace selftrain {

/// 6x6 counts, rows = gold class, columns = predicted class.
struct ConfusionMatrix {
    std::array<std::array<std::size_t, kNumClasses>, kNumClasses> counts{};
    std::size_t total = 0;

    void add(LabelClass gold, LabelClass predicted, std::size_t n = 1) {
        counts[index(gold)][index(predicted)] += n;
        total += n;
    }

    std::size_t row_total(LabelClass gold) const {
        std::size_t s = 0;
        for (auto v : counts[index(gold)]) s += v;
        return s;
    }

    std::size_t trace() const {
        std::size_t s = 0;
        for (std::size_t i = 0; i < kNumClasses; ++i) s += counts[i][i];
        return s;
    }

    ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
        for (std::size_t i = 0; i < kNumClasses; ++i)
            for (std::size_t j = 0; j < kNumClasses; ++j) counts[i][j] += o.counts[i][j];
        total += o.total;
        return *this;
    }

    friend ConfusionMatrix operator+(ConfusionMatrix a, const ConfusionMatrix& b) { return a += b; }
    friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Builds the confusion matrix from id-keyed predictions and gold labels.
template <typename Id>
ConfusionMatrix score(const std::vector<std::pair<Id, LabelClass>>& predictions,
                      const std::vector<std::pair<Id, LabelClass>>& golds) {
    std::map<Id, LabelClass> gold_of;
    for (const auto& [id, g] : golds)
        if (!gold_of.emplace(id, g).second) throw ScoringError("duplicate gold id");
    std::map<Id, bool> seen;
    ConfusionMatrix m;
    for (const auto& [id, p] : predictions) {
        const auto it = gold_of.find(id);
        if (it == gold_of.end()) {
            if constexpr (requires { std::to_string(id); })
                throw ScoringError("no gold label for prediction id " + std::to_string(id));
            else
                throw ScoringError("no gold label for a prediction id");
        }
        if (!seen.emplace(id, true).second) throw ScoringError("duplicate prediction id");
        m.add(it->second, p);
    }
    return m;
}

/// Diagonal over row total. A class absent from the gold labels is an error, not zero.
inline double sensitivity(const ConfusionMatrix& m, LabelClass c) {
    const auto row = m.row_total(c);
    if (row == 0) throw ScoringError("sensitivity undefined: no gold epochs of class " + std::string(name(c)));
    return static_cast<double>(m.counts[index(c)][index(c)]) / static_cast<double>(row);
}

inline double accuracy(const ConfusionMatrix& m) {
    if (m.total == 0) throw ScoringError("accuracy undefined: empty confusion matrix");
    return static_cast<double>(m.trace()) / static_cast<double>(m.total);
}

/// Fraction as a percentage with one decimal, rounded half up: 0.528 -> "52.8%".
inline std::string format_percent(double fraction) {
    const auto tenths = static_cast<long long>(std::floor(fraction * 1000.0 + 0.5 + 1e-9));
    const auto whole = tenths / 10, frac = tenths % 10;
    return std::to_string(whole) + "." + std::to_string(frac) + "%";
}

/// Row order of the sensitivity table.
inline constexpr std::array<LabelClass, kNumClasses> kTableOrder = {
    LabelClass::GPED, LabelClass::PLED, LabelClass::SPSW, LabelClass::EYEM, LabelClass::BCKG, LabelClass::ARTF,
};

/// Before/after sensitivity table, tab separated.
inline std::string emit_table1(const std::map<LabelClass, double>& before, const std::map<LabelClass, double>& after) {
    std::string out = "Class\tBefore\tAfter\n";
    for (auto c : kTableOrder) {
        const auto b = before.find(c), a = after.find(c);
        if (b == before.end() || a == after.end())
            throw ValidationError("sensitivity table: missing class " + std::string(name(c)));
        for (double v : {b->second, a->second})
            if (!(v >= 0.0 && v <= 1.0))
                throw ValidationError("sensitivity table: value for " + std::string(name(c)) + " outside [0, 1]");
        out += std::string(name(c)) + "\t" + format_percent(b->second) + "\t" + format_percent(a->second) + "\n";
    }
    return out;
}

inline std::string format_confusion_csv(const ConfusionMatrix& m) {
    std::string out = "gold\\predicted";
    for (auto c : kAllClasses) out += "," + std::string(name(c));
    out += "\n";
    for (auto g : kAllClasses) {
        out += std::string(name(g));
        for (auto p : kAllClasses) out += "," + std::to_string(m.counts[index(g)][index(p)]);
        out += "\n";
    }
    return out;
}

}  // namespace selftrain
