#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "selftrain/error.hpp"
#include "selftrain/features.hpp"
#include "selftrain/label.hpp"
#include "selftrain/model_set.hpp"
#include "selftrain/text.hpp"

namespace selftrain {

/// S1 = VolumeHalving, S2 = FixedThreshold.
enum class Scheme { VolumeHalving, FixedThreshold };

inline std::string_view scheme_name(Scheme s) { return s == Scheme::VolumeHalving ? "s1" : "s2"; }

/// round-half-up of a non-negative quantity
inline std::size_t round_half_up(double x) {
    return x <= 0.0 ? 0 : static_cast<std::size_t>(std::floor(x + 0.5 + 1e-9));
}

struct SelectionPolicy {
    Scheme scheme = Scheme::VolumeHalving;
    /// Classes that take part in self-training. Background classes are off by default.
    PerClass<bool> enabled{true, true, true, false, false, false};
    /// Per-class confidence threshold for FixedThreshold. NaN means "calibrate in
    /// the first iteration from the volume rule, then hold fixed".
    PerClass<double> threshold;
    /// Per-class target count for VolumeHalving.
    PerClass<std::size_t> target{};
    double growth_factor = 0.5;
    int iteration = 0;

    SelectionPolicy() { threshold.fill(std::numeric_limits<double>::quiet_NaN()); }

    void validate() const {
        if (!(growth_factor > 0.0 && growth_factor <= 1.0))
            throw ValidationError("selection policy: growth_factor must lie in (0, 1]");
    }

    /// Volume targets from the current per-class pool sizes.
    void set_targets(const PerClass<std::size_t>& pool_sizes) {
        for (std::size_t c = 0; c < kNumClasses; ++c)
            target[c] = enabled[c] ? round_half_up(growth_factor * static_cast<double>(pool_sizes[c])) : 0;
    }
};

/// One candidate: a decoded epoch and the key used for deterministic tie-breaks.
struct Candidate {
    std::size_t epoch = 0;
    EpochKey key;
    LabelClass label = LabelClass::BCKG;
    double confidence = kNegInf;
};

struct ClassSelection {
    std::vector<Candidate> accepted;
    double effective_threshold = std::numeric_limits<double>::infinity();
    std::size_t considered = 0;
};

struct SelectionResult {
    PerClass<ClassSelection> per_class;

    std::size_t total() const {
        std::size_t n = 0;
        for (const auto& c : per_class) n += c.accepted.size();
        return n;
    }
};

inline std::vector<Candidate> to_candidates(const std::vector<Decoded>& decoded, const std::vector<Epoch>& epochs,
                                            bool use_raw_log_likelihood = false) {
    std::vector<Candidate> out;
    out.reserve(decoded.size());
    for (const auto& d : decoded)
        out.push_back({d.epoch, epochs[d.epoch].key(), d.label, use_raw_log_likelihood ? d.log_likelihood : d.confidence});
    return out;
}

/// Candidates decoded as `label`, stably sorted by descending confidence,
/// ties broken by (record_id, channel, start).
inline std::vector<Candidate> rank(const std::vector<Candidate>& decoded, LabelClass label) {
    std::vector<Candidate> out;
    for (const auto& d : decoded)
        if (d.label == label) out.push_back(d);
    std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.key < b.key;
    });
    return out;
}

/// Top k of a ranked list. The effective threshold is the k-th confidence.
inline ClassSelection select_top(const std::vector<Candidate>& ranked, std::size_t k) {
    ClassSelection r;
    r.considered = ranked.size();
    k = std::min(k, ranked.size());
    r.accepted.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(k));
    if (k > 0) r.effective_threshold = r.accepted.back().confidence;
    return r;
}

/// S1: k = round(growth_factor * current_count), all of the list if shorter.
inline ClassSelection select_volume(const std::vector<Candidate>& ranked, std::size_t current_count,
                                    double growth_factor) {
    if (!(growth_factor > 0.0 && growth_factor <= 1.0)) throw ValidationError("growth_factor must lie in (0, 1]");
    return select_top(ranked, round_half_up(growth_factor * static_cast<double>(current_count)));
}

inline std::size_t count_at_least(const std::vector<Candidate>& ranked, double tau) {
    // ranked is descending, so the qualifying items form a prefix
    return static_cast<std::size_t>(
        std::partition_point(ranked.begin(), ranked.end(), [&](const Candidate& c) { return c.confidence >= tau; }) -
        ranked.begin());
}

/// S2: everything with confidence >= tau.
inline ClassSelection select_threshold(const std::vector<Candidate>& ranked, double tau) {
    if (std::isnan(tau)) throw ValidationError("select_threshold: threshold is NaN");
    auto r = select_top(ranked, count_at_least(ranked, tau));
    r.effective_threshold = tau;
    return r;
}

/// Top p percent of a ranked list (k = round(p/100 * n)).
inline ClassSelection select_percentile(const std::vector<Candidate>& ranked, double percent) {
    if (!(percent >= 0.0 && percent <= 100.0)) throw ValidationError("percentile must lie in [0, 100]");
    return select_top(ranked, round_half_up(percent / 100.0 * static_cast<double>(ranked.size())));
}

/// Count of candidates at or above each threshold. Non-increasing in tau.
inline std::vector<std::size_t> sweep_threshold(const std::vector<Candidate>& ranked, const std::vector<double>& taus) {
    if (taus.empty()) throw UsageError("sweep_threshold: empty threshold list");
    std::vector<std::size_t> out;
    out.reserve(taus.size());
    for (double t : taus) out.push_back(count_at_least(ranked, t));
    return out;
}

/// Applies the policy to one iteration's decoded candidates.
/// `pool_sizes` are the current per-class training-pool sizes.
inline SelectionResult select(const SelectionPolicy& policy, const std::vector<Candidate>& decoded,
                              const PerClass<std::size_t>& pool_sizes) {
    policy.validate();
    SelectionResult r;
    for (auto c : kAllClasses) {
        auto& out = r.per_class[index(c)];
        const auto ranked = rank(decoded, c);
        if (!policy.enabled[index(c)]) {
            out.considered = ranked.size();
            continue;
        }
        if (policy.scheme == Scheme::VolumeHalving) {
            out = select_top(ranked, policy.target[index(c)]);
        } else {
            const double tau = policy.threshold[index(c)];
            out = std::isnan(tau) ? select_volume(ranked, pool_sizes[index(c)], policy.growth_factor)
                                  : select_threshold(ranked, tau);
        }
    }
    return r;
}

/// Prepares the policy for the next iteration.
/// VolumeHalving: targets from the new pool sizes. FixedThreshold: thresholds
/// calibrated on the first iteration are frozen, explicit ones are untouched.
inline SelectionPolicy adjust_policy(SelectionPolicy policy, const SelectionResult& last,
                                     const PerClass<std::size_t>& pool_sizes) {
    if (policy.scheme == Scheme::VolumeHalving) {
        policy.set_targets(pool_sizes);
    } else {
        for (std::size_t c = 0; c < kNumClasses; ++c)
            if (policy.enabled[c] && std::isnan(policy.threshold[c])) {
                const auto& sel = last.per_class[c];
                policy.threshold[c] = sel.accepted.empty() ? std::numeric_limits<double>::infinity()
                                                           : sel.effective_threshold;
            }
    }
    policy.iteration += 1;
    return policy;
}

// ---------------------------------------------------------------------------
// Selection audit: `iteration,class,record_id,channel,start_s,confidence,accepted`

inline std::string format_selection_audit_header() {
    return "iteration,class,record_id,channel,start_s,confidence,accepted\n";
}

/// One row per considered candidate, grouped by class in ranked order.
inline std::string format_selection_audit(int iteration, const std::vector<Candidate>& decoded,
                                          const SelectionResult& result) {
    std::string out;
    for (auto c : kAllClasses) {
        const auto ranked = rank(decoded, c);
        const auto n_acc = result.per_class[index(c)].accepted.size();
        for (std::size_t i = 0; i < ranked.size(); ++i) {
            const auto& r = ranked[i];
            out += std::to_string(iteration) + "," + std::string(name(c)) + "," + r.key.record_id + "," +
                   std::to_string(r.key.channel_index) + "," + text::fmt_seconds(r.key.start) + "," +
                   text::fmt17(r.confidence) + "," + (i < n_acc ? "1" : "0") + "\n";
        }
    }
    return out;
}

}  // namespace selftrain
