#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "selftrain/error.hpp"
#include "selftrain/loop.hpp"
#include "selftrain/selector.hpp"

namespace selftrain {

/// One point of a threshold sweep: accept every epoch of `label` at or above
/// `threshold`, retrain that class on gold + accepted, score on eval.
struct SweepRow {
    double threshold = 0.0;
    double percentile = std::numeric_limits<double>::quiet_NaN();  // set when the point came from a percentile
    std::size_t selected = 0;
    double sensitivity = 0.0;
    double accuracy = 0.0;
};

struct SweepPoint {
    double threshold;
    double percentile;
};

/// Thresholds that select the top p percent of `ranked` (k = round(p/100 * n)).
inline std::vector<SweepPoint> percentile_points(const std::vector<Candidate>& ranked, const std::vector<double>& percents) {
    if (percents.empty()) throw UsageError("sweep: empty percentile list");
    std::vector<SweepPoint> out;
    for (double p : percents) {
        const auto k = select_percentile(ranked, p).accepted.size();
        out.push_back({k == 0 ? std::numeric_limits<double>::infinity() : ranked[k - 1].confidence, p});
    }
    return out;
}

inline std::vector<SweepPoint> threshold_points(const std::vector<double>& taus) {
    if (taus.empty()) throw UsageError("sweep: empty threshold list");
    std::vector<SweepPoint> out;
    for (double t : taus) {
        if (std::isnan(t)) throw UsageError("sweep: threshold is NaN");
        out.push_back({t, std::numeric_limits<double>::quiet_NaN()});
    }
    return out;
}

/// Candidates of `label` from decoding the unlabeled epochs with the baseline models.
inline std::vector<Candidate> sweep_candidates(const LoopState& base, const Dataset& data, const LoopConfig& cfg,
                                               LabelClass label) {
    const auto decoded = decode(base.models, data.train, base.unlabeled, data.fingerprint, cfg.jobs);
    return rank(to_candidates(decoded, data.train, cfg.use_raw_log_likelihood), label);
}

inline std::vector<SweepRow> run_sweep(const LoopState& base, const Dataset& data, const LoopConfig& cfg,
                                       LabelClass label, const std::vector<Candidate>& ranked,
                                       const std::vector<SweepPoint>& points) {
    if (points.empty()) throw UsageError("sweep: no thresholds");
    std::vector<SweepRow> rows;
    PerClass<bool> reuse;
    reuse.fill(true);
    reuse[index(label)] = false;
    for (const auto& pt : points) {
        const auto sel = select_threshold(ranked, pt.threshold);
        SweepRow row{pt.threshold, pt.percentile, sel.accepted.size(), 0.0, 0.0};
        if (sel.accepted.empty()) {
            row.sensitivity = base.last_report.sensitivity[index(label)];
            row.accuracy = base.last_report.accuracy;
        } else {
            auto pool = base.pool;
            for (const auto& a : sel.accepted) pool.entries.push_back({a.epoch, label, 1, a.confidence});
            PerClass<double> ll{};
            const auto models =
                train_models(data, pool, cfg.hmm, base.variance_floor, cfg.seed, cfg.jobs, ll, &base.models, &reuse);
            const auto m = evaluate(models, data.eval, data.fingerprint, cfg.jobs);
            row.sensitivity = sensitivity(m, label);
            row.accuracy = accuracy(m);
        }
        rows.push_back(row);
    }
    return rows;
}

inline std::string format_sweep_csv(LabelClass label, const std::vector<SweepRow>& rows) {
    std::string out = "class,threshold,percentile,selected,sensitivity,accuracy\n";
    for (const auto& r : rows)
        out += std::string(name(label)) + "," + text::fmt17(r.threshold) + "," +
               (std::isnan(r.percentile) ? std::string() : text::fmt_g(r.percentile, 12)) + "," +
               std::to_string(r.selected) + "," + text::fmt17(r.sensitivity) + "," + text::fmt17(r.accuracy) + "\n";
    return out;
}

}  // namespace selftrain
