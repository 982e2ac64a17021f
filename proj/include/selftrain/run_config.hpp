#pragma once

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>

#include "selftrain/error.hpp"
#include "selftrain/features.hpp"
#include "selftrain/keyvalue.hpp"
#include "selftrain/loop.hpp"
#include "selftrain/model_set.hpp"
#include "selftrain/selector.hpp"

namespace selftrain {

/// Everything a command needs, resolved from the config file and flags.
/// Serialized verbatim into every run directory.
struct RunConfig {
    std::filesystem::path manifest;
    double min_overlap = 0.5;
    FeatureConfig features;
    LoopConfig loop;

    void validate() const {
        features.validate();
        loop.validate();
        if (!(min_overlap > 0.0 && min_overlap <= 1.0)) throw ValidationError("data.min_overlap must lie in (0, 1]");
        if (loop.hmm.num_states < 1 || loop.hmm.num_mixtures < 1)
            throw ValidationError("hmm.states and hmm.mixtures must be >= 1");
        if (loop.hmm.max_iters < 1) throw ValidationError("hmm.max_iters must be >= 1");
    }
};

inline std::string format_threshold(double t) { return std::isnan(t) ? "auto" : text::fmt17(t); }

inline double parse_threshold(const std::string& key, const std::string& v) {
    if (v == "auto") return std::numeric_limits<double>::quiet_NaN();
    const auto d = text::parse_double(v);
    if (!d || std::isnan(*d)) throw ValidationError("config key " + key + ": expected a number or auto, got '" + v + "'");
    return *d;
}

inline Scheme parse_scheme(const std::string& v) {
    if (v == "s1") return Scheme::VolumeHalving;
    if (v == "s2") return Scheme::FixedThreshold;
    throw ValidationError("selection.scheme must be s1 or s2, got '" + v + "'");
}

inline RunConfig parse_run_config(std::string_view content, const std::string& origin = "<config>") {
    const auto kv = KeyValues::parse(content, origin);
    RunConfig c;
    if (auto m = kv.get("data.manifest")) c.manifest = *m;
    kv.read("data.min_overlap", c.min_overlap);

    auto& f = c.features;
    kv.read("features.epoch_duration", f.epoch_duration);
    kv.read("features.frame_step", f.frame_step);
    kv.read("features.window_length", f.window_length);
    kv.read("features.num_cepstral", f.num_cepstral);
    kv.read("features.include_energy", f.include_energy);
    kv.read("features.include_differential_energy", f.include_differential_energy);
    kv.read("features.differential_subwindows", f.differential_subwindows);
    kv.read("features.epsilon", f.epsilon);

    auto& h = c.loop.hmm;
    kv.read("hmm.states", h.num_states);
    kv.read("hmm.mixtures", h.num_mixtures);
    kv.read("hmm.max_iters", h.max_iters);
    kv.read("hmm.tolerance", h.tol);
    kv.read("hmm.variance_floor_scale", h.variance_floor_scale);

    auto& p = c.loop.policy;
    if (auto s = kv.get("selection.scheme")) p.scheme = parse_scheme(*s);
    kv.read("selection.growth_factor", p.growth_factor);
    if (auto s = kv.get("selection.score")) {
        if (*s != "posterior" && *s != "raw")
            throw ValidationError("selection.score must be posterior or raw, got '" + *s + "'");
        c.loop.use_raw_log_likelihood = *s == "raw";
    }
    if (auto s = kv.get("selection.enabled")) {
        p.enabled.fill(false);
        for (auto part : text::split(*s, ',')) {
            const auto t = text::trim(part);
            if (t.empty()) continue;
            const auto cls = from_name(t);
            if (!cls) throw ValidationError("selection.enabled: unknown class '" + std::string(t) + "'");
            p.enabled[index(*cls)] = true;
        }
    }
    for (auto cls : kAllClasses) {
        const auto key = "selection.threshold." + std::string(name(cls));
        if (auto s = kv.get(key)) p.threshold[index(cls)] = parse_threshold(key, *s);
    }

    kv.read("loop.iterations", c.loop.max_iterations);
    kv.read("loop.stop_on_accuracy_drop", c.loop.stop_on_accuracy_drop);
    kv.read("loop.accuracy_drop", c.loop.accuracy_drop);
    kv.read("run.seed", c.loop.seed);
    kv.read("run.jobs", c.loop.jobs);
    kv.reject_unused(origin);
    return c;
}

inline std::string format_run_config(const RunConfig& c) {
    KeyValues kv;
    kv.set("data.manifest", c.manifest.generic_string());
    kv.set("data.min_overlap", text::fmt17(c.min_overlap));
    const auto& f = c.features;
    kv.set("features.epoch_duration", text::fmt17(f.epoch_duration));
    kv.set("features.frame_step", text::fmt17(f.frame_step));
    kv.set("features.window_length", text::fmt17(f.window_length));
    kv.set("features.num_cepstral", std::to_string(f.num_cepstral));
    kv.set("features.include_energy", f.include_energy ? "true" : "false");
    kv.set("features.include_differential_energy", f.include_differential_energy ? "true" : "false");
    kv.set("features.differential_subwindows", std::to_string(f.differential_subwindows));
    kv.set("features.epsilon", text::fmt17(f.epsilon));
    const auto& h = c.loop.hmm;
    kv.set("hmm.states", std::to_string(h.num_states));
    kv.set("hmm.mixtures", std::to_string(h.num_mixtures));
    kv.set("hmm.max_iters", std::to_string(h.max_iters));
    kv.set("hmm.tolerance", text::fmt17(h.tol));
    kv.set("hmm.variance_floor_scale", text::fmt17(h.variance_floor_scale));
    const auto& p = c.loop.policy;
    kv.set("selection.scheme", std::string(scheme_name(p.scheme)));
    kv.set("selection.growth_factor", text::fmt17(p.growth_factor));
    kv.set("selection.score", c.loop.use_raw_log_likelihood ? "raw" : "posterior");
    std::string enabled;
    for (auto cls : kAllClasses)
        if (p.enabled[index(cls)]) enabled += (enabled.empty() ? "" : ",") + std::string(name(cls));
    kv.set("selection.enabled", enabled);
    for (auto cls : kAllClasses)
        kv.set("selection.threshold." + std::string(name(cls)), format_threshold(p.threshold[index(cls)]));
    kv.set("loop.iterations", std::to_string(c.loop.max_iterations));
    kv.set("loop.stop_on_accuracy_drop", c.loop.stop_on_accuracy_drop ? "true" : "false");
    kv.set("loop.accuracy_drop", text::fmt17(c.loop.accuracy_drop));
    kv.set("run.seed", std::to_string(c.loop.seed));
    kv.set("run.jobs", std::to_string(c.loop.jobs));
    return kv.format();
}

}  // namespace selftrain
