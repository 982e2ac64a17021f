#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "selftrain/corpus.hpp"
#include "selftrain/error.hpp"
#include "selftrain/keyvalue.hpp"
#include "selftrain/label.hpp"
#include "selftrain/rng.hpp"

namespace selftrain {

/// Emission signature and volume of one class.
struct ClassSignature {
    std::size_t count = 0;     // events
    int min_duration = 1;      // seconds, whole epochs
    int max_duration = 1;
    double base_frequency = 1.0;  // Hz
    double amplitude = 0.0;       // microvolts
    double noise_std = 0.0;
};

/// Synthetic corpus description. Events are whole-second spans planted on
/// single channels over a pink-ish background with an alpha rhythm.
struct SynthSpec {
    PerClass<ClassSignature> classes;
    double sample_rate = kDefaultSampleRate;
    std::size_t num_records = 100;
    std::size_t num_channels = 4;
    int record_duration = 120;       // seconds
    double background_fill = 0.5;    // minimum fraction of every channel left as background
    double record_variability = 0.5; // per-record spread of amplitudes and rates
    double event_variability = 0.5;  // per-event log-uniform spread of amplitude (a quarter of it for frequency)
    std::uint64_t seed = 42;
    double eval_fraction = 0.25;     // records held out for evaluation
    double gold_fraction = 0.12;     // of the remaining records, the labeled seed
    double gold_variability = 0.3;   // scale of record_variability for gold records

    SynthSpec() {
        auto& s = classes;
        //                         count min max  freq  amp   noise
        s[index(LabelClass::SPSW)] = {480, 1, 1, 12.0, 90.0, 6.0};
        s[index(LabelClass::PLED)] = {1600, 2, 4, 16.0, 50.0, 6.0};
        s[index(LabelClass::GPED)] = {1600, 2, 4, 6.0, 50.0, 6.0};
        s[index(LabelClass::ARTF)] = {1000, 1, 5, 30.0, 25.0, 6.0};
        s[index(LabelClass::EYEM)] = {600, 1, 3, 0.7, 40.0, 6.0};
        s[index(LabelClass::BCKG)] = {0, 1, 1, 10.0, 6.0, 8.0};
    }

    void validate() const {
        if (!(sample_rate > 0.0)) throw ValidationError("synth spec: sample_rate must be positive");
        if (num_records < 1 || num_channels < 1 || record_duration < 1)
            throw ValidationError("synth spec: records, channels and record_duration must be positive");
        if (!(background_fill >= 0.0 && background_fill < 1.0))
            throw ValidationError("synth spec: background_fill must lie in [0, 1)");
        if (!(record_variability >= 0.0) || !(event_variability >= 0.0) || !(gold_variability >= 0.0))
            throw ValidationError("synth spec: variability settings must be >= 0");
        for (auto c : kAllClasses) {
            const auto& s = classes[index(c)];
            if (s.min_duration < 1 || s.max_duration < s.min_duration)
                throw ValidationError("synth spec: class " + std::string(name(c)) +
                                      " durations must satisfy 1 <= min <= max");
            if (!(s.amplitude >= 0.0) || !(s.noise_std >= 0.0) || !(s.base_frequency > 0.0))
                throw ValidationError("synth spec: class " + std::string(name(c)) + " has an invalid signature");
        }
    }
};

inline SynthSpec parse_synth_spec(std::string_view content, const std::string& origin = "<synth spec>") {
    const auto kv = KeyValues::parse(content, origin);
    SynthSpec s;
    kv.read("synth.sample_rate", s.sample_rate);
    kv.read("synth.records", s.num_records);
    kv.read("synth.channels", s.num_channels);
    kv.read("synth.record_duration", s.record_duration);
    kv.read("synth.background_fill", s.background_fill);
    kv.read("synth.record_variability", s.record_variability);
    kv.read("synth.event_variability", s.event_variability);
    kv.read("synth.seed", s.seed);
    kv.read("synth.eval_fraction", s.eval_fraction);
    kv.read("synth.gold_fraction", s.gold_fraction);
    kv.read("synth.gold_variability", s.gold_variability);
    for (auto c : kAllClasses) {
        const auto p = "class." + std::string(name(c)) + ".";
        auto& sig = s.classes[index(c)];
        kv.read(p + "count", sig.count);
        kv.read(p + "min_duration", sig.min_duration);
        kv.read(p + "max_duration", sig.max_duration);
        kv.read(p + "frequency", sig.base_frequency);
        kv.read(p + "amplitude", sig.amplitude);
        kv.read(p + "noise", sig.noise_std);
    }
    kv.reject_unused(origin);
    s.validate();
    return s;
}

inline std::string format_synth_spec(const SynthSpec& s) {
    KeyValues kv;
    kv.set("synth.sample_rate", text::fmt17(s.sample_rate));
    kv.set("synth.records", std::to_string(s.num_records));
    kv.set("synth.channels", std::to_string(s.num_channels));
    kv.set("synth.record_duration", std::to_string(s.record_duration));
    kv.set("synth.background_fill", text::fmt17(s.background_fill));
    kv.set("synth.record_variability", text::fmt17(s.record_variability));
    kv.set("synth.event_variability", text::fmt17(s.event_variability));
    kv.set("synth.seed", std::to_string(s.seed));
    kv.set("synth.eval_fraction", text::fmt17(s.eval_fraction));
    kv.set("synth.gold_fraction", text::fmt17(s.gold_fraction));
    kv.set("synth.gold_variability", text::fmt17(s.gold_variability));
    for (auto c : kAllClasses) {
        const auto p = "class." + std::string(name(c)) + ".";
        const auto& sig = s.classes[index(c)];
        kv.set(p + "count", std::to_string(sig.count));
        kv.set(p + "min_duration", std::to_string(sig.min_duration));
        kv.set(p + "max_duration", std::to_string(sig.max_duration));
        kv.set(p + "frequency", text::fmt17(sig.base_frequency));
        kv.set(p + "amplitude", text::fmt17(sig.amplitude));
        kv.set(p + "noise", text::fmt17(sig.noise_std));
    }
    return kv.format();
}

namespace detail {

struct PlannedEvent {
    std::size_t record = 0, channel = 0;
    int start = 0, duration = 0;
    LabelClass label = LabelClass::BCKG;
};

/// Chooses non-overlapping whole-second slots for every event.
inline std::vector<PlannedEvent> plan_events(const SynthSpec& spec) {
    auto rng = make_rng(spec.seed, "synth.plan");
    const auto tracks = spec.num_records * spec.num_channels;
    const int budget = static_cast<int>(std::floor(spec.record_duration * (1.0 - spec.background_fill) + 1e-9));
    const long long capacity = static_cast<long long>(budget) * static_cast<long long>(tracks);

    std::vector<PlannedEvent> events;
    long long requested = 0;
    for (auto c : kAllClasses) {
        const auto& sig = spec.classes[index(c)];
        for (std::size_t i = 0; i < sig.count; ++i) {
            const int span = sig.max_duration - sig.min_duration + 1;
            const int dur = sig.min_duration + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span)));
            requested += dur;
            if (dur > budget || requested > capacity)
                throw CapacityError("synthetic events of class " + std::string(name(c)) + " exceed record capacity (" +
                                    std::to_string(capacity) + " s of event time available)");
            events.push_back({0, 0, 0, dur, c});
        }
    }

    std::vector<std::vector<bool>> busy(tracks, std::vector<bool>(static_cast<std::size_t>(spec.record_duration), false));
    std::vector<int> used(tracks, 0);
    auto fits = [&](std::size_t tr, int start, int dur) {
        if (used[tr] + dur > budget || start + dur > spec.record_duration) return false;
        for (int s = start; s < start + dur; ++s)
            if (busy[tr][static_cast<std::size_t>(s)]) return false;
        return true;
    };
    for (auto& ev : events) {
        bool placed = false;
        std::size_t tr = 0;
        int start = 0;
        for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            tr = uniform_index(rng, tracks);
            start = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(spec.record_duration - ev.duration + 1)));
            placed = fits(tr, start, ev.duration);
        }
        if (!placed) {  // exhaustive first fit from a random track
            const auto offset = uniform_index(rng, tracks);
            for (std::size_t i = 0; i < tracks && !placed; ++i) {
                tr = (offset + i) % tracks;
                for (start = 0; start + ev.duration <= spec.record_duration && !placed; ++start)
                    placed = fits(tr, start, ev.duration);
                if (placed) --start;
            }
        }
        if (!placed)
            throw CapacityError("no free slot left for a " + std::to_string(ev.duration) + " s event of class " +
                                std::string(name(ev.label)));
        for (int s = start; s < start + ev.duration; ++s) busy[tr][static_cast<std::size_t>(s)] = true;
        used[tr] += ev.duration;
        ev.record = tr / spec.num_channels;
        ev.channel = tr % spec.num_channels;
        ev.start = start;
    }
    return events;
}

/// Per-record multiplicative jitter of a class signature.
struct RecordTraits {
    PerClass<double> amplitude;
    PerClass<double> rate;
    double background = 1.0;
};

inline RecordTraits record_traits(const SynthSpec& spec, std::size_t record, bool gold) {
    auto rng = make_rng(spec.seed, "synth.traits", record);
    RecordTraits t;
    const double v = spec.record_variability * (gold ? spec.gold_variability : 1.0);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        t.amplitude[c] = std::exp(v * standard_normal(rng));
        t.rate[c] = std::exp(0.5 * v * standard_normal(rng));
    }
    t.background = std::exp(0.5 * v * standard_normal(rng));
    return t;
}

/// Spike followed by a slower after-going wave; width in seconds.
inline double sharp_wave(double dt, double width) {
    const double a = dt / width;
    const double b = (dt - 2.0 * width) / (3.0 * width);
    return std::exp(-a * a) - 0.35 * std::exp(-b * b);
}

inline void add_event(std::vector<double>& x, const PlannedEvent& ev, const ClassSignature& sig, double amp,
                      double rate, double spread, double sr, Rng& rng) {
    constexpr double kTwoPi = 2.0 * std::numbers::pi;
    const auto first = static_cast<std::size_t>(ev.start * sr);
    const auto n = static_cast<std::size_t>(ev.duration * sr);
    const double f0 = sig.base_frequency * rate * std::exp(uniform(rng, -0.25 * spread, 0.25 * spread));
    const double A = sig.amplitude * amp * std::exp(uniform(rng, -spread, spread));
    auto at = [&](std::size_t i) { return static_cast<double>(i) / sr; };  // seconds since event start

    std::vector<double> wave(n, 0.0);
    switch (ev.label) {
        case LabelClass::SPSW: {
            // one or two sharp transients per second at random offsets
            const double width = 1.0 / (4.0 * f0);
            for (int s = 0; s < ev.duration; ++s) {
                const int spikes = 3 + (uniform01(rng) < 0.5 ? 1 : 0);
                for (int k = 0; k < spikes; ++k) {
                    const double tc = s + uniform(rng, 0.1, 0.85);
                    const double a = A * uniform(rng, 0.7, 1.3) * (uniform01(rng) < 0.5 ? 1.0 : -1.0);
                    for (std::size_t i = 0; i < n; ++i) {
                        const double dt = at(i) - tc;
                        if (dt > -5 * width && dt < 12 * width) wave[i] += a * sharp_wave(dt, width);
                    }
                }
            }
            break;
        }
        case LabelClass::PLED:
        case LabelClass::GPED: {
            // periodic damped bursts; PLED discharges are slower than GPED
            const double period = (ev.label == LabelClass::PLED ? 0.6 : 0.4) / rate;
            const double phase = uniform(rng, 0.0, period);
            const double decay = ev.label == LabelClass::PLED ? 0.15 : 0.1;
            for (double tc = phase - period; tc < ev.duration; tc += period) {
                const double a = A * uniform(rng, 0.8, 1.2);
                for (std::size_t i = 0; i < n; ++i) {
                    const double dt = at(i) - tc;
                    if (dt >= 0.0 && dt < 6 * decay) wave[i] += a * std::sin(kTwoPi * f0 * dt) * std::exp(-dt / decay);
                }
            }
            break;
        }
        case LabelClass::EYEM: {
            const double phase = uniform(rng, 0.0, kTwoPi);
            for (std::size_t i = 0; i < n; ++i) wave[i] = A * std::sin(kTwoPi * f0 * at(i) + phase);
            break;
        }
        case LabelClass::ARTF: {
            // broadband bursts with occasional spike-like transients
            double env = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (i % static_cast<std::size_t>(std::max(1.0, sr / 10.0)) == 0) env = uniform01(rng) < 0.6 ? 1.0 : 0.25;
                wave[i] = A * env * standard_normal(rng);
            }
            const double width = 1.0 / (4.0 * 12.0);
            for (int s = 0; s < ev.duration; ++s)
                if (uniform01(rng) < 0.4) {
                    const double tc = s + uniform(rng, 0.1, 0.85);
                    const double a = 1.2 * A * (uniform01(rng) < 0.5 ? 1.0 : -1.0);
                    for (std::size_t i = 0; i < n; ++i) {
                        const double dt = at(i) - tc;
                        if (dt > -5 * width && dt < 12 * width) wave[i] += a * sharp_wave(dt, width);
                    }
                }
            break;
        }
        case LabelClass::BCKG: break;
    }
    for (std::size_t i = 0; i < n && first + i < x.size(); ++i)
        x[first + i] += wave[i] + sig.noise_std * standard_normal(rng);
}

}  // namespace detail

/// Record-level roles: eval_fraction of the records for evaluation, then
/// gold_fraction of the rest as the labeled seed; the remainder is unlabeled.
inline std::vector<Role> plan_roles(std::size_t n, double eval_fraction, double gold_fraction, std::uint64_t seed) {
    const auto is_eval = split_mask(n, eval_fraction, derive_seed(seed, "roles.eval"));
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
        if (!is_eval[i]) rest.push_back(i);
    const auto is_gold = split_mask(rest.size(), gold_fraction, derive_seed(seed, "roles.gold"));
    std::vector<Role> roles(n);
    for (std::size_t i = 0; i < n; ++i) roles[i] = is_eval[i] ? Role::Eval : Role::Unlabeled;
    for (std::size_t j = 0; j < rest.size(); ++j)
        if (is_gold[j]) roles[rest[j]] = Role::GoldTrain;
    return roles;
}

/// Generates the corpus with ground-truth spans attached to every record
/// (planted events plus BCKG spans filling the gaps). Roles follow plan_roles
/// with the spec's fractions and seed; gold records draw their traits with
/// gold_variability times the usual spread.
inline Corpus generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    const auto roles = plan_roles(spec.num_records, spec.eval_fraction, spec.gold_fraction, spec.seed);
    const auto events = detail::plan_events(spec);
    const double sr = spec.sample_rate;
    const auto n = static_cast<std::size_t>(std::llround(spec.record_duration * sr));
    const auto& bg = spec.classes[index(LabelClass::BCKG)];

    Corpus corpus;
    corpus.records.resize(spec.num_records);
    for (std::size_t r = 0; r < spec.num_records; ++r) {
        auto& rec = corpus.records[r];
        rec.role = roles[r];
        auto& sig = rec.signal;
        char id[32];
        std::snprintf(id, sizeof id, "rec%04zu", r);
        sig.record_id = id;
        sig.sample_rate = sr;
        for (std::size_t ch = 0; ch < spec.num_channels; ++ch) {
            char cname[16];
            std::snprintf(cname, sizeof cname, "EEG%02zu", ch + 1);
            sig.channels.emplace_back(cname);
        }
        sig.samples.assign(spec.num_channels, std::vector<double>(n, 0.0));

        const auto traits = detail::record_traits(spec, r, rec.role == Role::GoldTrain);
        for (std::size_t ch = 0; ch < spec.num_channels; ++ch) {
            auto rng = make_rng(spec.seed, "synth.background", r * 4096 + ch);
            auto& x = sig.samples[ch];
            const double a = 0.9, gain = std::sqrt(1.0 - a * a);
            const double noise = bg.noise_std * traits.background;
            const double alpha_f = bg.base_frequency * traits.rate[index(LabelClass::BCKG)];
            const double alpha_amp = bg.amplitude * traits.amplitude[index(LabelClass::BCKG)];
            const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            const double mod_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
            double y = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / sr;
                y = a * y + gain * standard_normal(rng);
                x[i] = noise * y + alpha_amp * (0.6 + 0.4 * std::sin(2.0 * std::numbers::pi * 0.1 * t + mod_phase)) *
                                       std::sin(2.0 * std::numbers::pi * alpha_f * t + phase);
            }
        }

        std::vector<std::vector<std::pair<int, int>>> occupied(spec.num_channels);
        std::size_t ev_index = 0;
        for (const auto& ev : events) {
            ++ev_index;
            if (ev.record != r) continue;
            auto rng = make_rng(spec.seed, "synth.event", ev_index);
            detail::add_event(sig.samples[ev.channel], ev, spec.classes[index(ev.label)], traits.amplitude[index(ev.label)],
                              traits.rate[index(ev.label)], spec.event_variability, sr, rng);
            rec.spans.push_back({sig.record_id, ev.channel, static_cast<double>(ev.start),
                                 static_cast<double>(ev.start + ev.duration), ev.label});
            occupied[ev.channel].emplace_back(ev.start, ev.start + ev.duration);
        }
        for (std::size_t ch = 0; ch < spec.num_channels; ++ch) {
            auto& occ = occupied[ch];
            std::sort(occ.begin(), occ.end());
            int cursor = 0;
            for (const auto& [a, b] : occ) {
                if (a > cursor)
                    rec.spans.push_back({sig.record_id, ch, static_cast<double>(cursor), static_cast<double>(a),
                                         LabelClass::BCKG});
                cursor = std::max(cursor, b);
            }
            if (cursor < spec.record_duration)
                rec.spans.push_back({sig.record_id, ch, static_cast<double>(cursor),
                                     static_cast<double>(spec.record_duration), LabelClass::BCKG});
        }
        std::sort(rec.spans.begin(), rec.spans.end(), [](const LabelSpan& a, const LabelSpan& b) {
            return std::tie(a.channel_index, a.start) < std::tie(b.channel_index, b.start);
        });
    }
    return corpus;
}

/// Reassigns record-level roles (see plan_roles).
inline Corpus assign_roles(Corpus corpus, double eval_fraction, double gold_fraction, std::uint64_t seed) {
    const auto roles = plan_roles(corpus.size(), eval_fraction, gold_fraction, seed);
    for (std::size_t i = 0; i < corpus.size(); ++i) corpus.records[i].role = roles[i];
    return corpus;
}

}  // namespace selftrain
