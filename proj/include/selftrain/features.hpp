#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/corpus.hpp"
#include "selftrain/error.hpp"
#include "selftrain/label.hpp"
#include "selftrain/matrix.hpp"
#include "selftrain/parallel.hpp"
#include "selftrain/text.hpp"

namespace selftrain {

/// Frame-level front end: log energy, real cepstrum and differential energy.
struct FeatureConfig {
    double epoch_duration = 1.0;  // seconds
    double frame_step = 0.1;      // seconds
    double window_length = 0.2;   // seconds
    int num_cepstral = 7;
    bool include_energy = true;
    bool include_differential_energy = true;
    int differential_subwindows = 5;  // sub-windows per frame for the max-min energy spread
    double epsilon = 1e-12;           // floor inside every log

    void validate() const {
        if (!(frame_step > 0.0) || !(window_length >= frame_step))
            throw ValidationError("feature config: need window_length >= frame_step > 0");
        if (!(epoch_duration > 0.0)) throw ValidationError("feature config: epoch_duration must be positive");
        const double ratio = epoch_duration / frame_step;
        if (std::abs(ratio - std::round(ratio)) > 1e-9)
            throw ValidationError("feature config: epoch_duration must be an integer multiple of frame_step");
        if (num_cepstral < 0) throw ValidationError("feature config: num_cepstral must be >= 0");
        if (differential_subwindows < 2) throw ValidationError("feature config: differential_subwindows must be >= 2");
        if (dim() == 0) throw ValidationError("feature config: empty feature vector");
    }

    std::size_t frames_per_epoch() const {
        return static_cast<std::size_t>(std::llround(epoch_duration / frame_step));
    }

    std::size_t dim() const {
        return static_cast<std::size_t>(num_cepstral) + (include_energy ? 1 : 0) +
               (include_differential_energy ? 1 : 0);
    }

    /// Identifies the feature space; models refuse epochs with a different fingerprint.
    std::string fingerprint() const {
        return "D=" + std::to_string(dim()) + ";T=" + std::to_string(frames_per_epoch()) +
               ";epoch=" + text::fmt_g(epoch_duration, 12) + ";step=" + text::fmt_g(frame_step, 12) +
               ";win=" + text::fmt_g(window_length, 12) + ";cep=" + std::to_string(num_cepstral) +
               ";E=" + (include_energy ? "1" : "0") + ";DE=" + (include_differential_energy ? "1" : "0") +
               ";sub=" + std::to_string(differential_subwindows) + ";eps=" + text::fmt_g(epsilon, 6);
    }
};

/// Stable identity of an epoch across files and iterations.
struct EpochKey {
    std::string record_id;
    std::size_t channel_index = 0;
    double start = 0.0;

    friend auto operator<=>(const EpochKey&, const EpochKey&) = default;
    friend bool operator==(const EpochKey&, const EpochKey&) = default;
};

inline std::string describe(const EpochKey& k) {
    return k.record_id + "[ch " + std::to_string(k.channel_index) + "]@" + text::fmt_seconds(k.start);
}

struct AutoLabel {
    LabelClass label = LabelClass::BCKG;
    double confidence = 0.0;
};

/// How an epoch entered the training pool. iteration 0 means gold.
struct Provenance {
    enum class Kind { None, Gold, Auto } kind = Kind::None;
    int iteration = 0;
};

struct Epoch {
    std::string record_id;
    std::size_t channel_index = 0;
    double start = 0.0;
    Matrix frames;  // T x D
    std::optional<LabelClass> gold_label;
    std::optional<AutoLabel> auto_label;
    Provenance provenance;

    EpochKey key() const { return {record_id, channel_index, start}; }
};

/// Non-overlapping per-channel epochs from t = 0; a trailing partial epoch is dropped.
inline std::vector<Epoch> segment(const SignalRecord& record, const FeatureConfig& cfg) {
    cfg.validate();
    const double dur = record.duration();
    const auto n = static_cast<std::size_t>(std::floor(dur / cfg.epoch_duration + 1e-9));
    if (n == 0)
        throw FeatureError("record " + record.record_id + " (" + text::fmt_seconds(dur) +
                           " s) is shorter than one epoch");
    std::vector<Epoch> out;
    out.reserve(n * record.num_channels());
    for (std::size_t ch = 0; ch < record.num_channels(); ++ch)
        for (std::size_t k = 0; k < n; ++k) {
            Epoch e;
            e.record_id = record.record_id;
            e.channel_index = ch;
            e.start = static_cast<double>(k) * cfg.epoch_duration;
            out.push_back(std::move(e));
        }
    return out;
}

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

/// Precomputed tables for one (window, fft size, cepstral order) combination.
struct FrameKernel {
    std::size_t window = 0;
    std::size_t nfft = 0;
    std::vector<double> hamming;
    std::vector<double> cos_table;  // cos(2*pi*j/nfft)
    std::vector<double> sin_table;

    FrameKernel(std::size_t window_samples) : window(window_samples), nfft(next_pow2(window_samples)) {
        hamming.resize(window);
        for (std::size_t i = 0; i < window; ++i)
            hamming[i] = window == 1 ? 1.0
                                     : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                              static_cast<double>(window - 1));
        cos_table.resize(nfft);
        sin_table.resize(nfft);
        for (std::size_t j = 0; j < nfft; ++j) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(nfft);
            cos_table[j] = std::cos(a);
            sin_table[j] = std::sin(a);
        }
    }

    /// Real cepstrum coefficients c_1..c_count of a windowed frame.
    void cepstrum(std::span<const double> x, double eps, std::span<double> out) const {
        const std::size_t half = nfft / 2;
        std::vector<double> log_mag(half + 1);
        for (std::size_t k = 0; k <= half; ++k) {
            double re = 0.0, im = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double v = x[i] * hamming[i];
                const std::size_t j = (k * i) % nfft;
                re += v * cos_table[j];
                im -= v * sin_table[j];
            }
            log_mag[k] = 0.5 * std::log(re * re + im * im + eps);
        }
        // log|X| is real and even, so the inverse transform is a cosine sum over the half spectrum.
        for (std::size_t n = 0; n < out.size(); ++n) {
            const std::size_t q = n + 1;
            double acc = log_mag[0] + log_mag[half] * ((q % 2 == 0) ? 1.0 : -1.0);
            for (std::size_t k = 1; k < half; ++k) acc += 2.0 * log_mag[k] * cos_table[(k * q) % nfft];
            out[n] = acc / static_cast<double>(nfft);
        }
    }
};

inline double log_energy(std::span<const double> x, double eps) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::log(s + eps);
}

}  // namespace detail

/// Fills `epoch.frames` from `record`. Windows read forward from each frame start
/// and are zero-padded past the end of the record.
inline Epoch extract_frames(const SignalRecord& record, Epoch epoch, const FeatureConfig& cfg) {
    cfg.validate();
    if (epoch.record_id != record.record_id || epoch.channel_index >= record.num_channels() ||
        epoch.start < 0.0 || epoch.start + cfg.epoch_duration > record.duration() + 1e-9)
        throw FeatureError("epoch " + describe(epoch.key()) + " lies outside record " + record.record_id);

    const double sr = record.sample_rate;
    const auto window = static_cast<std::size_t>(std::llround(cfg.window_length * sr));
    if (window < static_cast<std::size_t>(cfg.differential_subwindows))
        throw FeatureError("window of " + std::to_string(window) + " samples is too short for the sample rate");
    const auto T = cfg.frames_per_epoch();
    const auto D = cfg.dim();
    const detail::FrameKernel kernel(window);
    const auto& signal = record.samples[epoch.channel_index];
    const auto first = static_cast<std::size_t>(std::llround(epoch.start * sr));

    epoch.frames = Matrix(T, D);
    std::vector<double> buf(window);
    std::vector<double> cep(static_cast<std::size_t>(cfg.num_cepstral));
    const std::size_t sub = window / static_cast<std::size_t>(cfg.differential_subwindows);
    for (std::size_t t = 0; t < T; ++t) {
        const auto begin = first + static_cast<std::size_t>(std::llround(static_cast<double>(t) * cfg.frame_step * sr));
        for (std::size_t i = 0; i < window; ++i) {
            const auto idx = begin + i;
            const double v = idx < signal.size() ? signal[idx] : 0.0;
            if (!std::isfinite(v))
                throw FeatureError("non-finite sample in epoch " + describe(epoch.key()));
            buf[i] = v;
        }
        auto row = epoch.frames.row(t);
        std::size_t col = 0;
        if (cfg.include_energy) row[col++] = detail::log_energy(buf, cfg.epsilon);
        if (cfg.num_cepstral > 0) {
            kernel.cepstrum(buf, cfg.epsilon, cep);
            for (double c : cep) row[col++] = c;
        }
        if (cfg.include_differential_energy) {
            double lo = std::numeric_limits<double>::infinity();
            double hi = -lo;
            for (int j = 0; j < cfg.differential_subwindows; ++j) {
                const auto e = detail::log_energy(std::span<const double>(buf).subspan(j * sub, sub), cfg.epsilon);
                lo = std::min(lo, e);
                hi = std::max(hi, e);
            }
            row[col++] = hi - lo;
        }
        for (double v : row)
            if (!std::isfinite(v)) throw FeatureError("non-finite feature in epoch " + describe(epoch.key()));
    }
    return epoch;
}

namespace detail {

/// Length of the union of [a, b) intervals clipped to [lo, hi).
inline double covered_length(std::vector<std::pair<double, double>> iv, double lo, double hi) {
    for (auto& [a, b] : iv) {
        a = std::max(a, lo);
        b = std::min(b, hi);
    }
    std::sort(iv.begin(), iv.end());
    double total = 0.0, cur_a = 0.0, cur_b = 0.0;
    bool open = false;
    for (const auto& [a, b] : iv) {
        if (b <= a) continue;
        if (!open || a > cur_b) {
            if (open) total += cur_b - cur_a;
            cur_a = a;
            cur_b = b;
            open = true;
        } else {
            cur_b = std::max(cur_b, b);
        }
    }
    if (open) total += cur_b - cur_a;
    return total;
}

}  // namespace detail

/// Assigns each epoch the class whose spans cover at least `min_overlap` of it.
/// Larger coverage wins; equal coverage goes to the rarer class. Epochs with no
/// qualifying class become BCKG.
inline std::vector<Epoch> label_epochs(std::vector<Epoch> epochs, const std::vector<LabelSpan>& spans,
                                       double min_overlap, double epoch_duration = 1.0) {
    if (!(min_overlap > 0.0 && min_overlap <= 1.0)) throw ValidationError("min_overlap must lie in (0, 1]");
    std::map<std::pair<std::string, std::size_t>, std::vector<const LabelSpan*>> by_track;
    for (const auto& s : spans) by_track[{s.record_id, s.channel_index}].push_back(&s);

    for (auto& e : epochs) {
        const double lo = e.start, hi = e.start + epoch_duration;
        PerClass<std::vector<std::pair<double, double>>> per_class;
        if (auto it = by_track.find({e.record_id, e.channel_index}); it != by_track.end())
            for (const auto* s : it->second)
                if (s->stop > lo && s->start < hi) per_class[index(s->label)].emplace_back(s->start, s->stop);

        std::optional<LabelClass> best;
        double best_cov = 0.0;
        for (auto c : kRarityOrder) {  // rarer classes first, so strict '>' keeps them on ties
            if (per_class[index(c)].empty()) continue;
            const double cov = detail::covered_length(per_class[index(c)], lo, hi);
            if (cov + 1e-9 < min_overlap * epoch_duration) continue;
            if (!best || cov > best_cov + 1e-12) {
                best = c;
                best_cov = cov;
            }
        }
        e.gold_label = best.value_or(LabelClass::BCKG);
    }
    return epochs;
}

/// Segments, featurizes and (when the record carries spans) labels one record.
inline std::vector<Epoch> featurize_record(const CorpusRecord& rec, const FeatureConfig& cfg, double min_overlap,
                                           bool attach_gold) {
    auto epochs = segment(rec.signal, cfg);
    for (auto& e : epochs) e = extract_frames(rec.signal, std::move(e), cfg);
    if (attach_gold) epochs = label_epochs(std::move(epochs), rec.spans, min_overlap, cfg.epoch_duration);
    return epochs;
}

/// Featurizes every record, in record order, using up to `jobs` threads.
inline std::vector<Epoch> featurize(const std::vector<const CorpusRecord*>& records, const FeatureConfig& cfg,
                                    double min_overlap, bool attach_gold, std::size_t jobs = 1) {
    std::vector<std::vector<Epoch>> parts(records.size());
    parallel_for(records.size(), jobs,
                 [&](std::size_t i) { parts[i] = featurize_record(*records[i], cfg, min_overlap, attach_gold); });
    std::vector<Epoch> out;
    for (auto& p : parts)
        for (auto& e : p) out.push_back(std::move(e));
    return out;
}

// ---------------------------------------------------------------------------
// Epoch cache: `record_id,channel,start_s,label_code_or_0,conf_or_0,f_1,...,f_{T*D}`.

inline std::string write_epoch_cache(const std::vector<Epoch>& epochs) {
    std::string out;
    for (const auto& e : epochs) {
        int lc = 0;
        double conf = 0.0;
        if (e.gold_label) {
            lc = code(*e.gold_label);
        } else if (e.auto_label) {
            lc = code(e.auto_label->label);
            conf = e.auto_label->confidence;
        }
        out += e.record_id + "," + std::to_string(e.channel_index) + "," + text::fmt_seconds(e.start) + "," +
               std::to_string(lc) + "," + text::fmt_g(conf, 9);
        for (double v : e.frames.data()) {
            out += ',';
            out += text::fmt_g(v, 9);
        }
        out += '\n';
    }
    return out;
}

/// Inverse of write_epoch_cache. Label codes come back as gold labels when
/// the confidence column is 0, otherwise as auto labels.
inline std::vector<Epoch> read_epoch_cache(std::string_view content, const FeatureConfig& cfg) {
    const auto T = cfg.frames_per_epoch(), D = cfg.dim();
    std::vector<Epoch> out;
    std::size_t lineno = 0;
    for (auto line : text::lines(content)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        const auto f = text::split(line, ',');
        const auto where = "epoch cache line " + std::to_string(lineno);
        if (f.size() != 5 + T * D) throw FormatError(where + ": expected " + std::to_string(5 + T * D) + " fields");
        Epoch e;
        e.record_id = std::string(f[0]);
        const auto ch = text::parse_int<std::size_t>(f[1]);
        const auto start = text::parse_double(f[2]);
        const auto lc = text::parse_int<int>(f[3]);
        const auto conf = text::parse_double(f[4]);
        if (!ch || !start || !lc || !conf) throw FormatError(where + ": malformed header fields");
        e.channel_index = *ch;
        e.start = *start;
        if (*lc != 0) {
            const auto label = from_code(*lc);
            if (!label) throw FormatError(where + ": unknown label code");
            if (*conf == 0.0) e.gold_label = *label;
            else e.auto_label = AutoLabel{*label, *conf};
        }
        e.frames = Matrix(T, D);
        auto data = e.frames.data();
        for (std::size_t i = 0; i < T * D; ++i) {
            const auto v = text::parse_double(f[5 + i]);
            if (!v) throw FormatError(where + ": malformed feature value");
            data[i] = *v;
        }
        out.push_back(std::move(e));
    }
    return out;
}

}  // namespace selftrain
