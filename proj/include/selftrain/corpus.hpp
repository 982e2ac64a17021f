#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/error.hpp"
#include "selftrain/label.hpp"
#include "selftrain/rng.hpp"
#include "selftrain/text.hpp"

namespace selftrain {

inline constexpr double kDefaultSampleRate = 250.0;

struct SignalRecord {
    std::string record_id;
    double sample_rate = kDefaultSampleRate;
    std::vector<std::string> channels;
    std::vector<std::vector<double>> samples;  // [channel][sample], microvolts

    std::size_t num_channels() const noexcept { return channels.size(); }
    std::size_t num_samples() const noexcept { return samples.empty() ? 0 : samples.front().size(); }
    double duration() const noexcept { return static_cast<double>(num_samples()) / sample_rate; }

    void validate(double min_duration = 0.0) const {
        if (!(sample_rate > 0.0))
            throw ValidationError("record " + record_id + ": sample_rate must be positive");
        if (channels.empty() || samples.size() != channels.size())
            throw ValidationError("record " + record_id + ": channel names and sample rows disagree");
        for (const auto& ch : samples)
            if (ch.size() != num_samples())
                throw ValidationError("record " + record_id + ": channels have unequal length");
        if (num_samples() == 0 || duration() + 1e-9 < min_duration)
            throw ValidationError("record " + record_id + ": shorter than one epoch");
    }
};

struct LabelSpan {
    std::string record_id;
    std::size_t channel_index = 0;
    double start = 0.0;
    double stop = 0.0;
    LabelClass label = LabelClass::BCKG;

    double duration() const noexcept { return stop - start; }
    friend bool operator==(const LabelSpan&, const LabelSpan&) = default;
};

inline std::string describe(const LabelSpan& s) {
    return s.record_id + "[ch " + std::to_string(s.channel_index) + "] " + text::fmt_seconds(s.start) +
           "-" + text::fmt_seconds(s.stop) + " " + std::string(name(s.label));
}

/// Throws ValidationError unless the span fits inside `record`.
inline void validate_span(const LabelSpan& span, const SignalRecord& record) {
    if (span.record_id != record.record_id)
        throw ValidationError("span " + describe(span) + " does not belong to record " + record.record_id);
    if (span.channel_index >= record.num_channels())
        throw ValidationError("span " + describe(span) + " in record " + record.record_id +
                              ": channel index out of range");
    if (!(span.start >= 0.0 && span.start < span.stop && span.stop <= record.duration() + 1e-9))
        throw ValidationError("span " + describe(span) + " in record " + record.record_id +
                              ": outside record duration " + text::fmt_seconds(record.duration()));
}

enum class Role { GoldTrain, Eval, Unlabeled };

inline std::string_view role_name(Role r) {
    switch (r) {
        case Role::GoldTrain: return "gold-train";
        case Role::Eval: return "eval";
        case Role::Unlabeled: return "unlabeled";
    }
    return "?";
}

inline std::optional<Role> role_from_name(std::string_view s) {
    for (auto r : {Role::GoldTrain, Role::Eval, Role::Unlabeled})
        if (role_name(r) == s) return r;
    return std::nullopt;
}

struct ManifestEntry {
    Role role = Role::Unlabeled;
    std::filesystem::path signal_path;
    std::optional<std::filesystem::path> label_path;
};

/// Line-oriented manifest: `role<TAB>signal_path<TAB>[label_path]`.
/// A `sample_rate<TAB>Hz` line declares the sampling rate; '#' starts a comment.
struct CorpusManifest {
    double sample_rate = kDefaultSampleRate;
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;  // relative paths resolve against this

    void validate() const {
        for (const auto& e : entries) {
            if (e.role != Role::Unlabeled && !e.label_path)
                throw ValidationError("manifest: " + std::string(role_name(e.role)) + " entry " +
                                      e.signal_path.string() + " has no label file");
            if (e.role == Role::Unlabeled && e.label_path)
                throw ValidationError("manifest: unlabeled entry " + e.signal_path.string() +
                                      " must not have a label file");
        }
    }
};

inline CorpusManifest parse_manifest(std::string_view content, std::filesystem::path base_dir = {}) {
    CorpusManifest m;
    m.base_dir = std::move(base_dir);
    std::size_t lineno = 0;
    for (auto raw : text::lines(content)) {
        ++lineno;
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto fields = text::split(line, '\t');
        if (fields.front() == "sample_rate") {
            const auto sr = fields.size() == 2 ? text::parse_double(fields[1]) : std::nullopt;
            if (!sr || !(*sr > 0.0))
                throw ValidationError("manifest line " + std::to_string(lineno) + ": bad sample_rate");
            m.sample_rate = *sr;
            continue;
        }
        const auto role = role_from_name(text::trim(fields.front()));
        if (!role || fields.size() < 2 || fields.size() > 3)
            throw ValidationError("manifest line " + std::to_string(lineno) + ": expected role<TAB>signal[<TAB>labels]");
        ManifestEntry e;
        e.role = *role;
        e.signal_path = std::string(text::trim(fields[1]));
        if (fields.size() == 3 && !text::trim(fields[2]).empty()) e.label_path = std::string(text::trim(fields[2]));
        m.entries.push_back(std::move(e));
    }
    m.validate();
    return m;
}

inline CorpusManifest read_manifest(const std::filesystem::path& path) {
    return parse_manifest(text::read_file(path), path.parent_path());
}

inline std::string format_manifest(const CorpusManifest& m) {
    std::string out = "sample_rate\t" + text::fmt_g(m.sample_rate, 12) + "\n";
    for (const auto& e : m.entries) {
        out += std::string(role_name(e.role)) + "\t" + e.signal_path.generic_string();
        if (e.label_path) out += "\t" + e.label_path->generic_string();
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Signal CSV: header `time,<ch1>,...,<chN>`, one row per sample.

inline std::string format_signal_csv(const SignalRecord& r) {
    std::string out = "time";
    for (const auto& ch : r.channels) out += "," + ch;
    out += "\n";
    const auto n = r.num_samples();
    out.reserve(out.size() + n * (12 + 12 * r.num_channels()));
    for (std::size_t i = 0; i < n; ++i) {
        out += text::fmt_g(static_cast<double>(i) / r.sample_rate, 9);
        for (const auto& ch : r.samples) {
            out += ',';
            out += text::fmt_g(ch[i], 9);
        }
        out += '\n';
    }
    return out;
}

inline SignalRecord parse_signal_csv(std::string_view content, std::string record_id, double sample_rate,
                                     const std::string& origin = "<memory>") {
    const auto rows = text::lines(content);
    if (rows.empty()) throw IngestionError("signal file " + origin + " is empty");
    const auto header = text::split(rows.front(), ',');
    if (header.size() < 2 || text::trim(header.front()) != "time")
        throw IngestionError("signal file " + origin + ": header must be time,<channels...>");
    SignalRecord r;
    r.record_id = std::move(record_id);
    r.sample_rate = sample_rate;
    for (std::size_t c = 1; c < header.size(); ++c) r.channels.emplace_back(text::trim(header[c]));
    r.samples.assign(r.channels.size(), {});
    for (auto& ch : r.samples) ch.reserve(rows.size());
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (text::trim(rows[i]).empty()) continue;
        const auto f = text::split(rows[i], ',');
        if (f.size() != header.size())
            throw IngestionError("signal file " + origin + " row " + std::to_string(i + 1) + ": wrong field count");
        for (std::size_t c = 1; c < f.size(); ++c) {
            const auto v = text::parse_double(f[c]);
            if (!v) throw IngestionError("signal file " + origin + " row " + std::to_string(i + 1) + ": bad number");
            r.samples[c - 1].push_back(*v);
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Label CSV: `record_id,channel_index,start_s,stop_s,label_code`, no header.

inline std::string format_label_row(const LabelSpan& s) {
    return s.record_id + "," + std::to_string(s.channel_index) + "," + text::fmt_seconds(s.start) + "," +
           text::fmt_seconds(s.stop) + "," + std::to_string(code(s.label));
}

inline std::string write_labels(const std::vector<LabelSpan>& spans) {
    std::string out;
    for (const auto& s : spans) out += format_label_row(s) + "\n";
    return out;
}

inline std::vector<LabelSpan> load_labels(std::string_view content, const std::string& origin = "<memory>") {
    std::vector<LabelSpan> spans;
    std::size_t lineno = 0;
    for (auto raw : text::lines(content)) {
        ++lineno;
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#' || line.starts_with("record_id,")) continue;
        const auto f = text::split(line, ',');
        const auto where = "label file " + origin + " line " + std::to_string(lineno);
        if (f.size() != 5) throw ValidationError(where + ": expected 5 fields");
        const auto ch = text::parse_int<std::size_t>(f[1]);
        const auto start = text::parse_double(f[2]);
        const auto stop = text::parse_double(f[3]);
        const auto lc = text::parse_int<int>(f[4]);
        if (!ch || !start || !stop || !lc) throw ValidationError(where + ": malformed field");
        const auto label = from_code(*lc);
        if (!label) throw ValidationError(where + ": unknown label code " + std::string(text::trim(f[4])));
        spans.push_back({std::string(text::trim(f[0])), *ch, *start, *stop, *label});
    }
    return spans;
}

// ---------------------------------------------------------------------------

struct CorpusRecord {
    SignalRecord signal;
    std::vector<LabelSpan> spans;
    Role role = Role::Unlabeled;
};

/// Records grouped by role. Immutable once built; share freely across threads.
struct Corpus {
    std::vector<CorpusRecord> records;

    std::vector<const CorpusRecord*> with_role(Role role) const {
        std::vector<const CorpusRecord*> out;
        for (const auto& r : records)
            if (r.role == role) out.push_back(&r);
        return out;
    }

    Corpus subset(Role role) const {
        Corpus c;
        for (const auto& r : records)
            if (r.role == role) c.records.push_back(r);
        return c;
    }

    std::size_t size() const noexcept { return records.size(); }
};

/// Total labeled seconds per class.
inline PerClass<double> class_durations(const Corpus& corpus) {
    PerClass<double> out{};
    for (const auto& r : corpus.records)
        for (const auto& s : r.spans) out[index(s.label)] += s.duration();
    return out;
}

inline std::filesystem::path resolve(const CorpusManifest& m, const std::filesystem::path& p) {
    return p.is_absolute() || m.base_dir.empty() ? p : m.base_dir / p;
}

/// Reads every record and label file named by the manifest and validates spans.
inline Corpus load_corpus(const CorpusManifest& manifest) {
    manifest.validate();
    Corpus corpus;
    std::set<std::string> seen;
    for (const auto& e : manifest.entries) {
        const auto sig_path = resolve(manifest, e.signal_path);
        if (!std::filesystem::exists(sig_path)) throw IngestionError("missing signal file: " + sig_path.string());
        CorpusRecord rec;
        rec.role = e.role;
        rec.signal = parse_signal_csv(text::read_file(sig_path), e.signal_path.stem().string(), manifest.sample_rate,
                                      sig_path.string());
        rec.signal.validate();
        if (!seen.insert(rec.signal.record_id).second)
            throw ValidationError("record " + rec.signal.record_id + " appears more than once in the manifest");
        if (e.label_path) {
            const auto lab_path = resolve(manifest, *e.label_path);
            if (!std::filesystem::exists(lab_path)) throw IngestionError("missing label file: " + lab_path.string());
            rec.spans = load_labels(text::read_file(lab_path), lab_path.string());
            for (const auto& s : rec.spans) validate_span(s, rec.signal);
        }
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

/// Seeded choice of round(n * fraction) items out of n; true marks the chosen side.
inline std::vector<bool> split_mask(std::size_t n, double fraction, std::uint64_t seed) {
    if (n < 2) throw SplitError("split needs at least 2 records, got " + std::to_string(n));
    if (!(fraction > 0.0 && fraction < 1.0)) throw SplitError("split fraction must lie in (0, 1)");
    const auto k = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction + 0.5));
    if (k == 0 || k == n)
        throw SplitError("split fraction " + text::fmt_g(fraction, 6) + " leaves one side of the split empty");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto rng = make_rng(seed, "corpus.split");
    for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(rng, i + 1)]);
    std::vector<bool> mask(n, false);
    for (std::size_t i = 0; i < k; ++i) mask[order[i]] = true;
    return mask;
}

/// Record-level partition into (train, eval). Never splits a record's spans.
inline std::pair<Corpus, Corpus> split(const Corpus& corpus, double eval_fraction, std::uint64_t seed) {
    const auto is_eval = split_mask(corpus.size(), eval_fraction, seed);
    std::pair<Corpus, Corpus> out;
    for (std::size_t i = 0; i < corpus.size(); ++i)
        (is_eval[i] ? out.second : out.first).records.push_back(corpus.records[i]);
    return out;
}

}  // namespace selftrain
