#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "selftrain/error.hpp"
#include "selftrain/features.hpp"
#include "selftrain/hmm.hpp"
#include "selftrain/label.hpp"
#include "selftrain/parallel.hpp"
#include "selftrain/text.hpp"

namespace selftrain {

struct HmmConfig {
    std::size_t num_states = 5;
    std::size_t num_mixtures = 8;
    int max_iters = 20;
    double tol = 1e-5;
    double variance_floor_scale = 1e-3;
};

/// One trained model per class over a shared feature space.
struct ModelSet {
    PerClass<GmmHmm> models;
    std::string fingerprint;

    const GmmHmm& operator[](LabelClass c) const { return models[index(c)]; }
    GmmHmm& operator[](LabelClass c) { return models[index(c)]; }

    std::size_t dim() const { return models.front().dim; }

    void validate() const {
        for (auto c : kAllClasses) {
            const auto& m = models[index(c)];
            if (m.label != c) throw ValidationError("model set slot " + std::string(name(c)) + " holds another class");
            if (m.dim != dim()) throw ValidationError("model set: feature dimensions differ between classes");
            m.validate();
        }
    }
};

/// Scoring view of a ModelSet: emission constants computed once.
class Decoder {
public:
    explicit Decoder(const ModelSet& set)
        : set_(&set),
          prepared_{PreparedModel(set.models[0]), PreparedModel(set.models[1]), PreparedModel(set.models[2]),
                    PreparedModel(set.models[3]), PreparedModel(set.models[4]), PreparedModel(set.models[5])} {}

    const ModelSet& models() const { return *set_; }

    PerClass<double> scores(const Matrix& frames) const {
        PerClass<double> out{};
        for (std::size_t c = 0; c < kNumClasses; ++c) out[c] = log_likelihood(prepared_[c], frames);
        return out;
    }

private:
    const ModelSet* set_;
    std::array<PreparedModel, kNumClasses> prepared_;
};

/// Argmax over classes; ties go to the rarer class (SPSW first).
inline LabelClass argmax_class(const PerClass<double>& ll) {
    std::optional<LabelClass> best;
    for (auto c : kRarityOrder)
        if (!best || ll[index(c)] > ll[index(*best)]) best = c;
    return *best;
}

struct Classification {
    PerClass<double> log_likelihoods{};
    LabelClass best = LabelClass::BCKG;
};

inline void check_fingerprint(const ModelSet& models, const std::string& epoch_fingerprint) {
    if (models.fingerprint != epoch_fingerprint)
        throw DecodeError("feature fingerprint mismatch: models '" + models.fingerprint + "' vs epochs '" +
                          epoch_fingerprint + "'");
}

inline Classification classify(const Decoder& dec, const Epoch& epoch) {
    Classification c;
    c.log_likelihoods = dec.scores(epoch.frames);
    c.best = argmax_class(c.log_likelihoods);
    return c;
}

inline Classification classify(const ModelSet& models, const Epoch& epoch, const std::string& epoch_fingerprint) {
    check_fingerprint(models, epoch_fingerprint);
    return classify(Decoder(models), epoch);
}

struct ConfidenceScore {
    double value = kNegInf;
    LabelClass label = LabelClass::BCKG;
};

/// Length-normalized log posterior of the winning class:
/// (l_win - logsumexp(l)) / T. Lies in (-inf, 0].
inline ConfidenceScore confidence(const PerClass<double>& ll, std::size_t frames) {
    if (frames == 0) throw ConfidenceError("confidence: frame count must be positive");
    for (double v : ll)
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
            throw ConfidenceError("confidence: log-likelihoods must be finite or -inf");
    const double total = log_sum_exp(std::span<const double>(ll));
    if (total == kNegInf) throw ConfidenceError("confidence: every class log-likelihood is -inf");
    ConfidenceScore s;
    s.label = argmax_class(ll);
    const double win = ll[index(s.label)];
    double rest = 0.0;
    for (std::size_t i = 0; i < kNumClasses; ++i)
        if (i != index(s.label) && ll[i] != kNegInf) rest += std::exp(ll[i] - win);
    s.value = std::min(0.0, -std::log1p(rest) / static_cast<double>(frames));
    return s;
}

struct Decoded {
    std::size_t epoch = 0;  // index into the caller's epoch list
    LabelClass label = LabelClass::BCKG;
    double confidence = kNegInf;
    double log_likelihood = kNegInf;  // raw log p(frames | winning model)
};

/// Decodes every epoch in `indices` (parallel over epochs; order of output follows `indices`).
inline std::vector<Decoded> decode(const ModelSet& models, const std::vector<Epoch>& epochs,
                                   const std::vector<std::size_t>& indices, const std::string& epoch_fingerprint,
                                   std::size_t jobs = 1) {
    check_fingerprint(models, epoch_fingerprint);
    const Decoder dec(models);
    std::vector<Decoded> out(indices.size());
    parallel_for(indices.size(), jobs, [&](std::size_t i) {
        const auto& e = epochs[indices[i]];
        const auto c = classify(dec, e);
        const auto conf = confidence(c.log_likelihoods, e.frames.rows());
        out[i] = {indices[i], conf.label, conf.value, c.log_likelihoods[index(conf.label)]};
    });
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct ClassTrainingResult {
    GmmHmm model;
    std::vector<double> history;
    std::size_t dropped_mixtures = 0;
};

/// init_model followed by Baum-Welch.
inline ClassTrainingResult train_class(LabelClass label, std::span<const Matrix* const> sequences, const HmmConfig& cfg,
                                       std::uint64_t seed, std::span<const double> var_floor) {
    if (sequences.empty()) throw TrainingError("no training epochs for class " + std::string(name(label)));
    auto init = init_model(label, sequences, cfg.num_states, cfg.num_mixtures, seed, var_floor);
    auto bw = baum_welch(std::move(init), sequences, cfg.max_iters, cfg.tol);
    return {std::move(bw.model), std::move(bw.history), bw.dropped_mixtures};
}

// ---------------------------------------------------------------------------
// Model file: versioned nested key-value text, floats at 17 significant digits.

inline constexpr int kModelFormatVersion = 1;

namespace detail {

inline void put_row(std::string& out, const std::string& key, std::span<const double> v) {
    out += key;
    for (double x : v) out += " " + text::fmt17(x);
    out += "\n";
}

}  // namespace detail

inline std::string format_model_set(const ModelSet& set) {
    std::string out = "selftrain-models\n";
    out += "format_version " + std::to_string(kModelFormatVersion) + "\n";
    out += "feature_fingerprint " + set.fingerprint + "\n";
    out += "feature_dim " + std::to_string(set.dim()) + "\n";
    for (const auto& m : set.models) {
        out += "model {\n";
        out += "  class " + std::string(name(m.label)) + "\n";
        out += "  S " + std::to_string(m.num_states) + "\n";
        out += "  M " + std::to_string(m.num_mixtures) + "\n";
        out += "  D " + std::to_string(m.dim) + "\n";
        detail::put_row(out, "  pi", m.initial);
        for (std::size_t i = 0; i < m.num_states; ++i) detail::put_row(out, "  A " + std::to_string(i), m.transitions.row(i));
        for (std::size_t s = 0; s < m.num_states; ++s) detail::put_row(out, "  w " + std::to_string(s), m.weights.row(s));
        for (std::size_t s = 0; s < m.num_states; ++s)
            for (std::size_t k = 0; k < m.num_mixtures; ++k)
                detail::put_row(out, "  mu " + std::to_string(s) + " " + std::to_string(k), m.mean(s, k));
        for (std::size_t s = 0; s < m.num_states; ++s)
            for (std::size_t k = 0; k < m.num_mixtures; ++k)
                detail::put_row(out, "  var " + std::to_string(s) + " " + std::to_string(k), m.var(s, k));
        detail::put_row(out, "  var_floor", m.variance_floor);
        out += "}\n";
    }
    out += "end\n";
    return out;
}

namespace detail {

class ModelReader {
public:
    explicit ModelReader(std::string_view content) : lines_(text::lines(content)) {}

    std::vector<std::string_view> next() {
        while (pos_ < lines_.size()) {
            auto toks = text::split_ws(lines_[pos_++]);
            if (!toks.empty()) return toks;
        }
        throw FormatError("model file truncated at line " + std::to_string(pos_));
    }

    std::vector<std::string_view> expect(std::string_view key, std::size_t min_tokens) {
        auto toks = next();
        if (toks.front() != key || toks.size() < min_tokens)
            throw FormatError("model file line " + std::to_string(pos_) + ": expected '" + std::string(key) + "'");
        return toks;
    }

    std::size_t expect_count(std::string_view key) {
        const auto toks = expect(key, 2);
        const auto v = text::parse_int<std::size_t>(toks[1]);
        if (!v || toks.size() != 2) throw FormatError("model file line " + std::to_string(pos_) + ": bad " + std::string(key));
        return *v;
    }

    /// Reads `key [idx...] v1..vn` into out; the index tokens must match `idx`.
    void expect_row(std::string_view key, std::initializer_list<std::size_t> idx, std::span<double> out) {
        const auto toks = expect(key, 1 + idx.size() + out.size());
        if (toks.size() != 1 + idx.size() + out.size())
            throw FormatError("model file line " + std::to_string(pos_) + ": wrong value count for " + std::string(key));
        std::size_t t = 1;
        for (auto i : idx) {
            const auto v = text::parse_int<std::size_t>(toks[t++]);
            if (!v || *v != i) throw FormatError("model file line " + std::to_string(pos_) + ": index mismatch");
        }
        for (auto& x : out) {
            const auto v = text::parse_double(toks[t++]);
            if (!v) throw FormatError("model file line " + std::to_string(pos_) + ": bad number");
            x = *v;
        }
    }

private:
    std::vector<std::string_view> lines_;
    std::size_t pos_ = 0;
};

}  // namespace detail

/// Parses a model file. Nothing is returned unless the whole file is valid.
/// When `expected_fingerprint` is given it must match the file's.
inline ModelSet parse_model_set(std::string_view content, const std::optional<std::string>& expected_fingerprint = {}) {
    detail::ModelReader rd(content);
    if (rd.next().front() != "selftrain-models") throw FormatError("not a selftrain model file");
    const auto version = rd.expect_count("format_version");
    if (version != static_cast<std::size_t>(kModelFormatVersion))
        throw FormatError("model file format_version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kModelFormatVersion) + ")");
    ModelSet set;
    const auto fp = rd.expect("feature_fingerprint", 2);
    set.fingerprint = std::string(fp[1]);
    const auto D = rd.expect_count("feature_dim");
    if (expected_fingerprint && *expected_fingerprint != set.fingerprint)
        throw FormatError("model feature fingerprint '" + set.fingerprint + "' does not match '" + *expected_fingerprint +
                          "'");
    for (auto c : kAllClasses) {
        rd.expect("model", 2);
        const auto cls = rd.expect("class", 2);
        if (from_name(cls[1]) != c) throw FormatError("model file: models out of order or unknown class");
        const auto S = rd.expect_count("S");
        const auto M = rd.expect_count("M");
        const auto d = rd.expect_count("D");
        if (d != D) throw FormatError("model file: class " + std::string(name(c)) + " has D=" + std::to_string(d) +
                                      " but the file declares feature_dim " + std::to_string(D));
        if (S == 0 || M == 0 || S > 1000 || M > 1000) throw FormatError("model file: implausible S or M");
        GmmHmm m(c, S, M, D);
        rd.expect_row("pi", {}, m.initial);
        for (std::size_t i = 0; i < S; ++i) rd.expect_row("A", {i}, m.transitions.row(i));
        for (std::size_t s = 0; s < S; ++s) rd.expect_row("w", {s}, m.weights.row(s));
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t k = 0; k < M; ++k) rd.expect_row("mu", {s, k}, m.mean(s, k));
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t k = 0; k < M; ++k) rd.expect_row("var", {s, k}, m.var(s, k));
        rd.expect_row("var_floor", {}, m.variance_floor);
        rd.expect("}", 1);
        set[c] = std::move(m);
    }
    rd.expect("end", 1);
    try {
        set.validate();
    } catch (const ValidationError& e) {
        throw FormatError(std::string("model file: ") + e.what());
    }
    return set;
}

inline void save_model_set(const ModelSet& set, const std::filesystem::path& path) {
    text::write_file(path, format_model_set(set));
}

inline ModelSet load_model_set(const std::filesystem::path& path,
                               const std::optional<std::string>& expected_fingerprint = {}) {
    return parse_model_set(text::read_file(path), expected_fingerprint);
}

}  // namespace selftrain
