#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "selftrain/corpus.hpp"
#include "selftrain/error.hpp"
#include "selftrain/eval.hpp"
#include "selftrain/features.hpp"
#include "selftrain/model_set.hpp"
#include "selftrain/parallel.hpp"
#include "selftrain/rng.hpp"
#include "selftrain/selector.hpp"

namespace selftrain {

/// Every epoch a run touches. `train` holds the gold seed followed by the
/// unlabeled epochs; `eval` is scored only.
struct Dataset {
    std::vector<Epoch> train;
    std::vector<Epoch> eval;
    std::string fingerprint;
};

inline Dataset build_dataset(const Corpus& corpus, const FeatureConfig& cfg, double min_overlap = 0.5,
                             std::size_t jobs = 1) {
    Dataset d;
    d.fingerprint = cfg.fingerprint();
    d.train = featurize(corpus.with_role(Role::GoldTrain), cfg, min_overlap, true, jobs);
    for (auto& e : d.train) e.provenance = {Provenance::Kind::Gold, 0};
    auto unlabeled = featurize(corpus.with_role(Role::Unlabeled), cfg, min_overlap, false, jobs);
    for (auto& e : unlabeled) d.train.push_back(std::move(e));
    d.eval = featurize(corpus.with_role(Role::Eval), cfg, min_overlap, true, jobs);
    return d;
}

struct PoolEntry {
    std::size_t epoch = 0;  // index into Dataset::train
    LabelClass label = LabelClass::BCKG;
    int iteration = 0;      // 0 = gold, k = accepted at iteration k
    double confidence = 0.0;
};

/// Gold epochs plus accepted auto-labeled epochs, in insertion order.
struct TrainingPool {
    std::vector<PoolEntry> entries;

    PerClass<std::size_t> sizes() const {
        PerClass<std::size_t> n{};
        for (const auto& e : entries) ++n[index(e.label)];
        return n;
    }

    std::size_t size() const noexcept { return entries.size(); }

    std::vector<const Matrix*> sequences(const std::vector<Epoch>& epochs, LabelClass c) const {
        std::vector<const Matrix*> out;
        for (const auto& e : entries)
            if (e.label == c) out.push_back(&epochs[e.epoch].frames);
        return out;
    }
};

struct IterationReport {
    int iteration = 0;
    PerClass<double> sensitivity{};
    double accuracy = 0.0;
    PerClass<std::size_t> selected{};
    PerClass<double> threshold{};
    PerClass<std::size_t> pool_size{};
    PerClass<double> training_log_likelihood{};
    bool stalled = false;
    ConfusionMatrix confusion;
};

struct LoopConfig {
    int max_iterations = 7;
    SelectionPolicy policy;
    HmmConfig hmm;
    bool stop_on_accuracy_drop = false;
    double accuracy_drop = 0.02;
    bool use_raw_log_likelihood = false;  // rank by log p(frames | winner) instead of the posterior confidence
    std::uint64_t seed = 1;
    std::size_t jobs = 1;

    void validate() const {
        if (max_iterations < 1) throw ValidationError("loop config: max_iterations must be >= 1");
        policy.validate();
    }
};

struct LoopState {
    ModelSet models;
    TrainingPool pool;
    std::vector<std::size_t> unlabeled;  // indices into Dataset::train, ascending
    SelectionPolicy policy;
    std::vector<double> variance_floor;
    PerClass<double> training_log_likelihood{};
    IterationReport last_report;
    int iteration = 0;
};

/// Everything one iteration produced, for callers that persist artifacts.
struct IterationOutcome {
    LoopState state;
    IterationReport report;
    std::vector<Candidate> candidates;
    SelectionResult selection;
};

inline std::uint64_t class_training_seed(std::uint64_t root, LabelClass c) {
    return derive_seed(root, "hmm.train", static_cast<std::uint64_t>(code(c)));
}

/// Trains one model per class from the pool. Classes listed in `reuse` keep the
/// model from `previous`: their pool is unchanged and training is deterministic,
/// so the result would be bit-identical anyway.
inline ModelSet train_models(const Dataset& data, const TrainingPool& pool, const HmmConfig& hmm,
                             std::span<const double> var_floor, std::uint64_t seed, std::size_t jobs,
                             PerClass<double>& log_likelihoods, const ModelSet* previous = nullptr,
                             const PerClass<bool>* reuse = nullptr) {
    ModelSet set;
    set.fingerprint = data.fingerprint;
    std::vector<std::string> errors(kNumClasses);
    parallel_for(kNumClasses, jobs, [&](std::size_t i) {
        const auto c = class_at(i);
        if (previous && reuse && (*reuse)[i]) {
            set.models[i] = previous->models[i];
            return;
        }
        const auto seqs = pool.sequences(data.train, c);
        try {
            auto r = train_class(c, seqs, hmm, class_training_seed(seed, c), var_floor);
            set.models[i] = std::move(r.model);
            log_likelihoods[i] = r.history.back();
        } catch (const Error& e) {
            errors[i] = e.what();
        }
    });
    for (std::size_t i = 0; i < kNumClasses; ++i)
        if (!errors[i].empty())
            throw TrainingError("training failed for class " + std::string(name(class_at(i))) + ": " + errors[i]);
    return set;
}

/// Confusion matrix of the models on the eval epochs.
inline ConfusionMatrix evaluate(const ModelSet& models, const std::vector<Epoch>& eval, const std::string& fingerprint,
                                std::size_t jobs = 1) {
    std::vector<std::size_t> idx(eval.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto decoded = decode(models, eval, idx, fingerprint, jobs);
    ConfusionMatrix m;
    for (const auto& d : decoded) {
        const auto& e = eval[d.epoch];
        if (!e.gold_label) throw ScoringError("eval epoch " + describe(e.key()) + " has no gold label");
        m.add(*e.gold_label, d.label);
    }
    return m;
}

inline void fill_scores(IterationReport& r, const ConfusionMatrix& m) {
    r.confusion = m;
    r.accuracy = accuracy(m);
    for (auto c : kAllClasses) r.sensitivity[index(c)] = sensitivity(m, c);
}

/// Gold pool, unlabeled list and variance floor, before any model exists.
inline LoopState initial_state(const Dataset& data, const LoopConfig& cfg) {
    cfg.validate();
    LoopState st;
    st.policy = cfg.policy;
    std::vector<const Matrix*> gold_frames;
    for (std::size_t i = 0; i < data.train.size(); ++i) {
        const auto& e = data.train[i];
        if (e.gold_label) {
            st.pool.entries.push_back({i, *e.gold_label, 0, 0.0});
            gold_frames.push_back(&e.frames);
        } else {
            st.unlabeled.push_back(i);
        }
    }
    if (gold_frames.empty()) throw TrainingError("baseline: no gold training epochs");
    const auto sizes = st.pool.sizes();
    for (auto c : kAllClasses)
        if (sizes[index(c)] * gold_frames.front()->rows() < cfg.hmm.num_states * cfg.hmm.num_mixtures)
            throw TrainingError("baseline: class " + std::string(name(c)) + " has too little gold data (" +
                                std::to_string(sizes[index(c)]) + " epochs)");
    st.variance_floor = variance_floor(gold_frames, cfg.hmm.variance_floor_scale);
    return st;
}

/// Scores `st.models` on the eval set as the iteration-0 report.
inline void finish_baseline(LoopState& st, const Dataset& data, const LoopConfig& cfg) {
    auto& r = st.last_report;
    r.iteration = 0;
    fill_scores(r, evaluate(st.models, data.eval, data.fingerprint, cfg.jobs));
    r.pool_size = st.pool.sizes();
    r.threshold.fill(std::numeric_limits<double>::quiet_NaN());
    r.training_log_likelihood = st.training_log_likelihood;
    if (st.policy.scheme == Scheme::VolumeHalving) st.policy.set_targets(r.pool_size);
}

/// Trains the six models from the gold seed only and scores them (iteration 0).
inline LoopState train_baseline(const Dataset& data, const LoopConfig& cfg) {
    auto st = initial_state(data, cfg);
    st.models = train_models(data, st.pool, cfg.hmm, st.variance_floor, cfg.seed, cfg.jobs, st.training_log_likelihood);
    finish_baseline(st, data, cfg);
    return st;
}

/// Baseline state around models trained elsewhere (e.g. loaded from a file).
inline LoopState baseline_from_models(const Dataset& data, const LoopConfig& cfg, ModelSet models) {
    check_fingerprint(models, data.fingerprint);
    auto st = initial_state(data, cfg);
    st.models = std::move(models);
    st.training_log_likelihood.fill(std::numeric_limits<double>::quiet_NaN());
    finish_baseline(st, data, cfg);
    return st;
}

/// Steps 2-6 once: decode the unlabeled epochs, select by confidence, move the
/// accepted epochs into the pool, retrain and evaluate. The input state is not
/// modified; on error nothing is committed.
inline IterationOutcome run_iteration(const LoopState& in, const Dataset& data, const LoopConfig& cfg) {
    IterationOutcome out;
    out.state = in;
    auto& st = out.state;
    st.iteration = in.iteration + 1;

    const auto decoded = decode(in.models, data.train, in.unlabeled, data.fingerprint, cfg.jobs);
    out.candidates = to_candidates(decoded, data.train, cfg.use_raw_log_likelihood);
    const auto before = in.pool.sizes();
    out.selection = select(in.policy, out.candidates, before);

    auto& r = out.report;
    r.iteration = st.iteration;
    for (auto c : kAllClasses) {
        const auto& sel = out.selection.per_class[index(c)];
        r.selected[index(c)] = sel.accepted.size();
        r.threshold[index(c)] = sel.effective_threshold;
    }

    if (out.selection.total() == 0) {
        r.stalled = true;
        r.confusion = in.last_report.confusion;
        r.accuracy = in.last_report.accuracy;
        r.sensitivity = in.last_report.sensitivity;
        r.pool_size = before;
        r.training_log_likelihood = in.training_log_likelihood;
        st.policy = adjust_policy(in.policy, out.selection, before);
        st.last_report = r;
        return out;
    }

    std::vector<bool> taken(data.train.size(), false);
    PerClass<bool> unchanged;
    unchanged.fill(true);
    for (auto c : kAllClasses)
        for (const auto& a : out.selection.per_class[index(c)].accepted) {
            if (taken[a.epoch]) throw ValidationError("epoch " + describe(a.key) + " accepted twice");
            taken[a.epoch] = true;
            st.pool.entries.push_back({a.epoch, c, st.iteration, a.confidence});
            unchanged[index(c)] = false;
        }
    std::erase_if(st.unlabeled, [&](std::size_t i) { return taken[i]; });

    st.models = train_models(data, st.pool, cfg.hmm, st.variance_floor, cfg.seed, cfg.jobs, st.training_log_likelihood,
                             &in.models, &unchanged);
    fill_scores(r, evaluate(st.models, data.eval, data.fingerprint, cfg.jobs));
    r.pool_size = st.pool.sizes();
    r.training_log_likelihood = st.training_log_likelihood;
    st.policy = adjust_policy(in.policy, out.selection, r.pool_size);
    st.last_report = r;
    return out;
}

struct FinalLabel {
    std::size_t epoch = 0;
    LabelClass label = LabelClass::BCKG;
    double confidence = 0.0;
    int accepted_iteration = 0;  // 0: never accepted, labeled by the final models (low confidence)
};

struct SelfTrainResult {
    std::vector<IterationReport> reports;
    ModelSet models;
    std::vector<FinalLabel> final_labels;
    std::string stop_reason;
    LoopState state;
};

/// Baseline plus iterations until a stop condition. `on_iteration` sees every
/// iteration (including the baseline, with empty candidates) as it completes.
inline SelfTrainResult run_selftrain(const Dataset& data, const LoopConfig& cfg,
                                     const std::function<void(const IterationOutcome&)>& on_iteration = {}) {
    cfg.validate();
    SelfTrainResult res;
    IterationOutcome base;
    base.state = train_baseline(data, cfg);
    base.report = base.state.last_report;
    res.reports.push_back(base.report);
    if (on_iteration) on_iteration(base);
    LoopState st = std::move(base.state);

    int drops = 0;
    double best_accuracy = res.reports.front().accuracy;
    while (true) {
        if (st.unlabeled.empty()) {
            res.stop_reason = "all-unlabeled-consumed";
            break;
        }
        if (st.iteration >= cfg.max_iterations) {
            res.stop_reason = "max-iterations";
            break;
        }
        auto outcome = run_iteration(st, data, cfg);
        res.reports.push_back(outcome.report);
        if (on_iteration) on_iteration(outcome);
        st = std::move(outcome.state);
        if (res.reports.back().stalled) {
            res.stop_reason = "stalled";
            break;
        }
        const double acc = res.reports.back().accuracy;
        drops = acc < best_accuracy - cfg.accuracy_drop ? drops + 1 : 0;
        best_accuracy = std::max(best_accuracy, acc);
        if (cfg.stop_on_accuracy_drop && drops >= 2) {
            res.stop_reason = "accuracy-drop";
            break;
        }
    }

    // Final assignments for every originally unlabeled epoch.
    std::vector<std::optional<FinalLabel>> by_epoch(data.train.size());
    for (const auto& e : st.pool.entries)
        if (e.iteration > 0) by_epoch[e.epoch] = FinalLabel{e.epoch, e.label, e.confidence, e.iteration};
    const auto rest = decode(st.models, data.train, st.unlabeled, data.fingerprint, cfg.jobs);
    for (const auto& d : rest) by_epoch[d.epoch] = FinalLabel{d.epoch, d.label, d.confidence, 0};
    for (auto& f : by_epoch)
        if (f) res.final_labels.push_back(*f);

    res.models = st.models;
    res.state = std::move(st);
    return res;
}

// ---------------------------------------------------------------------------
// Report CSV: `iteration,class,sensitivity,selected,threshold,pool_size,accuracy`

inline std::string report_csv_header() { return "iteration,class,sensitivity,selected,threshold,pool_size,accuracy\n"; }

inline std::string format_report_rows(const IterationReport& r) {
    std::string out;
    for (auto c : kAllClasses) {
        const auto i = index(c);
        out += std::to_string(r.iteration) + "," + std::string(name(c)) + "," + text::fmt17(r.sensitivity[i]) + "," +
               std::to_string(r.selected[i]) + "," + text::fmt17(r.threshold[i]) + "," + std::to_string(r.pool_size[i]) +
               "," + text::fmt17(r.accuracy) + "\n";
    }
    return out;
}

inline std::string format_report_csv(const std::vector<IterationReport>& reports) {
    std::string out = report_csv_header();
    for (const auto& r : reports) out += format_report_rows(r);
    return out;
}

/// Parses the report CSV back into per-iteration reports (confusion and
/// log-likelihood fields are not part of the file and stay empty).
inline std::vector<IterationReport> parse_report_csv(std::string_view content) {
    std::vector<IterationReport> out;
    std::vector<PerClass<bool>> seen;
    std::size_t lineno = 0;
    for (auto line : text::lines(content)) {
        ++lineno;
        if (lineno == 1 || text::trim(line).empty()) continue;
        const auto f = text::split(line, ',');
        const auto where = "report line " + std::to_string(lineno);
        if (f.size() != 7) throw FormatError(where + ": expected 7 fields");
        const auto it = text::parse_int<int>(f[0]);
        const auto cls = from_name(text::trim(f[1]));
        const auto sens = text::parse_double(f[2]);
        const auto sel = text::parse_int<std::size_t>(f[3]);
        const auto thr = text::parse_double(f[4]);
        const auto pool = text::parse_int<std::size_t>(f[5]);
        const auto acc = text::parse_double(f[6]);
        if (!it || !cls || !sens || !sel || !thr || !pool || !acc) throw FormatError(where + ": malformed field");
        if (out.empty() || out.back().iteration != *it) {
            out.push_back({});
            out.back().iteration = *it;
            seen.push_back({});
        }
        auto& r = out.back();
        const auto i = index(*cls);
        if (seen.back()[i]) throw FormatError(where + ": duplicate class row");
        seen.back()[i] = true;
        r.sensitivity[i] = *sens;
        r.selected[i] = *sel;
        r.threshold[i] = *thr;
        r.pool_size[i] = *pool;
        r.accuracy = *acc;
    }
    for (const auto& s : seen)
        for (bool b : s)
            if (!b) throw FormatError("report: an iteration is missing class rows");
    return out;
}

// ---------------------------------------------------------------------------
// Final labels: label-file schema plus confidence and the accepting iteration.

inline std::string format_final_labels(const std::vector<FinalLabel>& labels, const std::vector<Epoch>& epochs,
                                       double epoch_duration) {
    std::string out;
    for (const auto& f : labels) {
        const auto& e = epochs[f.epoch];
        LabelSpan span{e.record_id, e.channel_index, e.start, e.start + epoch_duration, f.label};
        out += format_label_row(span) + "," + text::fmt17(f.confidence) + "," + std::to_string(f.accepted_iteration) +
               "\n";
    }
    return out;
}

}  // namespace selftrain
