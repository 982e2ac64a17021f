#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unistd.h>
#include <vector>

#include "selftrain/selftrain.hpp"

namespace fs = std::filesystem;
using namespace selftrain;

namespace {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,
    kUsage = 2,
    kValidation = 3,
    kTraining = 4,
    kStalled = 5,
};

int exit_code_for(const Error& e) {
    switch (e.kind()) {
    case Error::Kind::Usage: return kUsage;
    case Error::Kind::Training:
    case Error::Kind::Initialization: return kTraining;
    case Error::Kind::Io: return kFailure;
    default: return kValidation;
    }
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("selftrain");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("SELFTRAIN_LOG")) {
        const auto level = spdlog::level::from_str(env);
        if (level == spdlog::level::off && std::string(env) != "off")
            spdlog::warn("SELFTRAIN_LOG={} not recognised, keeping info", env);
        else
            spdlog::set_level(level);
    }
}

/// Writes a directory tree beside `target`, then renames it into place, so an
/// interrupted command never leaves a complete-looking output.
class StagedDir {
public:
    StagedDir(fs::path target, bool force) : target_(std::move(target)) {
        if (target_.empty()) throw UsageError("--out is required");
        if (fs::exists(target_)) {
            if (!force) throw UsageError("output " + target_.string() + " exists (use --force to replace it)");
        }
        auto parent = target_.parent_path();
        if (parent.empty()) parent = ".";
        std::error_code ec;
        fs::create_directories(parent, ec);
        staging_ = parent / ("." + target_.filename().string() + ".partial-" + std::to_string(::getpid()));
        fs::remove_all(staging_, ec);
        if (!fs::create_directories(staging_, ec) || ec)
            throw IoError("cannot create " + staging_.string() + ": " + ec.message());
    }

    StagedDir(const StagedDir&) = delete;
    StagedDir& operator=(const StagedDir&) = delete;

    ~StagedDir() {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }

    const fs::path& path() const { return staging_; }

    void write(const fs::path& rel, std::string_view content) const { text::write_file(staging_ / rel, content); }

    void commit() {
        std::error_code ec;
        if (fs::exists(target_)) fs::remove_all(target_, ec);
        fs::rename(staging_, target_, ec);
        if (ec) throw IoError("cannot move output into " + target_.string() + ": " + ec.message());
        committed_ = true;
    }

private:
    fs::path target_;
    fs::path staging_;
    bool committed_ = false;
};

struct CommonOptions {
    std::string config;
    std::string manifest;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    bool force = false;
};

struct SchemeOptions {
    std::optional<std::string> scheme;
    std::optional<double> growth_factor;
    std::optional<std::string> threshold;
    std::optional<int> iterations;
    std::optional<std::string> score;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool manifest, bool out) {
    cmd->add_option("--config", o.config, "flat key = value config file");
    if (manifest) cmd->add_option("--manifest", o.manifest, "corpus manifest (overrides data.manifest)");
    if (out) cmd->add_option("--out", o.out, "output directory")->required();
    cmd->add_option("--seed", o.seed, "root seed (overrides run.seed)");
    cmd->add_option("--jobs", o.jobs, "worker threads (overrides run.jobs)");
    if (out) cmd->add_flag("--force", o.force, "replace an existing output directory");
}

void add_scheme(CLI::App* cmd, SchemeOptions& s) {
    cmd->add_option("--scheme", s.scheme, "selection scheme")->check(CLI::IsMember({"s1", "s2"}));
    cmd->add_option("--growth-factor", s.growth_factor, "volume rule fraction of the current pool");
    cmd->add_option("--threshold", s.threshold, "fixed threshold for every enabled class, or auto");
    cmd->add_option("--iterations", s.iterations, "maximum self-training iterations");
    cmd->add_option("--score", s.score, "ranking score")->check(CLI::IsMember({"posterior", "raw"}));
}

RunConfig resolve_config(const CommonOptions& o, const SchemeOptions* s = nullptr) {
    RunConfig cfg;
    if (!o.config.empty()) {
        const fs::path p = o.config;
        cfg = parse_run_config(text::read_file(p), p.string());
        if (!cfg.manifest.empty() && cfg.manifest.is_relative()) cfg.manifest = p.parent_path() / cfg.manifest;
    }
    if (!o.manifest.empty()) cfg.manifest = o.manifest;
    if (!cfg.manifest.empty()) cfg.manifest = fs::weakly_canonical(fs::absolute(cfg.manifest));
    if (o.seed) cfg.loop.seed = *o.seed;
    if (o.jobs) cfg.loop.jobs = *o.jobs;
    if (s) {
        auto& p = cfg.loop.policy;
        if (s->scheme) p.scheme = parse_scheme(*s->scheme);
        if (s->growth_factor) p.growth_factor = *s->growth_factor;
        if (s->threshold) {
            const double t = parse_threshold("--threshold", *s->threshold);
            for (auto c : kAllClasses)
                if (p.enabled[index(c)]) p.threshold[index(c)] = t;
        }
        if (s->iterations) cfg.loop.max_iterations = *s->iterations;
        if (s->score) cfg.loop.use_raw_log_likelihood = *s->score == "raw";
    }
    if (cfg.loop.jobs == 0) cfg.loop.jobs = 1;
    cfg.validate();
    return cfg;
}

Corpus load(const RunConfig& cfg) {
    if (cfg.manifest.empty()) throw UsageError("no manifest given (--manifest or data.manifest)");
    spdlog::info("loading corpus from {}", cfg.manifest.string());
    auto corpus = load_corpus(read_manifest(cfg.manifest));
    spdlog::info("{} records: {} gold-train, {} eval, {} unlabeled", corpus.size(),
                 corpus.with_role(Role::GoldTrain).size(), corpus.with_role(Role::Eval).size(),
                 corpus.with_role(Role::Unlabeled).size());
    return corpus;
}

Dataset dataset(const RunConfig& cfg, const Corpus& corpus) {
    auto data = build_dataset(corpus, cfg.features, cfg.min_overlap, cfg.loop.jobs);
    spdlog::info("{} training epochs, {} eval epochs", data.train.size(), data.eval.size());
    return data;
}

std::map<LabelClass, double> sensitivity_map(const PerClass<double>& s) {
    std::map<LabelClass, double> m;
    for (auto c : kAllClasses) m[c] = s[index(c)];
    return m;
}

void log_report(const IterationReport& r) {
    std::string line;
    for (auto c : kAllClasses)
        line += fmt::format(" {}={:.3f}", name(c), r.sensitivity[index(c)]);
    spdlog::info("iteration {}: accuracy {:.4f}{}{}", r.iteration, r.accuracy, line, r.stalled ? " (stalled)" : "");
}

// ---------------------------------------------------------------------------

struct SynthOptions {
    std::string spec;
    std::string out;
    std::optional<std::uint64_t> seed;
    bool force = false;
};

int cmd_synth(const SynthOptions& o) {
    SynthSpec spec;
    if (!o.spec.empty()) spec = parse_synth_spec(text::read_file(o.spec), o.spec);
    if (o.seed) spec.seed = *o.seed;
    spec.validate();
    spdlog::info("generating {} records x {} channels x {} s", spec.num_records, spec.num_channels,
                 spec.record_duration);
    const auto corpus = generate_synthetic(spec);

    StagedDir dir(o.out, o.force);
    CorpusManifest manifest;
    manifest.sample_rate = spec.sample_rate;
    for (const auto& rec : corpus.records) {
        const auto id = rec.signal.record_id;
        const fs::path sig = fs::path("signals") / (id + ".csv");
        dir.write(sig, format_signal_csv(rec.signal));
        ManifestEntry e{rec.role, sig, std::nullopt};
        if (rec.role == Role::Unlabeled) {
            dir.write(fs::path("truth") / (id + ".csv"), write_labels(rec.spans));
        } else {
            const fs::path lab = fs::path("labels") / (id + ".csv");
            dir.write(lab, write_labels(rec.spans));
            e.label_path = lab;
        }
        manifest.entries.push_back(std::move(e));
    }
    dir.write("manifest.tsv", format_manifest(manifest));
    dir.write("synth_spec.txt", format_synth_spec(spec));

    const auto seconds = class_durations(corpus);
    std::string summary = "class\tseconds\tevents\n";
    for (auto c : kAllClasses)
        summary += std::string(name(c)) + "\t" + text::fmt_g(seconds[index(c)], 12) + "\t" +
                   std::to_string(spec.classes[index(c)].count) + "\n";
    dir.write("summary.tsv", summary);
    dir.commit();
    spdlog::info("corpus written to {}", o.out);
    return kOk;
}

int cmd_train(const CommonOptions& o) {
    const auto cfg = resolve_config(o);
    const auto corpus = load(cfg);
    const auto data = dataset(cfg, corpus);
    StagedDir dir(o.out, o.force);
    const auto st = train_baseline(data, cfg.loop);
    log_report(st.last_report);
    dir.write("config.txt", format_run_config(cfg));
    dir.write("models.txt", format_model_set(st.models));
    dir.write("report.csv", format_report_csv({st.last_report}));
    dir.write("confusion.csv", format_confusion_csv(st.last_report.confusion));
    dir.commit();
    return kOk;
}

struct DecodeOptions {
    std::string models;
    std::string role = "unlabeled";
};

int cmd_decode(const CommonOptions& o, const DecodeOptions& d) {
    const auto cfg = resolve_config(o);
    const auto role = role_from_name(d.role);
    if (!role) throw UsageError("--role must be gold-train, eval or unlabeled");
    const auto corpus = load(cfg);
    const auto epochs = featurize(corpus.with_role(*role), cfg.features, cfg.min_overlap, false, cfg.loop.jobs);
    if (epochs.empty()) throw UsageError("no " + d.role + " epochs to decode");
    const auto models = load_model_set(d.models, cfg.features.fingerprint());
    std::vector<std::size_t> idx(epochs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto decoded = decode(models, epochs, idx, cfg.features.fingerprint(), cfg.loop.jobs);

    std::string out;
    for (const auto& r : decoded) {
        const auto& e = epochs[r.epoch];
        out += format_label_row({e.record_id, e.channel_index, e.start, e.start + cfg.features.epoch_duration, r.label}) +
               "," + text::fmt17(r.confidence) + "," + text::fmt17(r.log_likelihood) + "\n";
    }
    StagedDir dir(o.out, o.force);
    dir.write("config.txt", format_run_config(cfg));
    dir.write("decoded.csv", out);
    dir.commit();
    spdlog::info("decoded {} epochs", decoded.size());
    return kOk;
}

int cmd_selftrain(const CommonOptions& o, const SchemeOptions& s) {
    const auto cfg = resolve_config(o, &s);
    const auto corpus = load(cfg);
    if (corpus.with_role(Role::GoldTrain).empty() || corpus.with_role(Role::Eval).empty() ||
        corpus.with_role(Role::Unlabeled).empty())
        throw UsageError("selftrain needs gold-train, eval and unlabeled records");
    const auto data = dataset(cfg, corpus);

    StagedDir dir(o.out, o.force);
    dir.write("config.txt", format_run_config(cfg));
    const auto result = run_selftrain(data, cfg.loop, [&](const IterationOutcome& it) {
        const auto& r = it.report;
        log_report(r);
        const fs::path sub = "iter_" + std::to_string(r.iteration);
        dir.write(sub / "models.txt", format_model_set(it.state.models));
        dir.write(sub / "report.csv", format_report_csv({r}));
        dir.write(sub / "selection_audit.csv",
                  format_selection_audit_header() + format_selection_audit(r.iteration, it.candidates, it.selection));
    });
    dir.write("report.csv", format_report_csv(result.reports));
    dir.write("final_labels.csv",
              format_final_labels(result.final_labels, data.train, cfg.features.epoch_duration));
    const auto& first = result.reports.front();
    const auto& last = result.reports.back();
    dir.write("table1.txt", emit_table1(sensitivity_map(first.sensitivity),
                                        sensitivity_map(result.reports[std::min<std::size_t>(1, result.reports.size() - 1)].sensitivity)));
    dir.write("status.txt", "stop_reason = " + result.stop_reason +
                                "\niterations = " + std::to_string(last.iteration) + "\n");
    dir.commit();
    spdlog::info("stopped: {} after {} iteration(s); accuracy {:.4f} -> {:.4f}", result.stop_reason, last.iteration,
                 first.accuracy, last.accuracy);
    if (result.stop_reason == "stalled" && last.iteration == 1) {
        spdlog::warn("no epoch was selected in the first iteration");
        return kStalled;
    }
    return kOk;
}

struct SweepOptions {
    std::string models;
    std::string label = "SPSW";
    std::vector<double> thresholds;
    std::vector<double> percentiles;
};

int cmd_sweep(const CommonOptions& o, const SchemeOptions& s, const SweepOptions& w) {
    const auto cfg = resolve_config(o, &s);
    const auto label = from_name(w.label);
    if (!label) throw UsageError("unknown class " + w.label);
    if (w.thresholds.empty() == w.percentiles.empty())
        throw UsageError("give exactly one of --thresholds and --percentiles");
    const auto corpus = load(cfg);
    const auto data = dataset(cfg, corpus);
    auto base = w.models.empty() ? train_baseline(data, cfg.loop)
                                 : baseline_from_models(data, cfg.loop,
                                                        load_model_set(w.models, cfg.features.fingerprint()));
    log_report(base.last_report);
    const auto ranked = sweep_candidates(base, data, cfg.loop, *label);
    spdlog::info("{} unlabeled epochs decoded as {}", ranked.size(), name(*label));
    const auto points = w.thresholds.empty() ? percentile_points(ranked, w.percentiles) : threshold_points(w.thresholds);
    const auto rows = run_sweep(base, data, cfg.loop, *label, ranked, points);
    for (const auto& r : rows)
        spdlog::info("threshold {:.6g}: {} selected, sensitivity {:.4f}, accuracy {:.4f}", r.threshold, r.selected,
                     r.sensitivity, r.accuracy);
    StagedDir dir(o.out, o.force);
    dir.write("config.txt", format_run_config(cfg));
    dir.write("sweep.csv", format_sweep_csv(*label, rows));
    dir.commit();
    return kOk;
}

struct EvalOptions {
    std::string models;
    std::string before;
};

int cmd_eval(const CommonOptions& o, const EvalOptions& e) {
    const auto cfg = resolve_config(o);
    const auto corpus = load(cfg);
    if (corpus.with_role(Role::Eval).empty()) throw UsageError("manifest has no eval records");
    const auto eval = featurize(corpus.with_role(Role::Eval), cfg.features, cfg.min_overlap, true, cfg.loop.jobs);
    const auto fp = cfg.features.fingerprint();
    const auto after = evaluate(load_model_set(e.models, fp), eval, fp, cfg.loop.jobs);
    IterationReport ra;
    fill_scores(ra, after);
    auto before_s = ra.sensitivity;
    if (!e.before.empty()) {
        IterationReport rb;
        fill_scores(rb, evaluate(load_model_set(e.before, fp), eval, fp, cfg.loop.jobs));
        before_s = rb.sensitivity;
    }
    const auto table = emit_table1(sensitivity_map(before_s), sensitivity_map(ra.sensitivity));
    StagedDir dir(o.out, o.force);
    dir.write("confusion.csv", format_confusion_csv(after));
    dir.write("table1.txt", table);
    dir.write("accuracy.txt", text::fmt17(ra.accuracy) + "\n");
    dir.commit();
    std::fputs(table.c_str(), stdout);
    std::printf("Accuracy\t%s\n", format_percent(ra.accuracy).c_str());
    return kOk;
}

struct ReportOptions {
    std::string run;
    int from = 0;
    std::optional<int> to;
};

int cmd_report(const ReportOptions& r) {
    const auto reports = parse_report_csv(text::read_file(fs::path(r.run) / "report.csv"));
    if (reports.empty()) throw ValidationError("report.csv has no iterations");
    const auto find = [&](int k) -> const IterationReport& {
        for (const auto& x : reports)
            if (x.iteration == k) return x;
        throw UsageError("run has no iteration " + std::to_string(k));
    };
    const int to = r.to ? *r.to : std::min(1, reports.back().iteration);
    std::fputs(emit_table1(sensitivity_map(find(r.from).sensitivity), sensitivity_map(find(to).sensitivity)).c_str(),
               stdout);
    std::printf("\nIteration\tAccuracy\tSelected\n");
    for (const auto& x : reports) {
        std::size_t sel = 0;
        for (auto n : x.selected) sel += n;
        std::printf("%d\t%s\t%zu\n", x.iteration, format_percent(x.accuracy).c_str(), sel);
    }
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"selftrain: self-training annotation of multichannel time series"};
    app.require_subcommand(1);

    SynthOptions synth_o;
    auto* synth = app.add_subcommand("synth", "generate a seeded synthetic corpus");
    synth->add_option("--spec", synth_o.spec, "synthetic corpus spec (key = value)");
    synth->add_option("--out", synth_o.out, "output directory")->required();
    synth->add_option("--seed", synth_o.seed, "generator seed (overrides synth.seed)");
    synth->add_flag("--force", synth_o.force, "replace an existing output directory");

    CommonOptions train_o;
    auto* train = app.add_subcommand("train", "train the baseline models from the gold seed");
    add_common(train, train_o, true, true);

    CommonOptions decode_o;
    DecodeOptions decode_d;
    auto* dec = app.add_subcommand("decode", "label epochs with trained models");
    add_common(dec, decode_o, true, true);
    dec->add_option("--models", decode_d.models, "model file")->required();
    dec->add_option("--role", decode_d.role, "records to decode: unlabeled, eval or gold-train");

    CommonOptions self_o;
    SchemeOptions self_s;
    auto* self = app.add_subcommand("selftrain", "run the self-training loop");
    add_common(self, self_o, true, true);
    add_scheme(self, self_s);

    CommonOptions sweep_o;
    SchemeOptions sweep_s;
    SweepOptions sweep_w;
    auto* sweep = app.add_subcommand("sweep", "threshold sweep with one retraining per threshold");
    add_common(sweep, sweep_o, true, true);
    sweep->add_option("--score", sweep_s.score, "ranking score")->check(CLI::IsMember({"posterior", "raw"}));
    sweep->add_option("--models", sweep_w.models, "baseline model file (trained from the gold seed when omitted)");
    sweep->add_option("--class", sweep_w.label, "class to sweep");
    sweep->add_option("--thresholds", sweep_w.thresholds, "thresholds")->delimiter(',');
    sweep->add_option("--percentiles", sweep_w.percentiles, "top percentages of the decoded class")->delimiter(',');

    CommonOptions eval_o;
    EvalOptions eval_e;
    auto* ev = app.add_subcommand("eval", "score models on the eval records");
    add_common(ev, eval_o, true, true);
    ev->add_option("--models", eval_e.models, "model file")->required();
    ev->add_option("--before", eval_e.before, "earlier model file for the before column");

    ReportOptions report_o;
    auto* report = app.add_subcommand("report", "summarize a selftrain run directory");
    report->add_option("--run", report_o.run, "run directory")->required();
    report->add_option("--from", report_o.from, "before iteration");
    report->add_option("--to", report_o.to, "after iteration");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_o);
        if (train->parsed()) return cmd_train(train_o);
        if (dec->parsed()) return cmd_decode(decode_o, decode_d);
        if (self->parsed()) return cmd_selftrain(self_o, self_s);
        if (sweep->parsed()) return cmd_sweep(sweep_o, sweep_s, sweep_w);
        if (ev->parsed()) return cmd_eval(eval_o, eval_e);
        if (report->parsed()) return cmd_report(report_o);
    } catch (const Error& e) {
        spdlog::error("{}", e.what());
        return exit_code_for(e);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return kFailure;
    }
    return kUsage;
}
