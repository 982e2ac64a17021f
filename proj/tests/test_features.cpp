#include <cmath>
#include <complex>
#include <numbers>

#include <gtest/gtest.h>

#include "support.hpp"

using namespace selftrain;

namespace {

SignalRecord record_from(const std::string& id, std::size_t channels, double seconds, double sr,
                         const std::function<double(double)>& f) {
    SignalRecord r;
    r.record_id = id;
    r.sample_rate = sr;
    const auto n = static_cast<std::size_t>(std::llround(seconds * sr));
    for (std::size_t c = 0; c < channels; ++c) {
        r.channels.push_back("c" + std::to_string(c));
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) x[i] = f(static_cast<double>(i) / sr);
        r.samples.push_back(std::move(x));
    }
    return r;
}

Epoch epoch_at(const SignalRecord& r, double start, std::size_t ch = 0) {
    Epoch e;
    e.record_id = r.record_id;
    e.channel_index = ch;
    e.start = start;
    return e;
}

}  // namespace

TEST(Segment, WholeEpochsPerChannel) {
    const FeatureConfig cfg;
    const auto r = record_from("a", 1, 10.0, 250.0, [](double) { return 0.0; });
    const auto e = segment(r, cfg);
    ASSERT_EQ(e.size(), 10u);
    for (std::size_t i = 0; i < e.size(); ++i) EXPECT_DOUBLE_EQ(e[i].start, static_cast<double>(i));
    EXPECT_EQ(segment(record_from("b", 1, 10.5, 250.0, [](double) { return 0.0; }), cfg).size(), 10u);
    EXPECT_EQ(segment(record_from("c", 22, 10.0, 250.0, [](double) { return 0.0; }), cfg).size(), 220u);
    EXPECT_THROW(segment(record_from("d", 1, 0.5, 250.0, [](double) { return 0.0; }), cfg), FeatureError);
}

TEST(Frames, DefaultShape) {
    const FeatureConfig cfg;
    const auto r = record_from("a", 1, 3.0, 250.0, [](double t) { return std::sin(40.0 * t); });
    const auto e = extract_frames(r, epoch_at(r, 1.0), cfg);
    EXPECT_EQ(e.frames.rows(), 10u);
    EXPECT_EQ(e.frames.cols(), 9u);
    EXPECT_EQ(cfg.dim(), 9u);
}

TEST(Frames, ZeroSignal) {
    FeatureConfig cfg;
    cfg.epsilon = 1e-12;
    const auto r = record_from("a", 1, 2.0, 250.0, [](double) { return 0.0; });
    const auto e = extract_frames(r, epoch_at(r, 0.0), cfg);
    for (std::size_t t = 0; t < e.frames.rows(); ++t) {
        EXPECT_DOUBLE_EQ(e.frames(t, 0), std::log(1e-12));
        for (std::size_t d = 1; d + 1 < e.frames.cols(); ++d) EXPECT_TRUE(std::isfinite(e.frames(t, d)));
        EXPECT_EQ(e.frames(t, e.frames.cols() - 1), 0.0);
    }
}

TEST(Frames, SteadySinusoidHasNoEnergySpread) {
    // 25 Hz at 250 Hz: every 10-sample sub-window holds exactly one period
    const FeatureConfig cfg;
    const auto r = record_from("a", 1, 3.0, 250.0, [](double t) { return 30.0 * std::sin(2.0 * std::numbers::pi * 25.0 * t); });
    const auto e = extract_frames(r, epoch_at(r, 1.0), cfg);
    for (std::size_t t = 0; t < e.frames.rows(); ++t) {
        const double energy = e.frames(t, 0);
        EXPECT_LT(std::abs(e.frames(t, e.frames.cols() - 1)), 1e-6 * std::max(1.0, std::abs(energy)));
    }
}

TEST(Frames, BurstRaisesEnergySpread) {
    const FeatureConfig cfg;
    const auto r = record_from("a", 1, 3.0, 250.0, [](double t) {
        const double u = std::fmod(t, 0.2);
        return u < 0.04 ? 100.0 * std::sin(2.0 * std::numbers::pi * 25.0 * t) : 0.5 * std::sin(2.0 * std::numbers::pi * 25.0 * t);
    });
    const auto e = extract_frames(r, epoch_at(r, 1.0), cfg);
    EXPECT_GT(e.frames(0, e.frames.cols() - 1), 5.0);
}

TEST(Frames, CepstrumMatchesDirectTransform) {
    const FeatureConfig cfg;
    const auto r = record_from("a", 1, 2.0, 250.0,
                               [](double t) { return 10.0 * std::sin(2.0 * std::numbers::pi * 7.0 * t) + 3.0 * std::cos(90.0 * t); });
    const auto e = extract_frames(r, epoch_at(r, 0.0), cfg);

    // frame 3: samples [75, 125), Hamming window, zero padded to 64, log magnitude, inverse DFT
    const std::size_t W = 50, N = 64, begin = 75;
    std::vector<std::complex<double>> X(N);
    for (std::size_t k = 0; k < N; ++k)
        for (std::size_t i = 0; i < W; ++i) {
            const double w = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / (W - 1));
            X[k] += r.samples[0][begin + i] * w * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * i) / N);
        }
    for (int q = 1; q <= cfg.num_cepstral; ++q) {
        double c = 0.0;
        for (std::size_t k = 0; k < N; ++k)
            c += 0.5 * std::log(std::norm(X[k]) + cfg.epsilon) * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) * q / N);
        c /= N;
        EXPECT_NEAR(e.frames(3, static_cast<std::size_t>(q)), c, 1e-9) << "c" << q;
    }
    double energy = 0.0;
    for (std::size_t i = 0; i < W; ++i) energy += r.samples[0][begin + i] * r.samples[0][begin + i];
    EXPECT_NEAR(e.frames(3, 0), std::log(energy + cfg.epsilon), 1e-12);
}

TEST(Frames, ConfigErrors) {
    FeatureConfig cfg;
    cfg.frame_step = 0.3;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = {};
    cfg.window_length = 0.05;
    EXPECT_THROW(cfg.validate(), ValidationError);
    cfg = {};
    cfg.num_cepstral = 0;
    cfg.include_energy = false;
    cfg.include_differential_energy = false;
    EXPECT_THROW(cfg.validate(), ValidationError);
    const auto r = record_from("a", 1, 2.0, 250.0, [](double) { return 0.0; });
    EXPECT_THROW(extract_frames(r, epoch_at(r, 1.5), FeatureConfig{}), FeatureError);
    auto bad = r;
    bad.samples[0][10] = std::nan("");
    EXPECT_THROW(extract_frames(bad, epoch_at(bad, 0.0), FeatureConfig{}), FeatureError);
}

TEST(Labeling, OverlapRules) {
    const auto r = record_from("a", 1, 5.0, 250.0, [](double) { return 0.0; });
    auto epochs = segment(r, FeatureConfig{});
    const std::vector<LabelSpan> spans = {
        {"a", 0, 0.0, 2.0, LabelClass::GPED},
        {"a", 0, 2.0, 2.6, LabelClass::SPSW},
        {"a", 0, 2.6, 3.0, LabelClass::BCKG},
        {"a", 0, 3.0, 3.5, LabelClass::PLED},
        {"a", 0, 3.5, 4.0, LabelClass::ARTF},
    };
    const auto labeled = label_epochs(epochs, spans, 0.5);
    EXPECT_EQ(labeled[0].gold_label, LabelClass::GPED);
    EXPECT_EQ(labeled[1].gold_label, LabelClass::GPED);
    EXPECT_EQ(labeled[2].gold_label, LabelClass::SPSW);
    EXPECT_EQ(labeled[3].gold_label, LabelClass::PLED);  // equal coverage, rarer wins
    EXPECT_EQ(labeled[4].gold_label, LabelClass::BCKG);  // no span
    EXPECT_EQ(label_epochs(epochs, spans, 0.7)[2].gold_label, LabelClass::BCKG);
    EXPECT_THROW(label_epochs(epochs, spans, 0.0), ValidationError);
}

TEST(EpochCache, RoundTrip) {
    const FeatureConfig cfg;
    CorpusRecord rec;
    rec.signal = record_from("a", 2, 3.0, 250.0, [](double t) { return std::sin(50.0 * t) * (1.0 + t); });
    rec.spans = {{"a", 1, 0.0, 2.0, LabelClass::EYEM}};
    const auto epochs = featurize_record(rec, cfg, 0.5, true);
    const auto back = read_epoch_cache(write_epoch_cache(epochs), cfg);
    ASSERT_EQ(back.size(), epochs.size());
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        EXPECT_EQ(back[i].key(), epochs[i].key());
        EXPECT_EQ(back[i].gold_label, epochs[i].gold_label);
        ASSERT_EQ(back[i].frames.rows(), epochs[i].frames.rows());
        for (std::size_t k = 0; k < epochs[i].frames.data().size(); ++k) {
            const double v = epochs[i].frames.data()[k];
            EXPECT_NEAR(back[i].frames.data()[k], v, 1e-8 * std::max(1.0, std::abs(v)));
        }
    }
}
