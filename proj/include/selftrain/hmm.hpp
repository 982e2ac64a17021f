#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "selftrain/error.hpp"
#include "selftrain/label.hpp"
#include "selftrain/matrix.hpp"
#include "selftrain/rng.hpp"
#include "selftrain/text.hpp"

namespace selftrain {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

inline double log_sum_exp(std::span<const double> v) {
    double mx = kNegInf;
    for (double x : v) mx = std::max(mx, x);
    if (mx == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : v) s += std::exp(x - mx);
    return mx + std::log(s);
}

inline double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

/// Left-to-right hidden Markov model with diagonal-covariance Gaussian mixture
/// emissions. Parameters are stored flat; mean(s, m)[d] indexes S x M x D.
struct GmmHmm {
    LabelClass label = LabelClass::BCKG;
    std::size_t num_states = 0;
    std::size_t num_mixtures = 0;
    std::size_t dim = 0;
    std::vector<double> initial;  // S
    Matrix transitions;           // S x S
    Matrix weights;               // S x M
    std::vector<double> means;    // S*M*D
    std::vector<double> variances;
    std::vector<double> variance_floor;  // D

    GmmHmm() = default;
    GmmHmm(LabelClass c, std::size_t S, std::size_t M, std::size_t D)
        : label(c), num_states(S), num_mixtures(M), dim(D), initial(S, 0.0), transitions(S, S),
          weights(S, M), means(S * M * D, 0.0), variances(S * M * D, 1.0), variance_floor(D, 0.0) {}

    std::span<double> mean(std::size_t s, std::size_t m) { return {means.data() + (s * num_mixtures + m) * dim, dim}; }
    std::span<const double> mean(std::size_t s, std::size_t m) const {
        return {means.data() + (s * num_mixtures + m) * dim, dim};
    }
    std::span<double> var(std::size_t s, std::size_t m) { return {variances.data() + (s * num_mixtures + m) * dim, dim}; }
    std::span<const double> var(std::size_t s, std::size_t m) const {
        return {variances.data() + (s * num_mixtures + m) * dim, dim};
    }

    bool is_left_to_right() const {
        for (std::size_t i = 0; i < num_states; ++i)
            for (std::size_t j = 0; j < num_states; ++j)
                if ((j < i || j > i + 1) && transitions(i, j) != 0.0) return false;
        return true;
    }

    /// Stochasticity and floor invariants. Topology is checked separately.
    void validate(double tol = 1e-9) const {
        auto fail = [&](const std::string& why) {
            throw ValidationError("model " + std::string(name(label)) + ": " + why);
        };
        if (num_states == 0 || num_mixtures == 0 || dim == 0) fail("empty shape");
        if (initial.size() != num_states || transitions.rows() != num_states || transitions.cols() != num_states ||
            weights.rows() != num_states || weights.cols() != num_mixtures ||
            means.size() != num_states * num_mixtures * dim || variances.size() != means.size() ||
            variance_floor.size() != dim)
            fail("parameter arrays disagree with S/M/D");
        auto check_dist = [&](std::span<const double> p, const std::string& what) {
            double s = 0.0;
            for (double v : p) {
                if (!(v >= 0.0) || !std::isfinite(v)) fail(what + " has a negative or non-finite entry");
                s += v;
            }
            if (std::abs(s - 1.0) > tol) fail(what + " sums to " + text::fmt17(s));
        };
        check_dist(initial, "pi");
        for (std::size_t i = 0; i < num_states; ++i) check_dist(transitions.row(i), "A row " + std::to_string(i));
        for (std::size_t i = 0; i < num_states; ++i) check_dist(weights.row(i), "w row " + std::to_string(i));
        for (std::size_t i = 0; i < variances.size(); ++i) {
            if (!std::isfinite(means[i])) fail("non-finite mean");
            if (!(variances[i] > 0.0) || variances[i] < variance_floor[i % dim]) fail("variance below floor");
        }
    }
};

/// Emission constants for fast scoring. Build once per model and reuse.
class PreparedModel {
public:
    explicit PreparedModel(const GmmHmm& m) : model_(&m) {
        const auto S = m.num_states, M = m.num_mixtures, D = m.dim;
        log_initial_.resize(S);
        for (std::size_t s = 0; s < S; ++s) log_initial_[s] = safe_log(m.initial[s]);
        log_trans_ = Matrix(S, S);
        for (std::size_t i = 0; i < S; ++i)
            for (std::size_t j = 0; j < S; ++j) log_trans_(i, j) = safe_log(m.transitions(i, j));
        log_const_.resize(S * M);
        inv_var_.resize(S * M * D);
        const double log2pi = std::log(2.0 * std::numbers::pi);
        for (std::size_t s = 0; s < S; ++s)
            for (std::size_t k = 0; k < M; ++k) {
                double c = safe_log(m.weights(s, k)) - 0.5 * static_cast<double>(D) * log2pi;
                const auto v = m.var(s, k);
                for (std::size_t d = 0; d < D; ++d) {
                    c -= 0.5 * std::log(v[d]);
                    inv_var_[(s * M + k) * D + d] = 1.0 / v[d];
                }
                log_const_[s * M + k] = c;
            }
    }

    const GmmHmm& model() const { return *model_; }
    std::size_t states() const { return model_->num_states; }
    std::size_t mixtures() const { return model_->num_mixtures; }
    std::size_t dim() const { return model_->dim; }
    double log_initial(std::size_t s) const { return log_initial_[s]; }
    double log_trans(std::size_t i, std::size_t j) const { return log_trans_(i, j); }

    /// Per-component log(w * N(x)) into `comp` (size M); returns the state's log emission.
    double component_logs(std::size_t s, std::span<const double> x, std::span<double> comp) const {
        const auto M = mixtures(), D = dim();
        double mx = kNegInf;
        for (std::size_t k = 0; k < M; ++k) {
            const double c = log_const_[s * M + k];
            if (c == kNegInf) {
                comp[k] = kNegInf;
                continue;
            }
            const auto mu = model_->mean(s, k);
            const double* iv = inv_var_.data() + (s * M + k) * D;
            double q = 0.0;
            for (std::size_t d = 0; d < D; ++d) {
                const double diff = x[d] - mu[d];
                q += diff * diff * iv[d];
            }
            comp[k] = c - 0.5 * q;
            mx = std::max(mx, comp[k]);
        }
        if (mx == kNegInf) return kNegInf;
        double sum = 0.0;
        for (std::size_t k = 0; k < M; ++k) sum += std::exp(comp[k] - mx);
        return mx + std::log(sum);
    }

    /// Log emission of every state for every frame (T x S).
    Matrix emission_logs(const Matrix& frames) const {
        check_shape(frames);
        Matrix out(frames.rows(), states());
        std::vector<double> comp(mixtures());
        for (std::size_t t = 0; t < frames.rows(); ++t)
            for (std::size_t s = 0; s < states(); ++s) out(t, s) = component_logs(s, frames.row(t), comp);
        return out;
    }

    void check_shape(const Matrix& frames) const {
        if (frames.cols() != dim())
            throw ShapeError("frame dimension " + std::to_string(frames.cols()) + " does not match model dimension " +
                             std::to_string(dim()));
        if (frames.rows() == 0) throw ShapeError("empty frame sequence");
    }

private:
    const GmmHmm* model_;
    std::vector<double> log_initial_;
    Matrix log_trans_;
    std::vector<double> log_const_;
    std::vector<double> inv_var_;
};

namespace detail {

/// log alpha (T x S) given per-frame state emission logs; returns log p(frames).
inline double forward_pass(const PreparedModel& pm, const Matrix& emis, Matrix& alpha) {
    const auto T = emis.rows(), S = pm.states();
    alpha = Matrix(T, S);
    std::vector<double> tmp(S);
    for (std::size_t s = 0; s < S; ++s) alpha(0, s) = pm.log_initial(s) + emis(0, s);
    for (std::size_t t = 1; t < T; ++t)
        for (std::size_t j = 0; j < S; ++j) {
            for (std::size_t i = 0; i < S; ++i) tmp[i] = alpha(t - 1, i) + pm.log_trans(i, j);
            alpha(t, j) = log_sum_exp(tmp) + emis(t, j);
        }
    return log_sum_exp(alpha.row(T - 1));
}

inline void backward_pass(const PreparedModel& pm, const Matrix& emis, Matrix& beta) {
    const auto T = emis.rows(), S = pm.states();
    beta = Matrix(T, S, 0.0);
    std::vector<double> tmp(S);
    for (std::size_t t = T - 1; t-- > 0;)
        for (std::size_t i = 0; i < S; ++i) {
            for (std::size_t j = 0; j < S; ++j) tmp[j] = pm.log_trans(i, j) + emis(t + 1, j) + beta(t + 1, j);
            beta(t, i) = log_sum_exp(tmp);
        }
}

}  // namespace detail

/// log p(frames | model) by the forward recursion in log space.
inline double log_likelihood(const PreparedModel& pm, const Matrix& frames) {
    const auto emis = pm.emission_logs(frames);
    Matrix alpha;
    return detail::forward_pass(pm, emis, alpha);
}

inline double log_likelihood(const GmmHmm& model, const Matrix& frames) {
    return log_likelihood(PreparedModel(model), frames);
}

struct ForwardBackwardResult {
    double log_likelihood = kNegInf;
    Matrix state_posteriors;  // T x S, rows sum to 1
};

inline ForwardBackwardResult forward_backward(const PreparedModel& pm, const Matrix& frames) {
    const auto emis = pm.emission_logs(frames);
    Matrix alpha, beta;
    ForwardBackwardResult r;
    r.log_likelihood = detail::forward_pass(pm, emis, alpha);
    detail::backward_pass(pm, emis, beta);
    const auto T = frames.rows(), S = pm.states();
    r.state_posteriors = Matrix(T, S);
    if (r.log_likelihood == kNegInf) return r;
    for (std::size_t t = 0; t < T; ++t) {
        // Normalize per row rather than by the total so rounding cannot drift row sums.
        double norm = kNegInf;
        for (std::size_t s = 0; s < S; ++s) norm = log_sum_exp(norm, alpha(t, s) + beta(t, s));
        for (std::size_t s = 0; s < S; ++s) r.state_posteriors(t, s) = std::exp(alpha(t, s) + beta(t, s) - norm);
    }
    return r;
}

inline ForwardBackwardResult forward_backward(const GmmHmm& model, const Matrix& frames) {
    return forward_backward(PreparedModel(model), frames);
}

// ---------------------------------------------------------------------------
// Baum-Welch

/// Neumaier-compensated running sum; keeps long log-likelihood totals exact enough
/// for the 1e-8 monotonicity check.
struct CompensatedSum {
    double sum = 0.0;
    double comp = 0.0;

    void add(double v) {
        const double t = sum + v;
        if (std::abs(sum) >= std::abs(v)) comp += (sum - t) + v;
        else comp += (v - t) + sum;
        sum = t;
    }
    void merge(const CompensatedSum& o) {
        add(o.sum);
        add(o.comp);
    }
    double value() const { return sum + comp; }
};

/// Sufficient statistics for one EM step. Merging is element-wise addition.
struct BaumWelchStats {
    std::size_t S = 0, M = 0, D = 0;
    std::vector<double> initial;     // S
    Matrix transitions;              // S x S expected counts
    Matrix occupancy;                // S x M
    std::vector<double> first;       // S*M*D weighted sums of x
    std::vector<double> second;      // S*M*D weighted sums of x^2
    CompensatedSum log_likelihood;
    std::size_t sequences = 0;
    std::size_t frames = 0;

    BaumWelchStats() = default;
    BaumWelchStats(std::size_t s, std::size_t m, std::size_t d)
        : S(s), M(m), D(d), initial(s, 0.0), transitions(s, s), occupancy(s, m), first(s * m * d, 0.0),
          second(s * m * d, 0.0) {}

    void merge(const BaumWelchStats& o) {
        if (o.S != S || o.M != M || o.D != D) throw ShapeError("cannot merge statistics of different shapes");
        for (std::size_t i = 0; i < initial.size(); ++i) initial[i] += o.initial[i];
        for (std::size_t i = 0; i < S * S; ++i) transitions.data()[i] += o.transitions.data()[i];
        for (std::size_t i = 0; i < S * M; ++i) occupancy.data()[i] += o.occupancy.data()[i];
        for (std::size_t i = 0; i < first.size(); ++i) {
            first[i] += o.first[i];
            second[i] += o.second[i];
        }
        log_likelihood.merge(o.log_likelihood);
        sequences += o.sequences;
        frames += o.frames;
    }
};

/// E-step for one sequence: adds its expected counts into `stats`. Returns its log-likelihood.
inline double accumulate(const PreparedModel& pm, const Matrix& frames, BaumWelchStats& stats) {
    pm.check_shape(frames);
    const auto T = frames.rows(), S = pm.states(), M = pm.mixtures(), D = pm.dim();
    Matrix emis(T, S);
    std::vector<double> comp(T * S * M);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < S; ++s)
            emis(t, s) = pm.component_logs(s, frames.row(t), std::span<double>(comp.data() + (t * S + s) * M, M));

    Matrix alpha, beta;
    const double ll = detail::forward_pass(pm, emis, alpha);
    if (!std::isfinite(ll)) throw TrainingError("sequence has zero likelihood under the current model");
    detail::backward_pass(pm, emis, beta);

    for (std::size_t s = 0; s < S; ++s) stats.initial[s] += std::exp(alpha(0, s) + beta(0, s) - ll);
    for (std::size_t t = 0; t + 1 < T; ++t)
        for (std::size_t i = 0; i < S; ++i) {
            if (alpha(t, i) == kNegInf) continue;
            for (std::size_t j = 0; j < S; ++j) {
                const double lt = pm.log_trans(i, j);
                if (lt == kNegInf) continue;
                stats.transitions(i, j) += std::exp(alpha(t, i) + lt + emis(t + 1, j) + beta(t + 1, j) - ll);
            }
        }
    for (std::size_t t = 0; t < T; ++t) {
        const auto x = frames.row(t);
        for (std::size_t s = 0; s < S; ++s) {
            const double lg = alpha(t, s) + beta(t, s) - ll;
            if (lg == kNegInf || emis(t, s) == kNegInf) continue;
            for (std::size_t k = 0; k < M; ++k) {
                const double c = comp[(t * S + s) * M + k];
                if (c == kNegInf) continue;
                const double r = std::exp(lg + c - emis(t, s));
                if (r == 0.0) continue;
                stats.occupancy(s, k) += r;
                double* f1 = stats.first.data() + (s * M + k) * D;
                double* f2 = stats.second.data() + (s * M + k) * D;
                for (std::size_t d = 0; d < D; ++d) {
                    f1[d] += r * x[d];
                    f2[d] += r * x[d] * x[d];
                }
            }
        }
    }
    stats.log_likelihood.add(ll);
    stats.sequences += 1;
    stats.frames += T;
    return ll;
}

inline BaumWelchStats accumulate_all(const GmmHmm& model, std::span<const Matrix* const> sequences) {
    const PreparedModel pm(model);
    BaumWelchStats stats(model.num_states, model.num_mixtures, model.dim);
    for (const auto* seq : sequences) accumulate(pm, *seq, stats);
    return stats;
}

inline constexpr double kMixtureDropWeight = 1e-8;

/// M-step. Components whose weight falls below kMixtureDropWeight are dropped
/// (weight 0, parameters frozen) and the state's weights renormalized.
/// Returns the number of components dropped by this step.
inline std::size_t maximize(GmmHmm& m, const BaumWelchStats& st) {
    const auto S = m.num_states, M = m.num_mixtures, D = m.dim;
    std::size_t dropped = 0;

    double pi_total = 0.0;
    for (double v : st.initial) pi_total += v;
    if (pi_total > 0.0)
        for (std::size_t s = 0; s < S; ++s) m.initial[s] = st.initial[s] / pi_total;

    for (std::size_t i = 0; i < S; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < S; ++j) row += st.transitions(i, j);
        if (row > 0.0)
            for (std::size_t j = 0; j < S; ++j) m.transitions(i, j) = st.transitions(i, j) / row;
    }

    for (std::size_t s = 0; s < S; ++s) {
        double occ = 0.0;
        for (std::size_t k = 0; k < M; ++k) occ += st.occupancy(s, k);
        if (!(occ > 0.0)) continue;
        double kept = 0.0;
        for (std::size_t k = 0; k < M; ++k) {
            const double n = st.occupancy(s, k);
            const double w = n / occ;
            if (w < kMixtureDropWeight) {
                if (m.weights(s, k) > 0.0) ++dropped;
                m.weights(s, k) = 0.0;
                continue;
            }
            m.weights(s, k) = w;
            kept += w;
            auto mu = m.mean(s, k);
            auto var = m.var(s, k);
            const double* f1 = st.first.data() + (s * M + k) * D;
            const double* f2 = st.second.data() + (s * M + k) * D;
            for (std::size_t d = 0; d < D; ++d) {
                mu[d] = f1[d] / n;
                var[d] = std::max(f2[d] / n - mu[d] * mu[d], m.variance_floor[d]);
            }
        }
        if (kept > 0.0)
            for (std::size_t k = 0; k < M; ++k) m.weights(s, k) /= kept;
    }
    return dropped;
}

struct BaumWelchResult {
    GmmHmm model;
    std::vector<double> history;  // total log-likelihood before the first and after every update
    std::size_t dropped_mixtures = 0;
};

/// EM re-estimation. Stops after max_iters updates or once the relative
/// improvement of the total log-likelihood falls below tol.
inline BaumWelchResult baum_welch(GmmHmm model, std::span<const Matrix* const> sequences, int max_iters, double tol) {
    if (sequences.empty()) throw TrainingError("baum_welch: empty sequence list for " + std::string(name(model.label)));
    if (max_iters < 1) throw TrainingError("baum_welch: max_iters must be >= 1");
    for (const auto* seq : sequences)
        if (seq->cols() != model.dim)
            throw ShapeError("baum_welch: sequence dimension " + std::to_string(seq->cols()) +
                             " does not match model dimension " + std::to_string(model.dim));

    BaumWelchResult r;
    auto stats = accumulate_all(model, sequences);
    r.history.push_back(stats.log_likelihood.value());
    for (int it = 0; it < max_iters; ++it) {
        r.dropped_mixtures += maximize(model, stats);
        stats = accumulate_all(model, sequences);
        const double prev = r.history.back();
        const double cur = stats.log_likelihood.value();
        r.history.push_back(cur);
        if (cur - prev < tol * std::abs(prev)) break;
    }
    r.model = std::move(model);
    return r;
}

inline BaumWelchResult baum_welch(GmmHmm model, const std::vector<Matrix>& sequences, int max_iters, double tol) {
    std::vector<const Matrix*> ptrs;
    for (const auto& s : sequences) ptrs.push_back(&s);
    return baum_welch(std::move(model), std::span<const Matrix* const>(ptrs), max_iters, tol);
}

// ---------------------------------------------------------------------------
// Initialization

/// Per-dimension floor: `scale` times the pooled variance of all frames, never below 1e-10.
inline std::vector<double> variance_floor(std::span<const Matrix* const> sequences, double scale) {
    if (sequences.empty()) throw InitializationError("variance floor needs at least one sequence");
    const auto D = sequences.front()->cols();
    std::vector<CompensatedSum> s1(D), s2(D);
    double n = 0.0;
    for (const auto* seq : sequences)
        for (std::size_t t = 0; t < seq->rows(); ++t) {
            for (std::size_t d = 0; d < D; ++d) {
                s1[d].add((*seq)(t, d));
                s2[d].add((*seq)(t, d) * (*seq)(t, d));
            }
            n += 1.0;
        }
    std::vector<double> out(D);
    for (std::size_t d = 0; d < D; ++d) {
        const double mean = s1[d].value() / n;
        out[d] = std::max(scale * std::max(s2[d].value() / n - mean * mean, 0.0), 1e-10);
    }
    return out;
}

namespace detail {

/// Seeded Lloyd k-means (fixed iteration count) on rows of `pts`, distances scaled by `inv_scale`.
/// Returns the cluster index of every point.
inline std::vector<std::size_t> kmeans(const std::vector<std::span<const double>>& pts, std::size_t k,
                                       std::span<const double> inv_scale, Rng& rng, int iterations,
                                       std::vector<std::vector<double>>& centers) {
    const auto n = pts.size();
    const auto D = inv_scale.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = 0; i < std::min(k, n); ++i) std::swap(order[i], order[i + uniform_index(rng, n - i)]);
    centers.assign(k, std::vector<double>(D));
    for (std::size_t c = 0; c < k; ++c) {
        const auto p = pts[order[c % n]];
        std::copy(p.begin(), p.end(), centers[c].begin());
    }
    std::vector<std::size_t> assign(n, 0);
    for (int it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < k; ++c) {
                double d2 = 0.0;
                for (std::size_t d = 0; d < D; ++d) {
                    const double diff = pts[i][d] - centers[c][d];
                    d2 += diff * diff * inv_scale[d];
                }
                if (d2 < best) {
                    best = d2;
                    assign[i] = c;
                }
            }
        }
        std::vector<std::vector<double>> sum(k, std::vector<double>(D, 0.0));
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++count[assign[i]];
            for (std::size_t d = 0; d < D; ++d) sum[assign[i]][d] += pts[i][d];
        }
        for (std::size_t c = 0; c < k; ++c)
            if (count[c] > 0)
                for (std::size_t d = 0; d < D; ++d) centers[c][d] = sum[c][d] / static_cast<double>(count[c]);
    }
    return assign;
}

}  // namespace detail

inline constexpr int kKMeansIterations = 10;

/// Builds a left-to-right model: frames are sliced uniformly in time into S
/// states, each state's frames are clustered into M components by k-means.
inline GmmHmm init_model(LabelClass label, std::span<const Matrix* const> sequences, std::size_t S, std::size_t M,
                         std::uint64_t seed, std::span<const double> var_floor) {
    if (S == 0 || M == 0) throw InitializationError("init_model: S and M must be positive");
    if (sequences.empty())
        throw InitializationError("init_model: no training data for class " + std::string(name(label)));
    const auto D = sequences.front()->cols();
    if (var_floor.size() != D) throw ShapeError("init_model: variance floor dimension mismatch");
    std::size_t total = 0;
    for (const auto* seq : sequences) {
        if (seq->cols() != D) throw ShapeError("init_model: inconsistent frame dimension");
        total += seq->rows();
    }
    if (total < S * M)
        throw InitializationError("init_model: class " + std::string(name(label)) + " has " + std::to_string(total) +
                                  " frames, needs at least S*M = " + std::to_string(S * M));

    std::vector<std::vector<std::span<const double>>> by_state(S);
    for (const auto* seq : sequences) {
        const auto T = seq->rows();
        for (std::size_t t = 0; t < T; ++t) by_state[t * S / T].push_back(seq->row(t));
    }

    GmmHmm m(label, S, M, D);
    std::copy(var_floor.begin(), var_floor.end(), m.variance_floor.begin());
    auto rng = make_rng(seed, "hmm.init", static_cast<std::uint64_t>(code(label)));

    for (std::size_t s = 0; s < S; ++s) {
        const auto& pts = by_state[s];
        if (pts.empty())
            throw InitializationError("init_model: class " + std::string(name(label)) + " state " + std::to_string(s) +
                                      " receives no frames; sequences are shorter than S");
        std::vector<double> mu(D, 0.0), v(D, 0.0);
        for (const auto& p : pts)
            for (std::size_t d = 0; d < D; ++d) mu[d] += p[d];
        for (auto& x : mu) x /= static_cast<double>(pts.size());
        for (const auto& p : pts)
            for (std::size_t d = 0; d < D; ++d) v[d] += (p[d] - mu[d]) * (p[d] - mu[d]);
        std::vector<double> inv_scale(D);
        for (std::size_t d = 0; d < D; ++d) {
            v[d] = std::max(v[d] / static_cast<double>(pts.size()), var_floor[d]);
            inv_scale[d] = 1.0 / v[d];
        }

        std::vector<std::vector<double>> centers;
        const auto assign = detail::kmeans(pts, M, inv_scale, rng, kKMeansIterations, centers);
        std::vector<std::size_t> count(M, 0);
        for (auto a : assign) ++count[a];
        for (std::size_t k = 0; k < M; ++k) {
            auto mean = m.mean(s, k);
            auto var = m.var(s, k);
            if (count[k] == 0) {  // empty cluster: dormant component
                m.weights(s, k) = 0.0;
                std::copy(mu.begin(), mu.end(), mean.begin());
                std::copy(v.begin(), v.end(), var.begin());
                continue;
            }
            m.weights(s, k) = static_cast<double>(count[k]) / static_cast<double>(pts.size());
            std::vector<double> acc(D, 0.0), acc2(D, 0.0);
            for (std::size_t i = 0; i < pts.size(); ++i)
                if (assign[i] == k)
                    for (std::size_t d = 0; d < D; ++d) acc[d] += pts[i][d];
            for (std::size_t d = 0; d < D; ++d) mean[d] = acc[d] / static_cast<double>(count[k]);
            for (std::size_t i = 0; i < pts.size(); ++i)
                if (assign[i] == k)
                    for (std::size_t d = 0; d < D; ++d) acc2[d] += (pts[i][d] - mean[d]) * (pts[i][d] - mean[d]);
            for (std::size_t d = 0; d < D; ++d)
                var[d] = std::max(acc2[d] / static_cast<double>(count[k]), var_floor[d]);
        }
    }

    double mean_len = static_cast<double>(total) / static_cast<double>(sequences.size());
    const double stay = std::clamp(1.0 - static_cast<double>(S) / mean_len, 0.1, 0.95);
    m.initial[0] = 1.0;
    for (std::size_t i = 0; i < S; ++i) {
        if (i + 1 < S) {
            m.transitions(i, i) = stay;
            m.transitions(i, i + 1) = 1.0 - stay;
        } else {
            m.transitions(i, i) = 1.0;
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Sampling (used to generate data from a known model)

inline Matrix sample_sequence(const GmmHmm& m, std::size_t T, Rng& rng) {
    auto draw = [&](std::span<const double> p) {
        double u = uniform01(rng), acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            acc += p[i];
            if (u < acc) return i;
        }
        for (std::size_t i = p.size(); i-- > 0;)
            if (p[i] > 0.0) return i;
        return std::size_t{0};
    };
    Matrix out(T, m.dim);
    std::size_t s = draw(m.initial);
    for (std::size_t t = 0; t < T; ++t) {
        if (t > 0) s = draw(m.transitions.row(s));
        const auto k = draw(m.weights.row(s));
        const auto mu = m.mean(s, k);
        const auto v = m.var(s, k);
        for (std::size_t d = 0; d < m.dim; ++d) out(t, d) = mu[d] + std::sqrt(v[d]) * standard_normal(rng);
    }
    return out;
}

}  // namespace selftrain
