#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "selftrain/selftrain.hpp"

namespace selftrain::testing {

struct PathOracle {
    double log_likelihood = 0.0;
    Matrix gamma;  // T x S
};

/// log w N(x) summed over mixtures, evaluated directly.
inline long double emission_log(const GmmHmm& m, std::size_t s, std::span<const double> x) {
    long double total = 0.0L;
    for (std::size_t k = 0; k < m.num_mixtures; ++k) {
        const auto mu = m.mean(s, k);
        const auto v = m.var(s, k);
        long double dens = m.weights(s, k);
        for (std::size_t d = 0; d < m.dim; ++d) {
            const long double z = (x[d] - mu[d]);
            dens *= std::exp(-0.5L * z * z / v[d]) / std::sqrt(2.0L * std::numbers::pi_v<long double> * v[d]);
        }
        total += dens;
    }
    return std::log(total);
}

/// Sums over every one of the S^T state paths.
inline PathOracle enumerate_paths(const GmmHmm& m, const Matrix& frames) {
    const auto S = m.num_states, T = frames.rows();
    std::vector<std::vector<long double>> em(T, std::vector<long double>(S));
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < S; ++s) em[t][s] = emission_log(m, s, frames.row(t));

    std::size_t paths = 1;
    for (std::size_t t = 0; t < T; ++t) paths *= S;
    std::vector<long double> logp(paths);
    long double mx = -INFINITY;
    std::vector<std::size_t> state(T);
    for (std::size_t p = 0; p < paths; ++p) {
        std::size_t code = p;
        for (std::size_t t = 0; t < T; ++t) {
            state[t] = code % S;
            code /= S;
        }
        long double lp = std::log(static_cast<long double>(m.initial[state[0]])) + em[0][state[0]];
        for (std::size_t t = 1; t < T; ++t)
            lp += std::log(static_cast<long double>(m.transitions(state[t - 1], state[t]))) + em[t][state[t]];
        logp[p] = lp;
        if (lp > mx) mx = lp;
    }
    long double total = 0.0L;
    std::vector<std::vector<long double>> occ(T, std::vector<long double>(S, 0.0L));
    for (std::size_t p = 0; p < paths; ++p) {
        const long double w = std::exp(logp[p] - mx);
        total += w;
        std::size_t code = p;
        for (std::size_t t = 0; t < T; ++t) {
            occ[t][code % S] += w;
            code /= S;
        }
    }
    PathOracle o;
    o.log_likelihood = static_cast<double>(mx + std::log(total));
    o.gamma = Matrix(T, S);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t s = 0; s < S; ++s) o.gamma(t, s) = static_cast<double>(occ[t][s] / total);
    return o;
}

inline std::vector<double> random_distribution(std::size_t n, Rng& rng) {
    std::vector<double> p(n);
    double s = 0.0;
    for (auto& v : p) s += (v = 0.05 + uniform01(rng));
    for (auto& v : p) v /= s;
    return p;
}

/// Fully connected model with random parameters.
inline GmmHmm random_model(std::size_t S, std::size_t M, std::size_t D, Rng& rng) {
    GmmHmm m(LabelClass::GPED, S, M, D);
    m.initial = random_distribution(S, rng);
    for (std::size_t i = 0; i < S; ++i) {
        const auto row = random_distribution(S, rng);
        for (std::size_t j = 0; j < S; ++j) m.transitions(i, j) = row[j];
        const auto w = random_distribution(M, rng);
        for (std::size_t k = 0; k < M; ++k) m.weights(i, k) = w[k];
        for (std::size_t k = 0; k < M; ++k)
            for (std::size_t d = 0; d < D; ++d) {
                m.mean(i, k)[d] = uniform(rng, -2.0, 2.0);
                m.var(i, k)[d] = uniform(rng, 0.3, 2.0);
            }
    }
    std::fill(m.variance_floor.begin(), m.variance_floor.end(), 1e-6);
    return m;
}

inline Matrix random_frames(std::size_t T, std::size_t D, Rng& rng) {
    Matrix x(T, D);
    for (auto& v : x.data()) v = 1.5 * standard_normal(rng);
    return x;
}

inline double relative_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

/// Left-to-right model over S states, each emitting around its own mean.
inline GmmHmm chain_model(std::size_t S, std::size_t D, double stay, double spacing) {
    GmmHmm m(LabelClass::PLED, S, 1, D);
    m.initial[0] = 1.0;
    for (std::size_t i = 0; i < S; ++i) {
        if (i + 1 < S) {
            m.transitions(i, i) = stay;
            m.transitions(i, i + 1) = 1.0 - stay;
        } else {
            m.transitions(i, i) = 1.0;
        }
        m.weights(i, 0) = 1.0;
        for (std::size_t d = 0; d < D; ++d) {
            m.mean(i, 0)[d] = spacing * static_cast<double>(i);
            m.var(i, 0)[d] = 1.0;
        }
    }
    std::fill(m.variance_floor.begin(), m.variance_floor.end(), 1e-6);
    return m;
}

inline std::vector<Candidate> make_candidates(const std::vector<double>& conf, LabelClass label = LabelClass::SPSW) {
    std::vector<Candidate> out;
    for (std::size_t i = 0; i < conf.size(); ++i)
        out.push_back({i, EpochKey{"r" + std::to_string(i / 100), i % 4, static_cast<double>(i)}, label, conf[i]});
    return out;
}

}  // namespace selftrain::testing
