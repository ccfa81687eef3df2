#pragma once

// Independent reference implementations used as test oracles. None of these
// go through the library's own projector, distance or sweep code paths
// unless noted.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "microcsi/signal_core.hpp"

namespace testsupport {

using microcsi::Complex;
using microcsi::ToneVector;

inline ToneVector random_tones(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    ToneVector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double re = g(rng);
        v[i] = Complex(re, g(rng));
    }
    return v;
}

inline Complex random_complex(std::mt19937_64& rng, double min_mag, double max_mag) {
    std::uniform_real_distribution<double> mag(min_mag, max_mag);
    std::uniform_real_distribution<double> ph(-std::numbers::pi, std::numbers::pi);
    const double m = mag(rng);
    return std::polar(m, ph(rng));
}

/// The full N x N unitary DFT, built entry by entry.
inline Eigen::MatrixXcd full_unitary_dft(int n) {
    Eigen::MatrixXcd f(n, n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    for (int k = 0; k < n; ++k) {
        for (int l = 0; l < n; ++l) {
            const double angle = -2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * l) % n) / n;
            f(k, l) = std::polar(scale, angle);
        }
    }
    return f;
}

/// Rows K, columns L of the full DFT.
inline Eigen::MatrixXcd dft_submatrix(const microcsi::SignalConfig& config) {
    const Eigen::MatrixXcd full = full_unitary_dft(config.dft_len());
    const auto& rows = config.subcarriers();
    const auto& cols = config.tap_set();
    Eigen::MatrixXcd sub(rows.size(), cols.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < cols.size(); ++c) sub(r, c) = full(rows[r], cols[c]);
    }
    return sub;
}

/// Projection via a rank-revealing pseudo-inverse of the brute-force matrix.
inline ToneVector pinv_projection(const Eigen::MatrixXcd& f, const ToneVector& v) {
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod(f);
    return f * (cod.pseudoInverse() * v);
}

/// Component of v orthogonal to span(f), by Householder QR of f.
inline ToneVector orthogonal_residual(const Eigen::MatrixXcd& f, const ToneVector& v) {
    Eigen::HouseholderQR<Eigen::MatrixXcd> qr(f);
    const Eigen::MatrixXcd q = qr.householderQ() * Eigen::MatrixXcd::Identity(f.rows(), f.cols());
    return v - q * (q.adjoint() * v);
}

/// Plain Euclidean distance, naive summation.
inline double naive_distance(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

struct SweepPoint {
    double threshold;
    double far;
    double adr;
};

/// Every achievable (FAR, ADR) pair: thresholds at -inf, +inf and the
/// midpoints between consecutive distinct pooled scores. Accept <= t.
inline std::vector<SweepPoint> midpoint_sweep(const std::vector<double>& legit, const std::vector<double>& attack) {
    std::vector<double> all = legit;
    all.insert(all.end(), attack.begin(), attack.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    std::vector<double> thresholds{-std::numeric_limits<double>::infinity()};
    for (std::size_t i = 0; i + 1 < all.size(); ++i) thresholds.push_back(0.5 * (all[i] + all[i + 1]));
    thresholds.push_back(std::numeric_limits<double>::infinity());
    std::vector<SweepPoint> out;
    for (double t : thresholds) {
        std::size_t lr = 0;
        std::size_t ar = 0;
        for (double s : legit) lr += s > t ? 1 : 0;
        for (double s : attack) ar += s > t ? 1 : 0;
        out.push_back({t, static_cast<double>(lr) / legit.size(), static_cast<double>(ar) / attack.size()});
    }
    return out;
}

/// Operating point with the highest ADR among sweep points with FAR <= cap.
inline SweepPoint best_under_cap(const std::vector<SweepPoint>& sweep, double cap) {
    SweepPoint best{0.0, 0.0, -1.0};
    for (const auto& p : sweep) {
        if (p.far <= cap && (p.adr > best.adr || (p.adr == best.adr && p.far > best.far))) best = p;
    }
    return best;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("microcsi-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace testsupport
