#include "microcsi/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace microcsi {
namespace {

std::size_t view_index(FeatureView view) { return static_cast<std::size_t>(view); }

std::span<const double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
    return {m.data() + c * m.rows(), static_cast<std::size_t>(m.rows())};
}

std::span<const double> as_span(const Eigen::VectorXd& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

// Mean of the k smallest entries; partially reorders `d`.
double mean_of_smallest(std::vector<double>& d, int k) {
    const auto kk = static_cast<std::ptrdiff_t>(k);
    std::nth_element(d.begin(), d.begin() + (kk - 1), d.end());
    std::sort(d.begin(), d.begin() + kk);
    double sum = 0.0;
    for (std::ptrdiff_t i = 0; i < kk; ++i) sum += d[static_cast<std::size_t>(i)];
    return sum / static_cast<double>(k);
}

void distances_to(const Eigen::MatrixXd& lib, std::span<const double> probe, std::vector<double>& out) {
    if (static_cast<Eigen::Index>(probe.size()) != lib.rows()) {
        throw DataError("probe feature dimension does not match the library");
    }
    out.resize(static_cast<std::size_t>(lib.cols()));
    for (Eigen::Index c = 0; c < lib.cols(); ++c) out[static_cast<std::size_t>(c)] = feature_distance(column(lib, c), probe);
}

// Distances from each of `count` probes (columns of `probes` starting at
// `first`) to every library column. Works in tiles so that a library chunk
// stays in cache while a block of probes is scored against it; each entry
// is still a single feature_distance call.
void distance_block(const Eigen::MatrixXd& lib, const Eigen::MatrixXd& probes, Eigen::Index first, Eigen::Index count,
                    std::vector<std::vector<double>>& rows) {
    constexpr Eigen::Index kChunk = 128;
    const Eigen::Index n = lib.cols();
    rows.resize(static_cast<std::size_t>(count));
    for (auto& r : rows) r.resize(static_cast<std::size_t>(n));
    for (Eigen::Index c0 = 0; c0 < n; c0 += kChunk) {
        const Eigen::Index c1 = std::min(n, c0 + kChunk);
        for (Eigen::Index p = 0; p < count; ++p) {
            const auto probe = column(probes, first + p);
            double* out = rows[static_cast<std::size_t>(p)].data();
            for (Eigen::Index c = c0; c < c1; ++c) out[c] = feature_distance(column(lib, c), probe);
        }
    }
}

constexpr Eigen::Index kProbeBlock = 32;

}  // namespace

KRule parse_k_rule(std::string_view name) {
    if (name == "sqrt_s" || name == "sqrt-s") return KRule::sqrt_s;
    if (name == "explicit") return KRule::explicit_k;
    throw ConfigError("unknown k rule '" + std::string(name) + "'");
}

std::string_view to_string(KRule rule) { return rule == KRule::sqrt_s ? "sqrt_s" : "explicit"; }

FeatureView parse_feature_view(std::string_view name) {
    if (name == "complex") return FeatureView::complex;
    if (name == "amplitude") return FeatureView::amplitude;
    if (name == "phase") return FeatureView::phase;
    throw ConfigError("unknown feature view '" + std::string(name) + "'");
}

std::string_view to_string(FeatureView view) {
    switch (view) {
        case FeatureView::complex: return "complex";
        case FeatureView::amplitude: return "amplitude";
        case FeatureView::phase: return "phase";
    }
    return "complex";
}

Eigen::VectorXd feature_vector(const ToneVector& values, FeatureView view) {
    const Eigen::Index n = values.size();
    switch (view) {
        case FeatureView::complex: {
            Eigen::VectorXd f(2 * n);
            f.head(n) = values.real();
            f.tail(n) = values.imag();
            return f;
        }
        case FeatureView::amplitude: return values.cwiseAbs();
        case FeatureView::phase: return values.unaryExpr([](const Complex& c) { return std::arg(c); }).real();
    }
    throw ConfigError("bad feature view");
}

double feature_distance(std::span<const double> a, std::span<const double> b) {
    const std::size_t n = std::min(a.size(), b.size());
    double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t j = 0; j < 8; ++j) {
            const double d = a[i + j] - b[i + j];
            acc[j] += d * d;
        }
    }
    for (std::size_t j = 0; i < n; ++i, ++j) {
        const double d = a[i] - b[i];
        acc[j] += d * d;
    }
    return std::sqrt(((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])));
}

int effective_k(const MatcherParams& params, std::size_t enrolled) {
    if (enrolled == 0) throw DataError("identity has no enrolled fingerprints");
    long k = params.k_rule == KRule::sqrt_s
                 ? static_cast<long>(std::floor(std::sqrt(static_cast<double>(enrolled))))
                 : params.k_neighbors;
    if (params.k_rule == KRule::explicit_k && k < 1) throw ConfigError("k_neighbors must be >= 1");
    return static_cast<int>(std::clamp<long>(k, 1, static_cast<long>(enrolled)));
}

std::vector<std::string> FingerprintLibrary::identities() const {
    std::vector<std::string> ids;
    for (const auto& [id, entry] : entries_) ids.push_back(id);
    return ids;
}

const FingerprintLibrary::Identity& FingerprintLibrary::lookup(const std::string& identity) const {
    auto it = entries_.find(identity);
    if (it == entries_.end()) throw DataError("identity '" + identity + "' is not enrolled");
    return *it->second;
}

std::size_t FingerprintLibrary::size(const std::string& identity) const {
    return lookup(identity).fingerprints.size();
}

const std::vector<Fingerprint>& FingerprintLibrary::fingerprints(const std::string& identity) const {
    return lookup(identity).fingerprints;
}

const Eigen::MatrixXd& FingerprintLibrary::features(const std::string& identity, FeatureView view) const {
    return lookup(identity).features[view_index(view)];
}

FingerprintLibrary enroll(const FingerprintLibrary& library, const std::string& identity,
                          std::span<const Fingerprint> fingerprints, bool dedup) {
    if (fingerprints.empty()) throw DataError("nothing to enroll for '" + identity + "'");
    if (identity.empty()) throw DataError("identity must be non-empty");
    auto digest = library.digest_;
    for (const auto& fp : fingerprints) {
        if (!digest) digest = fp.config_digest;
        if (fp.config_digest != *digest) throw DataError("fingerprint config digest does not match the library");
    }

    auto entry = std::make_shared<FingerprintLibrary::Identity>();
    if (auto it = library.entries_.find(identity); it != library.entries_.end()) {
        entry->fingerprints = it->second->fingerprints;
    }
    const std::size_t dim = static_cast<std::size_t>(fingerprints.front().values.size());
    for (const auto& fp : fingerprints) {
        if (static_cast<std::size_t>(fp.values.size()) != dim ||
            (!entry->fingerprints.empty() && entry->fingerprints.front().values.size() != fp.values.size())) {
            throw DataError("fingerprint length mismatch while enrolling '" + identity + "'");
        }
        if (dedup && std::any_of(entry->fingerprints.begin(), entry->fingerprints.end(),
                                 [&](const Fingerprint& e) { return e.values == fp.values; })) {
            continue;
        }
        entry->fingerprints.push_back(fp);
    }

    const auto& fps = entry->fingerprints;
    for (FeatureView view : {FeatureView::complex, FeatureView::amplitude, FeatureView::phase}) {
        const Eigen::Index rows = feature_vector(fps.front().values, view).size();
        Eigen::MatrixXd m(rows, static_cast<Eigen::Index>(fps.size()));
        for (std::size_t i = 0; i < fps.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = feature_vector(fps[i].values, view);
        entry->features[view_index(view)] = std::move(m);
    }

    FingerprintLibrary out = library;
    out.digest_ = digest;
    out.entries_[identity] = std::move(entry);
    return out;
}

std::vector<double> nearest_distances(const FingerprintLibrary& library, const MatcherParams& params,
                                      const std::string& claimed_id, const Fingerprint& probe) {
    const auto& lib = library.features(claimed_id, params.view);
    std::vector<double> d;
    distances_to(lib, as_span(feature_vector(probe.values, params.view)), d);
    const int k = effective_k(params, d.size());
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    d.resize(static_cast<std::size_t>(k));
    std::sort(d.begin(), d.end());
    return d;
}

double knn_distance(const FingerprintLibrary& library, const MatcherParams& params, const std::string& claimed_id,
                    const Fingerprint& probe) {
    const auto& lib = library.features(claimed_id, params.view);
    std::vector<double> d;
    distances_to(lib, as_span(feature_vector(probe.values, params.view)), d);
    return mean_of_smallest(d, effective_k(params, d.size()));
}

std::vector<double> knn_distances(const FingerprintLibrary& library, const MatcherParams& params,
                                  const std::string& claimed_id, std::span<const Fingerprint> probes) {
    const auto& lib = library.features(claimed_id, params.view);
    const int k = effective_k(params, static_cast<std::size_t>(lib.cols()));
    std::vector<double> out;
    out.reserve(probes.size());
    std::vector<std::vector<double>> rows;
    Eigen::MatrixXd block;
    for (std::size_t b0 = 0; b0 < probes.size(); b0 += kProbeBlock) {
        const auto count = static_cast<Eigen::Index>(std::min<std::size_t>(kProbeBlock, probes.size() - b0));
        block.resize(lib.rows(), count);
        for (Eigen::Index p = 0; p < count; ++p) {
            const Eigen::VectorXd f = feature_vector(probes[b0 + static_cast<std::size_t>(p)].values, params.view);
            if (f.size() != lib.rows()) throw DataError("probe feature dimension does not match the library");
            block.col(p) = f;
        }
        distance_block(lib, block, 0, count, rows);
        for (auto& r : rows) out.push_back(mean_of_smallest(r, k));
    }
    return out;
}

std::vector<double> leave_one_out_distances(const FingerprintLibrary& library, const MatcherParams& params,
                                            const std::string& identity) {
    const auto& lib = library.features(identity, params.view);
    const auto n = static_cast<std::size_t>(lib.cols());
    if (n < 2) throw DataError("leave-one-out scoring needs at least two fingerprints for '" + identity + "'");
    const int k = effective_k(params, n - 1);
    std::vector<double> out;
    out.reserve(n);
    std::vector<std::vector<double>> rows;
    for (Eigen::Index b0 = 0; b0 < lib.cols(); b0 += kProbeBlock) {
        const Eigen::Index count = std::min(kProbeBlock, lib.cols() - b0);
        distance_block(lib, lib, b0, count, rows);
        for (Eigen::Index p = 0; p < count; ++p) {
            auto& d = rows[static_cast<std::size_t>(p)];
            d.erase(d.begin() + (b0 + p));  // never score a fingerprint against itself
            out.push_back(mean_of_smallest(d, k));
        }
    }
    return out;
}

AuthDecision authenticate(const FingerprintLibrary& library, const MatcherParams& params,
                          const std::string& claimed_id, const Fingerprint& probe) {
    if (!(params.threshold > 0.0)) throw ConfigError("threshold must be positive");
    AuthDecision dec;
    dec.claimed_id = claimed_id;
    dec.threshold = params.threshold;
    dec.neighbor_distances = nearest_distances(library, params, claimed_id, probe);
    double sum = 0.0;
    for (double x : dec.neighbor_distances) sum += x;
    dec.distance = sum / static_cast<double>(dec.neighbor_distances.size());
    dec.accepted = dec.distance <= dec.threshold;
    return dec;
}

}  // namespace microcsi
