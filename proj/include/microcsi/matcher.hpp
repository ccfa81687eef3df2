#pragma once

// KNN anomaly-detection matcher over enrolled fingerprints.

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "microcsi/extraction.hpp"

namespace microcsi {

enum class KRule { explicit_k, sqrt_s };

/// Real-vector view of a fingerprint used for Euclidean distances.
enum class FeatureView {
    complex,    // [Re f; Im f], dimension 2|K|
    amplitude,  // |f|
    phase       // arg f
};

struct MatcherParams {
    KRule k_rule = KRule::sqrt_s;
    int k_neighbors = 1;  // used when k_rule == explicit_k
    double threshold = 1.0;
    FeatureView view = FeatureView::complex;
};

KRule parse_k_rule(std::string_view name);
std::string_view to_string(KRule rule);
FeatureView parse_feature_view(std::string_view name);
std::string_view to_string(FeatureView view);

Eigen::VectorXd feature_vector(const ToneVector& values, FeatureView view);

/// Euclidean distance with a fixed summation order (eight interleaved
/// partial sums), so every caller gets bit-identical results.
double feature_distance(std::span<const double> a, std::span<const double> b);

/// K for an identity with `enrolled` fingerprints: floor(sqrt(S)) under
/// sqrt_s, the explicit value otherwise, clamped to [1, S].
int effective_k(const MatcherParams& params, std::size_t enrolled);

/// Immutable snapshot of enrolled fingerprints per identity. Copies share
/// per-identity storage; enroll() returns a new snapshot.
class FingerprintLibrary {
public:
    FingerprintLibrary() = default;

    /// Digest of the SignalConfig all fingerprints were extracted under;
    /// unset until the first enrollment.
    std::optional<std::uint64_t> config_digest() const { return digest_; }

    bool contains(const std::string& identity) const { return entries_.count(identity) != 0; }
    std::vector<std::string> identities() const;
    std::size_t size(const std::string& identity) const;
    const std::vector<Fingerprint>& fingerprints(const std::string& identity) const;

    /// Feature matrix (one column per enrolled fingerprint).
    const Eigen::MatrixXd& features(const std::string& identity, FeatureView view) const;

private:
    struct Identity {
        std::vector<Fingerprint> fingerprints;
        std::array<Eigen::MatrixXd, 3> features;
    };

    const Identity& lookup(const std::string& identity) const;

    std::map<std::string, std::shared_ptr<const Identity>> entries_;
    std::optional<std::uint64_t> digest_;

    friend FingerprintLibrary enroll(const FingerprintLibrary&, const std::string&, std::span<const Fingerprint>,
                                     bool);
};

/// Appends `fingerprints` under `identity`. With `dedup`, fingerprints whose
/// values are already enrolled under that identity are skipped.
FingerprintLibrary enroll(const FingerprintLibrary& library, const std::string& identity,
                          std::span<const Fingerprint> fingerprints, bool dedup = false);

/// The K smallest distances from `probe` to the claimed identity, ascending.
std::vector<double> nearest_distances(const FingerprintLibrary& library, const MatcherParams& params,
                                      const std::string& claimed_id, const Fingerprint& probe);

/// Mean of the K nearest-neighbour distances.
double knn_distance(const FingerprintLibrary& library, const MatcherParams& params, const std::string& claimed_id,
                    const Fingerprint& probe);

/// knn_distance for many probes (bit-identical to calling it per probe).
std::vector<double> knn_distances(const FingerprintLibrary& library, const MatcherParams& params,
                                  const std::string& claimed_id, std::span<const Fingerprint> probes);

/// Each enrolled fingerprint scored against the identity's other
/// fingerprints (K derived from S - 1). Needs S >= 2.
std::vector<double> leave_one_out_distances(const FingerprintLibrary& library, const MatcherParams& params,
                                            const std::string& identity);

struct AuthDecision {
    std::string claimed_id;
    double distance = 0.0;
    double threshold = 0.0;
    bool accepted = false;
    std::vector<double> neighbor_distances;
};

/// Accepts when distance <= threshold (a tie accepts).
AuthDecision authenticate(const FingerprintLibrary& library, const MatcherParams& params,
                          const std::string& claimed_id, const Fingerprint& probe);

}  // namespace microcsi
