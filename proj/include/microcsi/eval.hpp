#pragma once

// Evaluation harness: device-rotation attacks, ADR/FAR operating points,
// ROC sweeps, per-subcarrier fingerprint stability, and the simulated
// two-room datasets the harness runs on.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "microcsi/channel_sim.hpp"
#include "microcsi/extraction.hpp"
#include "microcsi/matcher.hpp"

namespace microcsi {

/// Fingerprints of several devices taken from one data source (a "room").
struct FingerprintSet {
    std::string source;
    std::vector<std::string> devices;  // in dataset order
    std::map<std::string, std::vector<Fingerprint>> by_device;
};

struct EvalScenario {
    std::vector<std::string> devices;
    bool legit_rotation = true;  // false: only devices.front() plays the legitimate role
    int n_csi = 1;
    std::uint64_t seed = 0;  // drives the balanced down-sampling
    bool score_library_loo = true;
};

/// Distances of the legitimate device's own probes and of attacker probes.
struct ScoreSet {
    std::vector<double> legit;
    std::vector<double> attack;
};

struct AttackerScores {
    std::string attacker_id;
    std::vector<double> distances;
};

struct DeviceScores {
    std::string legit_id;
    std::vector<double> legit;
    std::vector<AttackerScores> attackers;
    std::vector<double> library_loo;  // enrolled vs rest of own library

    ScoreSet pooled() const;
};

struct RotationResult {
    int n_csi = 0;
    std::vector<DeviceScores> cells;  // one per legitimate device

    std::size_t attack_cells() const;
};

/// The two sets must come from different sources (library room vs probe
/// room) and every scenario device needs fingerprints in both.
/// Scores every legitimate role against its own probes and every other
/// device's probes. Attacker probe counts are down-sampled (seeded per
/// cell) to the legitimate probe count. Cells run in parallel; results do
/// not depend on the thread count.
RotationResult run_rotation(const EvalScenario& scenario, const FingerprintSet& library_set,
                            const FingerprintSet& probe_set, const MatcherParams& params, unsigned threads = 0);

struct OperatingPoint {
    double far_cap = 0.0;
    double threshold = 0.0;
    double adr = 0.0;
    double far = 0.0;
    std::size_t legit_rejected = 0;
    std::size_t legit_total = 0;
    std::size_t attack_rejected = 0;
    std::size_t attack_total = 0;
};

/// ADR/FAR when accepting scores <= threshold.
OperatingPoint operating_point_at(const ScoreSet& scores, double threshold);

/// Smallest threshold (from -inf and the distinct legit scores) whose FAR on
/// `legit` stays within far_cap.
double calibrate_threshold(const std::vector<double>& legit, double far_cap);

/// Operating point at the smallest threshold meeting the FAR cap, which is
/// the point with the highest ADR under that cap.
OperatingPoint adr_at_far(const ScoreSet& scores, double far_cap);

struct RocPoint {
    double far = 0.0;
    double adr = 0.0;
    double threshold = 0.0;
};

/// Exhaustive sweep over -inf and every distinct score, ordered by
/// ascending FAR. With max_points > 0 the candidate thresholds are thinned
/// to at most that many (both ends kept); every retained point is exact.
std::vector<RocPoint> roc_curve(const ScoreSet& scores, std::size_t max_points = 0);

/// Trapezoidal area under a curve from roc_curve().
double roc_auc(const std::vector<RocPoint>& curve);

struct DeviceOperatingPoints {
    std::string legit_id;
    OperatingPoint oracle;    // threshold chosen on the probe scores
    OperatingPoint deployed;  // threshold calibrated on library leave-one-out scores
};

struct RotationSummary {
    int n_csi = 0;
    double far_cap = 0.0;
    double mean_adr = 0.0;
    double mean_far = 0.0;
    double mean_adr_deployed = 0.0;
    double mean_far_deployed = 0.0;
    std::vector<DeviceOperatingPoints> devices;
};

RotationSummary summarize(const RotationResult& result, double far_cap);

struct ToneStability {
    int tone = 0;
    double complex_var = 0.0;    // mean |f - mean f|^2 (n - 1 normalised)
    double amplitude_var = 0.0;  // variance of |f|
    double phase_var = 0.0;      // variance of arg(f * conj(mean f))
};

struct DeviceStability {
    std::string device_id;
    std::size_t n_fingerprints = 0;
    std::vector<ToneStability> tones;
};

std::vector<DeviceStability> stability_report(const std::map<std::string, std::vector<Fingerprint>>& by_device);

// --- simulated two-room datasets -------------------------------------------

struct SimulationPlan {
    int n_devices = 11;
    std::int64_t n_packets = 60000;
    int n_chains = 2;
    double magnitude_db = -25.0;
    double smoothness = 0.97;
    int smooth_taps = 4;
    double sigma = 0.1;               // distortion-to-noise ratio of about -5 dB at -25 dB
    double family_correlation = 0.0;  // > 0: profiles share one family component
    std::string pulse = "sinc";
    std::int64_t packet_interval_us = 50;
    double chain_distortion_rms = 0.0;
    std::uint64_t seed = 1;
};

std::vector<std::string> device_ids(int n_devices);

std::vector<DeviceProfile> make_profiles(const SignalConfig& config, const SimulationPlan& plan);

/// Measurement stream of one device in one room (0 = library room,
/// 1 = probe room). Each room draws its own channels and noise.
SessionStream room_session(const SignalConfig& config, const SimulationPlan& plan, const DeviceProfile& profile,
                           int device_index, int room);

std::string room_name(int room);

/// Fingerprints of every device in one room, extracted for each requested
/// n_csi. Devices run in parallel.
std::map<int, FingerprintSet> simulate_fingerprints(const SignalConfig& config, const SimulationPlan& plan, int room,
                                                    const std::vector<int>& n_csi_values, CombineMode mode,
                                                    unsigned threads = 0);

/// Per-chain record lists of one device to fingerprints for several n_csi.
std::map<int, std::vector<Fingerprint>> extract_for_each(const SignalConfig& config,
                                                         const std::vector<std::vector<CsiMeasurement>>& chains,
                                                         const std::vector<int>& n_csi_values, CombineMode mode);

}  // namespace microcsi
