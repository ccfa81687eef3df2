#pragma once

// Fingerprint extraction: average a batch of CSI, fit the channel on the
// leakage tap window, divide it out.

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "microcsi/channel_sim.hpp"
#include "microcsi/error.hpp"
#include "microcsi/signal_core.hpp"

namespace microcsi {

struct AveragedCsi {
    std::string device_id;
    ToneVector mean_csi;
    int n_used = 0;
    std::set<int> source_chains;
    std::int64_t last_timestamp_us = 0;
};

/// Channel-cancelled fingerprint, approximately 1 + f.
struct Fingerprint {
    ToneVector values;
    int n_csi = 0;     // measurements averaged per chain
    int n_chains = 1;  // chains combined into this fingerprint
    std::optional<std::string> device_claim;
    std::int64_t extracted_at_us = 0;
    std::uint64_t config_digest = 0;

    friend bool operator==(const Fingerprint&, const Fingerprint&) = default;
};

/// Raised when the fitted channel has tones too weak to divide by.
class DeepFadeError : public DataError {
public:
    DeepFadeError(std::vector<int> tones, const std::string& what)
        : DataError(what), tones_(std::move(tones)) {}
    const std::vector<int>& tones() const { return tones_; }

private:
    std::vector<int> tones_;
};

AveragedCsi average_measurements(std::span<const CsiMeasurement> batch);

/// LS channel estimate restricted to the tap window.
ToneVector estimate_channel(const SignalConfig& config, const AveragedCsi& avg);

/// `relative_floor` scales the largest fitted channel magnitude to give the
/// minimum magnitude a tone may have before division is refused.
Fingerprint extract_fingerprint(const SignalConfig& config, const AveragedCsi& avg,
                                double relative_floor = 1e-6);

enum class CombineMode {
    per_chain,  // extract on every chain, then average the fingerprints
    pooled      // average all chains' CSI first, extract once
};

CombineMode parse_combine_mode(std::string_view name);
std::string_view to_string(CombineMode mode);

/// Fingerprints from one device's session. `chains[c]` holds chain c's
/// measurements ordered by seq_no; group g uses measurements
/// [g*n_csi, (g+1)*n_csi) of every chain. Incomplete trailing groups are
/// dropped.
std::vector<Fingerprint> extract_session(const SignalConfig& config,
                                         const std::vector<std::span<const CsiMeasurement>>& chains,
                                         int n_csi, CombineMode mode);

/// Groups an arbitrary record list by device and chain (record order kept
/// within each chain) and runs extract_session per device, in order of
/// first appearance.
std::vector<Fingerprint> extract_records(const SignalConfig& config, std::span<const CsiMeasurement> records,
                                         int n_csi, CombineMode mode);

}  // namespace microcsi
