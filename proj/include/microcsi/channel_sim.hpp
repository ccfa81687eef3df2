#pragma once

// Frequency-domain CSI simulator: device distortion profiles, single-path
// channels with pulse-shaping leakage, and SIMO measurement sessions.

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "microcsi/signal_core.hpp"

namespace microcsi {

using Rng = std::mt19937_64;

/// Seeds a generator from a base seed plus a path of stream labels, so that
/// every (device, room, chain, ...) gets its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);
std::uint64_t label_hash(std::string_view label);

/// Flag value for a distortion-free device.
inline constexpr double kNoDistortion = -std::numeric_limits<double>::infinity();

struct DeviceProfile {
    std::string device_id;
    ToneVector distortion;  // f = d o t over the occupied tones
    double magnitude_db = kNoDistortion;
};

/// Generative model for f. The smooth part is a random channel-like
/// response confined to |delay| <= smooth_taps samples, the rough part is
/// independent per tone; `smoothness` is the smooth part's energy share.
struct ProfileModel {
    double magnitude_db = -25.0;
    double smoothness = 0.97;
    int smooth_taps = 4;
};

DeviceProfile make_device_profile(const SignalConfig& config, std::string device_id,
                                  std::uint64_t seed, double magnitude_db, double smoothness,
                                  int smooth_taps = 4);

DeviceProfile make_device_profile(const SignalConfig& config, std::string device_id,
                                  std::uint64_t seed, const ProfileModel& model = {});

/// Profile sharing a component with `family`: f = rho * f_family + sqrt(1 - rho^2) * f_own,
/// rescaled to the model magnitude. Models devices of one hardware model.
DeviceProfile make_family_profile(const SignalConfig& config, std::string device_id,
                                  std::uint64_t seed, const ProfileModel& model,
                                  const DeviceProfile& family, double correlation);

/// Pulse-shaping kernel g(t), t in sampling intervals.
class Pulse {
public:
    static Pulse sinc();
    static Pulse raised_cosine(double rolloff);
    /// "sinc" or "raised-cosine(0.25)".
    static Pulse parse(std::string_view name);

    double operator()(double t) const;
    std::string name() const;

private:
    enum class Kind { sinc, raised_cosine };
    Pulse(Kind kind, double rolloff) : kind_(kind), rolloff_(rolloff) {}
    Kind kind_;
    double rolloff_;
};

enum class LeakageWindow {
    truncated,   // taps only within -N_p..N_p
    untruncated  // every tap of the DFT window (stresses the N_p assumption)
};

struct ChannelRealization {
    std::vector<Complex> taps;  // length N, strongest tap at index 0
    ToneVector freq_response;   // sum_n taps[n] exp(-j 2 pi k n / N) on the occupied tones
    double path_delay_frac = 0.0;
    Complex path_gain{1.0, 0.0};
};

/// Single dominant path with fractional delay `delay_frac` in [0, 1).
/// The frequency response uses the non-normalised DFT so that a single
/// unit tap gives an all-ones response.
ChannelRealization draw_channel(const SignalConfig& config, double delay_frac, Complex gain,
                                const Pulse& pulse = Pulse::sinc(),
                                LeakageWindow window = LeakageWindow::truncated);

/// Random delay in [0, 1) and unit-magnitude gain with uniform phase.
ChannelRealization draw_channel(const SignalConfig& config, Rng& rng,
                                const Pulse& pulse = Pulse::sinc(),
                                LeakageWindow window = LeakageWindow::truncated);

struct NoiseModel {
    double sigma = 0.0;  // per-tone std of circular complex Gaussian noise
};

struct CsiMeasurement {
    std::string device_id;
    int rx_chain = 0;
    std::int64_t seq_no = 0;
    std::int64_t timestamp_us = 0;
    ToneVector csi;

    friend bool operator==(const CsiMeasurement&, const CsiMeasurement&) = default;
};

struct MeasurementMeta {
    int rx_chain = 0;
    std::int64_t seq_no = 0;
    std::int64_t timestamp_us = 0;
};

/// csi = h o (1 + f) + z, z ~ CN(0, sigma^2) i.i.d. per tone.
CsiMeasurement synthesize_measurement(const SignalConfig& config, const DeviceProfile& profile,
                                      const ChannelRealization& channel, const NoiseModel& noise,
                                      const MeasurementMeta& meta, Rng& rng);

struct SessionSpec {
    std::int64_t n_packets = 1;
    int n_rx_chains = 1;
    std::int64_t packet_interval_us = 50;
    std::int64_t start_time_us = 0;
    /// RMS of an extra per-chain distortion added to f (0 = chains share f).
    double chain_distortion_rms = 0.0;
};

/// Pull-style stream of one session's measurements, emitted chain by chain
/// (chain 0 packets 0..P-1, then chain 1, ...). Each chain draws noise from
/// its own seeded generator.
class SessionStream {
public:
    SessionStream(const SignalConfig& config, DeviceProfile profile,
                  std::vector<ChannelRealization> chain_channels, NoiseModel noise, SessionSpec spec,
                  std::uint64_t seed);

    std::optional<CsiMeasurement> next();
    std::int64_t size() const { return spec_.n_packets * spec_.n_rx_chains; }

private:
    void start_chain(int chain);

    SignalConfig config_;
    DeviceProfile profile_;
    std::vector<ChannelRealization> channels_;
    NoiseModel noise_;
    SessionSpec spec_;
    std::uint64_t seed_;
    int chain_ = 0;
    std::int64_t packet_ = 0;
    DeviceProfile chain_profile_;
    Rng rng_;
};

/// One channel per receive chain.
std::vector<ChannelRealization> draw_chain_channels(const SignalConfig& config, Rng& rng,
                                                    int n_rx_chains, const Pulse& pulse = Pulse::sinc(),
                                                    bool identical = false);

/// Throws ConfigError unless chain_channels.size() == spec.n_rx_chains.
SessionStream simulate_session(const SignalConfig& config, const DeviceProfile& profile,
                               std::span<const ChannelRealization> chain_channels,
                               const NoiseModel& noise, const SessionSpec& spec, std::uint64_t seed);

std::vector<CsiMeasurement> collect(SessionStream& stream);

}  // namespace microcsi
