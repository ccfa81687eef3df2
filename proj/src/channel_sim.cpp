#include "microcsi/channel_sim.hpp"

#include <charconv>
#include <cmath>
#include <numbers>

#include "microcsi/error.hpp"

namespace microcsi {
namespace {

constexpr double kPi = std::numbers::pi;

int wrap(int i, int n) { return ((i % n) + n) % n; }

ToneVector gaussian_tones(Rng& rng, Eigen::Index n) {
    std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
    ToneVector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double re = normal(rng);
        const double im = normal(rng);
        v[i] = Complex(re, im);
    }
    return v;
}

ToneVector unit_rms(ToneVector v) {
    const double r = rms(v);
    if (r == 0.0) throw DataError("cannot normalise an all-zero distortion component");
    return v / r;
}

// Unit-RMS shape of the distortion before the magnitude is applied.
ToneVector profile_shape(const SignalConfig& config, Rng& rng, double smoothness, int smooth_taps) {
    if (!(smoothness >= 0.0 && smoothness <= 1.0)) {
        throw ConfigError("smoothness must lie in [0, 1]");
    }
    if (smooth_taps < 0) throw ConfigError("smooth_taps must be non-negative");
    const auto n_tones = static_cast<Eigen::Index>(config.tone_count());

    const Eigen::VectorXcd delay_taps = gaussian_tones(rng, 2 * smooth_taps + 1);
    ToneVector smooth = ToneVector::Zero(n_tones);
    for (Eigen::Index i = 0; i < n_tones; ++i) {
        const int k = config.subcarriers()[static_cast<std::size_t>(i)];
        for (int n = -smooth_taps; n <= smooth_taps; ++n) {
            const double angle = -2.0 * kPi * static_cast<double>(k * wrap(n, config.dft_len()) % config.dft_len()) /
                                 config.dft_len();
            smooth[i] += delay_taps[n + smooth_taps] * std::polar(1.0, angle);
        }
    }
    const ToneVector rough = gaussian_tones(rng, n_tones);
    return unit_rms(std::sqrt(smoothness) * unit_rms(smooth) + std::sqrt(1.0 - smoothness) * unit_rms(rough));
}

}  // namespace

std::uint64_t label_hash(std::string_view label) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * path.size());
    auto push = [&](std::uint64_t v) {
        words.push_back(static_cast<std::uint32_t>(v));
        words.push_back(static_cast<std::uint32_t>(v >> 32));
    };
    push(base);
    for (auto p : path) push(p);
    std::seed_seq seq(words.begin(), words.end());
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[1]) << 32) | out[0];
}

DeviceProfile make_device_profile(const SignalConfig& config, std::string device_id, std::uint64_t seed,
                                  double magnitude_db, double smoothness, int smooth_taps) {
    DeviceProfile p;
    p.magnitude_db = magnitude_db;
    if (magnitude_db == kNoDistortion) {
        p.distortion = ToneVector::Zero(static_cast<Eigen::Index>(config.tone_count()));
    } else {
        if (!std::isfinite(magnitude_db)) throw ConfigError("magnitude_db must be finite or -inf");
        Rng rng(derive_seed(seed, {label_hash(device_id), label_hash("profile")}));
        p.distortion = std::pow(10.0, magnitude_db / 20.0) * profile_shape(config, rng, smoothness, smooth_taps);
    }
    p.device_id = std::move(device_id);
    return p;
}

DeviceProfile make_device_profile(const SignalConfig& config, std::string device_id, std::uint64_t seed,
                                  const ProfileModel& model) {
    return make_device_profile(config, std::move(device_id), seed, model.magnitude_db, model.smoothness,
                               model.smooth_taps);
}

DeviceProfile make_family_profile(const SignalConfig& config, std::string device_id, std::uint64_t seed,
                                  const ProfileModel& model, const DeviceProfile& family, double correlation) {
    if (!(correlation >= 0.0 && correlation <= 1.0)) throw ConfigError("correlation must lie in [0, 1]");
    DeviceProfile own = make_device_profile(config, device_id, seed, model);
    if (model.magnitude_db == kNoDistortion) return own;
    const double amplitude = std::pow(10.0, model.magnitude_db / 20.0);
    const ToneVector mixed = correlation * unit_rms(family.distortion) +
                             std::sqrt(1.0 - correlation * correlation) * unit_rms(own.distortion);
    own.distortion = amplitude * unit_rms(mixed);
    return own;
}

Pulse Pulse::sinc() { return Pulse(Kind::sinc, 0.0); }

Pulse Pulse::raised_cosine(double rolloff) {
    if (!(rolloff >= 0.0 && rolloff <= 1.0)) throw ConfigError("raised-cosine roll-off must lie in [0, 1]");
    return Pulse(Kind::raised_cosine, rolloff);
}

Pulse Pulse::parse(std::string_view name) {
    if (name == "sinc") return sinc();
    constexpr std::string_view prefix = "raised-cosine(";
    if (name.starts_with(prefix) && name.ends_with(")")) {
        const auto arg = name.substr(prefix.size(), name.size() - prefix.size() - 1);
        double beta = 0.0;
        const auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), beta);
        if (ec == std::errc() && ptr == arg.data() + arg.size()) return raised_cosine(beta);
    }
    throw ConfigError("unknown pulse '" + std::string(name) + "'");
}

double Pulse::operator()(double t) const {
    if (t == 0.0) return 1.0;
    // Both kernels vanish at non-zero integers; return an exact zero there.
    if (t == std::round(t)) return 0.0;
    const double s = std::sin(kPi * t) / (kPi * t);
    if (kind_ == Kind::sinc || rolloff_ == 0.0) return s;
    const double x = 2.0 * rolloff_ * t;
    if (std::abs(std::abs(x) - 1.0) < 1e-12) {
        const double t0 = 1.0 / (2.0 * rolloff_);
        return kPi / 4.0 * std::sin(kPi * t0) / (kPi * t0);
    }
    return s * std::cos(kPi * rolloff_ * t) / (1.0 - x * x);
}

std::string Pulse::name() const {
    if (kind_ == Kind::sinc) return "sinc";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, rolloff_);
    return "raised-cosine(" + std::string(buf, ptr) + ")";
}

ChannelRealization draw_channel(const SignalConfig& config, double delay_frac, Complex gain, const Pulse& pulse,
                                LeakageWindow window) {
    if (!(delay_frac >= 0.0 && delay_frac < 1.0)) throw ConfigError("delay_frac must lie in [0, 1)");
    if (gain == Complex(0.0, 0.0)) throw ConfigError("path gain must be non-zero");
    const int n_fft = config.dft_len();

    // Sync aligns to the strongest tap; re-centre the delay onto (-0.5, 0.5].
    const double offset = delay_frac <= 0.5 ? delay_frac : delay_frac - 1.0;

    ChannelRealization ch;
    ch.path_delay_frac = delay_frac;
    ch.path_gain = gain;
    ch.taps.assign(static_cast<std::size_t>(n_fft), Complex(0.0, 0.0));
    const int lo = window == LeakageWindow::truncated ? -config.leak_halfwidth() : -n_fft / 2;
    const int hi = window == LeakageWindow::truncated ? config.leak_halfwidth() : n_fft / 2 - 1;
    for (int n = lo; n <= hi; ++n) {
        ch.taps[static_cast<std::size_t>(wrap(n, n_fft))] = gain * pulse(static_cast<double>(n) - offset);
    }

    const auto n_tones = static_cast<Eigen::Index>(config.tone_count());
    ch.freq_response = ToneVector::Zero(n_tones);
    for (Eigen::Index i = 0; i < n_tones; ++i) {
        const int k = config.subcarriers()[static_cast<std::size_t>(i)];
        Complex acc(0.0, 0.0);
        for (int n = 0; n < n_fft; ++n) {
            const Complex tap = ch.taps[static_cast<std::size_t>(n)];
            if (tap == Complex(0.0, 0.0)) continue;
            const double angle = -2.0 * kPi * static_cast<double>(k * n % n_fft) / n_fft;
            acc += tap * std::polar(1.0, angle);
        }
        ch.freq_response[i] = acc;
    }
    return ch;
}

ChannelRealization draw_channel(const SignalConfig& config, Rng& rng, const Pulse& pulse, LeakageWindow window) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double delay = unit(rng);
    const double phase = 2.0 * kPi * unit(rng);
    return draw_channel(config, delay, std::polar(1.0, phase), pulse, window);
}

CsiMeasurement synthesize_measurement(const SignalConfig& config, const DeviceProfile& profile,
                                      const ChannelRealization& channel, const NoiseModel& noise,
                                      const MeasurementMeta& meta, Rng& rng) {
    const auto n_tones = static_cast<Eigen::Index>(config.tone_count());
    if (profile.distortion.size() != n_tones || channel.freq_response.size() != n_tones) {
        throw ConfigError("profile/channel do not match the signal configuration");
    }
    if (!(noise.sigma >= 0.0) || !std::isfinite(noise.sigma)) throw ConfigError("noise sigma must be finite and >= 0");

    CsiMeasurement m;
    m.device_id = profile.device_id;
    m.rx_chain = meta.rx_chain;
    m.seq_no = meta.seq_no;
    m.timestamp_us = meta.timestamp_us;
    m.csi = channel.freq_response.array() * (1.0 + profile.distortion.array());
    if (noise.sigma > 0.0) {
        std::normal_distribution<double> normal(0.0, noise.sigma / std::sqrt(2.0));
        for (Eigen::Index i = 0; i < n_tones; ++i) {
            const double re = normal(rng);
            const double im = normal(rng);
            m.csi[i] += Complex(re, im);
        }
    }
    return m;
}

SessionStream::SessionStream(const SignalConfig& config, DeviceProfile profile,
                             std::vector<ChannelRealization> chain_channels, NoiseModel noise, SessionSpec spec,
                             std::uint64_t seed)
    : config_(config),
      profile_(std::move(profile)),
      channels_(std::move(chain_channels)),
      noise_(noise),
      spec_(spec),
      seed_(seed) {
    if (spec_.n_packets < 1) throw ConfigError("n_packets must be >= 1");
    if (spec_.n_rx_chains < 1) throw ConfigError("n_rx_chains must be >= 1");
    if (channels_.size() != static_cast<std::size_t>(spec_.n_rx_chains)) {
        throw ConfigError("need exactly one channel realization per receive chain");
    }
    if (spec_.chain_distortion_rms < 0.0) throw ConfigError("chain_distortion_rms must be >= 0");
    start_chain(0);
}

void SessionStream::start_chain(int chain) {
    chain_ = chain;
    packet_ = 0;
    if (chain >= spec_.n_rx_chains) return;
    chain_profile_ = profile_;
    if (spec_.chain_distortion_rms > 0.0) {
        Rng perturb(derive_seed(seed_, {static_cast<std::uint64_t>(chain), label_hash("chain-distortion")}));
        const auto n = static_cast<Eigen::Index>(config_.tone_count());
        chain_profile_.distortion += spec_.chain_distortion_rms * unit_rms(gaussian_tones(perturb, n));
    }
    rng_.seed(derive_seed(seed_, {static_cast<std::uint64_t>(chain), label_hash("noise")}));
}

std::optional<CsiMeasurement> SessionStream::next() {
    if (chain_ >= spec_.n_rx_chains) return std::nullopt;
    MeasurementMeta meta{chain_, packet_, spec_.start_time_us + packet_ * spec_.packet_interval_us};
    auto m = synthesize_measurement(config_, chain_profile_, channels_[static_cast<std::size_t>(chain_)], noise_,
                                    meta, rng_);
    if (++packet_ == spec_.n_packets) start_chain(chain_ + 1);
    return m;
}

std::vector<ChannelRealization> draw_chain_channels(const SignalConfig& config, Rng& rng, int n_rx_chains,
                                                    const Pulse& pulse, bool identical) {
    if (n_rx_chains < 1) throw ConfigError("n_rx_chains must be >= 1");
    std::vector<ChannelRealization> out;
    out.reserve(static_cast<std::size_t>(n_rx_chains));
    for (int c = 0; c < n_rx_chains; ++c) {
        if (identical && c > 0) {
            out.push_back(out.front());
        } else {
            out.push_back(draw_channel(config, rng, pulse));
        }
    }
    return out;
}

SessionStream simulate_session(const SignalConfig& config, const DeviceProfile& profile,
                               std::span<const ChannelRealization> chain_channels, const NoiseModel& noise,
                               const SessionSpec& spec, std::uint64_t seed) {
    return SessionStream(config, profile, {chain_channels.begin(), chain_channels.end()}, noise, spec, seed);
}

std::vector<CsiMeasurement> collect(SessionStream& stream) {
    std::vector<CsiMeasurement> out;
    out.reserve(static_cast<std::size_t>(stream.size()));
    while (auto m = stream.next()) out.push_back(std::move(*m));
    return out;
}

}  // namespace microcsi
