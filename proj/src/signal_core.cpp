#include "microcsi/signal_core.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <numbers>
#include <set>

#include "microcsi/error.hpp"

namespace microcsi {
namespace {

// L-LTF, tones -26..26 (DC entry is zero and dropped by the maps).
constexpr std::array<int, 53> kLegacyLtf = {
    1, 1,  -1, -1, 1,  1,  -1, 1,  -1, 1,  1,  1, 1, 1, 1, -1, -1, 1,
    1, -1, 1,  -1, 1,  1,  1,  1,  0,  1,  -1, -1, 1, 1, -1, 1, -1, 1,
    -1, -1, -1, -1, -1, 1, 1,  -1, -1, 1,  -1, 1, -1, 1, 1, 1,  1};

int ltf_value(std::string_view map_name, int offset) {
    if (map_name == "ht20") {
        if (offset == -28 || offset == -27) return 1;
        if (offset == 27 || offset == 28) return -1;
    }
    return kLegacyLtf.at(static_cast<std::size_t>(offset + 26));
}

class Fnv1a {
public:
    void add_bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    void add_u64(std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
        add_bytes(b, 8);
    }
    void add_i64(std::int64_t v) { add_u64(static_cast<std::uint64_t>(v)); }
    void add_double(double v) { add_u64(std::bit_cast<std::uint64_t>(v)); }
    std::uint64_t value() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

int wrap(int i, int n) { return ((i % n) + n) % n; }

}  // namespace

PartialDft::PartialDft(int dft_len, const std::vector<int>& subcarriers,
                       const std::vector<int>& taps)
    : matrix_(static_cast<Eigen::Index>(subcarriers.size()),
              static_cast<Eigen::Index>(taps.size())) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dft_len));
    for (std::size_t r = 0; r < subcarriers.size(); ++r) {
        for (std::size_t c = 0; c < taps.size(); ++c) {
            // Reduce k*l mod N before forming the angle to keep it exact.
            const long kl = static_cast<long>(subcarriers[r]) * taps[c] % dft_len;
            const double angle = -2.0 * std::numbers::pi * static_cast<double>(kl) / dft_len;
            matrix_(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                std::polar(scale, angle);
        }
    }
    adjoint_ = matrix_.adjoint();
    const Eigen::MatrixXcd gram = adjoint_ * matrix_;
    Eigen::LLT<Eigen::MatrixXcd> llt(gram);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
        throw ConfigError("partial DFT Gram matrix is numerically singular for this tone/tap set");
    }
    gram_inverse_ = llt.solve(Eigen::MatrixXcd::Identity(gram.rows(), gram.cols()));
}

Eigen::VectorXcd PartialDft::fit_taps(const ToneVector& v) const {
    if (v.size() != matrix_.rows()) {
        throw ConfigError("tone vector length " + std::to_string(v.size()) + " does not match " +
                          std::to_string(matrix_.rows()) + " subcarriers");
    }
    const Eigen::VectorXcd taps = adjoint_ * v;
    return gram_inverse_ * taps;
}

ToneVector PartialDft::project(const ToneVector& v) const { return matrix_ * fit_taps(v); }

std::vector<int> subcarrier_offsets(std::string_view map_name, int dft_len) {
    int edge = 0;
    if (map_name == "ht20") {
        edge = 28;
    } else if (map_name == "legacy20") {
        edge = 26;
    } else {
        throw ConfigError("unknown subcarrier map '" + std::string(map_name) + "'");
    }
    if (dft_len != 64) {
        throw ConfigError("subcarrier map '" + std::string(map_name) + "' is defined for a 64-point DFT only");
    }
    std::vector<int> offsets;
    for (int k = -edge; k <= edge; ++k) {
        if (k != 0) offsets.push_back(k);
    }
    return offsets;
}

ToneVector standard_lts(std::string_view map_name, int dft_len) {
    const auto offsets = subcarrier_offsets(map_name, dft_len);
    ToneVector lts(static_cast<Eigen::Index>(offsets.size()));
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        lts[static_cast<Eigen::Index>(i)] = Complex(ltf_value(map_name, offsets[i]), 0.0);
    }
    return lts;
}

SignalConfig SignalConfig::create(int dft_len, std::vector<int> tone_offsets, ToneVector lts,
                                  int leak_halfwidth, std::string map_name) {
    if (dft_len <= 0 || !std::has_single_bit(static_cast<unsigned>(dft_len))) {
        throw ConfigError("DFT length must be a positive power of two, got " + std::to_string(dft_len));
    }
    if (tone_offsets.empty() || tone_offsets.size() > static_cast<std::size_t>(dft_len)) {
        throw ConfigError("subcarrier count must be in [1, N]");
    }
    if (leak_halfwidth < 0) throw ConfigError("leak half-width must be non-negative");

    SignalConfig cfg;
    cfg.dft_len_ = dft_len;
    cfg.map_name_ = std::move(map_name);
    std::set<int> seen;
    for (int off : tone_offsets) {
        const int k = wrap(off, dft_len);
        if (!seen.insert(k).second) throw ConfigError("duplicate subcarrier index " + std::to_string(off));
        cfg.subcarriers_.push_back(k);
    }
    cfg.tone_offsets_ = std::move(tone_offsets);

    const std::size_t n_taps = 2 * static_cast<std::size_t>(leak_halfwidth) + 1;
    if (n_taps >= cfg.subcarriers_.size() || n_taps > static_cast<std::size_t>(dft_len)) {
        throw ConfigError("leak window of " + std::to_string(n_taps) + " taps leaves the channel fit "
                          "underdetermined with " + std::to_string(cfg.subcarriers_.size()) + " tones");
    }
    cfg.leak_halfwidth_ = leak_halfwidth;
    for (int n = -leak_halfwidth; n <= leak_halfwidth; ++n) cfg.tap_set_.push_back(wrap(n, dft_len));

    if (lts.size() != static_cast<Eigen::Index>(cfg.subcarriers_.size())) {
        throw ConfigError("LTS length does not match subcarrier count");
    }
    for (Eigen::Index i = 0; i < lts.size(); ++i) {
        if (std::abs(std::abs(lts[i]) - 1.0) > 1e-12) {
            throw ConfigError("LTS entries must have unit magnitude (tone " + std::to_string(i) + ")");
        }
    }
    cfg.lts_ = std::move(lts);
    cfg.dft_ = std::make_shared<const PartialDft>(dft_len, cfg.subcarriers_, cfg.tap_set_);

    Fnv1a h;
    h.add_i64(cfg.dft_len_);
    h.add_u64(cfg.subcarriers_.size());
    for (int k : cfg.subcarriers_) h.add_i64(k);
    h.add_i64(cfg.leak_halfwidth_);
    for (Eigen::Index i = 0; i < cfg.lts_.size(); ++i) {
        h.add_double(cfg.lts_[i].real());
        h.add_double(cfg.lts_[i].imag());
    }
    cfg.digest_ = h.value();
    return cfg;
}

SignalConfig SignalConfig::with_lts(ToneVector lts) const {
    return create(dft_len_, tone_offsets_, std::move(lts), leak_halfwidth_, map_name_);
}

SignalConfig build_config(int dft_len, std::string_view map_name, int leak_halfwidth) {
    auto offsets = subcarrier_offsets(map_name, dft_len);
    auto lts = standard_lts(map_name, dft_len);
    return SignalConfig::create(dft_len, std::move(offsets), std::move(lts), leak_halfwidth,
                                std::string(map_name));
}

const PartialDft& partial_dft(const SignalConfig& config) { return config.dft(); }

ToneVector project_onto_taps(const SignalConfig& config, const ToneVector& v) {
    return config.dft().project(v);
}

double rms(const ToneVector& v) {
    if (v.size() == 0) return 0.0;
    return std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

}  // namespace microcsi
