#pragma once

// OFDM signal-space primitives: subcarrier maps, the partial unitary DFT
// over (occupied tones x channel taps) and the tap-subspace projector.

#include <complex>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace microcsi {

using Complex = std::complex<double>;

/// One complex value per occupied subcarrier, in subcarrier-map order.
using ToneVector = Eigen::VectorXcd;

/// F restricted to rows K (occupied tones) and columns L (channel taps),
/// unitary convention: F[k][l] = exp(-j 2 pi k l / N) / sqrt(N).
class PartialDft {
public:
    PartialDft(int dft_len, const std::vector<int>& subcarriers, const std::vector<int>& taps);

    const Eigen::MatrixXcd& matrix() const { return matrix_; }
    const Eigen::MatrixXcd& gram_inverse() const { return gram_inverse_; }

    /// Least-squares fit of v onto the tap columns, mapped back to tones:
    /// F (F^H F)^{-1} F^H v.
    ToneVector project(const ToneVector& v) const;

    /// (F^H F)^{-1} F^H v, the least-squares tap coefficients.
    Eigen::VectorXcd fit_taps(const ToneVector& v) const;

private:
    Eigen::MatrixXcd matrix_;
    Eigen::MatrixXcd adjoint_;
    Eigen::MatrixXcd gram_inverse_;
};

/// Immutable description of the OFDM grid and the channel tap window.
/// Copies share the cached PartialDft.
class SignalConfig {
public:
    /// Validates every invariant and builds the projector. `tone_offsets`
    /// are DC-centred indices (e.g. -28..28); they are stored mod N.
    static SignalConfig create(int dft_len, std::vector<int> tone_offsets, ToneVector lts,
                               int leak_halfwidth, std::string map_name);

    int dft_len() const { return dft_len_; }
    std::size_t tone_count() const { return subcarriers_.size(); }
    const std::vector<int>& tone_offsets() const { return tone_offsets_; }
    const std::vector<int>& subcarriers() const { return subcarriers_; }
    const ToneVector& lts() const { return lts_; }
    int leak_halfwidth() const { return leak_halfwidth_; }
    const std::vector<int>& tap_set() const { return tap_set_; }
    const std::string& map_name() const { return map_name_; }
    const PartialDft& dft() const { return *dft_; }

    /// Stable 64-bit digest of everything that affects extraction.
    std::uint64_t digest() const { return digest_; }

    /// Same grid with a different (unit-magnitude) reference symbol set.
    SignalConfig with_lts(ToneVector lts) const;

private:
    SignalConfig() = default;

    int dft_len_ = 0;
    std::vector<int> tone_offsets_;
    std::vector<int> subcarriers_;
    ToneVector lts_;
    int leak_halfwidth_ = 0;
    std::vector<int> tap_set_;
    std::string map_name_;
    std::shared_ptr<const PartialDft> dft_;
    std::uint64_t digest_ = 0;
};

/// DC-centred tone offsets of a named subcarrier map ("ht20": +-1..+-28,
/// "legacy20": +-1..+-26). Throws ConfigError for unknown names or a
/// DFT length the map is not defined for.
std::vector<int> subcarrier_offsets(std::string_view map_name, int dft_len);

/// Standard +-1 long training symbol values for a named map, ordered like
/// subcarrier_offsets().
ToneVector standard_lts(std::string_view map_name, int dft_len);

SignalConfig build_config(int dft_len = 64, std::string_view map_name = "ht20",
                          int leak_halfwidth = 8);

const PartialDft& partial_dft(const SignalConfig& config);

/// Orthogonal projection of v onto the span of the tap columns.
ToneVector project_onto_taps(const SignalConfig& config, const ToneVector& v);

/// sqrt(mean |v_k|^2).
double rms(const ToneVector& v);

}  // namespace microcsi
