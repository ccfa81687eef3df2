#include "microcsi/extraction.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace microcsi {

AveragedCsi average_measurements(std::span<const CsiMeasurement> batch) {
    if (batch.empty()) throw DataError("cannot average an empty batch");
    const auto& first = batch.front();
    AveragedCsi avg;
    avg.device_id = first.device_id;
    avg.mean_csi = ToneVector::Zero(first.csi.size());
    avg.last_timestamp_us = first.timestamp_us;
    for (const auto& m : batch) {
        if (m.device_id != first.device_id) {
            throw DataError("batch mixes devices '" + first.device_id + "' and '" + m.device_id + "'");
        }
        if (m.csi.size() != first.csi.size()) throw DataError("batch mixes CSI vector lengths");
        avg.mean_csi += m.csi;
        avg.source_chains.insert(m.rx_chain);
        avg.last_timestamp_us = std::max(avg.last_timestamp_us, m.timestamp_us);
    }
    avg.n_used = static_cast<int>(batch.size());
    avg.mean_csi /= static_cast<double>(batch.size());
    if (!avg.mean_csi.allFinite()) throw DataError("averaged CSI is not finite");
    return avg;
}

ToneVector estimate_channel(const SignalConfig& config, const AveragedCsi& avg) {
    return project_onto_taps(config, avg.mean_csi);
}

Fingerprint extract_fingerprint(const SignalConfig& config, const AveragedCsi& avg, double relative_floor) {
    const ToneVector channel = estimate_channel(config, avg);
    const double floor = relative_floor * channel.cwiseAbs().maxCoeff();
    std::vector<int> faded;
    for (Eigen::Index i = 0; i < channel.size(); ++i) {
        if (!(std::abs(channel[i]) > floor)) faded.push_back(static_cast<int>(i));
    }
    if (!faded.empty()) {
        std::string list;
        for (int t : faded) list += (list.empty() ? "" : ",") + std::to_string(t);
        throw DeepFadeError(std::move(faded), "fitted channel is below the division floor on tones [" + list + "]");
    }

    Fingerprint fp;
    fp.values = avg.mean_csi.cwiseQuotient(channel);
    fp.n_csi = avg.n_used;
    fp.n_chains = static_cast<int>(std::max<std::size_t>(1, avg.source_chains.size()));
    fp.device_claim = avg.device_id;
    fp.extracted_at_us = avg.last_timestamp_us;
    fp.config_digest = config.digest();

    if (!fp.values.allFinite()) throw DataError("fingerprint has non-finite values");
    const double mean_abs = fp.values.cwiseAbs().mean();
    if (mean_abs < 0.5 || mean_abs > 2.0) {
        throw DataError("fingerprint mean magnitude " + std::to_string(mean_abs) + " is outside [0.5, 2]");
    }
    return fp;
}

CombineMode parse_combine_mode(std::string_view name) {
    if (name == "per-chain") return CombineMode::per_chain;
    if (name == "pooled") return CombineMode::pooled;
    throw ConfigError("unknown combine mode '" + std::string(name) + "' (expected per-chain or pooled)");
}

std::string_view to_string(CombineMode mode) { return mode == CombineMode::per_chain ? "per-chain" : "pooled"; }

std::vector<Fingerprint> extract_session(const SignalConfig& config,
                                         const std::vector<std::span<const CsiMeasurement>>& chains, int n_csi,
                                         CombineMode mode) {
    if (n_csi < 1) throw ConfigError("n_csi must be >= 1");
    if (chains.empty()) throw DataError("no chains to extract from");
    std::size_t per_chain = chains.front().size();
    for (const auto& c : chains) per_chain = std::min(per_chain, c.size());
    const std::size_t n_groups = per_chain / static_cast<std::size_t>(n_csi);
    const auto group_len = static_cast<std::size_t>(n_csi);

    std::vector<Fingerprint> out;
    out.reserve(n_groups);
    std::vector<CsiMeasurement> pooled;
    for (std::size_t g = 0; g < n_groups; ++g) {
        Fingerprint fp;
        if (mode == CombineMode::per_chain) {
            for (std::size_t c = 0; c < chains.size(); ++c) {
                const auto avg = average_measurements(chains[c].subspan(g * group_len, group_len));
                auto one = extract_fingerprint(config, avg);
                if (c == 0) {
                    fp = std::move(one);
                } else {
                    fp.values += one.values;
                    fp.extracted_at_us = std::max(fp.extracted_at_us, one.extracted_at_us);
                }
            }
            fp.values /= static_cast<double>(chains.size());
        } else {
            pooled.clear();
            for (const auto& c : chains) {
                const auto part = c.subspan(g * group_len, group_len);
                pooled.insert(pooled.end(), part.begin(), part.end());
            }
            fp = extract_fingerprint(config, average_measurements(pooled));
        }
        fp.n_csi = n_csi;
        fp.n_chains = static_cast<int>(chains.size());
        out.push_back(std::move(fp));
    }
    return out;
}

std::vector<Fingerprint> extract_records(const SignalConfig& config, std::span<const CsiMeasurement> records,
                                         int n_csi, CombineMode mode) {
    if (n_csi < 1) throw ConfigError("n_csi must be >= 1");
    std::vector<std::string> order;
    std::map<std::string, std::map<int, std::vector<CsiMeasurement>>> grouped;
    for (const auto& m : records) {
        auto [it, inserted] = grouped.try_emplace(m.device_id);
        if (inserted) order.push_back(m.device_id);
        it->second[m.rx_chain].push_back(m);
    }
    std::vector<Fingerprint> out;
    for (const auto& device : order) {
        std::vector<std::span<const CsiMeasurement>> chains;
        for (const auto& [chain, ms] : grouped[device]) chains.emplace_back(ms);
        auto fps = extract_session(config, chains, n_csi, mode);
        out.insert(out.end(), std::make_move_iterator(fps.begin()), std::make_move_iterator(fps.end()));
    }
    return out;
}

}  // namespace microcsi
