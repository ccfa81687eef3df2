#include "microcsi/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "microcsi/error.hpp"
#include "microcsi/parallel.hpp"

namespace microcsi {
namespace {

constexpr double kMinusInf = -std::numeric_limits<double>::infinity();

std::size_t count_above(const std::vector<double>& sorted, double threshold) {
    return static_cast<std::size_t>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), threshold));
}

std::vector<double> sorted_copy(const std::vector<double>& v) {
    std::vector<double> s = v;
    if (std::any_of(s.begin(), s.end(), [](double x) { return std::isnan(x); })) {
        throw DataError("score list contains NaN");
    }
    std::sort(s.begin(), s.end());
    return s;
}

std::vector<double> threshold_candidates(std::vector<double> sorted_scores) {
    sorted_scores.erase(std::unique(sorted_scores.begin(), sorted_scores.end()), sorted_scores.end());
    sorted_scores.insert(sorted_scores.begin(), kMinusInf);
    return sorted_scores;
}

double fraction(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ScoreSet DeviceScores::pooled() const {
    ScoreSet s;
    s.legit = legit;
    for (const auto& a : attackers) s.attack.insert(s.attack.end(), a.distances.begin(), a.distances.end());
    return s;
}

std::size_t RotationResult::attack_cells() const {
    std::size_t n = 0;
    for (const auto& c : cells) n += c.attackers.size();
    return n;
}

RotationResult run_rotation(const EvalScenario& scenario, const FingerprintSet& library_set,
                            const FingerprintSet& probe_set, const MatcherParams& params, unsigned threads) {
    if (scenario.devices.size() < 2) throw ConfigError("rotation needs at least two devices");
    if (library_set.source == probe_set.source) {
        throw ConfigError("library and probe fingerprints must come from different sources");
    }
    FingerprintLibrary library;
    for (const auto& id : scenario.devices) {
        auto lib_it = library_set.by_device.find(id);
        auto probe_it = probe_set.by_device.find(id);
        if (lib_it == library_set.by_device.end() || lib_it->second.empty()) {
            throw DataError("missing library fingerprints for device '" + id + "'");
        }
        if (probe_it == probe_set.by_device.end() || probe_it->second.empty()) {
            throw DataError("missing probe fingerprints for device '" + id + "'");
        }
        for (const auto* fps : {&lib_it->second, &probe_it->second}) {
            for (const auto& fp : *fps) {
                if (fp.n_csi != scenario.n_csi) {
                    throw DataError("fingerprint of '" + id + "' has n_csi " + std::to_string(fp.n_csi) +
                                    ", scenario expects " + std::to_string(scenario.n_csi));
                }
            }
        }
        library = enroll(library, id, lib_it->second);
    }

    const std::size_t n_dev = scenario.devices.size();
    const std::size_t n_legit = scenario.legit_rotation ? n_dev : 1;

    RotationResult result;
    result.n_csi = scenario.n_csi;
    result.cells.resize(n_legit);
    for (std::size_t l = 0; l < n_legit; ++l) {
        auto& cell = result.cells[l];
        cell.legit_id = scenario.devices[l];
        for (std::size_t a = 0; a < n_dev; ++a) {
            if (a != l) cell.attackers.push_back({scenario.devices[a], {}});
        }
    }

    // One task per (legit role, probe source); source n_dev is the library
    // leave-one-out pass.
    const std::size_t per_role = n_dev + 1;
    parallel_for(
        n_legit * per_role,
        [&](std::size_t task) {
            const std::size_t l = task / per_role;
            const std::size_t src = task % per_role;
            auto& cell = result.cells[l];
            const auto& legit_id = scenario.devices[l];
            if (src == n_dev) {
                if (scenario.score_library_loo && library.size(legit_id) >= 2) {
                    cell.library_loo = leave_one_out_distances(library, params, legit_id);
                }
                return;
            }
            const auto& probes = probe_set.by_device.at(scenario.devices[src]);
            if (src == l) {
                cell.legit = knn_distances(library, params, legit_id, probes);
                return;
            }
            const std::size_t legit_count = probe_set.by_device.at(legit_id).size();
            std::vector<std::size_t> pick(probes.size());
            std::iota(pick.begin(), pick.end(), 0);
            if (probes.size() > legit_count) {
                Rng rng(derive_seed(scenario.seed, {label_hash("balance"), l, src}));
                std::shuffle(pick.begin(), pick.end(), rng);
                pick.resize(legit_count);
                std::sort(pick.begin(), pick.end());
            }
            std::vector<Fingerprint> chosen;
            chosen.reserve(pick.size());
            for (auto i : pick) chosen.push_back(probes[i]);
            const std::size_t slot = src < l ? src : src - 1;
            cell.attackers[slot].distances = knn_distances(library, params, legit_id, chosen);
        },
        threads);
    return result;
}

OperatingPoint operating_point_at(const ScoreSet& scores, double threshold) {
    OperatingPoint op;
    op.threshold = threshold;
    op.legit_total = scores.legit.size();
    op.attack_total = scores.attack.size();
    for (double s : scores.legit) op.legit_rejected += s > threshold ? 1 : 0;
    for (double s : scores.attack) op.attack_rejected += s > threshold ? 1 : 0;
    op.far = fraction(op.legit_rejected, op.legit_total);
    op.adr = fraction(op.attack_rejected, op.attack_total);
    return op;
}

double calibrate_threshold(const std::vector<double>& legit, double far_cap) {
    if (legit.empty()) throw DataError("no legitimate scores to calibrate on");
    if (!(far_cap >= 0.0)) throw ConfigError("FAR cap must be >= 0");
    const auto sorted = sorted_copy(legit);
    for (double t : threshold_candidates(sorted)) {
        if (fraction(count_above(sorted, t), sorted.size()) <= far_cap) return t;
    }
    return sorted.back();  // unreachable: FAR is 0 at the largest score
}

OperatingPoint adr_at_far(const ScoreSet& scores, double far_cap) {
    if (scores.legit.empty() || scores.attack.empty()) throw DataError("both score classes must be non-empty");
    auto op = operating_point_at(scores, calibrate_threshold(scores.legit, far_cap));
    op.far_cap = far_cap;
    return op;
}

std::vector<RocPoint> roc_curve(const ScoreSet& scores, std::size_t max_points) {
    if (scores.legit.empty() || scores.attack.empty()) throw DataError("both score classes must be non-empty");
    const auto legit = sorted_copy(scores.legit);
    const auto attack = sorted_copy(scores.attack);
    std::vector<double> all = legit;
    all.insert(all.end(), attack.begin(), attack.end());
    std::sort(all.begin(), all.end());
    auto candidates = threshold_candidates(std::move(all));

    if (max_points >= 2 && candidates.size() > max_points) {
        std::vector<double> thinned;
        const std::size_t last = candidates.size() - 1;
        for (std::size_t i = 0; i < max_points; ++i) {
            const std::size_t idx = (i * last + (max_points - 1) / 2) / (max_points - 1);
            if (thinned.empty() || thinned.back() != candidates[idx]) thinned.push_back(candidates[idx]);
        }
        candidates = std::move(thinned);
    }

    std::vector<RocPoint> curve;
    curve.reserve(candidates.size());
    for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
        curve.push_back({fraction(count_above(legit, *it), legit.size()),
                         fraction(count_above(attack, *it), attack.size()), *it});
    }
    return curve;
}

double roc_auc(const std::vector<RocPoint>& curve) {
    double area = 0.0;
    for (std::size_t i = 1; i < curve.size(); ++i) {
        area += (curve[i].far - curve[i - 1].far) * 0.5 * (curve[i].adr + curve[i - 1].adr);
    }
    return area;
}

RotationSummary summarize(const RotationResult& result, double far_cap) {
    RotationSummary s;
    s.n_csi = result.n_csi;
    s.far_cap = far_cap;
    for (const auto& cell : result.cells) {
        DeviceOperatingPoints d;
        d.legit_id = cell.legit_id;
        const auto pooled = cell.pooled();
        d.oracle = adr_at_far(pooled, far_cap);
        if (!cell.library_loo.empty()) {
            d.deployed = operating_point_at(pooled, calibrate_threshold(cell.library_loo, far_cap));
            d.deployed.far_cap = far_cap;
        }
        s.mean_adr += d.oracle.adr;
        s.mean_far += d.oracle.far;
        s.mean_adr_deployed += d.deployed.adr;
        s.mean_far_deployed += d.deployed.far;
        s.devices.push_back(std::move(d));
    }
    if (!s.devices.empty()) {
        const auto n = static_cast<double>(s.devices.size());
        s.mean_adr /= n;
        s.mean_far /= n;
        s.mean_adr_deployed /= n;
        s.mean_far_deployed /= n;
    }
    return s;
}

std::vector<DeviceStability> stability_report(const std::map<std::string, std::vector<Fingerprint>>& by_device) {
    std::vector<DeviceStability> out;
    for (const auto& [id, fps] : by_device) {
        if (fps.size() < 2) throw DataError("stability of '" + id + "' needs at least two fingerprints");
        const Eigen::Index n_tones = fps.front().values.size();
        // Means are accumulated as offsets from the first fingerprint so that
        // identical inputs give exactly zero spread.
        const ToneVector& ref = fps.front().values;
        ToneVector mean = ToneVector::Zero(n_tones);
        for (const auto& fp : fps) {
            if (fp.values.size() != n_tones) throw DataError("fingerprint length mismatch for '" + id + "'");
            mean += fp.values - ref;
        }
        mean = ref + mean / static_cast<double>(fps.size());

        DeviceStability ds;
        ds.device_id = id;
        ds.n_fingerprints = fps.size();
        const double denom = static_cast<double>(fps.size() - 1);
        for (Eigen::Index k = 0; k < n_tones; ++k) {
            const double amp_ref = std::abs(ref[k]);
            const double phase_ref = std::arg(ref[k] * std::conj(mean[k]));
            double amp_mean = 0.0;
            double phase_mean = 0.0;
            for (const auto& fp : fps) {
                amp_mean += std::abs(fp.values[k]) - amp_ref;
                phase_mean += std::arg(fp.values[k] * std::conj(mean[k])) - phase_ref;
            }
            amp_mean = amp_ref + amp_mean / static_cast<double>(fps.size());
            phase_mean = phase_ref + phase_mean / static_cast<double>(fps.size());
            ToneStability t;
            t.tone = static_cast<int>(k);
            for (const auto& fp : fps) {
                t.complex_var += std::norm(fp.values[k] - mean[k]);
                const double da = std::abs(fp.values[k]) - amp_mean;
                const double dp = std::arg(fp.values[k] * std::conj(mean[k])) - phase_mean;
                t.amplitude_var += da * da;
                t.phase_var += dp * dp;
            }
            t.complex_var /= denom;
            t.amplitude_var /= denom;
            t.phase_var /= denom;
            ds.tones.push_back(t);
        }
        out.push_back(std::move(ds));
    }
    return out;
}

std::vector<std::string> device_ids(int n_devices) {
    std::vector<std::string> ids;
    for (int i = 1; i <= n_devices; ++i) ids.push_back("dev" + std::to_string(i));
    return ids;
}

std::vector<DeviceProfile> make_profiles(const SignalConfig& config, const SimulationPlan& plan) {
    if (plan.n_devices < 1) throw ConfigError("need at least one device");
    const ProfileModel model{plan.magnitude_db, plan.smoothness, plan.smooth_taps};
    std::vector<DeviceProfile> out;
    std::optional<DeviceProfile> family;
    if (plan.family_correlation > 0.0) family = make_device_profile(config, "family", plan.seed, model);
    for (const auto& id : device_ids(plan.n_devices)) {
        out.push_back(family ? make_family_profile(config, id, plan.seed, model, *family, plan.family_correlation)
                             : make_device_profile(config, id, plan.seed, model));
    }
    return out;
}

std::string room_name(int room) { return room == 0 ? "room-a" : room == 1 ? "room-b" : "room-" + std::to_string(room); }

SessionStream room_session(const SignalConfig& config, const SimulationPlan& plan, const DeviceProfile& profile,
                           int device_index, int room) {
    const auto dev = static_cast<std::uint64_t>(device_index);
    const auto r = static_cast<std::uint64_t>(room);
    Rng channel_rng(derive_seed(plan.seed, {label_hash("channel"), r, dev}));
    auto channels = draw_chain_channels(config, channel_rng, plan.n_chains, Pulse::parse(plan.pulse));
    SessionSpec spec;
    spec.n_packets = plan.n_packets;
    spec.n_rx_chains = plan.n_chains;
    spec.packet_interval_us = plan.packet_interval_us;
    spec.chain_distortion_rms = plan.chain_distortion_rms;
    return SessionStream(config, profile, std::move(channels), NoiseModel{plan.sigma}, spec,
                         derive_seed(plan.seed, {label_hash("session"), r, dev}));
}

std::map<int, std::vector<Fingerprint>> extract_for_each(const SignalConfig& config,
                                                         const std::vector<std::vector<CsiMeasurement>>& chains,
                                                         const std::vector<int>& n_csi_values, CombineMode mode) {
    std::vector<std::span<const CsiMeasurement>> views(chains.begin(), chains.end());
    std::map<int, std::vector<Fingerprint>> out;
    for (int n : n_csi_values) out[n] = extract_session(config, views, n, mode);
    return out;
}

std::map<int, FingerprintSet> simulate_fingerprints(const SignalConfig& config, const SimulationPlan& plan, int room,
                                                    const std::vector<int>& n_csi_values, CombineMode mode,
                                                    unsigned threads) {
    const auto profiles = make_profiles(config, plan);
    std::vector<std::map<int, std::vector<Fingerprint>>> per_device(profiles.size());
    parallel_for(
        profiles.size(),
        [&](std::size_t d) {
            auto stream = room_session(config, plan, profiles[d], static_cast<int>(d), room);
            std::vector<std::vector<CsiMeasurement>> chains(static_cast<std::size_t>(plan.n_chains));
            for (auto& c : chains) c.reserve(static_cast<std::size_t>(plan.n_packets));
            while (auto m = stream.next()) chains[static_cast<std::size_t>(m->rx_chain)].push_back(std::move(*m));
            per_device[d] = extract_for_each(config, chains, n_csi_values, mode);
        },
        threads);

    std::map<int, FingerprintSet> out;
    for (int n : n_csi_values) {
        auto& set = out[n];
        set.source = room_name(room);
        for (std::size_t d = 0; d < profiles.size(); ++d) {
            set.devices.push_back(profiles[d].device_id);
            set.by_device[profiles[d].device_id] = std::move(per_device[d][n]);
        }
    }
    return out;
}

}  // namespace microcsi
