#include "microcsi/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "microcsi/channel_sim.hpp"
#include "microcsi/error.hpp"
#include "microcsi/eval.hpp"
#include "microcsi/extraction.hpp"
#include "microcsi/io.hpp"
#include "microcsi/matcher.hpp"
#include "microcsi/signal_core.hpp"

namespace microcsi {
namespace {

using nlohmann::json;

struct GlobalOptions {
    std::uint64_t seed = 1;
    std::string config_path;
    std::string format = "table";
};

SignalConfig load_config(const GlobalOptions& g) {
    if (g.config_path.empty()) return build_config();
    std::ifstream in(g.config_path);
    if (!in) throw ConfigError("cannot open config file '" + g.config_path + "'");
    json j;
    try {
        j = json::parse(in);
        return build_config(j.value("dft_len", 64), j.value("subcarrier_map", std::string("ht20")),
                            j.value("leak_halfwidth", 8));
    } catch (const json::exception& e) {
        throw ConfigError("bad config file '" + g.config_path + "': " + e.what());
    }
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

std::string fixed(double v, int digits = 6) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

json threshold_json(double t) { return std::isfinite(t) ? json(t) : json(t < 0 ? "-inf" : "inf"); }

json op_json(const OperatingPoint& op) {
    return {{"far_cap", op.far_cap},
            {"threshold", threshold_json(op.threshold)},
            {"adr", op.adr},
            {"far", op.far},
            {"legit_rejected", op.legit_rejected},
            {"legit_total", op.legit_total},
            {"attack_rejected", op.attack_rejected},
            {"attack_total", op.attack_total}};
}

// Streams a trace device by device, handing each device's per-chain
// records to `fn`.
template <typename Fn>
void for_each_device(TraceReader& reader, Fn&& fn) {
    std::string current;
    std::map<int, std::vector<CsiMeasurement>> chains;
    auto flush = [&] {
        if (current.empty()) return;
        std::vector<std::vector<CsiMeasurement>> ordered;
        for (auto& [chain, ms] : chains) ordered.push_back(std::move(ms));
        fn(current, ordered);
        chains.clear();
    };
    while (auto m = reader.next()) {
        if (m->device_id != current) {
            flush();
            current = m->device_id;
        }
        chains[m->rx_chain].push_back(std::move(*m));
    }
    flush();
}

std::map<int, FingerprintSet> fingerprints_from_trace(const std::string& path, const std::vector<int>& n_csi_values,
                                                      CombineMode mode, SignalConfig& config_out,
                                                      std::optional<std::uint64_t> expected_digest) {
    TraceReader reader(path, expected_digest);
    config_out = config_from_header(reader.header());
    std::map<int, FingerprintSet> sets;
    for (int n : n_csi_values) sets[n].source = path;
    for_each_device(reader, [&](const std::string& device, const std::vector<std::vector<CsiMeasurement>>& chains) {
        auto per_n = extract_for_each(config_out, chains, n_csi_values, mode);
        for (auto& [n, fps] : per_n) {
            sets[n].devices.push_back(device);
            sets[n].by_device[device] = std::move(fps);
        }
    });
    return sets;
}

double calibrated_threshold(const FingerprintLibrary& lib, const MatcherParams& params, double far_cap) {
    double t = -std::numeric_limits<double>::infinity();
    for (const auto& id : lib.identities()) {
        if (lib.size(id) < 2) throw DataError("calibration needs at least two fingerprints for '" + id + "'");
        t = std::max(t, calibrate_threshold(leave_one_out_distances(lib, params, id), far_cap));
    }
    return t;
}

void add_matcher_options(CLI::App* cmd, std::string& k_rule, int& k, std::string& view) {
    cmd->add_option("--k-rule", k_rule, "Neighbour count rule: sqrt_s or explicit")->check(CLI::IsMember({"sqrt_s", "explicit"}));
    cmd->add_option("--k", k, "Neighbour count for --k-rule explicit")->check(CLI::PositiveNumber);
    cmd->add_option("--view", view, "Feature view: complex, amplitude or phase")
        ->check(CLI::IsMember({"complex", "amplitude", "phase"}));
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Micro-CSI radiometric fingerprinting toolkit", "microcsi"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalOptions g;
    app.add_option("--seed", g.seed, "Base random seed");
    app.add_option("--config", g.config_path, "Signal config JSON (dft_len, subcarrier_map, leak_halfwidth)");
    app.add_option("--format", g.format, "Output format: table or csv")->check(CLI::IsMember({"table", "csv"}));

    // simulate
    SimulationPlan plan;
    std::string lib_out = "library.csit";
    std::string probe_out = "probe.csit";
    std::string csv_out;
    auto* simulate = app.add_subcommand("simulate", "Simulate library-room and probe-room CSI traces");
    simulate->add_option("--devices", plan.n_devices, "Number of devices")->check(CLI::PositiveNumber);
    simulate->add_option("--packets", plan.n_packets, "Packets per device per room")->check(CLI::PositiveNumber);
    simulate->add_option("--chains", plan.n_chains, "Receive chains")->check(CLI::PositiveNumber);
    simulate->add_option("--magnitude-db", plan.magnitude_db, "RMS distortion magnitude in dB");
    simulate->add_option("--sigma", plan.sigma, "Per-tone noise standard deviation")->check(CLI::NonNegativeNumber);
    simulate->add_option("--smoothness", plan.smoothness, "Smooth share of the distortion energy")->check(CLI::Range(0.0, 1.0));
    simulate->add_option("--correlation", plan.family_correlation, "Profile correlation to a shared family component")
        ->check(CLI::Range(0.0, 1.0));
    simulate->add_option("--pulse", plan.pulse, "Pulse shape: sinc or raised-cosine(beta)");
    simulate->add_option("--interval-us", plan.packet_interval_us, "Packet interval in microseconds")->check(CLI::PositiveNumber);
    simulate->add_option("--chain-distortion", plan.chain_distortion_rms, "Extra per-chain distortion RMS")
        ->check(CLI::NonNegativeNumber);
    simulate->add_option("--library-out", lib_out, "Library-room trace path");
    simulate->add_option("--probe-out", probe_out, "Probe-room trace path");
    simulate->add_option("--csv-out", csv_out, "Also export the library-room trace as CSV");

    // extract
    std::string trace_path;
    int n_csi = 0;
    std::string combine = "per-chain";
    std::string fp_out = "fingerprints.mcsl";
    auto* extract = app.add_subcommand("extract", "Extract fingerprints from a CSI trace");
    extract->add_option("--trace", trace_path, "Input trace")->required();
    extract->add_option("--n-csi", n_csi, "Measurements averaged per fingerprint")->required()->check(CLI::PositiveNumber);
    extract->add_option("--combine", combine, "Chain combining: per-chain or pooled")->check(CLI::IsMember({"per-chain", "pooled"}));
    extract->add_option("--out", fp_out, "Output fingerprint file");

    // enroll
    std::string fp_in;
    std::string library_path;
    std::string identity;
    std::string rename;
    bool dedup = false;
    std::string k_rule = "sqrt_s";
    int k = 1;
    std::string view = "complex";
    std::optional<double> threshold;
    std::optional<double> calibrate_far;
    auto* enroll_cmd = app.add_subcommand("enroll", "Enroll fingerprints into a library file");
    enroll_cmd->add_option("--fingerprints", fp_in, "Fingerprint file from extract")->required();
    enroll_cmd->add_option("--library", library_path, "Library file (created if missing)")->required();
    enroll_cmd->add_option("--identity", identity, "Only enroll this device");
    enroll_cmd->add_option("--as", rename, "Enroll under this identity name (needs --identity)");
    enroll_cmd->add_flag("--dedup", dedup, "Skip fingerprints already enrolled");
    add_matcher_options(enroll_cmd, k_rule, k, view);
    enroll_cmd->add_option("--threshold", threshold, "Decision threshold")->check(CLI::PositiveNumber);
    enroll_cmd->add_option("--calibrate-far", calibrate_far, "Set the threshold from leave-one-out scores at this FAR cap")
        ->check(CLI::Range(0.0, 1.0));

    // auth
    std::string claim;
    std::string probe_path;
    std::string probe_device;
    std::optional<std::size_t> probe_index;
    std::optional<double> auth_threshold;
    auto* auth = app.add_subcommand("auth", "Authenticate probe fingerprints against a claimed identity");
    auth->add_option("--library", library_path, "Library file")->required();
    auth->add_option("--claim", claim, "Claimed identity")->required();
    auth->add_option("--probe", probe_path, "Fingerprint file holding the probe(s)")->required();
    auth->add_option("--probe-device", probe_device, "Device inside the probe file (default: the claim)");
    auth->add_option("--index", probe_index, "Only this probe fingerprint");
    auth->add_option("--threshold", auth_threshold, "Override the library threshold")->check(CLI::PositiveNumber);

    // evaluate / roc
    std::string lib_trace = "library.csit";
    std::string probe_trace = "probe.csit";
    std::vector<int> n_csi_list = {10, 20, 50, 100, 200};
    std::vector<double> far_caps = {0.0, 0.03};
    std::string report_path;
    unsigned threads = 0;
    auto* evaluate = app.add_subcommand("evaluate", "Run the device-rotation attack evaluation");
    evaluate->add_option("--library-trace", lib_trace, "Library-room trace");
    evaluate->add_option("--probe-trace", probe_trace, "Probe-room trace");
    evaluate->add_option("--n-csi", n_csi_list, "Values of n_csi (comma separated)")->delimiter(',')->check(CLI::PositiveNumber);
    evaluate->add_option("--far-cap", far_caps, "FAR caps of the reported operating points")->delimiter(',')->check(CLI::Range(0.0, 1.0));
    evaluate->add_option("--combine", combine, "Chain combining: per-chain or pooled")->check(CLI::IsMember({"per-chain", "pooled"}));
    add_matcher_options(evaluate, k_rule, k, view);
    evaluate->add_option("--report", report_path, "Write a JSON report here");
    evaluate->add_option("--threads", threads, "Worker threads (0 = all cores)");

    int roc_n_csi = 100;
    std::string roc_out = "roc.dat";
    std::string roc_device;
    std::size_t max_points = 0;
    auto* roc = app.add_subcommand("roc", "ROC curve of the rotation scores");
    roc->add_option("--library-trace", lib_trace, "Library-room trace");
    roc->add_option("--probe-trace", probe_trace, "Probe-room trace");
    roc->add_option("--n-csi", roc_n_csi, "n_csi")->check(CLI::PositiveNumber);
    roc->add_option("--combine", combine, "Chain combining: per-chain or pooled")->check(CLI::IsMember({"per-chain", "pooled"}));
    roc->add_option("--device", roc_device, "Only this legitimate device (default: pool all roles)");
    roc->add_option("--max-points", max_points, "Thin the sweep to at most this many thresholds");
    roc->add_option("--out", roc_out, "Two-column FAR/ADR plot file");
    add_matcher_options(roc, k_rule, k, view);
    roc->add_option("--threads", threads, "Worker threads (0 = all cores)");

    // stability
    std::string stab_fp;
    std::string stab_out;
    std::string plot_prefix;
    auto* stability = app.add_subcommand("stability", "Per-subcarrier fingerprint variance per device");
    stability->add_option("--trace", trace_path, "Trace to extract from");
    stability->add_option("--fingerprints", stab_fp, "Fingerprint file (instead of --trace)");
    stability->add_option("--n-csi", n_csi, "n_csi when extracting from --trace")->check(CLI::PositiveNumber);
    stability->add_option("--combine", combine, "Chain combining: per-chain or pooled")->check(CLI::IsMember({"per-chain", "pooled"}));
    stability->add_option("--out", stab_out, "Write the table here instead of stdout");
    stability->add_option("--plot-prefix", plot_prefix, "Write <prefix><device>.dat (tone, complex variance)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp& e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    const TableFormat format = parse_table_format(g.format);
    auto matcher_params = [&] {
        MatcherParams p;
        p.k_rule = parse_k_rule(k_rule);
        p.k_neighbors = k;
        p.view = parse_feature_view(view);
        return p;
    };

    try {
        if (simulate->parsed()) {
            const SignalConfig config = load_config(g);
            plan.seed = g.seed;
            const auto profiles = make_profiles(config, plan);
            const std::vector<std::string> ids = device_ids(plan.n_devices);
            for (int room = 0; room < 2; ++room) {
                const std::string& path = room == 0 ? lib_out : probe_out;
                TraceWriter writer(path, make_trace_header(config, ids));
                for (std::size_t d = 0; d < profiles.size(); ++d) {
                    auto stream = room_session(config, plan, profiles[d], static_cast<int>(d), room);
                    while (auto m = stream.next()) writer.write(*m);
                }
                writer.close();
                out << room_name(room) << ": wrote " << writer.records_written() << " records to " << path << '\n';
            }
            if (!csv_out.empty()) {
                TraceReader reader(lib_out);
                std::ofstream csv(csv_out);
                if (!csv) throw DataError("cannot open '" + csv_out + "'");
                export_trace_csv(reader, csv);
            }
            return kExitOk;
        }

        if (extract->parsed()) {
            SignalConfig config = load_config(g);
            const auto sets = fingerprints_from_trace(trace_path, {n_csi}, parse_combine_mode(combine), config, std::nullopt);
            const auto& set = sets.at(n_csi);
            FingerprintLibrary lib;
            std::vector<std::vector<std::string>> rows;
            for (const auto& device : set.devices) {
                const auto& fps = set.by_device.at(device);
                if (!fps.empty()) lib = enroll(lib, device, fps);
                rows.push_back({device, std::to_string(fps.size())});
            }
            write_library(fp_out, make_library_file(config, MatcherParams{}, lib));
            write_table(out, {"device", "fingerprints"}, rows, format);
            return kExitOk;
        }

        if (enroll_cmd->parsed()) {
            if (!rename.empty() && identity.empty()) throw ConfigError("--as needs --identity");
            const LibraryFile source = read_library(fp_in);
            LibraryFile target;
            if (std::filesystem::exists(library_path)) {
                target = read_library(library_path);
                if (target.config_digest != source.config_digest) {
                    throw DataError("fingerprint file and library were extracted under different configurations");
                }
            } else {
                target = source;
                target.library = FingerprintLibrary{};
                target.params = MatcherParams{};
            }
            if (enroll_cmd->count("--k-rule")) target.params.k_rule = parse_k_rule(k_rule);
            if (enroll_cmd->count("--k")) target.params.k_neighbors = k;
            if (enroll_cmd->count("--view")) target.params.view = parse_feature_view(view);
            if (threshold) target.params.threshold = *threshold;

            std::vector<std::string> ids = identity.empty() ? source.library.identities() : std::vector<std::string>{identity};
            for (const auto& id : ids) {
                if (!source.library.contains(id)) throw DataError("fingerprint file has no device '" + id + "'");
                const auto& fps = source.library.fingerprints(id);
                target.library = enroll(target.library, rename.empty() ? id : rename, fps, dedup);
            }
            if (calibrate_far) target.params.threshold = calibrated_threshold(target.library, target.params, *calibrate_far);
            write_library(library_path, target);

            std::vector<std::vector<std::string>> rows;
            for (const auto& id : target.library.identities()) {
                rows.push_back({id, std::to_string(target.library.size(id))});
            }
            write_table(out, {"identity", "enrolled"}, rows, format);
            out << "threshold " << format_real(target.params.threshold) << '\n';
            return kExitOk;
        }

        if (auth->parsed()) {
            const LibraryFile lib = read_library(library_path);
            const LibraryFile probes = read_library(probe_path);
            if (lib.config_digest != probes.config_digest) {
                throw DataError("probe fingerprints were extracted under a different configuration");
            }
            MatcherParams params = lib.params;
            if (auth_threshold) params.threshold = *auth_threshold;
            const std::string device = probe_device.empty() ? claim : probe_device;
            if (!probes.library.contains(device)) throw DataError("probe file has no device '" + device + "'");
            const auto& fps = probes.library.fingerprints(device);
            std::size_t begin = 0;
            std::size_t end = fps.size();
            if (probe_index) {
                if (*probe_index >= fps.size()) throw DataError("probe index out of range");
                begin = *probe_index;
                end = begin + 1;
            }
            std::vector<std::vector<std::string>> rows;
            std::size_t accepted = 0;
            for (std::size_t i = begin; i < end; ++i) {
                const auto d = authenticate(lib.library, params, claim, fps[i]);
                accepted += d.accepted ? 1 : 0;
                rows.push_back({std::to_string(i), claim, fixed(d.distance), fixed(d.threshold),
                                d.accepted ? "accepted" : "rejected"});
            }
            write_table(out, {"probe", "claim", "distance", "threshold", "decision"}, rows, format);
            out << "accepted " << accepted << "/" << (end - begin) << '\n';
            return kExitOk;
        }

        if (evaluate->parsed() || roc->parsed()) {
            const CombineMode mode = parse_combine_mode(combine);
            const MatcherParams params = matcher_params();
            const std::vector<int> ns = roc->parsed() ? std::vector<int>{roc_n_csi} : n_csi_list;
            SignalConfig config = load_config(g);
            auto lib_sets = fingerprints_from_trace(lib_trace, ns, mode, config, std::nullopt);
            auto probe_sets = fingerprints_from_trace(probe_trace, ns, mode, config, config.digest());

            std::vector<RotationResult> results;
            for (int n : ns) {
                auto& ls = lib_sets.at(n);
                auto& ps = probe_sets.at(n);
                ls.source = "library";
                ps.source = "probe";
                EvalScenario scenario;
                scenario.devices = ls.devices;
                scenario.n_csi = n;
                scenario.seed = g.seed;
                scenario.score_library_loo = evaluate->parsed();
                results.push_back(run_rotation(scenario, ls, ps, params, threads));
            }

            if (roc->parsed()) {
                ScoreSet pooled;
                for (const auto& cell : results.front().cells) {
                    if (!roc_device.empty() && cell.legit_id != roc_device) continue;
                    const auto s = cell.pooled();
                    pooled.legit.insert(pooled.legit.end(), s.legit.begin(), s.legit.end());
                    pooled.attack.insert(pooled.attack.end(), s.attack.begin(), s.attack.end());
                }
                if (pooled.legit.empty()) throw DataError("no scores for device '" + roc_device + "'");
                const auto curve = roc_curve(pooled, max_points);
                std::vector<double> fars;
                std::vector<double> adrs;
                for (const auto& p : curve) {
                    fars.push_back(p.far);
                    adrs.push_back(p.adr);
                }
                write_two_column(roc_out, fars, adrs);
                out << "roc points " << curve.size() << " auc " << fixed(roc_auc(curve)) << " -> " << roc_out << '\n';
                return kExitOk;
            }

            json report;
            report["format_version"] = 1;
            report["config"] = {{"dft_len", config.dft_len()},
                                {"subcarrier_map", config.map_name()},
                                {"leak_halfwidth", config.leak_halfwidth()}};
            report["matcher"] = {{"k_rule", std::string(to_string(params.k_rule))},
                                 {"k_neighbors", params.k_neighbors},
                                 {"view", std::string(to_string(params.view))}};
            report["combine"] = std::string(to_string(mode));
            report["results"] = json::array();

            std::vector<std::string> header{"operating point"};
            for (int n : ns) header.push_back("N_csi=" + std::to_string(n));
            std::vector<std::vector<std::string>> rows;
            for (double cap : far_caps) {
                std::vector<std::string> oracle_row{"FAR<=" + percent(cap)};
                std::vector<std::string> deployed_row{"FAR<=" + percent(cap) + " (library-calibrated)"};
                std::vector<std::string> deployed_far_row{"  realised FAR (library-calibrated)"};
                for (const auto& r : results) {
                    const auto s = summarize(r, cap);
                    oracle_row.push_back(percent(s.mean_adr));
                    deployed_row.push_back(percent(s.mean_adr_deployed));
                    deployed_far_row.push_back(percent(s.mean_far_deployed));
                    json entry{{"n_csi", s.n_csi},
                               {"far_cap", cap},
                               {"mean_adr", s.mean_adr},
                               {"mean_far", s.mean_far},
                               {"mean_adr_deployed", s.mean_adr_deployed},
                               {"mean_far_deployed", s.mean_far_deployed},
                               {"legit_roles", r.cells.size()},
                               {"attack_cells", r.attack_cells()}};
                    entry["devices"] = json::array();
                    for (const auto& d : s.devices) {
                        entry["devices"].push_back({{"legit_id", d.legit_id},
                                                    {"oracle", op_json(d.oracle)},
                                                    {"deployed", op_json(d.deployed)}});
                    }
                    report["results"].push_back(std::move(entry));
                }
                rows.push_back(std::move(oracle_row));
                rows.push_back(std::move(deployed_row));
                rows.push_back(std::move(deployed_far_row));
            }
            out << "mean attack detection rate (" << results.front().cells.size() << " legitimate roles, "
                << results.front().attack_cells() << " attack cells)\n";
            write_table(out, header, rows, format);
            if (!report_path.empty()) {
                std::ofstream rep(report_path);
                if (!rep) throw DataError("cannot open '" + report_path + "'");
                rep << report.dump(2) << '\n';
            }
            return kExitOk;
        }

        if (stability->parsed()) {
            std::map<std::string, std::vector<Fingerprint>> by_device;
            if (!stab_fp.empty()) {
                const auto f = read_library(stab_fp);
                for (const auto& id : f.library.identities()) by_device[id] = f.library.fingerprints(id);
            } else if (!trace_path.empty()) {
                if (n_csi < 1) throw ConfigError("--n-csi is required with --trace");
                SignalConfig config = load_config(g);
                auto sets = fingerprints_from_trace(trace_path, {n_csi}, parse_combine_mode(combine), config, std::nullopt);
                by_device = std::move(sets.at(n_csi).by_device);
            } else {
                throw ConfigError("stability needs --trace or --fingerprints");
            }
            const auto report = stability_report(by_device);
            std::vector<std::vector<std::string>> rows;
            for (const auto& d : report) {
                std::vector<double> tones;
                std::vector<double> vars;
                for (const auto& t : d.tones) {
                    rows.push_back({d.device_id, std::to_string(t.tone), format_real(t.complex_var),
                                    format_real(t.amplitude_var), format_real(t.phase_var)});
                    tones.push_back(t.tone);
                    vars.push_back(t.complex_var);
                }
                if (!plot_prefix.empty()) write_two_column(plot_prefix + d.device_id + ".dat", tones, vars);
            }
            const std::vector<std::string> header{"device", "tone", "complex_var", "amplitude_var", "phase_var"};
            if (stab_out.empty()) {
                write_table(out, header, rows, format);
            } else {
                std::ofstream f(stab_out);
                if (!f) throw DataError("cannot open '" + stab_out + "'");
                write_table(f, header, rows, format);
            }
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace microcsi
