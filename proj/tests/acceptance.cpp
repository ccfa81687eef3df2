// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Runtime limits are part of each verdict.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "microcsi/cli.hpp"
#include "microcsi/eval.hpp"
#include "microcsi/io.hpp"
#include "support.hpp"

using namespace microcsi;
using namespace testsupport;
namespace fs = std::filesystem;

namespace {

const SignalConfig& cfg() {
    static const SignalConfig c = build_config(64, "ht20", 8);
    return c;
}

struct Verdict {
    bool pass = true;
    std::string detail;
};

AveragedCsi averaged(const ToneVector& v) { return AveragedCsi{"dev", v, 1, {0}, 0}; }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------

Verdict projector_oracle() {
    const Eigen::MatrixXcd f = dft_submatrix(cfg());
    std::mt19937_64 rng(1001);
    double max_err = 0.0;
    double max_idem = 0.0;
    double max_adj = 0.0;
    for (int i = 0; i < 200; ++i) {
        const ToneVector v = random_tones(rng, 56);
        const ToneVector u = random_tones(rng, 56);
        const ToneVector pv = project_onto_taps(cfg(), v);
        max_err = std::max(max_err, (pv - pinv_projection(f, v)).cwiseAbs().maxCoeff());
        max_idem = std::max(max_idem, (project_onto_taps(cfg(), pv) - pv).norm() / v.norm());
        max_adj = std::max(max_adj, std::abs(project_onto_taps(cfg(), u).dot(v) - u.dot(pv)));
    }
    return {max_err <= 1e-10 && max_idem <= 1e-10 && max_adj <= 1e-10,
            "max |P v - pinv| " + fmt("%.2e", max_err) + ", idempotence " + fmt("%.2e", max_idem) +
                ", self-adjointness " + fmt("%.2e", max_adj)};
}

Verdict distortion_free_extraction() {
    std::mt19937_64 rng(1002);
    const auto zero = make_device_profile(cfg(), "clean", 1, kNoDistortion, 0.0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto ch = draw_channel(cfg(), rng, Pulse::sinc(), LeakageWindow::truncated);
        const auto m = synthesize_measurement(cfg(), zero, ch, {0.0}, {}, rng);
        const auto fp = extract_fingerprint(cfg(), averaged(m.csi));
        worst = std::max(worst, (fp.values - ToneVector::Ones(56)).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-9, "worst |f_hat - 1|_inf " + fmt("%.2e", worst)};
}

Verdict orthogonal_recovery() {
    std::mt19937_64 rng(1003);
    const Eigen::MatrixXcd f = dft_submatrix(cfg());
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const ToneVector h = draw_channel(cfg(), rng).freq_response;
        ToneVector r = orthogonal_residual(f, random_tones(rng, 56));
        r *= 0.05 * rms(h) / rms(r);
        const ToneVector dist = r.cwiseQuotient(h);  // h o dist = r is orthogonal to the tap span
        const ToneVector c = h + r;
        const auto fp = extract_fingerprint(cfg(), averaged(c));
        worst = std::max(worst, (fp.values - (ToneVector::Ones(56) + dist)).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-9, "worst |f_hat - (1 + f)|_inf " + fmt("%.2e", worst)};
}

Verdict scale_invariance() {
    std::mt19937_64 rng(1004);
    const auto p = make_device_profile(cfg(), "dev", 4, -25.0, 0.97);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const auto ch = draw_channel(cfg(), rng);
        std::vector<CsiMeasurement> batch;
        for (int k = 0; k < 10; ++k) batch.push_back(synthesize_measurement(cfg(), p, ch, {0.1}, {}, rng));
        auto avg = average_measurements(batch);
        const auto a = extract_fingerprint(cfg(), avg);
        avg.mean_csi *= random_complex(rng, 0.1, 10.0);
        const auto b = extract_fingerprint(cfg(), avg);
        worst = std::max(worst, (a.values - b.values).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-10, "worst deviation " + fmt("%.2e", worst)};
}

Verdict noise_averaging() {
    const double sigma = 0.1;
    const auto zero = make_device_profile(cfg(), "clean", 1, kNoDistortion, 0.0);
    std::mt19937_64 rng(1005);
    const auto ch = draw_channel(cfg(), rng);
    Verdict v;
    for (int m : {10, 100}) {
        const int trials = 10000;
        ToneVector sum = ToneVector::Zero(56);
        Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(56);
        std::vector<CsiMeasurement> batch(static_cast<std::size_t>(m));
        for (int t = 0; t < trials; ++t) {
            for (auto& x : batch) x = synthesize_measurement(cfg(), zero, ch, {sigma}, {}, rng);
            const ToneVector mean = average_measurements(batch).mean_csi;
            sum += mean;
            sum_sq += mean.cwiseAbs2();
        }
        const ToneVector mu = sum / trials;
        const Eigen::VectorXd var = (sum_sq - trials * mu.cwiseAbs2()) / (trials - 1);
        const double target = sigma * sigma / m;
        const double worst = ((var / target).array() - 1.0).abs().maxCoeff();
        v.pass = v.pass && worst <= 0.10;
        v.detail += (v.detail.empty() ? "" : "; ") + std::string("M=") + std::to_string(m) +
                    " worst per-tone rel. error " + fmt("%.3f", worst);
    }
    return v;
}

Verdict knn_and_sweep_oracles() {
    std::mt19937_64 rng(1006);
    int knn_bad = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int s = 5 + static_cast<int>(rng() % 60);
        std::vector<Fingerprint> fps;
        for (int i = 0; i < s; ++i) {
            Fingerprint f;
            f.values = ToneVector::Ones(56) + random_tones(rng, 56, 0.05);
            fps.push_back(f);
        }
        Fingerprint probe;
        probe.values = ToneVector::Ones(56) + random_tones(rng, 56, 0.05);
        const auto lib = enroll({}, "x", fps);
        MatcherParams params;
        if (trial % 2 == 1) {
            params.k_rule = KRule::explicit_k;
            params.k_neighbors = 1 + static_cast<int>(rng() % s);
        }
        const int k = effective_k(params, fps.size());
        const Eigen::VectorXd p = feature_vector(probe.values, params.view);
        std::vector<double> all;
        for (const auto& f : fps) {
            const Eigen::VectorXd q = feature_vector(f.values, params.view);
            all.push_back(feature_distance(std::span(p.data(), p.size()), std::span(q.data(), q.size())));
        }
        std::sort(all.begin(), all.end());
        double sum = 0.0;
        for (int i = 0; i < k; ++i) sum += all[static_cast<std::size_t>(i)];
        if (knn_distance(lib, params, "x", probe) != sum / k) ++knn_bad;
    }

    int sweep_bad = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::normal_distribution<double> g(0.0, 1.0);
        const bool coarse = trial % 2 == 0;
        auto draw = [&](int n, double shift) {
            std::vector<double> out;
            for (int i = 0; i < n; ++i) {
                const double x = g(rng) + shift;
                out.push_back(coarse ? std::round(4.0 * x) / 4.0 : x);
            }
            return out;
        };
        const ScoreSet s{draw(1 + static_cast<int>(rng() % 50), 0.0), draw(1 + static_cast<int>(rng() % 80), 1.5)};
        const auto sweep = midpoint_sweep(s.legit, s.attack);
        for (double cap : {0.0, 0.03, 0.2}) {
            const auto op = adr_at_far(s, cap);
            const auto best = best_under_cap(sweep, cap);
            if (op.adr != best.adr || op.far != best.far) ++sweep_bad;
        }
        std::vector<std::pair<double, double>> got;
        std::vector<std::pair<double, double>> want;
        for (const auto& pt : roc_curve(s)) got.emplace_back(pt.far, pt.adr);
        for (auto it = sweep.rbegin(); it != sweep.rend(); ++it) want.emplace_back(it->far, it->adr);
        got.erase(std::unique(got.begin(), got.end()), got.end());
        want.erase(std::unique(want.begin(), want.end()), want.end());
        if (got != want) ++sweep_bad;
    }
    return {knn_bad == 0 && sweep_bad == 0,
            "knn mismatches " + std::to_string(knn_bad) + "/200, sweep mismatches " + std::to_string(sweep_bad) + "/400"};
}

std::vector<double> mean_adr_by_n(const SimulationPlan& plan, const std::vector<int>& ns, double cap) {
    auto lib = simulate_fingerprints(cfg(), plan, 0, ns, CombineMode::per_chain);
    auto probe = simulate_fingerprints(cfg(), plan, 1, ns, CombineMode::per_chain);
    std::vector<double> out;
    for (int n : ns) {
        EvalScenario sc;
        sc.devices = lib.at(n).devices;
        sc.n_csi = n;
        sc.seed = plan.seed;
        sc.score_library_loo = false;
        const auto result = run_rotation(sc, lib.at(n), probe.at(n), MatcherParams{});
        out.push_back(summarize(result, cap).mean_adr);
    }
    return out;
}

Verdict table_trend() {
    SimulationPlan plan;  // calibrated defaults: 11 devices, 60000 packets, 2 chains
    const std::vector<int> ns{10, 20, 50, 100, 200};
    const auto adr = mean_adr_by_n(plan, ns, 0.0);
    int inversions = 0;
    bool small = true;
    for (std::size_t i = 1; i < adr.size(); ++i) {
        if (adr[i] < adr[i - 1]) {
            ++inversions;
            small = small && adr[i - 1] - adr[i] <= 0.02;
        }
    }
    std::string detail = "ADR@FAR=0:";
    for (std::size_t i = 0; i < ns.size(); ++i) detail += " " + std::to_string(ns[i]) + "->" + fmt("%.4f", adr[i]);
    const bool pass = inversions <= 1 && small && adr.back() >= 0.99 && adr.front() <= adr.back() - 0.20;
    return {pass, detail};
}

Verdict same_model_hardness() {
    int agree = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SimulationPlan plan;
        plan.n_devices = 4;
        plan.n_packets = 12000;
        plan.seed = seed;
        const double indep = mean_adr_by_n(plan, {50}, 0.0)[0];
        plan.family_correlation = 0.9;
        const double corr = mean_adr_by_n(plan, {50}, 0.0)[0];
        agree += corr < indep ? 1 : 0;
        detail += (detail.empty() ? "" : " ") + fmt("%.2f", corr) + "<" + fmt("%.2f", indep);
    }
    return {agree >= 9, std::to_string(agree) + "/10 seeds lower with correlated profiles (" + detail + ")"};
}

Verdict format_round_trips() {
    const auto dir = scratch_dir("acceptance");
    const auto p = [&](const std::string& name) { return (dir / name).string(); };
    std::string detail;
    bool pass = true;

    // 120000-record trace: one device, 60000 packets on each of 2 chains
    SimulationPlan big;
    big.n_devices = 1;
    const auto profile = make_profiles(cfg(), big)[0];
    const auto t0 = std::chrono::steady_clock::now();
    {
        auto stream = room_session(cfg(), big, profile, 0, 0);
        write_trace(p("big.csit"), make_trace_header(cfg(), {profile.device_id}), [&] { return stream.next(); });
    }
    std::size_t n = 0;
    bool identical = true;
    {
        auto stream = room_session(cfg(), big, profile, 0, 0);
        TraceReader reader(p("big.csit"), cfg().digest());
        while (auto m = reader.next()) {
            ++n;
            identical = identical && (*m == *stream.next());
        }
        identical = identical && !stream.next();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    pass = pass && identical && n == 120000 && secs < 10.0;
    detail += "trace " + std::to_string(n) + " records " + (identical ? "bit-exact" : "MISMATCH") + " in " +
              fmt("%.1f s", secs);

    // library: text round trip reproduces fingerprints and decisions
    SimulationPlan small;
    small.n_devices = 3;
    small.n_packets = 2000;
    small.seed = 5;
    const auto lib_sets = simulate_fingerprints(cfg(), small, 0, {20}, CombineMode::per_chain);
    const auto probe_sets = simulate_fingerprints(cfg(), small, 1, {20}, CombineMode::per_chain);
    FingerprintLibrary lib;
    for (const auto& id : lib_sets.at(20).devices) lib = enroll(lib, id, lib_sets.at(20).by_device.at(id));
    MatcherParams params;
    params.threshold = 0.05;
    write_library(p("lib.mcsl"), make_library_file(cfg(), params, lib));
    const auto back = read_library(p("lib.mcsl"));
    bool lib_ok = true;
    for (const auto& id : lib.identities()) {
        lib_ok = lib_ok && back.library.fingerprints(id) == lib.fingerprints(id);
        for (const auto& probe : probe_sets.at(20).by_device.at(id)) {
            const auto x = authenticate(lib, params, id, probe);
            const auto y = authenticate(back.library, back.params, id, probe);
            lib_ok = lib_ok && x.distance == y.distance && x.accepted == y.accepted;
        }
    }
    pass = pass && lib_ok;
    detail += std::string("; library ") + (lib_ok ? "bit-exact" : "MISMATCH");

    // the command-line tool, run as a separate process, matches the in-process pipeline
    const std::string bin = MICROCSI_CLI_PATH;
    auto run = [&](const std::string& args) {
        return std::system((bin + " " + args + " >/dev/null 2>>" + p("cli.err")).c_str()) == 0;
    };
    bool cli_ok = run("--seed 5 simulate --devices 3 --packets 2000 --library-out " + p("a.csit") + " --probe-out " +
                      p("b.csit")) &&
                  run("extract --trace " + p("a.csit") + " --n-csi 20 --out " + p("fa.mcsl")) &&
                  run("--seed 5 evaluate --library-trace " + p("a.csit") + " --probe-trace " + p("b.csit") +
                      " --n-csi 20 --far-cap 0,0.03 --report " + p("report.json"));
    if (cli_ok) {
        const auto fa = read_library(p("fa.mcsl"));
        for (const auto& id : lib.identities()) cli_ok = cli_ok && fa.library.fingerprints(id) == lib.fingerprints(id);
        FingerprintSet ls = lib_sets.at(20);
        FingerprintSet ps = probe_sets.at(20);
        ls.source = "library";
        ps.source = "probe";
        EvalScenario sc;
        sc.devices = ls.devices;
        sc.n_csi = 20;
        sc.seed = 5;
        const auto result = run_rotation(sc, ls, ps, MatcherParams{});
        std::ifstream in(p("report.json"));
        const auto report = nlohmann::json::parse(in);
        for (const auto& entry : report.at("results")) {
            const auto s = summarize(result, entry.at("far_cap").get<double>());
            cli_ok = cli_ok && entry.at("mean_adr").get<double>() == s.mean_adr &&
                     entry.at("mean_far").get<double>() == s.mean_far &&
                     entry.at("mean_adr_deployed").get<double>() == s.mean_adr_deployed &&
                     entry.at("mean_far_deployed").get<double>() == s.mean_far_deployed;
        }
    }
    pass = pass && cli_ok;
    detail += std::string("; CLI vs in-process ") + (cli_ok ? "bit-exact" : "MISMATCH");
    fs::remove_all(dir);
    return {pass, detail};
}

struct Criterion {
    const char* name;
    double limit_s;
    std::function<Verdict()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"projector equals pseudo-inverse oracle", 5.0, projector_oracle},
        {"distortion-free extraction gives all ones", 5.0, distortion_free_extraction},
        {"exact recovery with orthogonal distortion", 5.0, orthogonal_recovery},
        {"extraction is scale invariant", 5.0, scale_invariance},
        {"averaged noise variance is sigma^2/M", 30.0, noise_averaging},
        {"knn, operating point and ROC match exhaustive oracles", 10.0, knn_and_sweep_oracles},
        {"ADR grows with N_csi under the calibrated simulation", 300.0, table_trend},
        {"correlated profiles are harder to tell apart", 180.0, same_model_hardness},
        {"trace, library and CLI round trips are bit-exact", 30.0, format_round_trips},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto& c = criteria[i];
        const auto t0 = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = c.run();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs < c.limit_s;
        const bool pass = v.pass && in_time;
        failures += pass ? 0 : 1;
        std::cout << (pass ? "PASS" : "FAIL") << " [" << (i + 1) << "] " << c.name << " | " << v.detail << " | "
                  << fmt("%.1f s", secs) << " (limit " << fmt("%.0f s", c.limit_s) << ")"
                  << (in_time ? "" : " TIME LIMIT EXCEEDED") << std::endl;
    }
    std::cout << (failures == 0 ? "ALL CRITERIA PASSED" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
    return failures == 0 ? 0 : 1;
}
