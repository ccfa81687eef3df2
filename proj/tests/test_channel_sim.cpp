#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "microcsi/channel_sim.hpp"
#include "microcsi/error.hpp"
#include "support.hpp"

using namespace microcsi;
using namespace testsupport;

namespace {

const SignalConfig& cfg() {
    static const SignalConfig c = build_config();
    return c;
}

// Non-normalised DFT of the tap vector on the occupied tones, via the full
// unitary matrix.
ToneVector brute_force_response(const ChannelRealization& ch) {
    const Eigen::MatrixXcd full = full_unitary_dft(64);
    Eigen::VectorXcd taps(64);
    for (int n = 0; n < 64; ++n) taps[n] = ch.taps[n];
    const Eigen::VectorXcd spectrum = 8.0 * (full * taps);
    ToneVector out(56);
    for (int i = 0; i < 56; ++i) out[i] = spectrum[cfg().subcarriers()[i]];
    return out;
}

bool in_window(int idx, int np) { return idx <= np || idx >= 64 - np; }

}  // namespace

TEST_CASE("distortion-free profile is exactly zero") {
    const auto p = make_device_profile(cfg(), "A", 7, kNoDistortion, 0.5);
    CHECK(p.distortion.size() == 56);
    CHECK(p.distortion.isZero(0.0));
}

TEST_CASE("profiles are deterministic and id/seed dependent") {
    const auto a = make_device_profile(cfg(), "A", 7, -25.0, 0.5);
    const auto b = make_device_profile(cfg(), "A", 7, -25.0, 0.5);
    CHECK(a.distortion == b.distortion);
    CHECK(a.distortion != make_device_profile(cfg(), "B", 7, -25.0, 0.5).distortion);
    CHECK(a.distortion != make_device_profile(cfg(), "A", 8, -25.0, 0.5).distortion);
}

TEST_CASE("profile RMS matches magnitude_db") {
    for (double db : {-40.0, -25.0, -15.0}) {
        for (double s : {0.0, 0.5, 0.97, 1.0}) {
            const auto p = make_device_profile(cfg(), "dev", 3, db, s);
            const double measured_db = 20.0 * std::log10(rms(p.distortion));
            CHECK(std::abs(measured_db - db) < 0.1);
        }
    }
    const auto p = make_device_profile(cfg(), "A", 7, -25.0, 0.5);
    CHECK(rms(p.distortion) == doctest::Approx(0.0562).epsilon(0.01));
    CHECK_THROWS_AS(make_device_profile(cfg(), "A", 7, -25.0, 1.5), ConfigError);
}

TEST_CASE("fully smooth profile is confined to the smoothing taps") {
    const auto p = make_device_profile(cfg(), "A", 7, -25.0, 1.0, 4);
    const auto narrow = SignalConfig::create(64, cfg().tone_offsets(), cfg().lts(), 4, "ht20");
    const ToneVector resid = p.distortion - project_onto_taps(narrow, p.distortion);
    CHECK(resid.norm() < 1e-12 * p.distortion.norm());
}

TEST_CASE("family profiles are correlated as requested") {
    ProfileModel model;
    const auto family = make_device_profile(cfg(), "family", 1, model);
    const auto a = make_family_profile(cfg(), "a", 1, model, family, 0.9);
    const auto b = make_family_profile(cfg(), "b", 1, model, family, 0.9);
    CHECK(std::abs(20.0 * std::log10(rms(a.distortion)) - model.magnitude_db) < 0.1);
    const double corr = std::abs(a.distortion.dot(b.distortion)) / (a.distortion.norm() * b.distortion.norm());
    CHECK(corr > 0.6);
    const auto ia = make_device_profile(cfg(), "a", 1, model);
    const auto ib = make_device_profile(cfg(), "b", 1, model);
    CHECK(std::abs(ia.distortion.dot(ib.distortion)) / (ia.distortion.norm() * ib.distortion.norm()) < corr);
}

TEST_CASE("pulse parsing and values") {
    CHECK(Pulse::parse("sinc").name() == "sinc");
    CHECK(Pulse::parse("raised-cosine(0.25)").name() == "raised-cosine(0.25)");
    CHECK_THROWS_AS(Pulse::parse("gauss"), ConfigError);
    CHECK_THROWS_AS(Pulse::parse("raised-cosine(2)"), ConfigError);
    const auto s = Pulse::sinc();
    CHECK(s(0.0) == 1.0);
    CHECK(s(3.0) == 0.0);
    CHECK(s(0.5) == doctest::Approx(2.0 / std::numbers::pi));
    const auto rc = Pulse::raised_cosine(0.5);
    CHECK(rc(0.0) == doctest::Approx(1.0));
    CHECK(rc(1.0) == 0.0);
    // removable singularity at t = 1 / (2 beta)
    CHECK(rc(1.0) == doctest::Approx(0.0));
    CHECK(std::isfinite(rc(1.0 / (2 * 0.5))));
    CHECK(rc(0.999999) == doctest::Approx(rc(1.0)).epsilon(1e-4));
}

TEST_CASE("integer delay gives a single tap and a flat response") {
    const auto ch = draw_channel(cfg(), 0.0, Complex(1.0, 0.0));
    CHECK(ch.taps[0] == Complex(1.0, 0.0));
    for (int n = 1; n < 64; ++n) CHECK(ch.taps[n] == Complex(0.0, 0.0));
    CHECK((ch.freq_response - ToneVector::Ones(56)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("half-sample delay is symmetric about the two centre taps") {
    const auto ch = draw_channel(cfg(), 0.5, Complex(0.3, -0.4));
    CHECK(std::abs(ch.taps[0]) == doctest::Approx(std::abs(ch.taps[1])).epsilon(1e-14));
    for (int n = -7; n <= 8; ++n) {
        CHECK(std::abs(ch.taps[(n + 64) % 64] - ch.taps[(1 - n + 64) % 64]) < 1e-15);
    }
    CHECK((ch.freq_response - brute_force_response(ch)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("random channels: strongest tap at 0, support inside the window, consistent response") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 50; ++i) {
        const auto ch = draw_channel(cfg(), rng);
        double peak = 0.0;
        for (const auto& t : ch.taps) peak = std::max(peak, std::abs(t));
        CHECK(std::abs(ch.taps[0]) == peak);
        for (int n = 0; n < 64; ++n) {
            if (!in_window(n, 8)) CHECK(ch.taps[n] == Complex(0.0, 0.0));
        }
        CHECK((ch.freq_response - brute_force_response(ch)).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((project_onto_taps(cfg(), ch.freq_response) - ch.freq_response).cwiseAbs().maxCoeff() < 1e-10);
    }
    CHECK_THROWS_AS(draw_channel(cfg(), 1.0, Complex(1.0, 0.0)), ConfigError);
    CHECK_THROWS_AS(draw_channel(cfg(), 0.2, Complex(0.0, 0.0)), ConfigError);
}

TEST_CASE("untruncated pulse leakage outside the tap window") {
    // An ideal sinc decays as 1/t, so its energy beyond |n| > 8 reaches about
    // 1.8% at a half-sample delay. Raised-cosine pulses decay as 1/t^3 and
    // stay far below 1e-3.
    auto outside_fraction = [](const ChannelRealization& ch) {
        double inside = 0.0;
        double outside = 0.0;
        for (int n = 0; n < 64; ++n) (in_window(n, 8) ? inside : outside) += std::norm(ch.taps[n]);
        return outside / (inside + outside);
    };
    double worst_sinc = 0.0;
    double worst_rc = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double d = i / 100.0;
        const auto sinc_ch = draw_channel(cfg(), d, Complex(1.0, 0.0), Pulse::sinc(), LeakageWindow::untruncated);
        const auto rc_ch =
            draw_channel(cfg(), d, Complex(1.0, 0.0), Pulse::raised_cosine(0.25), LeakageWindow::untruncated);
        worst_sinc = std::max(worst_sinc, outside_fraction(sinc_ch));
        worst_rc = std::max(worst_rc, outside_fraction(rc_ch));

        // oracle: the same sums written directly from the sinc definition
        const double off = d <= 0.5 ? d : d - 1.0;
        double in = 0.0;
        double out = 0.0;
        for (int n = -32; n < 32; ++n) {
            const double t = n - off;
            const double g = t == 0.0 ? 1.0 : std::sin(std::numbers::pi * t) / (std::numbers::pi * t);
            (std::abs(n) <= 8 ? in : out) += g * g;
        }
        CHECK(outside_fraction(sinc_ch) == doctest::Approx(out / (in + out)).epsilon(1e-9));
        CHECK((sinc_ch.freq_response - brute_force_response(sinc_ch)).cwiseAbs().maxCoeff() < 1e-10);
    }
    CHECK(worst_rc <= 1e-3);
    CHECK(worst_sinc == doctest::Approx(0.01767).epsilon(0.01));
    const auto trunc = draw_channel(cfg(), 0.37, Complex(1.0, 0.0));
    CHECK(outside_fraction(trunc) == 0.0);
}

TEST_CASE("measurement model without noise") {
    const auto p = make_device_profile(cfg(), "A", 7, -25.0, 0.5);
    const auto zero = make_device_profile(cfg(), "Z", 7, kNoDistortion, 0.5);
    std::mt19937_64 rng(1);
    const auto ch = draw_channel(cfg(), rng);
    const auto flat = draw_channel(cfg(), 0.0, Complex(1.0, 0.0));
    CHECK(synthesize_measurement(cfg(), zero, ch, {0.0}, {}, rng).csi == ch.freq_response);
    const auto m = synthesize_measurement(cfg(), p, flat, {0.0}, {}, rng);
    CHECK((m.csi - (ToneVector::Ones(56) + p.distortion)).cwiseAbs().maxCoeff() < 1e-15);
    const auto m2 = synthesize_measurement(cfg(), p, ch, {0.0}, {}, rng);
    const ToneVector hf = ch.freq_response.cwiseProduct(p.distortion);
    CHECK((m2.csi - ch.freq_response - hf).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("measurement noise variance (Monte-Carlo)") {
    const auto p = make_device_profile(cfg(), "A", 7, -25.0, 0.5);
    std::mt19937_64 rng(99);
    const auto ch = draw_channel(cfg(), rng);
    const ToneVector clean = synthesize_measurement(cfg(), p, ch, {0.0}, {}, rng).csi;
    const int m = 10000;
    Eigen::VectorXd var = Eigen::VectorXd::Zero(56);
    Eigen::VectorXd re_var = Eigen::VectorXd::Zero(56);
    for (int i = 0; i < m; ++i) {
        const ToneVector d = synthesize_measurement(cfg(), p, ch, {0.1}, {}, rng).csi - clean;
        var += d.cwiseAbs2();
        re_var += d.real().cwiseAbs2();
    }
    var /= m;
    re_var /= m;
    for (int k = 0; k < 56; ++k) {
        CHECK(std::abs(var[k] / 0.01 - 1.0) < 0.05);
        CHECK(std::abs(re_var[k] / 0.005 - 1.0) < 0.1);  // circular: half in each component
    }
}

TEST_CASE("averaged noise variance follows sigma^2 / M") {
    const auto p = make_device_profile(cfg(), "A", 7, -25.0, 0.5);
    std::mt19937_64 rng(3);
    const auto ch = draw_channel(cfg(), rng);
    const ToneVector clean = synthesize_measurement(cfg(), p, ch, {0.0}, {}, rng).csi;
    const int m = 100;
    const int trials = 2000;
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
        ToneVector sum = ToneVector::Zero(56);
        for (int i = 0; i < m; ++i) sum += synthesize_measurement(cfg(), p, ch, {0.1}, {}, rng).csi;
        acc += (sum / m - clean).squaredNorm();
    }
    const double per_tone = acc / trials / 56;
    CHECK(std::abs(per_tone / (0.01 / m) - 1.0) < 0.1);
}

TEST_CASE("session counting, ordering and timestamps") {
    const auto p = make_device_profile(cfg(), "A", 7, -25.0, 0.5);
    std::mt19937_64 rng(5);
    const auto channels = draw_chain_channels(cfg(), rng, 2);
    auto stream = simulate_session(cfg(), p, channels, {0.1}, {2, 2, 50, 0, 0.0}, 42);
    const auto all = collect(stream);
    REQUIRE(all.size() == 4);
    CHECK(all[0].rx_chain == 0);
    CHECK(all[0].seq_no == 0);
    CHECK(all[1].seq_no == 1);
    CHECK(all[2].rx_chain == 1);
    CHECK(all[2].seq_no == 0);
    CHECK(all[3].seq_no == 1);
    CHECK(all[1].timestamp_us == 50);

    SessionSpec spec;
    spec.n_packets = 60000;
    auto big = simulate_session(cfg(), p, std::span(channels).first(1), {0.0}, spec, 1);
    std::int64_t last = -1;
    std::int64_t prev_seq = -1;
    while (auto m = big.next()) {
        CHECK(m->seq_no > prev_seq);
        prev_seq = m->seq_no;
        last = m->timestamp_us;
    }
    CHECK(last == 59999 * 50);
    CHECK(std::abs(last * 1e-6 - 3.0) < 1e-3);

    CHECK_THROWS_AS(simulate_session(cfg(), p, channels, {0.1}, {2, 3, 50, 0, 0.0}, 1), ConfigError);
}

TEST_CASE("chains share the profile") {
    const auto p = make_device_profile(cfg(), "A", 7, -25.0, 0.5);
    const auto flat = draw_channel(cfg(), 0.0, Complex(1.0, 0.0));
    const std::vector<ChannelRealization> chans{flat, flat};
    auto stream = simulate_session(cfg(), p, chans, {0.0}, {3, 2, 50, 0, 0.0}, 9);
    const auto all = collect(stream);
    CHECK(all[0].csi == all[3].csi);

    SessionSpec perturbed{3, 2, 50, 0, 0.01};
    auto s2 = simulate_session(cfg(), p, chans, {0.0}, perturbed, 9);
    const auto pa = collect(s2);
    const double diff = rms(pa[0].csi - pa[3].csi);
    CHECK(diff > 0.0);
    CHECK(diff < 0.03);

    std::mt19937_64 rng(2);
    const auto same = draw_chain_channels(cfg(), rng, 3, Pulse::sinc(), true);
    CHECK(same[0].freq_response == same[2].freq_response);
    const auto indep = draw_chain_channels(cfg(), rng, 2);
    CHECK(indep[0].freq_response != indep[1].freq_response);
}

TEST_CASE("streams are bit-identical for identical seeds") {
    const auto p = make_device_profile(cfg(), "A", 7, -25.0, 0.5);
    std::mt19937_64 r1(8);
    std::mt19937_64 r2(8);
    const auto c1 = draw_chain_channels(cfg(), r1, 2);
    const auto c2 = draw_chain_channels(cfg(), r2, 2);
    auto s1 = simulate_session(cfg(), p, c1, {0.1}, {100, 2, 50, 0, 0.0}, 77);
    auto s2 = simulate_session(cfg(), p, c2, {0.1}, {100, 2, 50, 0, 0.0}, 77);
    CHECK(collect(s1) == collect(s2));
    auto s3 = simulate_session(cfg(), p, c1, {0.1}, {100, 2, 50, 0, 0.0}, 78);
    auto s4 = simulate_session(cfg(), p, c1, {0.1}, {100, 2, 50, 0, 0.0}, 77);
    CHECK(collect(s3) != collect(s4));
}

TEST_CASE("seed derivation separates paths") {
    CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
    CHECK(label_hash("a") != label_hash("b"));
}
