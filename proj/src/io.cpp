#include "microcsi/io.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <cctype>
#include <cstring>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

#include "microcsi/error.hpp"

namespace microcsi {
namespace {

constexpr char kMagic[4] = {'M', 'C', 'S', 'T'};
constexpr std::size_t kRecordCountOffset = 28;
constexpr std::size_t kRecordPrefix = 24;

void put_u16(std::string& b, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) b.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>(v >> (8 * i)));
}
void put_f64(std::string& b, double v) { put_u64(b, std::bit_cast<std::uint64_t>(v)); }
void put_str(std::string& b, const std::string& s) {
    if (s.size() > 0xffff) throw DataError("string too long for trace header");
    put_u16(b, static_cast<std::uint16_t>(s.size()));
    b += s;
}

std::uint64_t get_le(const char* p, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

std::size_t record_size(int tone_count) { return kRecordPrefix + 16 * static_cast<std::size_t>(tone_count); }

// Reads exactly n bytes; returns the number actually read.
std::size_t read_bytes(std::istream& in, std::string& buf, std::size_t n) {
    buf.resize(n);
    in.read(buf.data(), static_cast<std::streamsize>(n));
    return static_cast<std::size_t>(in.gcount());
}

std::string read_header_string(std::istream& in, const std::string& path) {
    std::string buf;
    if (read_bytes(in, buf, 2) != 2) throw DataError(path + ": truncated trace header");
    const auto len = static_cast<std::size_t>(get_le(buf.data(), 2));
    if (read_bytes(in, buf, len) != len) throw DataError(path + ": truncated trace header");
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

double parse_real(const std::string& tok, const std::string& where) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size() || tok.empty()) throw DataError(where + ": bad number '" + tok + "'");
    return v;
}

long long parse_int(const std::string& tok, const std::string& where) {
    char* end = nullptr;
    const long long v = std::strtoll(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size() || tok.empty()) throw DataError(where + ": bad integer '" + tok + "'");
    return v;
}

bool valid_token(const std::string& s) {
    return !s.empty() && s != "-" &&
           std::none_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

}  // namespace

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.16e", v);
    return buf;
}

TraceHeader make_trace_header(const SignalConfig& config, std::vector<std::string> device_ids) {
    TraceHeader h;
    h.config_digest = config.digest();
    h.dft_len = config.dft_len();
    h.leak_halfwidth = config.leak_halfwidth();
    h.tone_count = static_cast<int>(config.tone_count());
    h.subcarrier_map = config.map_name();
    h.device_ids = std::move(device_ids);
    return h;
}

SignalConfig config_from_header(const TraceHeader& header) {
    SignalConfig cfg = build_config(header.dft_len, header.subcarrier_map, header.leak_halfwidth);
    if (cfg.digest() != header.config_digest) {
        throw DataError("trace config digest " + hex64(header.config_digest) + " does not match the '" +
                        header.subcarrier_map + "' configuration");
    }
    return cfg;
}

TraceWriter::TraceWriter(const std::string& path, TraceHeader header) : path_(path), header_(std::move(header)) {
    for (const auto& id : header_.device_ids) {
        if (id.empty()) throw DataError("empty device id in trace header");
    }
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("cannot open '" + path + "' for writing");
    std::string b;
    b.append(kMagic, 4);
    b.push_back(static_cast<char>(header_.version));
    b.append(3, '\0');
    put_u64(b, header_.config_digest);
    put_u32(b, static_cast<std::uint32_t>(header_.dft_len));
    put_u32(b, static_cast<std::uint32_t>(header_.leak_halfwidth));
    put_u32(b, static_cast<std::uint32_t>(header_.tone_count));
    put_u64(b, 0);
    put_str(b, header_.subcarrier_map);
    put_u32(b, static_cast<std::uint32_t>(header_.device_ids.size()));
    for (const auto& id : header_.device_ids) put_str(b, id);
    out_.write(b.data(), static_cast<std::streamsize>(b.size()));
}

TraceWriter::~TraceWriter() {
    try {
        close();
    } catch (...) {
    }
}

void TraceWriter::write(const CsiMeasurement& m) {
    if (closed_) throw DataError("trace writer already closed");
    const auto it = std::find(header_.device_ids.begin(), header_.device_ids.end(), m.device_id);
    if (it == header_.device_ids.end()) throw DataError("device '" + m.device_id + "' is not in the trace header");
    const auto dev = static_cast<std::int64_t>(it - header_.device_ids.begin());
    if (m.csi.size() != header_.tone_count) {
        throw DataError("record " + std::to_string(count_) + " has " + std::to_string(m.csi.size()) +
                        " tones, header says " + std::to_string(header_.tone_count));
    }
    if (m.rx_chain < 0 || m.rx_chain > 0xffff) throw DataError("rx_chain out of range");
    const bool ordered = dev > last_device_ || (dev == last_device_ && m.rx_chain > last_chain_) ||
                         (dev == last_device_ && m.rx_chain == last_chain_ && m.seq_no > last_seq_);
    if (!ordered) {
        throw DataError("record " + std::to_string(count_) + " breaks (device, chain, seq_no) ordering");
    }
    last_device_ = dev;
    last_chain_ = m.rx_chain;
    last_seq_ = m.seq_no;

    buffer_.clear();
    put_u32(buffer_, static_cast<std::uint32_t>(dev));
    put_u16(buffer_, static_cast<std::uint16_t>(m.rx_chain));
    put_u16(buffer_, 0);
    put_u64(buffer_, static_cast<std::uint64_t>(m.seq_no));
    put_u64(buffer_, static_cast<std::uint64_t>(m.timestamp_us));
    for (Eigen::Index i = 0; i < m.csi.size(); ++i) {
        put_f64(buffer_, m.csi[i].real());
        put_f64(buffer_, m.csi[i].imag());
    }
    out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    if (!out_) throw DataError("write to '" + path_ + "' failed");
    ++count_;
}

void TraceWriter::close() {
    if (closed_) return;
    closed_ = true;
    std::string b;
    put_u64(b, count_);
    out_.seekp(static_cast<std::streamoff>(kRecordCountOffset));
    out_.write(b.data(), 8);
    out_.close();
    if (!out_) throw DataError("finalising '" + path_ + "' failed");
}

TraceReader::TraceReader(const std::string& path, std::optional<std::uint64_t> expected_digest) : path_(path) {
    in_.open(path, std::ios::binary);
    if (!in_) throw DataError("cannot open trace '" + path + "'");
    std::string b;
    if (read_bytes(in_, b, 36) != 36) throw DataError(path + ": truncated trace header");
    if (std::memcmp(b.data(), kMagic, 4) != 0) throw DataError(path + ": not a CSI trace (bad magic)");
    header_.version = static_cast<std::uint8_t>(b[4]);
    if (header_.version != kTraceFormatVersion) {
        throw DataError(path + ": unsupported trace format version " + std::to_string(header_.version));
    }
    header_.config_digest = get_le(b.data() + 8, 8);
    header_.dft_len = static_cast<int>(get_le(b.data() + 16, 4));
    header_.leak_halfwidth = static_cast<int>(get_le(b.data() + 20, 4));
    header_.tone_count = static_cast<int>(get_le(b.data() + 24, 4));
    header_.record_count = get_le(b.data() + 28, 8);
    header_.subcarrier_map = read_header_string(in_, path);
    if (read_bytes(in_, b, 4) != 4) throw DataError(path + ": truncated trace header");
    const auto n_dev = get_le(b.data(), 4);
    for (std::uint64_t i = 0; i < n_dev; ++i) header_.device_ids.push_back(read_header_string(in_, path));
    if (expected_digest && *expected_digest != header_.config_digest) {
        throw DataError(path + ": config digest " + hex64(header_.config_digest) + " differs from expected " +
                        hex64(*expected_digest));
    }
}

std::optional<CsiMeasurement> TraceReader::next() {
    const std::size_t size = record_size(header_.tone_count);
    const std::size_t got = read_bytes(in_, buffer_, size);
    const std::string last_good =
        count_ == 0 ? std::string("none") : std::to_string(count_ - 1);
    if (got == 0) {
        if (count_ != header_.record_count) {
            throw DataError(path_ + ": truncated trace, header declares " + std::to_string(header_.record_count) +
                            " records; last good record index " + last_good);
        }
        return std::nullopt;
    }
    if (got != size) {
        throw DataError(path_ + ": truncated record " + std::to_string(count_) + "; last good record index " +
                        last_good);
    }
    if (count_ >= header_.record_count) {
        throw DataError(path_ + ": more records than the header declares; last good record index " + last_good);
    }
    const char* p = buffer_.data();
    const auto dev = get_le(p, 4);
    if (dev >= header_.device_ids.size()) {
        throw DataError(path_ + ": record " + std::to_string(count_) + " has a bad device index; last good record index " +
                        last_good);
    }
    CsiMeasurement m;
    m.device_id = header_.device_ids[dev];
    m.rx_chain = static_cast<int>(get_le(p + 4, 2));
    m.seq_no = static_cast<std::int64_t>(get_le(p + 8, 8));
    m.timestamp_us = static_cast<std::int64_t>(get_le(p + 16, 8));
    m.csi.resize(header_.tone_count);
    p += kRecordPrefix;
    for (int i = 0; i < header_.tone_count; ++i, p += 16) {
        m.csi[i] = Complex(std::bit_cast<double>(get_le(p, 8)), std::bit_cast<double>(get_le(p + 8, 8)));
    }
    ++count_;
    return m;
}

void write_trace(const std::string& path, const TraceHeader& header,
                 const std::function<std::optional<CsiMeasurement>()>& source) {
    TraceWriter w(path, header);
    while (auto m = source()) w.write(*m);
    w.close();
}

void write_trace(const std::string& path, const TraceHeader& header, std::span<const CsiMeasurement> records) {
    TraceWriter w(path, header);
    for (const auto& m : records) w.write(m);
    w.close();
}

std::vector<CsiMeasurement> read_trace(const std::string& path, std::optional<std::uint64_t> expected_digest) {
    TraceReader r(path, expected_digest);
    std::vector<CsiMeasurement> out;
    out.reserve(static_cast<std::size_t>(r.header().record_count));
    while (auto m = r.next()) out.push_back(std::move(*m));
    return out;
}

void export_trace_csv(TraceReader& reader, std::ostream& out) {
    out << "device,chain,seq_no,timestamp_us,tone,re,im\n";
    while (auto m = reader.next()) {
        for (Eigen::Index i = 0; i < m->csi.size(); ++i) {
            out << m->device_id << ',' << m->rx_chain << ',' << m->seq_no << ',' << m->timestamp_us << ',' << i << ','
                << format_real(m->csi[i].real()) << ',' << format_real(m->csi[i].imag()) << '\n';
        }
    }
}

LibraryFile make_library_file(const SignalConfig& config, const MatcherParams& params, FingerprintLibrary library) {
    LibraryFile f;
    f.config_digest = config.digest();
    f.dft_len = config.dft_len();
    f.subcarrier_map = config.map_name();
    f.leak_halfwidth = config.leak_halfwidth();
    f.tone_count = static_cast<int>(config.tone_count());
    f.params = params;
    f.library = std::move(library);
    return f;
}

void write_library(std::ostream& out, const LibraryFile& file) {
    if (file.library.config_digest() && *file.library.config_digest() != file.config_digest) {
        throw DataError("library content digest does not match the file header digest");
    }
    out << "MCSI-LIBRARY " << kLibraryFormatVersion << '\n'
        << "config_digest " << hex64(file.config_digest) << '\n'
        << "dft_len " << file.dft_len << '\n'
        << "subcarrier_map " << file.subcarrier_map << '\n'
        << "leak_halfwidth " << file.leak_halfwidth << '\n'
        << "tone_count " << file.tone_count << '\n'
        << "k_rule " << to_string(file.params.k_rule) << '\n'
        << "k_neighbors " << file.params.k_neighbors << '\n'
        << "threshold " << format_real(file.params.threshold) << '\n'
        << "feature_view " << to_string(file.params.view) << '\n';
    const auto ids = file.library.identities();
    out << "identities " << ids.size() << '\n';
    std::string line;
    for (const auto& id : ids) {
        if (!valid_token(id)) throw DataError("identity '" + id + "' cannot be stored (empty, '-' or whitespace)");
        const auto& fps = file.library.fingerprints(id);
        out << "identity " << id << ' ' << fps.size() << '\n';
        for (const auto& fp : fps) {
            if (fp.values.size() != file.tone_count) throw DataError("fingerprint length differs from tone_count");
            const std::string claim = fp.device_claim.value_or("-");
            if (fp.device_claim && !valid_token(claim)) throw DataError("device claim '" + claim + "' cannot be stored");
            line = "fp " + std::to_string(fp.n_csi) + ' ' + std::to_string(fp.n_chains) + ' ' +
                   std::to_string(fp.extracted_at_us) + ' ' + claim;
            for (Eigen::Index i = 0; i < fp.values.size(); ++i) {
                line += ' ';
                line += format_real(fp.values[i].real());
                line += ' ';
                line += format_real(fp.values[i].imag());
            }
            out << line << '\n';
        }
    }
    if (!out) throw DataError("library write failed");
}

void write_library(const std::string& path, const LibraryFile& file) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    write_library(out, file);
    out.close();
    if (!out) throw DataError("writing '" + path + "' failed");
}

LibraryFile read_library(std::istream& in, const std::string& name) {
    LibraryFile f;
    std::string line;
    std::size_t line_no = 0;
    auto next_fields = [&](std::string_view expect_key) {
        for (;;) {
            if (!std::getline(in, line)) throw DataError(name + ": unexpected end of file, expected '" + std::string(expect_key) + "'");
            ++line_no;
            if (!line.empty()) break;
        }
        std::istringstream ss(line);
        std::vector<std::string> toks;
        for (std::string t; ss >> t;) toks.push_back(t);
        if (toks.empty() || toks.front() != expect_key) {
            throw DataError(name + ":" + std::to_string(line_no) + ": expected '" + std::string(expect_key) + "'");
        }
        return toks;
    };
    auto where = [&] { return name + ":" + std::to_string(line_no); };
    auto single = [&](std::string_view key) {
        auto t = next_fields(key);
        if (t.size() != 2) throw DataError(where() + ": malformed '" + std::string(key) + "' line");
        return t[1];
    };

    const auto magic = next_fields("MCSI-LIBRARY");
    if (magic.size() != 2 || parse_int(magic[1], where()) != kLibraryFormatVersion) {
        throw DataError(where() + ": unsupported library format version");
    }
    f.config_digest = std::strtoull(single("config_digest").c_str(), nullptr, 16);
    f.dft_len = static_cast<int>(parse_int(single("dft_len"), where()));
    f.subcarrier_map = single("subcarrier_map");
    f.leak_halfwidth = static_cast<int>(parse_int(single("leak_halfwidth"), where()));
    f.tone_count = static_cast<int>(parse_int(single("tone_count"), where()));
    f.params.k_rule = parse_k_rule(single("k_rule"));
    f.params.k_neighbors = static_cast<int>(parse_int(single("k_neighbors"), where()));
    f.params.threshold = parse_real(single("threshold"), where());
    f.params.view = parse_feature_view(single("feature_view"));
    const auto n_ids = parse_int(single("identities"), where());

    for (long long i = 0; i < n_ids; ++i) {
        const auto head = next_fields("identity");
        if (head.size() != 3) throw DataError(where() + ": malformed identity line");
        const auto count = parse_int(head[2], where());
        std::vector<Fingerprint> fps;
        fps.reserve(static_cast<std::size_t>(std::max(0LL, count)));
        for (long long j = 0; j < count; ++j) {
            const auto t = next_fields("fp");
            if (t.size() != 5 + 2 * static_cast<std::size_t>(f.tone_count)) {
                throw DataError(where() + ": fingerprint has the wrong number of values");
            }
            Fingerprint fp;
            fp.n_csi = static_cast<int>(parse_int(t[1], where()));
            fp.n_chains = static_cast<int>(parse_int(t[2], where()));
            fp.extracted_at_us = parse_int(t[3], where());
            if (t[4] != "-") fp.device_claim = t[4];
            fp.config_digest = f.config_digest;
            fp.values.resize(f.tone_count);
            for (int k = 0; k < f.tone_count; ++k) {
                fp.values[k] = Complex(parse_real(t[5 + 2 * static_cast<std::size_t>(k)], where()),
                                       parse_real(t[6 + 2 * static_cast<std::size_t>(k)], where()));
            }
            fps.push_back(std::move(fp));
        }
        if (!fps.empty()) f.library = enroll(f.library, head[1], fps);
    }
    return f;
}

LibraryFile read_library(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open library '" + path + "'");
    return read_library(in, path);
}

TableFormat parse_table_format(std::string_view name) {
    if (name == "table") return TableFormat::table;
    if (name == "csv") return TableFormat::csv;
    throw ConfigError("unknown format '" + std::string(name) + "' (expected table or csv)");
}

void write_table(std::ostream& out, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows, TableFormat format) {
    if (format == TableFormat::csv) {
        auto emit = [&](const std::vector<std::string>& r) {
            for (std::size_t i = 0; i < r.size(); ++i) out << (i ? "," : "") << r[i];
            out << '\n';
        };
        emit(header);
        for (const auto& r : rows) emit(r);
        return;
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size() && i < width.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    auto emit = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            out << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << (i ? std::right : std::left) << r[i];
        }
        out << '\n';
    };
    emit(header);
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.empty() ? 0 : width.size() - 1), '-') << '\n';
    for (const auto& r : rows) emit(r);
}

void write_two_column(const std::string& path, std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DataError("plot columns differ in length");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < x.size(); ++i) out << format_real(x[i]) << ' ' << format_real(y[i]) << '\n';
    if (!out) throw DataError("writing '" + path + "' failed");
}

}  // namespace microcsi
