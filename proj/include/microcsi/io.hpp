#pragma once

// File formats.
//
// CSI trace (binary, little-endian throughout):
//   offset size  field
//   0      4     magic "MCST"
//   4      1     format version (1)
//   5      3     reserved, zero
//   8      8     config digest (u64)
//   16     4     DFT length N (u32)
//   20     4     leak half-width N_p (u32)
//   24     4     tone count |K| (u32)
//   28     8     record count (u64, patched when the writer closes)
//   36     2+n   subcarrier map name (u16 length, UTF-8 bytes)
//   ...    4     device count (u32), then per device: u16 length + bytes
// followed by records of 24 + 16*|K| bytes:
//   device index (u32, into the header list), rx chain (u16), reserved (u16),
//   seq_no (i64), timestamp_us (i64), |K| x (real f64, imag f64).
// Records are ordered by (device index, rx chain, seq_no), seq_no strictly
// increasing within a (device, chain) stream.
//
// Fingerprint library (UTF-8 text, one item per line, whitespace separated):
//   MCSI-LIBRARY 1
//   config_digest <16 hex digits>
//   dft_len <N> / subcarrier_map <name> / leak_halfwidth <N_p> / tone_count <|K|>
//   k_rule <sqrt_s|explicit> / k_neighbors <K> / threshold <real> / feature_view <view>
//   identities <count>
//   identity <id> <S>
//   fp <n_csi> <n_chains> <extracted_at_us> <claim|-> <re_0> <im_0> ... <re_K-1> <im_K-1>
// Reals are written with 17 significant digits (%.16e) and parse back
// exactly.

#include <cstdint>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "microcsi/channel_sim.hpp"
#include "microcsi/eval.hpp"
#include "microcsi/matcher.hpp"
#include "microcsi/signal_core.hpp"

namespace microcsi {

inline constexpr std::uint8_t kTraceFormatVersion = 1;
inline constexpr int kLibraryFormatVersion = 1;

struct TraceHeader {
    std::uint8_t version = kTraceFormatVersion;
    std::uint64_t config_digest = 0;
    int dft_len = 0;
    int leak_halfwidth = 0;
    int tone_count = 0;
    std::uint64_t record_count = 0;
    std::string subcarrier_map;
    std::vector<std::string> device_ids;

    friend bool operator==(const TraceHeader&, const TraceHeader&) = default;
};

TraceHeader make_trace_header(const SignalConfig& config, std::vector<std::string> device_ids);

/// Rebuilds the named configuration a header refers to; throws DataError if
/// its digest differs from the header's.
SignalConfig config_from_header(const TraceHeader& header);

class TraceWriter {
public:
    TraceWriter(const std::string& path, TraceHeader header);
    ~TraceWriter();
    TraceWriter(const TraceWriter&) = delete;
    TraceWriter& operator=(const TraceWriter&) = delete;

    /// Throws DataError on unknown devices, wrong lengths or ordering.
    void write(const CsiMeasurement& m);
    /// Patches the record count and flushes. Called by the destructor if
    /// needed (errors there are swallowed).
    void close();

    std::uint64_t records_written() const { return count_; }

private:
    std::string path_;
    std::ofstream out_;
    TraceHeader header_;
    std::string buffer_;
    std::uint64_t count_ = 0;
    std::int64_t last_device_ = -1;
    int last_chain_ = -1;
    std::int64_t last_seq_ = 0;
    bool closed_ = false;
};

class TraceReader {
public:
    /// Throws DataError on bad magic, unsupported version, or a digest other
    /// than `expected_digest` when given.
    explicit TraceReader(const std::string& path, std::optional<std::uint64_t> expected_digest = std::nullopt);

    const TraceHeader& header() const { return header_; }

    /// Next record, or nullopt at a clean end of file. Truncation or
    /// corruption raises DataError naming the last good record index.
    std::optional<CsiMeasurement> next();

    std::uint64_t records_read() const { return count_; }

private:
    std::string path_;
    std::ifstream in_;
    TraceHeader header_;
    std::string buffer_;
    std::uint64_t count_ = 0;
};

void write_trace(const std::string& path, const TraceHeader& header,
                 const std::function<std::optional<CsiMeasurement>()>& source);
void write_trace(const std::string& path, const TraceHeader& header, std::span<const CsiMeasurement> records);
std::vector<CsiMeasurement> read_trace(const std::string& path,
                                       std::optional<std::uint64_t> expected_digest = std::nullopt);

/// CSV export: device,chain,seq_no,timestamp_us,tone,re,im (one row per tone).
void export_trace_csv(TraceReader& reader, std::ostream& out);

struct LibraryFile {
    std::uint64_t config_digest = 0;
    int dft_len = 64;
    std::string subcarrier_map = "ht20";
    int leak_halfwidth = 8;
    int tone_count = 0;
    MatcherParams params;
    FingerprintLibrary library;
};

LibraryFile make_library_file(const SignalConfig& config, const MatcherParams& params,
                              FingerprintLibrary library = {});
void write_library(const std::string& path, const LibraryFile& file);
void write_library(std::ostream& out, const LibraryFile& file);
LibraryFile read_library(const std::string& path);
LibraryFile read_library(std::istream& in, const std::string& name = "<stream>");

enum class TableFormat { table, csv };
TableFormat parse_table_format(std::string_view name);

/// Aligned text table or CSV.
void write_table(std::ostream& out, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows, TableFormat format);

/// Two whitespace-separated numeric columns per line.
void write_two_column(const std::string& path, std::span<const double> x, std::span<const double> y);

std::string format_real(double v);

}  // namespace microcsi
