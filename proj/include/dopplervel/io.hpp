#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dopplervel {

/// Shortest decimal string that round-trips the double exactly (locale-independent).
std::string format_double(double x);

std::uint64_t fnv1a64(std::string_view data);
std::string fnv1a64_hex(std::string_view data);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

/// A numeric CSV with one string header row, as produced by the runner.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::size_t n_cols() const { return header.size(); }
};

CsvTable read_csv(const std::filesystem::path& path);

/// UTC wall-clock timestamp, ISO 8601 (manifest bookkeeping only).
std::string utc_timestamp_now();

} // namespace dopplervel
