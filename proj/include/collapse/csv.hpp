#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

namespace collapse {

// Doubles rendered with 17 significant digits through std::to_chars:
// locale-independent '.' decimal point and enough digits to round-trip.
std::string format_double(double v);

using CsvCell = std::variant<std::int64_t, double, std::string>;

// Line-oriented CSV writer. The header is written on construction; close()
// flushes and surfaces I/O failures as IoError (the destructor only makes a
// best effort).
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path,
            const std::vector<std::string>& header);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void row(const std::vector<CsvCell>& cells);
  void close();

 private:
  void write_line(const std::vector<std::string>& fields);
  std::ofstream out_;
  std::filesystem::path path_;
  std::size_t n_columns_ = 0;
  bool closed_ = false;
};

}  // namespace collapse
