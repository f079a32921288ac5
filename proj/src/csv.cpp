#include "collapse/csv.hpp"

#include <charconv>
#include <system_error>

#include "collapse/errors.hpp"

namespace collapse {

std::string format_double(double v) {
  // Shortest representation that parses back to the same bits.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc{})
    throw IoError("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

namespace {

std::string quote_if_needed(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string quoted = "\"";
  for (char c : field) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  quoted += '"';
  return quoted;
}

}  // namespace

CsvWriter::CsvWriter(const std::filesystem::path& path,
                     const std::vector<std::string>& header)
    : out_(path, std::ios::binary), path_(path), n_columns_(header.size()) {
  if (!out_) throw IoError("csv: cannot open " + path.string());
  if (header.empty()) throw ConfigError("csv: header must not be empty");
  write_line(header);
}

CsvWriter::~CsvWriter() {
  if (!closed_ && out_.is_open()) out_.flush();
}

void CsvWriter::row(const std::vector<CsvCell>& cells) {
  if (cells.size() != n_columns_)
    throw ConfigError("csv: row width does not match header");
  std::vector<std::string> fields;
  fields.reserve(cells.size());
  for (const auto& c : cells) {
    if (std::holds_alternative<std::int64_t>(c))
      fields.push_back(std::to_string(std::get<std::int64_t>(c)));
    else if (std::holds_alternative<double>(c))
      fields.push_back(format_double(std::get<double>(c)));
    else
      fields.push_back(std::get<std::string>(c));
  }
  write_line(fields);
}

void CsvWriter::close() {
  if (closed_) return;
  out_.flush();
  if (!out_) throw IoError("csv: write failure on " + path_.string());
  out_.close();
  closed_ = true;
}

void CsvWriter::write_line(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    out_ << quote_if_needed(fields[i]);
  }
  out_ << '\n';
  if (!out_) throw IoError("csv: write failure on " + path_.string());
}

}  // namespace collapse
