#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hiertax {

// Whole-file read; throws DataError if the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

// Writes to a temporary file in the same directory, then renames over the
// target, so readers never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// Splits one CSV line into fields. Double quotes delimit fields that contain
// commas or quotes; embedded quotes are doubled. Embedded newlines are not
// supported (no producer in this codebase emits them).
std::vector<std::string> csv_split(const std::string& line);

// Quotes a field if needed and returns the escaped form.
std::string csv_escape(const std::string& field);

// Joins fields with commas, escaping as needed.
std::string csv_join(const std::vector<std::string>& fields);

// Shortest decimal form that round-trips a double exactly.
std::string format_double(double value);

// Strict double parse of a whole field; throws DataError mentioning
// `context` on failure.
double parse_double(const std::string& text, const std::string& context);

// Strict non-negative integer parse; throws DataError mentioning `context`.
long parse_long(const std::string& text, const std::string& context);

// FNV-1a checksum of a file's bytes.
std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace hiertax
