#include "hiertax/io_util.hpp"

#include <cerrno>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <system_error>

#include "hiertax/error.hpp"
#include "hiertax/taxonomy.hpp"

namespace hiertax {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open file for reading: " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) {
        throw DataError("read failure on file: " + path.string());
    }
    return buf.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    std::filesystem::path dir = path.parent_path();
    if (!dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec) {
            throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
        }
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError("cannot open file for writing: " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            throw DataError("write failure on file: " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw DataError("cannot rename " + tmp.string() + " to " + path.string() +
                        ": " + ec.message());
    }
}

std::vector<std::string> csv_split(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    std::size_t i = 0;
    while (i < line.size()) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    i += 2;
                } else {
                    quoted = false;
                    ++i;
                }
            } else {
                cur.push_back(c);
                ++i;
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
            ++i;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
            ++i;
        } else {
            cur.push_back(c);
            ++i;
        }
    }
    if (quoted) {
        throw DataError("unterminated quote in CSV line: " + line);
    }
    fields.push_back(std::move(cur));
    return fields;
}

std::string csv_escape(const std::string& field) {
    bool needs_quote = field.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs_quote) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += "\"";
    return out;
}

std::string csv_join(const std::vector<std::string>& fields) {
    std::string out;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) out.push_back(',');
        out += csv_escape(fields[i]);
    }
    return out;
}

std::string format_double(double value) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, const std::string& context) {
    double value = 0.0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw DataError("invalid number '" + text + "' in " + context);
    }
    return value;
}

long parse_long(const std::string& text, const std::string& context) {
    long value = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), value);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size() || value < 0) {
        throw DataError("invalid non-negative integer '" + text + "' in " + context);
    }
    return value;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
    return fnv1a64(read_file(path));
}

}  // namespace hiertax
