// Copyright 2026 The cascadelab Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace cascadelab {

/// Shortest round-trip decimal form, '.' separator, independent of locale.
inline std::string format_double(double v)
{
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Minimal RFC-4180 writer: fields containing a comma, quote, CR or LF are
/// quoted and embedded quotes doubled; rows end in CRLF-free "\n".
class CsvWriter
{
  public:
    explicit CsvWriter(std::ostream& os) : os_(os) {}

    CsvWriter& field(std::string_view s)
    {
        sep();
        if (s.find_first_of(",\"\r\n") == std::string_view::npos) {
            os_ << s;
        } else {
            os_ << '"';
            for (char c : s) {
                if (c == '"')
                    os_ << '"';
                os_ << c;
            }
            os_ << '"';
        }
        return *this;
    }
    CsvWriter& field(const std::string& s) { return field(std::string_view(s)); }
    CsvWriter& field(const char* s) { return field(std::string_view(s)); }
    CsvWriter& field(double v) { return field(std::string_view(format_double(v))); }
    CsvWriter& field(long long v) { return field(std::string_view(std::to_string(v))); }
    CsvWriter& field(std::size_t v) { return field(std::string_view(std::to_string(v))); }
    CsvWriter& field(int v) { return field(static_cast<long long>(v)); }
    CsvWriter& field(bool v) { return field(std::string_view(v ? "1" : "0")); }

    void end_row()
    {
        os_ << '\n';
        first_ = true;
    }

    void row(const std::vector<std::string>& fields)
    {
        for (const auto& f : fields)
            field(f);
        end_row();
    }

  private:
    void sep()
    {
        if (!first_)
            os_ << ',';
        first_ = false;
    }

    std::ostream& os_;
    bool first_ = true;
};

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view data)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4)
        out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    return out;
}

} // namespace cascadelab
