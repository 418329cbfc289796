#pragma once

#include <string>
#include <string_view>

namespace codeicl {

/// Lowercase hex SHA-256 of the given bytes.
std::string sha256_hex(std::string_view bytes);

/// Builds an unambiguous byte encoding of a tuple of fields:
/// a tag, then every field as `<decimal length>:<bytes>;`.
class DigestBuilder {
public:
    explicit DigestBuilder(std::string_view tag);

    DigestBuilder& add(std::string_view field);
    DigestBuilder& add(long long value);
    /// Shortest round-trip decimal form.
    DigestBuilder& add(double value);

    const std::string& encoding() const noexcept { return buffer_; }
    std::string hex() const { return sha256_hex(buffer_); }

private:
    std::string buffer_;
};

} // namespace codeicl
