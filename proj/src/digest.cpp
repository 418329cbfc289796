#include "codeicl/digest.hpp"

#include <array>
#include <charconv>
#include <stdexcept>

#include <openssl/evp.h>

namespace codeicl {

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("EVP_Digest(sha256) failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0x0f]);
    }
    return out;
}

DigestBuilder::DigestBuilder(std::string_view tag) {
    add(tag);
}

DigestBuilder& DigestBuilder::add(std::string_view field) {
    buffer_ += std::to_string(field.size());
    buffer_ += ':';
    buffer_ += field;
    buffer_ += ';';
    return *this;
}

DigestBuilder& DigestBuilder::add(long long value) {
    return add(std::to_string(value));
}

DigestBuilder& DigestBuilder::add(double value) {
    std::array<char, 64> text{};
    auto [end, ec] = std::to_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{}) {
        throw std::runtime_error("to_chars(double) failed");
    }
    return add(std::string_view(text.data(), static_cast<std::size_t>(end - text.data())));
}

} // namespace codeicl
