#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "promptfuse/error.hpp"

namespace promptfuse {

/// Incremental SHA-256 over OpenSSL's EVP interface.
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
            throw Error("sha256: digest initialisation failed");
    }

    Sha256& update(std::span<const std::byte> bytes) {
        if (EVP_DigestUpdate(ctx_.get(), bytes.data(), bytes.size()) != 1)
            throw Error("sha256: update failed");
        return *this;
    }

    Sha256& update(std::string_view text) { return update(std::as_bytes(std::span(text))); }

    std::array<std::uint8_t, 32> digest() {
        std::array<std::uint8_t, 32> out{};
        unsigned len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), out.data(), &len) != 1 || len != out.size())
            throw Error("sha256: finalisation failed");
        return out;
    }

    std::string hex_digest() {
        static constexpr char kHex[] = "0123456789abcdef";
        std::string out;
        for (auto b : digest()) {
            out.push_back(kHex[b >> 4]);
            out.push_back(kHex[b & 0xf]);
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view text) { return Sha256().update(text).hex_digest(); }

}  // namespace promptfuse
