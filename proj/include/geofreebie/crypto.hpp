#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Thin wrappers over libsodium.
namespace geofreebie::crypto {

void ensure_initialized();

std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);

// BLAKE2b, `out_bytes` in [16, 64]. Optional key makes it a keyed MAC.
std::string blake2b_hex(std::string_view data, std::size_t out_bytes = 32,
                        std::string_view key = {});
std::string sha256_hex(std::string_view data);

std::vector<std::uint8_t> random_bytes(std::size_t n);
// URL-safe base64 without padding.
std::string base64url(std::span<const std::uint8_t> bytes);
// 256 random bits, URL-safe encoded (43 chars).
std::string random_token();
// Short random identifier, hex encoded.
std::string random_id(std::size_t bytes = 8);

bool constant_time_equal(std::string_view a, std::string_view b);

enum class HashCost { Minimum, Interactive, Moderate };
HashCost parse_hash_cost(std::string_view s);

// Argon2id with a random per-call salt, encoded as a self-describing string.
std::string hash_password(std::string_view password, HashCost cost);
bool verify_password(std::string_view encoded, std::string_view password);

}  // namespace geofreebie::crypto
