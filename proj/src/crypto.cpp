#include "geofreebie/crypto.hpp"

#include "geofreebie/error.hpp"

#include <sodium.h>

#include <mutex>

namespace geofreebie::crypto {

void ensure_initialized() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw Error(ErrorCode::Internal, "libsodium initialisation failed");
  });
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::string out(bytes.size() * 2 + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), bytes.data(), bytes.size());
  out.pop_back();
  return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
  std::vector<std::uint8_t> out(hex.size() / 2);
  std::size_t len = 0;
  if (hex.size() % 2 != 0 ||
      sodium_hex2bin(out.data(), out.size(), hex.data(), hex.size(), nullptr, &len, nullptr) != 0 ||
      len != out.size()) {
    throw Error(ErrorCode::ParseError, "malformed hex string");
  }
  return out;
}

std::string blake2b_hex(std::string_view data, std::size_t out_bytes, std::string_view key) {
  ensure_initialized();
  std::vector<std::uint8_t> out(out_bytes);
  crypto_generichash(out.data(), out.size(), reinterpret_cast<const unsigned char*>(data.data()),
                     data.size(),
                     key.empty() ? nullptr : reinterpret_cast<const unsigned char*>(key.data()),
                     key.size());
  return to_hex(out);
}

std::string sha256_hex(std::string_view data) {
  ensure_initialized();
  std::uint8_t out[crypto_hash_sha256_BYTES];
  crypto_hash_sha256(out, reinterpret_cast<const unsigned char*>(data.data()), data.size());
  return to_hex(out);
}

std::vector<std::uint8_t> random_bytes(std::size_t n) {
  ensure_initialized();
  std::vector<std::uint8_t> out(n);
  randombytes_buf(out.data(), out.size());
  return out;
}

std::string base64url(std::span<const std::uint8_t> bytes) {
  const int variant = sodium_base64_VARIANT_URLSAFE_NO_PADDING;
  std::string out(sodium_base64_encoded_len(bytes.size(), variant), '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(), variant);
  out.resize(std::char_traits<char>::length(out.c_str()));
  return out;
}

std::string random_token() { return base64url(random_bytes(32)); }

std::string random_id(std::size_t bytes) { return to_hex(random_bytes(bytes)); }

bool constant_time_equal(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  return sodium_memcmp(a.data(), b.data(), a.size()) == 0;
}

HashCost parse_hash_cost(std::string_view s) {
  if (s == "minimum" || s == "min") return HashCost::Minimum;
  if (s == "moderate") return HashCost::Moderate;
  if (s == "interactive") return HashCost::Interactive;
  throw Error(ErrorCode::ParseError, "unknown password hash cost: " + std::string(s));
}

std::string hash_password(std::string_view password, HashCost cost) {
  ensure_initialized();
  unsigned long long ops = crypto_pwhash_OPSLIMIT_INTERACTIVE;
  std::size_t mem = crypto_pwhash_MEMLIMIT_INTERACTIVE;
  if (cost == HashCost::Minimum) {
    ops = crypto_pwhash_OPSLIMIT_MIN;
    mem = crypto_pwhash_MEMLIMIT_MIN;
  } else if (cost == HashCost::Moderate) {
    ops = crypto_pwhash_OPSLIMIT_MODERATE;
    mem = crypto_pwhash_MEMLIMIT_MODERATE;
  }
  char out[crypto_pwhash_STRBYTES];
  if (crypto_pwhash_str_alg(out, password.data(), password.size(), ops, mem,
                            crypto_pwhash_ALG_ARGON2ID13) != 0) {
    throw Error(ErrorCode::Internal, "password hashing failed (out of memory)");
  }
  return out;
}

bool verify_password(std::string_view encoded, std::string_view password) {
  ensure_initialized();
  const std::string enc(encoded);
  return crypto_pwhash_str_verify(enc.c_str(), password.data(), password.size()) == 0;
}

}  // namespace geofreebie::crypto
