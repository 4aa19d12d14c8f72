#include "mobmine/common.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

namespace mobmine {

namespace {

constexpr std::array<std::string_view, kEventKindCount> kKindNames = {
    "CALL_IN", "CALL_OUT", "CALL_REJ", "SMS_IN",
    "SMS_OUT", "DATA",     "LAU",      "PAGE",
};

}  // namespace

std::string_view to_string(EventKind kind) {
  return kKindNames[static_cast<std::size_t>(kind)];
}

std::optional<EventKind> parse_event_kind(std::string_view text) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i) {
    if (kKindNames[i] == text) return static_cast<EventKind>(i);
  }
  return std::nullopt;
}

bool kind_name_less(EventKind a, EventKind b) { return to_string(a) < to_string(b); }

ParseError::ParseError(std::string file, std::size_t line, const std::string& what)
    : Error(fmt::format("{}:{}: {}", file, line, what)), file_(std::move(file)), line_(line) {}

ReferentialError::ReferentialError(const std::string& what, std::vector<std::string> offenders)
    : Error([&] {
        std::string msg = what;
        const std::size_t shown = std::min<std::size_t>(offenders.size(), 10);
        for (std::size_t i = 0; i < shown; ++i) msg += (i == 0 ? ": " : ", ") + offenders[i];
        if (offenders.size() > shown) msg += fmt::format(" (+{} more)", offenders.size() - shown);
        return msg;
      }()),
      offenders_(std::move(offenders)) {}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL));
}

double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double exponential(Rng& rng, double rate) {
  double u = uniform01(rng);
  while (u <= 0.0) u = uniform01(rng);
  return -std::log(u) / rate;
}

std::size_t weighted_choice(Rng& rng, std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("weighted_choice: no positive weight");
  double r = uniform01(rng) * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (r < weights[i]) return i;
    r -= weights[i];
  }
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights) {
  double sum = 0.0;
  for (double w : weights) sum += w;
  std::vector<std::size_t> out(weights.size(), 0);
  if (!(sum > 0.0) || total == 0) return out;
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t used = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double q = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(q);
    used += out[i];
    frac.emplace_back(q - static_cast<double>(out[i]), i);
  }
  std::stable_sort(frac.begin(), frac.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; used < total; ++r, ++used) ++out[frac[r % frac.size()].second];
  return out;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (std::uint8_t b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

std::vector<std::uint8_t> from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2 != 0) throw InvalidConfig("hex string has odd length");
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = nibble(hex[2 * i]);
    const int lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw InvalidConfig("invalid hex digit");
    out[i] = static_cast<std::uint8_t>(hi << 4 | lo);
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  std::array<std::uint8_t, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  return to_hex(std::span(digest.data(), len));
}

std::string hmac_sha256_hex(std::span<const std::uint8_t> key, std::string_view message) {
  std::array<std::uint8_t, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()),
           reinterpret_cast<const unsigned char*>(message.data()), message.size(), digest.data(),
           &len) == nullptr) {
    throw Error("hmac-sha256 failed");
  }
  return to_hex(std::span(digest.data(), len));
}

Timestamp floor_to(Timestamp ts, Timestamp width) {
  Timestamp q = ts / width;
  if (ts % width != 0 && ts < 0) --q;
  return q * width;
}

int day_of_week(Timestamp ts) {
  // 1970-01-01 was a Thursday.
  const Timestamp days = floor_to(ts, kSecondsPerDay) / kSecondsPerDay;
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

int hour_of_day(Timestamp ts) {
  return static_cast<int>((ts - floor_to(ts, kSecondsPerDay)) / kSecondsPerHour);
}

}  // namespace mobmine
