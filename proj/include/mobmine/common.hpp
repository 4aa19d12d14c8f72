#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mobmine {

using Timestamp = std::int64_t;
using CellIndex = std::uint32_t;
using SubIndex = std::uint32_t;

inline constexpr Timestamp kSecondsPerHour = 3600;
inline constexpr Timestamp kSecondsPerDay = 86400;
inline constexpr Timestamp kSecondsPerWeek = 7 * kSecondsPerDay;

// Selects the serial reference loop or the OpenMP kernel.
enum class ExecPolicy { Serial, Parallel };

// Passive network event classes. Enumerator order is NOT the tie-break order
// of the event log; that uses the textual names (see kind_name_less).
enum class EventKind : std::uint8_t {
  CallIn,
  CallOut,
  CallRej,
  SmsIn,
  SmsOut,
  Data,
  Lau,
  Page,
};

inline constexpr std::size_t kEventKindCount = 8;

std::string_view to_string(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view text);
bool kind_name_less(EventKind a, EventKind b);

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }
  const std::string& file() const { return file_; }

 private:
  std::string file_;
  std::size_t line_;
};

class ReferentialError : public Error {
 public:
  ReferentialError(const std::string& what, std::vector<std::string> offenders);
  const std::vector<std::string>& offenders() const { return offenders_; }

 private:
  std::vector<std::string> offenders_;
};

class WeakSaltError : public Error {
 public:
  using Error::Error;
};

// Raised whenever an identifier or a forbidden input would cross the
// operator boundary.
class PrivacyGateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Deterministic randomness. std::mt19937_64 has a standard-mandated output
// sequence; the distributions below are written out so that results do not
// depend on the standard library's distribution implementations.

using Rng = std::mt19937_64;

std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

double uniform01(Rng& rng);  // [0, 1)
double uniform(Rng& rng, double lo, double hi);
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);  // [0, n)
double standard_normal(Rng& rng);
double exponential(Rng& rng, double rate);
std::size_t weighted_choice(Rng& rng, std::span<const double> weights);

// Integer allocation of `total` proportional to weights; leftover units go to
// the largest fractional parts, earlier entries first on ties.
std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights);

// ---------------------------------------------------------------------------
// Hashing

std::uint64_t fnv1a64(std::string_view bytes);
std::string to_hex(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> from_hex(std::string_view hex);
std::string sha256_hex(std::string_view bytes);
std::string hmac_sha256_hex(std::span<const std::uint8_t> key, std::string_view message);

// ---------------------------------------------------------------------------
// Time helpers (UTC)

// 0 = Monday ... 6 = Sunday.
int day_of_week(Timestamp ts);
int hour_of_day(Timestamp ts);
Timestamp floor_to(Timestamp ts, Timestamp width);

}  // namespace mobmine
