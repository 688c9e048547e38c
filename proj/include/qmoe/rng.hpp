/* Copyright 2026 The qmoe Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef QMOE_RNG_HPP_
#define QMOE_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace qmoe {

// Counter-based random streams. A stream is keyed by (seed, label); draw k is
// a pure function of (key, k), so any draw can be regenerated independently
// and enlarging a sample never perturbs its prefix. The mixer is SplitMix64's
// finalizer applied twice. Draw k reads raw words 2k and 2k+1 only, so mixed
// uniform/normal use of one stream never overlaps.

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char ch : s) {
    h ^= static_cast<std::uint8_t>(ch);
    h *= 0x100000001B3ULL;
  }
  return h;
}

class CounterStream {
 public:
  constexpr CounterStream(std::uint64_t seed, std::string_view label) noexcept
      : key_(splitmix64(seed ^ splitmix64(fnv1a64(label)))) {}

  // Child stream addressed by an integer (e.g. a replicate or row index).
  constexpr CounterStream child(std::uint64_t index) const noexcept {
    CounterStream s = *this;
    s.key_ = splitmix64(key_ ^ splitmix64(index ^ 0xD1B54A32D192ED03ULL));
    return s;
  }

  constexpr std::uint64_t key() const noexcept { return key_; }

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return splitmix64(splitmix64(key_ + counter * 0x9E3779B97F4A7C15ULL) ^ key_);
  }

  // Uniform on [0, 1).
  double uniform(std::uint64_t counter) const noexcept {
    return to_unit(bits(2 * counter));
  }

  double uniform(std::uint64_t counter, double lo, double hi) const noexcept {
    return lo + (hi - lo) * uniform(counter);
  }

  // Standard normal.
  double normal(std::uint64_t counter) const noexcept {
    const double u1 = 1.0 - to_unit(bits(2 * counter));  // (0, 1]
    const double u2 = to_unit(bits(2 * counter + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n), n > 0. Multiply-shift; bias is below 2^-32 for
  // the small n used here.
  std::uint64_t below(std::uint64_t counter, std::uint64_t n) const noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(bits(2 * counter)) * n) >> 64);
  }

 private:
  static double to_unit(std::uint64_t b) noexcept {
    return static_cast<double>(b >> 11) * 0x1.0p-53;
  }

  std::uint64_t key_;
};

// Sequential cursor over a CounterStream, for code that just wants "next".
class StreamCursor {
 public:
  explicit StreamCursor(CounterStream s) noexcept : stream_(s) {}
  double uniform() noexcept { return stream_.uniform(next_++); }
  double uniform(double lo, double hi) noexcept { return stream_.uniform(next_++, lo, hi); }
  double normal() noexcept { return stream_.normal(next_++); }
  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
  std::uint64_t below(std::uint64_t n) noexcept { return stream_.below(next_++, n); }
  std::uint64_t position() const noexcept { return next_; }

 private:
  CounterStream stream_;
  std::uint64_t next_ = 0;
};

}  // namespace qmoe

#endif  // QMOE_RNG_HPP_
