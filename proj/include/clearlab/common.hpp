// Copyright 2025 the clearlab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace clearlab {

class CheckError : public std::invalid_argument {
public:
    explicit CheckError(const std::string &msg) : std::invalid_argument(msg) {}
};

[[noreturn]] inline void check_fail(const char *expr, const std::string &msg) {
    throw CheckError(std::string(msg) + " (" + expr + ")");
}

#define CLEARLAB_CHECK(cond, msg)                  \
    do {                                           \
        if (!(cond)) {                             \
            ::clearlab::check_fail(#cond, (msg));  \
        }                                          \
    } while (0)

/// Deterministic RNG: xoshiro-free, std::mt19937_64 bit stream with
/// hand-rolled uniform/normal transforms so every platform that runs the
/// same libstdc++ produces the same byte stream.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() {
        // splitmix64; avoids mt19937_64's large state for cheap forking
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (no cached spare: keeps forked
    /// streams independent of call parity).
    double normal();

    /// Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

    /// Derive an independent stream (for per-worker / per-sample RNGs).
    Rng fork() { return Rng(next_u64()); }

private:
    uint64_t state_;
};

/// FNV-1a over raw bytes; used for artifact/output hashing.
uint64_t fnv1a(const void *data, size_t len, uint64_t h = 0xcbf29ce484222325ull);

std::string hex64(uint64_t v);

} // namespace clearlab
