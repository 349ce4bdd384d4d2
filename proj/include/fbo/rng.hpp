// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>

#include "fbo/linalg.hpp"

namespace fbo {

/// What a random draw is used for. Each purpose gets its own lane so that,
/// e.g., the lower-gradient sample of client i at step t is independent of
/// the Hessian sample drawn at the same (i, t).
enum class Purpose : std::uint32_t {
  kGenerate = 1,
  kLowerGrad,     // zeta_{i,t}: gradient for the aggregated lower step
  kLowerLocal,    // zeta^i_v: local corrected lower steps
  kUpperGradY,    // xi_{i,t}: upper y-gradient seeding the HessIV chain
  kLowerHvp,      // u_{i,t}: Hessian sample in the chain
  kLowerJvp,      // chi_i: mixed partial at the last iterate
  kUpperGradX,    // xi_i: direct part of the estimate
  kUpperLocal,    // xi^i_v: local corrected upper steps
  kIndexDraw,     // Q, T'
  kParticipants,
  kNeumannSeed,   // baseline p_0 gradient
  kNeumannHvp,    // baseline HessIV factors
  kTrial,
  kMeasure,
  kPartition,
  kCount_
};

inline constexpr std::size_t kPurposeCount = static_cast<std::size_t>(Purpose::kCount_);

/// Coordinates of an independent random stream.
struct Lane {
  std::int64_t client = -1;  // -1: server / not client specific
  Purpose purpose = Purpose::kGenerate;
  std::uint64_t outer = 0;
  std::uint64_t inner = 0;
  std::uint64_t local = 0;

  bool operator==(const Lane&) const = default;
};

/// Stateful sampler built from a stream. Engine and transforms are fully
/// specified (mt19937_64 + explicit conversions) so draws do not depend on
/// the standard library's distribution implementations.
class Generator {
 public:
  explicit Generator(std::uint64_t key) : engine_(key) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on {0, ..., n-1}; n >= 1.
  std::size_t index(std::size_t n);
  /// Standard normal (Box-Muller).
  double normal();
  Vec normal_vec(Eigen::Index n);
  Mat normal_mat(Eigen::Index rows, Eigen::Index cols);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Immutable (seed, lane) pair. Identical pairs produce identical
/// sequences; `generator()` always restarts from the beginning, so a stream
/// can be replayed (the corrected local steps rely on this).
class RngStream {
 public:
  RngStream(std::uint64_t seed, Lane lane);

  std::uint64_t seed() const { return seed_; }
  const Lane& lane() const { return lane_; }
  std::uint64_t key() const { return key_; }
  Generator generator() const { return Generator(key_); }

  bool operator==(const RngStream& o) const { return seed_ == o.seed_ && lane_ == o.lane_; }

 private:
  std::uint64_t seed_;
  Lane lane_;
  std::uint64_t key_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Number of streams handed out, per purpose.
struct SampleAudit {
  std::array<std::uint64_t, kPurposeCount> by_purpose{};

  void record(Purpose p) { ++by_purpose[static_cast<std::size_t>(p)]; }
  std::uint64_t count(Purpose p) const { return by_purpose[static_cast<std::size_t>(p)]; }
  std::uint64_t total() const;
};

/// Issues lanes for one outer iteration of a run.
class StreamFactory {
 public:
  StreamFactory(std::uint64_t seed, std::uint64_t outer, SampleAudit* audit = nullptr)
      : seed_(seed), outer_(outer), audit_(audit) {}

  RngStream operator()(std::int64_t client, Purpose purpose, std::uint64_t inner = 0,
                       std::uint64_t local = 0) const {
    if (audit_ != nullptr) audit_->record(purpose);
    return RngStream(seed_, Lane{client, purpose, outer_, inner, local});
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t outer() const { return outer_; }

 private:
  std::uint64_t seed_;
  std::uint64_t outer_;
  SampleAudit* audit_;
};

}  // namespace fbo
