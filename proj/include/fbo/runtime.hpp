// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fbo/linalg.hpp"
#include "fbo/problem.hpp"
#include "fbo/rng.hpp"

namespace fbo {

/// Counts aggregate-and-broadcast exchanges. A round is one exchange,
/// however many vectors ride along in it.
struct CommLedger {
  std::int64_t rounds_total = 0;
  std::int64_t rounds_this_outer = 0;
  std::int64_t loops_this_outer = 0;
  std::int64_t scalars_sent = 0;  // uplink payload, summed over participants

  void begin_outer() {
    rounds_this_outer = 0;
    loops_this_outer = 0;
  }
  /// Marks the start of a communication loop (a sequence of dependent rounds).
  void begin_loop() { ++loops_this_outer; }
  void add_round(std::int64_t scalars) {
    ++rounds_total;
    ++rounds_this_outer;
    scalars_sent += scalars;
  }
};

/// Mean of one vector per participant; one round.
Vec aggregate_mean(std::span<const Vec> payloads, CommLedger& ledger);

/// Several channels piggybacked on a single round. `channels[c][s]` is the
/// payload of participant s on channel c; every channel must have the same
/// number of participants. Returns one mean per channel.
std::vector<Vec> aggregate_round(std::span<const std::vector<Vec>> channels, CommLedger& ledger);

struct Participation {
  double ratio = 1.0;  // C in (0, 1]
};

/// Participant count max(1, round(C m)).
int participant_count(const Participation& part, int m);

/// Uniform subset without replacement, in increasing order. C = 1 returns
/// every client.
std::vector<ClientId> select_participants(const Participation& part, int m, const RngStream& stream);

}  // namespace fbo
