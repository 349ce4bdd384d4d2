// SPDX-License-Identifier: Apache-2.0
#include "fbo/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fbo/errors.hpp"

namespace fbo {

namespace {

void check_payloads(std::span<const Vec> payloads) {
  if (payloads.empty()) throw ProtocolError("aggregation over an empty participant set");
  const auto n = payloads.front().size();
  for (const Vec& v : payloads) {
    if (v.size() != n) throw ContractError("payload dimensions differ within a round");
  }
}

}  // namespace

Vec aggregate_mean(std::span<const Vec> payloads, CommLedger& ledger) {
  check_payloads(payloads);
  ledger.add_round(static_cast<std::int64_t>(payloads.size()) * payloads.front().size());
  return mean_of(payloads);
}

std::vector<Vec> aggregate_round(std::span<const std::vector<Vec>> channels, CommLedger& ledger) {
  if (channels.empty()) throw ProtocolError("round without payloads");
  const std::size_t s = channels.front().size();
  std::int64_t scalars = 0;
  std::vector<Vec> out;
  out.reserve(channels.size());
  for (const auto& ch : channels) {
    if (ch.size() != s) throw ProtocolError("channels disagree on the participant set");
    check_payloads(ch);
    scalars += static_cast<std::int64_t>(ch.size()) * ch.front().size();
    out.push_back(mean_of(ch));
  }
  ledger.add_round(scalars);
  return out;
}

int participant_count(const Participation& part, int m) {
  if (m < 1) throw ParameterError("m", "must be positive");
  if (!(part.ratio > 0.0 && part.ratio <= 1.0)) throw ParameterError("participation", "must lie in (0, 1]");
  return std::clamp(static_cast<int>(std::lround(part.ratio * m)), 1, m);
}

std::vector<ClientId> select_participants(const Participation& part, int m, const RngStream& stream) {
  const int s = participant_count(part, m);
  std::vector<ClientId> ids(static_cast<std::size_t>(m));
  std::iota(ids.begin(), ids.end(), 0);
  if (s == m) return ids;
  // Partial Fisher-Yates: the first s slots are a uniform s-subset.
  Generator g = stream.generator();
  for (int i = 0; i < s; ++i) {
    const auto j = static_cast<std::size_t>(i) + g.index(static_cast<std::size_t>(m - i));
    std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
  }
  ids.resize(static_cast<std::size_t>(s));
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace fbo
