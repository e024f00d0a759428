#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace blockq {

/// One line of the replay DB (JSON Lines, append-only): a single search
/// iteration, either a newly evaluated model or a cached resample.
struct ReplayRow {
  std::int64_t iteration = 0;
  double epsilon = 1.0;
  std::string net;
  double accuracy = 0.0;
  std::int64_t params = -1;  // -1: not buildable at the configured input size
  bool cached = false;
  std::string status = "ok";  // ok | failed
  std::string timestamp;
  std::string q_hash;  // hash of the Q-table after this iteration's updates

  friend bool operator==(const ReplayRow&, const ReplayRow&) = default;
};

std::string encode_row(const ReplayRow& row);  // no trailing newline
/// Throws ParseError naming the missing or malformed field.
ReplayRow decode_row(std::string_view line);

std::vector<ReplayRow> parse_replay_db(std::string_view text);
std::vector<ReplayRow> read_replay_db(const std::filesystem::path& path);

}  // namespace blockq
