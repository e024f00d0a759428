#include "blockq/replay_db.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "blockq/errors.hpp"
#include "text_util.hpp"

namespace blockq {

using ojson = nlohmann::ordered_json;

std::string encode_row(const ReplayRow& row) {
  ojson j;
  j["iteration"] = row.iteration;
  j["epsilon"] = row.epsilon;
  j["net"] = row.net;
  j["accuracy"] = row.accuracy;
  if (row.params >= 0) j["params"] = row.params;
  else j["params"] = nullptr;
  j["cached"] = row.cached;
  j["status"] = row.status;
  j["timestamp"] = row.timestamp;
  j["q_hash"] = row.q_hash;
  return j.dump();
}

ReplayRow decode_row(std::string_view line) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const ojson::exception& e) {
    throw ParseError(std::string("replay row is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("replay row must be a JSON object");
  ReplayRow row;
  const char* field = "";
  try {
    field = "iteration";
    row.iteration = j.at(field).get<std::int64_t>();
    field = "epsilon";
    row.epsilon = j.at(field).get<double>();
    field = "net";
    row.net = j.at(field).get<std::string>();
    field = "accuracy";
    row.accuracy = j.at(field).get<double>();
    field = "params";
    row.params = j.contains(field) && !j[field].is_null() ? j[field].get<std::int64_t>() : -1;
    field = "cached";
    row.cached = j.at(field).get<bool>();
    field = "status";
    row.status = j.at(field).get<std::string>();
    field = "timestamp";
    row.timestamp = j.value(field, std::string{});
    field = "q_hash";
    row.q_hash = j.value(field, std::string{});
  } catch (const ojson::exception&) {
    throw ParseError(std::string("replay row has missing or malformed field '") + field + "'");
  }
  if (row.status != "ok" && row.status != "failed") throw ParseError("replay row status must be ok or failed");
  if (!(row.accuracy >= 0.0 && row.accuracy <= 1.0)) throw ParseError("replay row accuracy outside [0, 1]");
  return row;
}

std::vector<ReplayRow> parse_replay_db(std::string_view text) {
  std::vector<ReplayRow> rows;
  int lineno = 0;
  for (auto line : detail::split(text, '\n')) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      rows.push_back(decode_row(line));
    } catch (const ParseError& e) {
      throw ParseError("replay DB line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<ReplayRow> read_replay_db(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open replay DB " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_replay_db(ss.str());
}

}  // namespace blockq
