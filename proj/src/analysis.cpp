#include "blockq/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <unordered_map>

#include "blockq/arch_builder.hpp"
#include "blockq/errors.hpp"
#include "blockq/search_space.hpp"
#include "text_util.hpp"

namespace blockq {

namespace {

constexpr int kAnalysisDepth = 64;

std::string percent(double accuracy) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", accuracy * 100.0);
  return buf;
}

// First evaluation of each distinct net, in iteration order.
std::vector<ReplayRow> distinct_models(std::span<const ReplayRow> rows) {
  std::vector<ReplayRow> sorted(rows.begin(), rows.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const ReplayRow& a, const ReplayRow& b) { return a.iteration < b.iteration; });
  std::vector<ReplayRow> out;
  std::set<std::string> seen;
  for (auto& r : sorted) {
    if (seen.insert(r.net).second) out.push_back(std::move(r));
  }
  return out;
}

struct Summary {
  int count = 0;
  double sum = 0.0;
  double best = 0.0;
  std::string best_net;

  void add(const ReplayRow& r) {
    if (count == 0 || r.accuracy > best) {
      best = r.accuracy;
      best_net = r.net;
    }
    ++count;
    sum += r.accuracy;
  }
  double mean() const { return count ? sum / count : 0.0; }
  std::string line(std::string_view label) const {
    std::string s(label);
    s += " nets=" + std::to_string(count);
    if (count == 0) return s + " mean=- best=-";
    return s + " mean=" + percent(mean()) + " best=" + percent(best) + " " + best_net;
  }
};

std::vector<BlockCode> blocks_of(const ReplayRow& r) { return decode_net(r.net, kAnalysisDepth).blocks(); }

std::string query_contains(std::span<const ReplayRow> rows, std::string_view arg) {
  const BlockCode code = parse_code(arg);
  if (!code.is_block()) throw ParseError("contains: expects a block code B(n), got '" + std::string(arg) + "'");
  Summary with, without;
  for (const auto& r : distinct_models(rows)) {
    if (r.status != "ok") continue;
    const auto b = blocks_of(r);
    (std::find(b.begin(), b.end(), code) != b.end() ? with : without).add(r);
  }
  const auto name = format_code(code);
  return with.line("with " + name + ":") + "\n" + without.line("without " + name + ":") + "\n";
}

std::string query_swap_pairs(std::span<const ReplayRow> rows) {
  // Nets with the same block multiset and ending but a different block order.
  std::map<std::pair<std::vector<BlockCode>, std::vector<BlockCode>>, std::vector<ReplayRow>> groups;
  for (const auto& r : distinct_models(rows)) {
    if (r.status != "ok") continue;
    const auto t = decode_net(r.net, kAnalysisDepth);
    auto body = t.blocks();
    std::vector<BlockCode> ending;
    while (!body.empty() && body.back().is_terminator()) {
      ending.insert(ending.begin(), body.back());
      body.pop_back();
    }
    std::sort(body.begin(), body.end());
    groups[{body, ending}].push_back(r);
  }
  std::string out;
  int pairs = 0;
  double total_delta = 0.0;
  for (const auto& [key, members] : groups) {
    for (std::size_t i = 0; i < members.size(); ++i) {
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        const auto& a = members[i];
        const auto& b = members[j];
        const double delta = a.accuracy - b.accuracy;
        out += a.net + " " + percent(a.accuracy) + " " + b.net + " " + percent(b.accuracy) + " delta=" +
               percent(delta) + "\n";
        ++pairs;
        total_delta += std::fabs(delta);
      }
    }
  }
  out += "swap pairs: " + std::to_string(pairs);
  out += pairs ? " mean |delta|=" + percent(total_delta / pairs) : std::string(" mean |delta|=-");
  return out + "\n";
}

std::string query_concat_effect(std::span<const ReplayRow> rows, const Catalog& cat) {
  std::map<std::pair<Family, ConcatMode>, Summary> groups;
  for (const auto& spec : cat.blocks()) {
    if (spec.family != Family::Dense) groups[{spec.family, spec.concat_mode}];
  }
  for (const auto& r : distinct_models(rows)) {
    if (r.status != "ok") continue;
    std::set<std::pair<Family, ConcatMode>> present;
    for (const auto c : blocks_of(r)) {
      if (!c.is_block()) continue;
      const auto& spec = cat.spec(c);
      if (spec.family != Family::Dense) present.insert({spec.family, spec.concat_mode});
    }
    for (const auto& key : present) groups[key].add(r);
  }
  std::string out;
  std::map<Family, double> baseline;
  for (const auto& [key, s] : groups) {
    if (key.second == ConcatMode::None && s.count) baseline[key.first] = s.mean();
  }
  for (const auto& [key, s] : groups) {
    std::string label = std::string(to_string(key.first)) + " concat=" + std::string(to_string(key.second));
    out += s.line(label);
    if (key.second != ConcatMode::None && s.count && baseline.count(key.first)) {
      out += " vs-none=" + percent(s.mean() - baseline[key.first]);
    }
    out += "\n";
  }
  return out;
}

}  // namespace

TopK top_k(std::span<const ReplayRow> rows, int k) {
  if (k < 1) throw ContractViolation("top-k needs k >= 1");
  TopK out;
  for (const auto& r : distinct_models(rows)) out.rows.push_back({r.net, r.accuracy, r.iteration, r.params});
  std::sort(out.rows.begin(), out.rows.end(), [](const RankedModel& a, const RankedModel& b) {
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    if (a.iteration != b.iteration) return a.iteration < b.iteration;
    return a.net < b.net;
  });
  if (static_cast<std::size_t>(k) > out.rows.size()) {
    out.note = "only " + std::to_string(out.rows.size()) + " distinct models (k=" + std::to_string(k) + ")";
  } else {
    out.rows.resize(static_cast<std::size_t>(k));
  }
  return out;
}

std::string format_ranked(const RankedModel& m) {
  return m.net + " " + percent(m.accuracy) + " " + std::to_string(m.iteration) + " " +
         format_params_millions(m.params);
}

std::string render_top_k(const TopK& t) {
  std::string out;
  for (const auto& m : t.rows) out += format_ranked(m) + "\n";
  if (!t.note.empty()) out += "# " + t.note + "\n";
  return out;
}

std::vector<StageStats> stage_stats(std::span<const ReplayRow> rows) {
  std::map<double, StageStats, std::greater<>> by_eps;
  std::map<double, double, std::greater<>> sums;
  for (const auto& r : rows) {
    auto& s = by_eps[r.epsilon];
    s.epsilon = r.epsilon;
    if (r.cached) {
      ++s.cached;
      continue;
    }
    if (s.models == 0 || r.accuracy > s.best_accuracy) {
      s.best_accuracy = r.accuracy;
      s.best_net = r.net;
    }
    if (s.models == 0 || r.accuracy < s.min_accuracy) s.min_accuracy = r.accuracy;
    ++s.models;
    if (r.status != "ok") ++s.failed;
    sums[r.epsilon] += r.accuracy;
  }
  std::vector<StageStats> out;
  for (auto& [eps, s] : by_eps) {
    if (s.models) s.mean_accuracy = sums[eps] / s.models;
    out.push_back(s);
  }
  return out;
}

std::string stage_stats_csv(std::span<const StageStats> stats) {
  std::string out = "epsilon,models,cached,failed,mean_accuracy,min_accuracy,best_accuracy,best_net\n";
  for (const auto& s : stats) {
    out += detail::format_double(s.epsilon) + "," + std::to_string(s.models) + "," + std::to_string(s.cached) + "," +
           std::to_string(s.failed) + "," + detail::format_double(s.mean_accuracy) + "," +
           detail::format_double(s.min_accuracy) + "," +
           detail::format_double(s.best_accuracy) + ",\"" + s.best_net + "\"\n";
  }
  return out;
}

std::vector<StageStats> parse_stage_stats_csv(std::string_view text) {
  std::vector<StageStats> out;
  int lineno = 0;
  for (auto line : detail::split(text, '\n')) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || lineno == 1) continue;
    // The quoted net is last and contains commas.
    const auto quote = line.find('"');
    if (quote == std::string_view::npos || line.back() != '"' || quote + 1 > line.size() - 1) {
      throw ParseError("stage CSV line " + std::to_string(lineno) + ": missing quoted best_net");
    }
    const auto fields = detail::split(line.substr(0, quote), ',');
    if (fields.size() != 8) throw ParseError("stage CSV line " + std::to_string(lineno) + ": expected 8 fields");
    StageStats s;
    const auto eps = detail::parse_double(fields[0]);
    const auto models = detail::parse_int<int>(fields[1]);
    const auto cached = detail::parse_int<int>(fields[2]);
    const auto failed = detail::parse_int<int>(fields[3]);
    const auto mean = detail::parse_double(fields[4]);
    const auto low = detail::parse_double(fields[5]);
    const auto best = detail::parse_double(fields[6]);
    if (!eps || !models || !cached || !failed || !mean || !low || !best) {
      throw ParseError("stage CSV line " + std::to_string(lineno) + ": malformed number");
    }
    s.epsilon = *eps;
    s.models = *models;
    s.cached = *cached;
    s.failed = *failed;
    s.mean_accuracy = *mean;
    s.min_accuracy = *low;
    s.best_accuracy = *best;
    s.best_net = std::string(line.substr(quote + 1, line.size() - quote - 2));
    out.push_back(std::move(s));
  }
  return out;
}

std::string structural_query(std::span<const ReplayRow> rows, std::string_view query, const Catalog& cat) {
  if (query.starts_with("contains:")) return query_contains(rows, query.substr(9));
  if (query == "swap_pairs") return query_swap_pairs(rows);
  if (query == "concat_effect") return query_concat_effect(rows, cat);
  throw ParseError("unknown query '" + std::string(query) + "' (valid: contains:B(n), swap_pairs, concat_effect)");
}

}  // namespace blockq
