#include "blockq/harness.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <future>
#include <memory>
#include <set>
#include <sstream>

#include "blockq/errors.hpp"
#include "text_util.hpp"

namespace blockq {

using detail::format_double;

// ----------------------------------------------------------------- config --

ClockMode SearchConfig::effective_clock() const {
  if (clock) return *clock;
  return evaluator == EvaluatorKind::Simulated ? ClockMode::Logical : ClockMode::Wall;
}

void SearchConfig::validate() const {
  if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
  schedule.validate();
  params.validate();
  if (!(q0 >= 0.0 && q0 <= 1.0)) throw ConfigError("q0 must lie in [0, 1]");
  if (replay_batch < 0) throw ConfigError("replay_batch must be >= 0");
  if (replay_period < 1) throw ConfigError("replay_period must be >= 1");
  if (attempt_cap_factor < 0) throw ConfigError("attempt_cap must be >= 0");
  if (parallel < 1) throw ConfigError("parallel must be >= 1");
  if (class_count < 1) throw ConfigError("classes must be >= 1");
  if (eval_timeout_ms < 1) throw ConfigError("eval_timeout_s must be positive");
  if (eval_retries < 0) throw ConfigError("eval_retries must be >= 0");
  if (evaluator == EvaluatorKind::External && endpoints.empty()) {
    throw ConfigError("external evaluator needs endpoint=host:port");
  }
  oracle.validate();
}

namespace {

bool parse_bool(std::string_view v, std::string_view key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(std::string(key) + ": expected true/false, got '" + std::string(v) + "'");
}

double parse_real(std::string_view v, std::string_view key) {
  const auto d = detail::parse_double(v);
  if (!d) throw ConfigError(std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return *d;
}

long long parse_integer(std::string_view v, std::string_view key) {
  const auto n = detail::parse_int(v);
  if (!n) throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(v) + "'");
  return *n;
}

std::vector<int> parse_int_list(std::string_view v, std::string_view key) {
  std::vector<int> out;
  for (auto item : detail::split(v, ',')) out.push_back(static_cast<int>(parse_integer(detail::trim(item), key)));
  return out;
}

template <typename T>
std::string join(const T& items, const std::function<std::string(const typename T::value_type&)>& fmt) {
  std::string out;
  for (const auto& x : items) {
    if (!out.empty()) out += ',';
    out += fmt(x);
  }
  return out;
}

}  // namespace

void SearchConfig::set(std::string_view key, std::string_view raw) {
  const auto value = detail::trim(raw);
  try {
    if (key == "max_depth") max_depth = static_cast<int>(parse_integer(value, key));
    else if (key == "schedule") schedule = EpsilonSchedule::parse(value);
    else if (key == "alpha") params.alpha = parse_real(value, key);
    else if (key == "gamma") params.gamma = parse_real(value, key);
    else if (key == "q0") q0 = parse_real(value, key);
    else if (key == "replay_batch") replay_batch = static_cast<int>(parse_integer(value, key));
    else if (key == "replay_period") replay_period = static_cast<int>(parse_integer(value, key));
    else if (key == "seed") seed = static_cast<std::uint64_t>(parse_integer(value, key));
    else if (key == "dedupe") dedupe = parse_bool(value, key);
    else if (key == "attempt_cap") attempt_cap_factor = static_cast<int>(parse_integer(value, key));
    else if (key == "parallel") parallel = static_cast<int>(parse_integer(value, key));
    else if (key == "evaluator") {
      if (value == "simulated") evaluator = EvaluatorKind::Simulated;
      else if (value == "external") evaluator = EvaluatorKind::External;
      else throw ConfigError("evaluator must be simulated or external");
    } else if (key == "endpoint") {
      endpoints.clear();
      for (auto e : detail::split(value, ',')) endpoints.push_back(Endpoint::parse(detail::trim(e)));
    } else if (key == "eval_timeout_s") eval_timeout_ms = static_cast<int>(parse_real(value, key) * 1000.0);
    else if (key == "eval_retries") eval_retries = static_cast<int>(parse_integer(value, key));
    else if (key == "epochs") budget.epochs = static_cast<int>(parse_integer(value, key));
    else if (key == "max_retrains") budget.max_retrains = static_cast<int>(parse_integer(value, key));
    else if (key == "lr0") budget.lr0 = parse_real(value, key);
    else if (key == "drop_factor") budget.drop_factor = parse_real(value, key);
    else if (key == "retrain_drop_factor") budget.retrain_drop_factor = parse_real(value, key);
    else if (key == "drop_every") budget.drop_every = static_cast<int>(parse_integer(value, key));
    else if (key == "classes") class_count = static_cast<int>(parse_integer(value, key));
    else if (key == "input_shape") input_shape = TensorShape::parse(value);
    else if (key == "dataset") dataset = std::string(value);
    else if (key == "pool_rounding") {
      if (value == "floor") pool_rounding = PoolRounding::Floor;
      else if (value == "ceil") pool_rounding = PoolRounding::Ceil;
      else throw ConfigError("pool_rounding must be floor or ceil");
    } else if (key == "catalog") catalog_path = std::string(value);
    else if (key == "db") db_path = std::string(value);
    else if (key == "checkpoint") checkpoint_path = std::string(value);
    else if (key == "clock") {
      if (value == "logical") clock = ClockMode::Logical;
      else if (value == "wall") clock = ClockMode::Wall;
      else if (value == "auto") clock.reset();
      else throw ConfigError("clock must be logical, wall or auto");
    } else if (key == "oracle.noise_sigma") oracle.noise_sigma = parse_real(value, key);
    else if (key == "oracle.seed") oracle.seed = static_cast<std::uint64_t>(parse_integer(value, key));
    else if (key == "oracle.poison_value") oracle.poison_value = parse_real(value, key);
    else if (key == "oracle.poison") {
      oracle.poison_codes.clear();
      if (value != "none") {
        for (auto c : detail::split(value, ',')) oracle.poison_codes.push_back(parse_code(detail::trim(c)));
      }
    } else if (key == "oracle.base") {
      const auto parts = detail::split(value, ',');
      if (parts.size() != kBlockCount) throw ConfigError("oracle.base needs 12 comma-separated scores");
      for (int i = 0; i < kBlockCount; ++i) oracle.base_scores[i] = parse_real(detail::trim(parts[i]), key);
    } else if (key == "oracle.bonus.residual_concat") oracle.residual_concat_bonus = parse_real(value, key);
    else if (key == "oracle.bonus.inception_concat") oracle.inception_concat_bonus = parse_real(value, key);
    else if (key == "oracle.bonus.plain_inception") oracle.plain_inception_bonus = parse_real(value, key);
    else if (key.starts_with("channels.")) {
      const auto code = parse_code(key.substr(9));
      channel_overrides[code.index()] = parse_int_list(value, key);
    } else {
      throw ConfigError("unknown config key '" + std::string(key) + "'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string(key) + ": " + e.what());
  }
}

SearchConfig SearchConfig::parse(std::string_view text) {
  SearchConfig cfg;
  int lineno = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++lineno;
    auto line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    }
    cfg.set(detail::trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

SearchConfig SearchConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::vector<std::pair<std::string, std::string>> SearchConfig::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> out = {
      {"max_depth", std::to_string(max_depth)},
      {"schedule", schedule.to_string()},
      {"alpha", format_double(params.alpha)},
      {"gamma", format_double(params.gamma)},
      {"q0", format_double(q0)},
      {"replay_batch", std::to_string(replay_batch)},
      {"replay_period", std::to_string(replay_period)},
      {"seed", std::to_string(seed)},
      {"dedupe", dedupe ? "true" : "false"},
      {"attempt_cap", std::to_string(attempt_cap_factor)},
      {"parallel", std::to_string(parallel)},
      {"evaluator", evaluator == EvaluatorKind::Simulated ? "simulated" : "external"},
      {"eval_timeout_s", format_double(eval_timeout_ms / 1000.0)},
      {"eval_retries", std::to_string(eval_retries)},
      {"epochs", std::to_string(budget.epochs)},
      {"max_retrains", std::to_string(budget.max_retrains)},
      {"lr0", format_double(budget.lr0)},
      {"drop_factor", format_double(budget.drop_factor)},
      {"retrain_drop_factor", format_double(budget.retrain_drop_factor)},
      {"drop_every", std::to_string(budget.drop_every)},
      {"classes", std::to_string(class_count)},
      {"input_shape", input_shape.to_string()},
      {"dataset", dataset},
      {"pool_rounding", pool_rounding == PoolRounding::Floor ? "floor" : "ceil"},
      {"db", db_path.string()},
      {"checkpoint", checkpoint_path.string()},
      {"clock", !clock ? "auto" : (*clock == ClockMode::Logical ? "logical" : "wall")},
      {"oracle.noise_sigma", format_double(oracle.noise_sigma)},
      {"oracle.seed", std::to_string(oracle.seed)},
      {"oracle.poison_value", format_double(oracle.poison_value)},
      {"oracle.poison", oracle.poison_codes.empty()
                            ? std::string("none")
                            : join(oracle.poison_codes, std::function<std::string(const BlockCode&)>(
                                                            [](const BlockCode& c) { return format_code(c); }))},
      {"oracle.base", join(oracle.base_scores,
                           std::function<std::string(const double&)>([](const double& d) { return format_double(d); }))},
      {"oracle.bonus.residual_concat", format_double(oracle.residual_concat_bonus)},
      {"oracle.bonus.inception_concat", format_double(oracle.inception_concat_bonus)},
      {"oracle.bonus.plain_inception", format_double(oracle.plain_inception_bonus)},
  };
  if (!endpoints.empty()) {
    out.emplace_back("endpoint", join(endpoints, std::function<std::string(const Endpoint&)>(
                                                     [](const Endpoint& e) { return e.to_string(); })));
  }
  if (!catalog_path.empty()) out.emplace_back("catalog", catalog_path.string());
  for (const auto& [n, profile] : channel_overrides) {
    out.emplace_back("channels.B(" + std::to_string(n) + ")",
                     join(profile, std::function<std::string(const int&)>([](const int& c) { return std::to_string(c); })));
  }
  return out;
}

Catalog load_catalog(const SearchConfig& cfg) {
  Catalog cat = cfg.catalog_path.empty() ? Catalog::builtin() : Catalog::load(cfg.catalog_path);
  for (const auto& [n, profile] : cfg.channel_overrides) cat = cat.with_channels(n, profile);
  return cat;
}

int SearchLog::unique_models(double epsilon) const {
  int n = 0;
  for (const auto& r : records) n += (!r.cached && r.epsilon == epsilon) ? 1 : 0;
  return n;
}

int SearchLog::unique_models() const {
  int n = 0;
  for (const auto& r : records) n += r.cached ? 0 : 1;
  return n;
}

// ----------------------------------------------------------------- engine --

namespace {

std::string iso_utc(std::time_t t) {
  std::tm tm{};
  ::gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const std::filesystem::path& path, std::string_view what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + std::string(what) + " " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool transient_failure(const EvalResponse& r) {
  return !r.ok() && (r.detail == "timeout" || r.detail.starts_with("transport"));
}

class Engine {
 public:
  explicit Engine(SearchConfig cfg)
      : cfg_(std::move(cfg)),
        catalog_(load_catalog(cfg_)),
        q_(cfg_.q0),
        rng_(cfg_.seed),
        space_size_(trajectory_count(cfg_.max_depth)) {
    if (cfg_.evaluator == EvaluatorKind::External) external_ = std::make_unique<ExternalEvaluator>(cfg_.endpoints);
  }

  void start_fresh() {
    std::filesystem::remove(cfg_.checkpoint_path);
    open_db(std::ios::trunc);
    write_checkpoint(false);
  }

  // Restores state from a verified checkpoint. Returns true when the run had already completed.
  bool restore(const QCheckpoint& cp) {
    auto meta = [&](std::string_view key) {
      const auto v = cp.meta_value(key);
      if (!v) throw IntegrityError("checkpoint integrity check failed: missing '" + std::string(key) + "'");
      return *v;
    };
    const auto db_bytes = detail::parse_int<std::uint64_t>(meta("db_bytes"));
    const auto iteration = detail::parse_int<std::int64_t>(meta("iteration"));
    if (!db_bytes || !iteration) throw IntegrityError("checkpoint integrity check failed: bad DB bookkeeping");
    const bool complete = meta("complete") == "1";
    const std::string expected_hash = meta("db_hash");

    std::string db_text = std::filesystem::exists(cfg_.db_path) ? read_file(cfg_.db_path, "replay DB") : "";
    if (db_text.size() < *db_bytes) {
      throw IntegrityError("replay DB integrity check failed: " + cfg_.db_path.string() + " holds " +
                           std::to_string(db_text.size()) + " bytes, checkpoint records " +
                           std::to_string(*db_bytes));
    }
    db_text.resize(*db_bytes);
    if (detail::hex64(detail::fnv1a64(db_text)) != expected_hash) {
      throw IntegrityError("replay DB integrity check failed: content hash differs from checkpoint");
    }
    // Rows past the checkpoint belong to an iteration that never committed.
    std::filesystem::resize_file(cfg_.db_path, *db_bytes);
    db_hash_ = detail::fnv1a64(db_text);
    db_bytes_ = *db_bytes;

    log_.records = parse_replay_db(db_text);
    if (static_cast<std::int64_t>(log_.records.size()) != *iteration ||
        (!log_.records.empty() && log_.records.back().iteration != *iteration)) {
      throw IntegrityError("replay DB integrity check failed: row count disagrees with checkpoint iteration");
    }
    for (const auto& row : log_.records) {
      if (row.cached) continue;
      ++models_;
      ReplayEntry e;
      e.blocks = decode_net(row.net, cfg_.max_depth).blocks();
      e.net_string = row.net;
      e.accuracy = row.accuracy;
      e.iteration = row.iteration;
      e.epsilon = row.epsilon;
      e.param_count = row.params;
      e.wall_time = row.timestamp;
      e.ok = row.status == "ok";
      memory_.append(std::move(e));
    }
    iteration_ = *iteration;
    q_ = cp.table;
    cfg_.params = cp.params;
    try {
      rng_.set_state(cp.rng_state);
    } catch (const std::exception&) {
      throw IntegrityError("checkpoint integrity check failed: malformed RNG state");
    }
    stage_ = cp.stage;
    stage_models_ = cp.stage_models;
    stage_attempts_ = cp.stage_attempts;
    log_.exhausted = meta("exhausted") == "1";
    if (stage_ < 0 || stage_ > static_cast<int>(cfg_.schedule.stages.size())) {
      throw IntegrityError("checkpoint integrity check failed: stage index out of range");
    }
    if (complete) {
      log_.complete = true;
      return true;
    }
    open_db(std::ios::app);
    return false;
  }

  SearchLog run(const RunControl& ctl) {
    control_ = &ctl;
    const auto& stages = cfg_.schedule.stages;
    while (true) {
      while (stage_ < static_cast<int>(stages.size()) && stage_models_ >= stages[stage_].unique_models) {
        ++stage_;
        stage_models_ = 0;
        stage_attempts_ = 0;
      }
      if (stage_ == static_cast<int>(stages.size())) break;
      if (cfg_.dedupe && memory_.size() >= space_size_) {
        log_.exhausted = true;
        break;
      }
      if (should_stop()) {
        log_.interrupted = true;
        return log_;
      }
      if (cfg_.parallel > 1) run_batch();
      else run_one();
    }
    log_.complete = true;
    write_checkpoint(true);
    return log_;
  }

  const SearchLog& finished() const { return log_; }

 private:
  bool should_stop() const {
    return control_->stop_after_iterations && iteration_ >= *control_->stop_after_iterations;
  }

  double next_epsilon() {
    const auto& st = cfg_.schedule.stages[stage_];
    const long long cap = static_cast<long long>(cfg_.attempt_cap_factor) * std::max(1, st.unique_models);
    const bool forced = cap > 0 && stage_attempts_ > 0 && stage_attempts_ % cap == 0;
    ++stage_attempts_;
    return forced ? 1.0 : st.epsilon;
  }

  void run_one() {
    const double eps = next_epsilon();
    const Trajectory t = sample_trajectory(q_, eps, rng_, cfg_.max_depth);
    if (cfg_.dedupe) {
      if (const auto hit = memory_.find(t.blocks())) {
        record_cached(t, *hit);
        return;
      }
    }
    record_new(t, evaluate(static_cast<std::uint64_t>(iteration_ + 1), t));
  }

  void run_batch() {
    const auto& st = cfg_.schedule.stages[stage_];
    const int want = std::min(cfg_.parallel, st.unique_models - stage_models_);
    std::vector<Trajectory> batch;
    std::set<std::vector<BlockCode>> in_flight;
    while (static_cast<int>(batch.size()) < want && !should_stop()) {
      if (cfg_.dedupe && memory_.size() + batch.size() >= space_size_) break;
      const double eps = next_epsilon();
      const Trajectory t = sample_trajectory(q_, eps, rng_, cfg_.max_depth);
      if (cfg_.dedupe) {
        if (const auto hit = memory_.find(t.blocks())) {
          record_cached(t, *hit);
          continue;
        }
      }
      if (!in_flight.insert(t.blocks()).second) continue;
      batch.push_back(t);
    }
    if (batch.empty()) return;

    const auto base_id = static_cast<std::uint64_t>(iteration_ + 1);
    if (cfg_.evaluator == EvaluatorKind::Simulated) {
      std::vector<std::future<EvalResponse>> futures;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        futures.push_back(std::async(std::launch::async, [&, i] { return simulate(base_id + i, batch[i]); }));
      }
      for (std::size_t i = 0; i < batch.size(); ++i) record_new(batch[i], futures[i].get());
      return;
    }
    std::vector<EvalRequest> reqs;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      reqs.push_back(make_request(base_id + i, batch[i], cfg_.class_count, cfg_.dataset, cfg_.budget));
    }
    external_->evaluate_many(reqs, std::chrono::milliseconds(cfg_.eval_timeout_ms), [&](const EvalResponse& r) {
      const auto& t = batch.at(r.id - base_id);
      EvalResponse resp = r;
      for (int attempt = 0; attempt < cfg_.eval_retries && transient_failure(resp); ++attempt) {
        resp = external_->evaluate(reqs.at(r.id - base_id), std::chrono::milliseconds(cfg_.eval_timeout_ms));
      }
      record_new(t, resp);
    });
  }

  EvalResponse simulate(std::uint64_t id, const Trajectory& t) const {
    return EvalResponse::success(id, oracle_evaluate(cfg_.oracle, t), "simulated oracle");
  }

  EvalResponse evaluate(std::uint64_t id, const Trajectory& t) {
    if (cfg_.evaluator == EvaluatorKind::Simulated) return simulate(id, t);
    const auto req = make_request(id, t, cfg_.class_count, cfg_.dataset, cfg_.budget);
    EvalResponse resp = external_->evaluate(req, std::chrono::milliseconds(cfg_.eval_timeout_ms));
    for (int attempt = 0; attempt < cfg_.eval_retries && transient_failure(resp); ++attempt) {
      resp = external_->evaluate(req, std::chrono::milliseconds(cfg_.eval_timeout_ms));
    }
    return resp;
  }

  std::int64_t param_count(const Trajectory& t) const {
    try {
      return build(t, cfg_.input_shape, cfg_.class_count, {&catalog_, cfg_.pool_rounding}).param_count;
    } catch (const SpatialUnderflowError&) {
      return -1;
    } catch (const ChannelMismatchError&) {
      return -1;
    }
  }

  void record_cached(const Trajectory& t, const ReplayEntry& hit) {
    ++iteration_;
    q_update(q_, t, hit.accuracy, cfg_.params, cfg_.max_depth);
    ReplayRow row;
    row.iteration = iteration_;
    row.epsilon = cfg_.schedule.stages[stage_].epsilon;
    row.net = hit.net_string;
    row.accuracy = hit.accuracy;
    row.params = hit.param_count;
    row.cached = true;
    row.status = hit.ok ? "ok" : "failed";
    commit(std::move(row));
  }

  void record_new(const Trajectory& t, const EvalResponse& resp) {
    ++iteration_;
    ReplayEntry e;
    e.blocks = t.blocks();
    e.net_string = encode_net(t, cfg_.class_count);
    e.ok = resp.ok();
    e.accuracy = resp.ok() ? *resp.accuracy : 0.0;
    e.iteration = iteration_;
    e.epsilon = cfg_.schedule.stages[stage_].epsilon;
    e.param_count = param_count(t);
    e.wall_time = timestamp();
    memory_.append(e);

    q_update(q_, t, e.accuracy, cfg_.params, cfg_.max_depth);
    ++models_;
    if (cfg_.replay_batch > 0 && models_ % cfg_.replay_period == 0) {
      replay_update(q_, memory_, cfg_.replay_batch, rng_, cfg_.params, cfg_.max_depth);
    }
    ++stage_models_;

    ReplayRow row;
    row.iteration = iteration_;
    row.epsilon = e.epsilon;
    row.net = e.net_string;
    row.accuracy = e.accuracy;
    row.params = e.param_count;
    row.cached = false;
    row.status = e.ok ? "ok" : "failed";
    commit(std::move(row));
  }

  std::string timestamp() const {
    if (cfg_.effective_clock() == ClockMode::Logical) return iso_utc(static_cast<std::time_t>(iteration_));
    return iso_utc(std::time(nullptr));
  }

  void commit(ReplayRow row) {
    row.timestamp = timestamp();
    row.q_hash = detail::hex64(table_hash(q_));
    const std::string line = encode_row(row) + "\n";
    db_.write(line.data(), static_cast<std::streamsize>(line.size()));
    db_.flush();
    if (!db_) throw IoError("write to replay DB " + cfg_.db_path.string() + " failed");
    db_hash_ = detail::fnv1a64(line, db_hash_);
    db_bytes_ += line.size();
    log_.records.push_back(row);
    write_checkpoint(false);
    if (control_ && control_->on_iteration) control_->on_iteration(log_.records.back());
  }

  void open_db(std::ios::openmode mode) {
    if (const auto parent = cfg_.db_path.parent_path(); !parent.empty()) std::filesystem::create_directories(parent);
    db_.open(cfg_.db_path, std::ios::binary | std::ios::out | mode);
    if (!db_) throw IoError("cannot open replay DB " + cfg_.db_path.string() + " for writing");
  }

  void write_checkpoint(bool complete) {
    QCheckpoint cp;
    cp.table = q_;
    cp.params = cfg_.params;
    cp.stage = stage_;
    cp.stage_models = stage_models_;
    cp.stage_attempts = stage_attempts_;
    cp.rng_state = rng_.state();
    cp.meta = {
        {"iteration", std::to_string(iteration_)},
        {"db_bytes", std::to_string(db_bytes_)},
        {"db_hash", detail::hex64(db_hash_)},
        {"exhausted", log_.exhausted ? "1" : "0"},
        {"complete", complete ? "1" : "0"},
    };
    for (auto& [k, v] : cfg_.to_pairs()) cp.meta.emplace_back("config." + k, v);

    const auto& path = cfg_.checkpoint_path;
    if (const auto parent = path.parent_path(); !parent.empty()) std::filesystem::create_directories(parent);
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      const auto text = cp.to_text();
      out.write(text.data(), static_cast<std::streamsize>(text.size()));
      if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  SearchConfig cfg_;
  Catalog catalog_;
  QTable q_;
  Rng rng_;
  ReplayMemory memory_;
  std::uint64_t space_size_;
  std::unique_ptr<ExternalEvaluator> external_;

  int stage_ = 0;
  int stage_models_ = 0;
  int stage_attempts_ = 0;
  std::int64_t iteration_ = 0;
  std::int64_t models_ = 0;

  SearchLog log_;
  std::ofstream db_;
  std::uint64_t db_hash_ = detail::fnv1a64("");
  std::uint64_t db_bytes_ = 0;
  const RunControl* control_ = nullptr;
};

}  // namespace

SearchLog run_search(const SearchConfig& input, const RunControl& control) {
  SearchConfig cfg = input;
  cfg.validate();
  cfg.db_path = std::filesystem::absolute(cfg.db_path);
  cfg.checkpoint_path = std::filesystem::absolute(cfg.checkpoint_path);
  if (!cfg.catalog_path.empty()) cfg.catalog_path = std::filesystem::absolute(cfg.catalog_path);
  Engine engine(std::move(cfg));
  engine.start_fresh();
  return engine.run(control);
}

SearchLog resume(const std::filesystem::path& checkpoint_path, const RunControl& control) {
  const auto cp = QCheckpoint::from_text(read_file(checkpoint_path, "checkpoint"));
  SearchConfig cfg;
  for (const auto& [k, v] : cp.meta) {
    if (k.starts_with("config.")) cfg.set(std::string_view(k).substr(7), v);
  }
  cfg.validate();
  Engine engine(std::move(cfg));
  if (engine.restore(cp)) return engine.finished();
  return engine.run(control);
}

EvalResponse evaluate_net(const SearchConfig& cfg, const Trajectory& t, std::uint64_t request_id) {
  if (cfg.evaluator == EvaluatorKind::Simulated) {
    return EvalResponse::success(request_id, oracle_evaluate(cfg.oracle, t), "simulated oracle");
  }
  ExternalEvaluator client(cfg.endpoints);
  const auto req = make_request(request_id, t, cfg.class_count, cfg.dataset, cfg.budget);
  auto resp = client.evaluate(req, std::chrono::milliseconds(cfg.eval_timeout_ms));
  for (int attempt = 0; attempt < cfg.eval_retries && transient_failure(resp); ++attempt) {
    resp = client.evaluate(req, std::chrono::milliseconds(cfg.eval_timeout_ms));
  }
  return resp;
}

}  // namespace blockq
