#include <atomic>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "blockq/analysis.hpp"
#include "blockq/arch_builder.hpp"
#include "blockq/errors.hpp"
#include "blockq/harness.hpp"
#include "blockq/replay_db.hpp"
#include "blockq/search_space.hpp"

namespace {

using namespace blockq;

std::atomic<bool> g_stop{false};

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path);
}

void print_search_result(const SearchLog& log, const SearchConfig& cfg) {
  const auto top = top_k(log.records, 1);
  std::printf("models %d  iterations %zu  %s\n", log.unique_models(), log.records.size(),
              log.complete ? (log.exhausted ? "complete (search space exhausted)" : "complete") : "interrupted");
  if (!top.rows.empty()) std::printf("best %s\n", format_ranked(top.rows.front()).c_str());
  if (cfg.evaluator == EvaluatorKind::Simulated) {
    std::printf("note: accuracies come from the simulated oracle, not from training\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Q-learning search over multi-block CNN architectures"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Start a fresh search");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string evaluator, endpoint, db_path, ckpt_path, catalog_path;
  std::vector<std::string> overrides;
  run->add_option("--config", config_path, "Config file (key=value lines)")->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "RNG seed");
  run->add_option("--evaluator", evaluator, "simulated | external")->check(CLI::IsMember({"simulated", "external"}));
  run->add_option("--endpoint", endpoint, "host:port of the trainer (comma-separated for several)");
  run->add_option("--db", db_path, "Replay DB path");
  run->add_option("--checkpoint", ckpt_path, "Checkpoint path");
  run->add_option("--catalog", catalog_path, "Block catalog file")->check(CLI::ExistingFile);
  run->add_option("--set", overrides, "Extra key=value config settings");

  // resume
  auto* res = app.add_subcommand("resume", "Continue a search from its checkpoint");
  std::string resume_path;
  res->add_option("--checkpoint", resume_path, "Checkpoint path")->required();

  // enumerate
  auto* en = app.add_subcommand("enumerate", "List every legal net up to a depth");
  int depth = kDefaultMaxDepth;
  int classes = kDefaultClassCount;
  bool count_only = false;
  en->add_option("--max-depth", depth, "Maximum block depth")->required()->check(CLI::Range(1, 8));
  en->add_option("--classes", classes, "Class count shown in terminators")->check(CLI::PositiveNumber);
  en->add_flag("--count-only", count_only, "Print only the number of nets");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate one net");
  std::string net;
  ev->add_option("--net", net, "Net string, e.g. \"[B(0),B(3),SM(10)]\"")->required();
  ev->add_option("--config", config_path, "Config file")->check(CLI::ExistingFile);
  ev->add_option("--evaluator", evaluator, "simulated | external")->check(CLI::IsMember({"simulated", "external"}));
  ev->add_option("--endpoint", endpoint, "host:port of the trainer");

  // build
  auto* bd = app.add_subcommand("build", "Build a net's layer graph and print its summary");
  std::string input_shape = "3x32x32", export_path, rounding = "floor", dataset;
  bd->add_option("--net", net, "Net string")->required();
  bd->add_option("--input", input_shape, "Input shape CxHxW");
  bd->add_option("--classes", classes, "Class count")->check(CLI::PositiveNumber);
  bd->add_option("--pool-rounding", rounding, "floor | ceil")->check(CLI::IsMember({"floor", "ceil"}));
  bd->add_option("--catalog", catalog_path, "Block catalog file")->check(CLI::ExistingFile);
  bd->add_option("--dataset", dataset, "Dataset tag, enables the reported-params line");
  bd->add_option("--export", export_path, "Write the graph export file");

  // serve-oracle
  auto* so = app.add_subcommand("serve-oracle", "Serve the simulated oracle over the wire protocol");
  int port = 0;
  so->add_option("--port", port, "TCP port (0: any free port)");
  so->add_option("--config", config_path, "Config file (oracle.* keys)")->check(CLI::ExistingFile);

  // analyze
  auto* an = app.add_subcommand("analyze", "Reports over a replay DB");
  an->require_subcommand(1);
  std::string db;
  int k = 10;
  std::string csv_path, query;
  auto* topk = an->add_subcommand("top-k", "Best distinct nets");
  topk->add_option("--db", db, "Replay DB")->required()->check(CLI::ExistingFile);
  topk->add_option("--k", k, "Rows")->check(CLI::PositiveNumber);
  auto* stages = an->add_subcommand("stages", "Per-epsilon statistics");
  stages->add_option("--db", db, "Replay DB")->required()->check(CLI::ExistingFile);
  stages->add_option("--csv", csv_path, "Write CSV here");
  auto* qry = an->add_subcommand("query", "Structural queries");
  qry->add_option("--db", db, "Replay DB")->required()->check(CLI::ExistingFile);
  qry->add_option("--query", query, "contains:B(n) | swap_pairs | concat_effect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    auto load_cfg = [&] {
      SearchConfig cfg = config_path.empty() ? SearchConfig{} : SearchConfig::load(config_path);
      if (seed) cfg.seed = *seed;
      if (!evaluator.empty()) cfg.set("evaluator", evaluator);
      if (!endpoint.empty()) cfg.set("endpoint", endpoint);
      if (!db_path.empty()) cfg.db_path = db_path;
      if (!ckpt_path.empty()) cfg.checkpoint_path = ckpt_path;
      if (!catalog_path.empty()) cfg.catalog_path = catalog_path;
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      return cfg;
    };

    if (*run) {
      const auto cfg = load_cfg();
      const auto log = run_search(cfg);
      print_search_result(log, cfg);
    } else if (*res) {
      const auto log = resume(resume_path);
      std::printf("%s\n", log.complete && log.records.empty() ? "nothing to resume" : "resumed");
      print_search_result(log, SearchConfig{});
    } else if (*en) {
      if (count_only) {
        std::printf("%llu\n", static_cast<unsigned long long>(trajectory_count(depth)));
      } else {
        for_each_trajectory(depth, [&](const Trajectory& t) { std::printf("%s\n", encode_net(t, classes).c_str()); });
      }
    } else if (*ev) {
      const auto cfg = load_cfg();
      const auto t = decode_net(net, cfg.max_depth);
      const auto resp = evaluate_net(cfg, t);
      if (!resp.ok()) throw Error("evaluation", "evaluation failed: " + resp.detail);
      std::printf("%s %.4f%s\n", encode_net(t, cfg.class_count).c_str(), *resp.accuracy,
                  cfg.evaluator == EvaluatorKind::Simulated ? " (simulated oracle)" : "");
    } else if (*bd) {
      SearchConfig cfg;
      if (!catalog_path.empty()) cfg.catalog_path = catalog_path;
      const Catalog cat = load_catalog(cfg);
      const auto t = decode_net(net, 64);
      BuildOptions opts{&cat, rounding == "ceil" ? PoolRounding::Ceil : PoolRounding::Floor};
      const auto g = build(t, TensorShape::parse(input_shape), classes, opts);
      std::fputs(summarize(g, dataset.empty() ? std::nullopt : std::optional<std::string_view>(dataset)).c_str(), stdout);
      if (!export_path.empty()) write_file(export_path, export_graph(g));
    } else if (*so) {
      SearchConfig cfg = config_path.empty() ? SearchConfig{} : SearchConfig::load(config_path);
      const auto oracle = cfg.oracle;
      WireServer server(WireServer::protocol_handler([oracle](const EvalRequest& req) {
                          return EvalResponse::success(req.id, oracle_evaluate(oracle, req.blocks, 64),
                                                       "simulated oracle");
                        }, 64),
                        port);
      std::printf("listening %s\n", server.endpoint().to_string().c_str());
      std::fflush(stdout);
      std::signal(SIGINT, [](int) { g_stop = true; });
      std::signal(SIGTERM, [](int) { g_stop = true; });
      while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      server.stop();
    } else if (*topk) {
      std::fputs(render_top_k(top_k(read_replay_db(db), k)).c_str(), stdout);
    } else if (*stages) {
      const auto stats = stage_stats(read_replay_db(db));
      const auto csv = stage_stats_csv(stats);
      if (csv_path.empty()) std::fputs(csv.c_str(), stdout);
      else write_file(csv_path, csv);
      for (const auto& s : stats) {
        if (!csv_path.empty()) std::printf("eps %-4g models %3d  mean %.2f  max %.2f\n", s.epsilon, s.models,
                                           s.mean_accuracy * 100.0, s.best_accuracy * 100.0);
      }
    } else if (*qry) {
      std::fputs(structural_query(read_replay_db(db), query).c_str(), stdout);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", std::string(e.kind()).c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
  return 0;
}
