#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "blockq/block_catalog.hpp"
#include "blockq/search_space.hpp"

namespace blockq {

// ---------------------------------------------------------------------------
// Simulated oracle: a deterministic stand-in for training, used by tests and
// desk-scale searches. Its scores are not accuracy predictions.
// ---------------------------------------------------------------------------

struct SimulatedOracleConfig {
  std::array<double, kBlockCount> base_scores = default_base_scores();
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<BlockCode> poison_codes = {BlockCode::block(1)};
  double poison_value = 0.1;
  // Added once per group present in the net.
  double residual_concat_bonus = 0.05;   // any of B(2)..B(4)
  double inception_concat_bonus = 0.03;  // any of B(8)..B(11)
  double plain_inception_bonus = 0.0;    // any of B(5)..B(7)

  static std::array<double, kBlockCount> default_base_scores();
  void validate() const;
};

/// Score of a legal block sequence (validated; throws ConstraintError).
/// Depends only on the block multiset and the terminator ending.
double oracle_evaluate(const SimulatedOracleConfig& cfg, const std::vector<BlockCode>& blocks,
                       int max_depth = kDefaultMaxDepth);
double oracle_evaluate(const SimulatedOracleConfig& cfg, const Trajectory& t);

// ---------------------------------------------------------------------------
// Wire protocol: newline-delimited JSON records over TCP.
// ---------------------------------------------------------------------------

struct TrainingBudget {
  int epochs = 30;
  int max_retrains = 5;
  double lr0 = 0.001;
  double drop_factor = 0.2;          // good-start path
  double retrain_drop_factor = 0.4;  // retrain path
  int drop_every = 5;
};

struct EvalRequest {
  std::uint64_t id = 0;
  std::vector<BlockCode> blocks;
  std::string net_string;
  std::string dataset = "cifar10";  // cifar10 | svhn | mnist | custom
  TrainingBudget budget;
};

struct EvalResponse {
  enum class Status { Ok, Failed };
  std::uint64_t id = 0;
  Status status = Status::Failed;
  std::optional<double> accuracy;  // present iff status == Ok
  std::string detail;

  bool ok() const { return status == Status::Ok; }
  static EvalResponse success(std::uint64_t id, double accuracy, std::string detail = {});
  static EvalResponse failure(std::uint64_t id, std::string detail);
};

EvalRequest make_request(std::uint64_t id, const Trajectory& t, int classes, std::string dataset,
                         TrainingBudget budget = {});

std::string encode_request(const EvalRequest& req);
/// Throws ParseError on malformed records. Unknown fields are ignored.
EvalRequest decode_request(std::string_view line, int max_depth = kDefaultMaxDepth);
std::string encode_response(const EvalResponse& resp);
/// Never throws: malformed records and out-of-range accuracies come back as
/// failed responses whose detail names the problem.
EvalResponse decode_response(std::string_view line);

struct Endpoint {
  std::string host = "127.0.0.1";
  int port = 0;
  static Endpoint parse(std::string_view host_port);
  std::string to_string() const;
};

/// Client for one or more trainer endpoints. Requests are spread across the
/// endpoints round-robin and pipelined per connection; responses are matched
/// back by id.
class ExternalEvaluator {
 public:
  explicit ExternalEvaluator(std::vector<Endpoint> endpoints);

  EvalResponse evaluate(const EvalRequest& req, std::chrono::milliseconds timeout);

  /// All requests in flight at once; `on_done` fires in completion order.
  /// Returns responses in completion order (timeouts last).
  std::vector<EvalResponse> evaluate_many(std::span<const EvalRequest> reqs, std::chrono::milliseconds timeout,
                                          const std::function<void(const EvalResponse&)>& on_done = {});

 private:
  std::vector<Endpoint> endpoints_;
};

/// Minimal line-protocol server. Each connection is served on its own thread;
/// requests on one connection are handled in order.
class WireServer {
 public:
  // Handles one raw request line; returns the raw response line (no newline),
  // or nullopt to stay silent.
  using LineHandler = std::function<std::optional<std::string>(std::string_view)>;

  WireServer(LineHandler handler, int port = 0, std::string bind_host = "127.0.0.1");
  ~WireServer();
  WireServer(const WireServer&) = delete;
  WireServer& operator=(const WireServer&) = delete;

  int port() const { return port_; }
  Endpoint endpoint() const { return {host_, port_}; }
  void stop();

  // Decodes requests, calls `evaluate`, encodes responses; decode failures
  // are answered with status failed, detail "parse: ...".
  static LineHandler protocol_handler(std::function<EvalResponse(const EvalRequest&)> evaluate,
                                      int max_depth = kDefaultMaxDepth);

 private:
  void accept_loop();
  void serve(int fd);

  LineHandler handler_;
  std::string host_;
  int port_ = 0;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::vector<std::thread> workers_;
  std::vector<int> client_fds_;
  std::mutex clients_mutex_;
};

}  // namespace blockq
