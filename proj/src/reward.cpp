#include "blockq/reward.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <deque>
#include <map>

#include <json.hpp>

#include "blockq/errors.hpp"
#include "blockq/rng.hpp"
#include "text_util.hpp"

namespace blockq {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

// ----------------------------------------------------------------- oracle --

std::array<double, kBlockCount> SimulatedOracleConfig::default_base_scores() {
  // B(0) dense, B(1)..B(4) residual, B(5)..B(11) inception-like
  return {0.90, 0.50, 0.80, 0.88, 0.82, 0.40, 0.45, 0.35, 0.75, 0.60, 0.80, 0.55};
}

void SimulatedOracleConfig::validate() const {
  if (!(noise_sigma >= 0.0)) throw ConfigError("oracle noise_sigma must be >= 0");
  if (!(poison_value >= 0.0 && poison_value <= 1.0)) throw ConfigError("oracle poison_value must lie in [0, 1]");
  for (auto c : poison_codes) {
    if (!c.is_block()) throw ConfigError("oracle poison codes must be block codes");
  }
}

double oracle_evaluate(const SimulatedOracleConfig& cfg, const Trajectory& t) {
  const auto& blocks = t.blocks();
  for (auto b : blocks) {
    if (std::find(cfg.poison_codes.begin(), cfg.poison_codes.end(), b) != cfg.poison_codes.end()) {
      return cfg.poison_value;
    }
  }
  double sum = 0.0;
  int n = 0;
  bool residual_concat = false, inception_concat = false, plain_inception = false;
  std::array<std::uint8_t, kBlockCount> counts{};
  for (auto b : blocks) {
    if (!b.is_block()) continue;
    const int i = b.index();
    sum += cfg.base_scores[i];
    ++n;
    ++counts[i];
    residual_concat |= i >= 2 && i <= 4;
    plain_inception |= i >= 5 && i <= 7;
    inception_concat |= i >= 8;
  }
  double score = sum / n;
  if (residual_concat) score += cfg.residual_concat_bonus;
  if (inception_concat) score += cfg.inception_concat_bonus;
  if (plain_inception) score += cfg.plain_inception_bonus;

  if (cfg.noise_sigma > 0.0) {
    // Keyed on the multiset (counts per code) and the ending, never on order.
    std::uint64_t h = splitmix64(cfg.seed);
    for (int i = 0; i < kBlockCount; ++i) h = splitmix64(h ^ (std::uint64_t{counts[i]} << (4 * (i % 16))) ^ i);
    h = splitmix64(h ^ (t.ends_with_gap() ? 0xa5a5ULL : 0x5a5aULL));
    score += cfg.noise_sigma * normal_from_bits(splitmix64(h), splitmix64(h ^ 0x9e3779b97f4a7c15ULL));
  }
  return std::clamp(score, 0.0, 1.0);
}

double oracle_evaluate(const SimulatedOracleConfig& cfg, const std::vector<BlockCode>& blocks, int max_depth) {
  return oracle_evaluate(cfg, Trajectory::from_blocks(blocks, max_depth));
}

// ------------------------------------------------------------------- wire --

EvalResponse EvalResponse::success(std::uint64_t id, double accuracy, std::string detail) {
  return {id, Status::Ok, accuracy, std::move(detail)};
}

EvalResponse EvalResponse::failure(std::uint64_t id, std::string detail) {
  return {id, Status::Failed, std::nullopt, std::move(detail)};
}

EvalRequest make_request(std::uint64_t id, const Trajectory& t, int classes, std::string dataset,
                         TrainingBudget budget) {
  return {id, t.blocks(), encode_net(t, classes), std::move(dataset), budget};
}

std::string encode_request(const EvalRequest& req) {
  json j = {
      {"id", req.id},
      {"net", req.net_string},
      {"dataset", req.dataset},
      {"epochs", req.budget.epochs},
      {"max_retrains", req.budget.max_retrains},
      {"lr0", req.budget.lr0},
      {"drop_factor", req.budget.drop_factor},
      {"retrain_drop_factor", req.budget.retrain_drop_factor},
      {"drop_every", req.budget.drop_every},
  };
  return j.dump();
}

EvalRequest decode_request(std::string_view line, int max_depth) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(std::string("request is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("request must be a JSON object");
  auto need = [&](const char* key) -> const json& {
    const auto it = j.find(key);
    if (it == j.end()) throw ParseError(std::string("request lacks field '") + key + "'");
    return *it;
  };
  EvalRequest req;
  try {
    req.id = need("id").get<std::uint64_t>();
    req.net_string = need("net").get<std::string>();
    if (j.contains("dataset")) req.dataset = j["dataset"].get<std::string>();
    if (j.contains("epochs")) req.budget.epochs = j["epochs"].get<int>();
    if (j.contains("max_retrains")) req.budget.max_retrains = j["max_retrains"].get<int>();
    if (j.contains("lr0")) req.budget.lr0 = j["lr0"].get<double>();
    if (j.contains("drop_factor")) req.budget.drop_factor = j["drop_factor"].get<double>();
    if (j.contains("retrain_drop_factor")) req.budget.retrain_drop_factor = j["retrain_drop_factor"].get<double>();
    if (j.contains("drop_every")) req.budget.drop_every = j["drop_every"].get<int>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("request field has wrong type: ") + e.what());
  }
  req.blocks = decode_net(req.net_string, max_depth).blocks();
  return req;
}

std::string encode_response(const EvalResponse& resp) {
  json j = {{"id", resp.id}, {"status", resp.ok() ? "ok" : "failed"}, {"detail", resp.detail}};
  if (resp.accuracy) j["accuracy"] = *resp.accuracy;
  return j.dump();
}

namespace {

struct DecodedResponse {
  bool id_known = false;
  EvalResponse resp;
};

DecodedResponse decode_response_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception&) {
    return {false, EvalResponse::failure(0, "malformed response: not JSON")};
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned()) {
    return {false, EvalResponse::failure(0, "malformed response: missing or invalid id")};
  }
  const auto id = j["id"].get<std::uint64_t>();
  const auto status = j.value("status", std::string{});
  std::string detail;
  if (j.contains("detail") && j["detail"].is_string()) detail = j["detail"].get<std::string>();
  if (status == "failed") {
    return {true, EvalResponse::failure(id, detail.empty() ? "failed" : detail)};
  }
  if (status != "ok") return {true, EvalResponse::failure(id, "malformed response: bad status")};
  if (!j.contains("accuracy") || !j["accuracy"].is_number()) {
    return {true, EvalResponse::failure(id, "malformed response: ok without accuracy")};
  }
  const double acc = j["accuracy"].get<double>();
  if (!(acc >= 0.0 && acc <= 1.0)) {
    return {true, EvalResponse::failure(id, "accuracy out of range: " + detail::format_double(acc))};
  }
  return {true, EvalResponse::success(id, acc, detail)};
}

}  // namespace

EvalResponse decode_response(std::string_view line) { return decode_response_line(line).resp; }

Endpoint Endpoint::parse(std::string_view host_port) {
  const auto colon = host_port.rfind(':');
  if (colon == std::string_view::npos || colon == 0) {
    throw ParseError("endpoint must be host:port, got '" + std::string(host_port) + "'");
  }
  const auto port = detail::parse_int<int>(host_port.substr(colon + 1));
  if (!port || *port < 1 || *port > 65535) throw ParseError("bad port in '" + std::string(host_port) + "'");
  return {std::string(host_port.substr(0, colon)), *port};
}

std::string Endpoint::to_string() const { return host + ":" + std::to_string(port); }

// ----------------------------------------------------------------- client --

namespace {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return left < 0 ? 0 : static_cast<int>(left);
}

// Connects before `deadline`; returns an empty Fd and fills `err` on failure.
Fd connect_to(const Endpoint& ep, Clock::time_point deadline, std::string& err) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto port = std::to_string(ep.port);
  if (const int rc = ::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    err = "transport: resolve " + ep.to_string() + ": " + ::gai_strerror(rc);
    return {};
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);
  err = "transport: connect " + ep.to_string() + ": no address";
  for (auto* ai = res; ai; ai = ai->ai_next) {
    Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (fd.get() < 0) continue;
    const int flags = ::fcntl(fd.get(), F_GETFL, 0);
    ::fcntl(fd.get(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      pollfd p{fd.get(), POLLOUT, 0};
      rc = ::poll(&p, 1, remaining_ms(deadline));
      if (rc == 0) {
        err = "timeout";
        return {};
      }
      int so_err = 0;
      socklen_t len = sizeof so_err;
      ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &so_err, &len);
      rc = so_err == 0 ? 0 : -1;
      errno = so_err;
    }
    if (rc == 0) {
      int one = 1;
      ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return fd;
    }
    err = "transport: connect " + ep.to_string() + ": " + std::strerror(errno);
  }
  return {};
}

bool send_all(int fd, std::string_view data, Clock::time_point deadline) {
  while (!data.empty()) {
    const auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n > 0) {
      data.remove_prefix(static_cast<std::size_t>(n));
      continue;
    }
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      pollfd p{fd, POLLOUT, 0};
      if (::poll(&p, 1, remaining_ms(deadline)) <= 0) return false;
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    return false;
  }
  return true;
}

struct Connection {
  Fd fd;
  std::string buffer;
  std::deque<std::uint64_t> outstanding;  // request ids, send order
  bool closed = false;
};

}  // namespace

ExternalEvaluator::ExternalEvaluator(std::vector<Endpoint> endpoints) : endpoints_(std::move(endpoints)) {
  if (endpoints_.empty()) throw ConfigError("external evaluator needs at least one endpoint");
}

EvalResponse ExternalEvaluator::evaluate(const EvalRequest& req, std::chrono::milliseconds timeout) {
  auto out = evaluate_many(std::span(&req, 1), timeout);
  return out.front();
}

std::vector<EvalResponse> ExternalEvaluator::evaluate_many(std::span<const EvalRequest> reqs,
                                                           std::chrono::milliseconds timeout,
                                                           const std::function<void(const EvalResponse&)>& on_done) {
  const auto deadline = Clock::now() + timeout;
  std::vector<EvalResponse> done;
  done.reserve(reqs.size());
  auto finish = [&](EvalResponse r) {
    if (on_done) on_done(r);
    done.push_back(std::move(r));
  };

  std::vector<Connection> conns(std::min(endpoints_.size(), reqs.size()));
  for (std::size_t c = 0; c < conns.size(); ++c) {
    std::string err;
    conns[c].fd = connect_to(endpoints_[c], deadline, err);
    std::string payload;
    for (std::size_t i = c; i < reqs.size(); i += conns.size()) {
      conns[c].outstanding.push_back(reqs[i].id);
      payload += encode_request(reqs[i]);
      payload += '\n';
    }
    if (conns[c].fd.get() < 0 || !send_all(conns[c].fd.get(), payload, deadline)) {
      if (err.empty()) err = remaining_ms(deadline) == 0 ? "timeout" : "transport: send failed";
      for (auto id : conns[c].outstanding) finish(EvalResponse::failure(id, err));
      conns[c].outstanding.clear();
      conns[c].closed = true;
    }
  }

  auto pending = [&] {
    for (const auto& c : conns) {
      if (!c.outstanding.empty()) return true;
    }
    return false;
  };

  auto handle_line = [&](Connection& c, std::string_view line) {
    if (detail::trim(line).empty()) return;
    auto decoded = decode_response_line(line);
    if (!decoded.id_known) {
      // cannot attribute: blame the oldest request on this connection
      const auto id = c.outstanding.front();
      c.outstanding.pop_front();
      decoded.resp.id = id;
      finish(std::move(decoded.resp));
      return;
    }
    const auto it = std::find(c.outstanding.begin(), c.outstanding.end(), decoded.resp.id);
    if (it == c.outstanding.end()) {
      const auto id = c.outstanding.front();
      c.outstanding.pop_front();
      finish(EvalResponse::failure(id, "id mismatch"));
      return;
    }
    c.outstanding.erase(it);
    finish(std::move(decoded.resp));
  };

  while (pending()) {
    const int wait = remaining_ms(deadline);
    if (wait == 0) break;
    std::vector<pollfd> fds;
    std::vector<Connection*> owners;
    for (auto& c : conns) {
      if (!c.closed && !c.outstanding.empty()) {
        fds.push_back({c.fd.get(), POLLIN, 0});
        owners.push_back(&c);
      }
    }
    if (fds.empty()) break;
    const int rc = ::poll(fds.data(), fds.size(), wait);
    if (rc < 0 && errno == EINTR) continue;
    if (rc <= 0) continue;
    for (std::size_t i = 0; i < fds.size(); ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      auto& c = *owners[i];
      char buf[4096];
      const auto n = ::recv(c.fd.get(), buf, sizeof buf, 0);
      if (n <= 0) {
        if (n < 0 && (errno == EINTR || errno == EAGAIN)) continue;
        c.closed = true;
        for (auto id : c.outstanding) finish(EvalResponse::failure(id, "transport: connection closed by trainer"));
        c.outstanding.clear();
        continue;
      }
      c.buffer.append(buf, static_cast<std::size_t>(n));
      std::size_t nl;
      while (!c.outstanding.empty() && (nl = c.buffer.find('\n')) != std::string::npos) {
        const std::string line = c.buffer.substr(0, nl);
        c.buffer.erase(0, nl + 1);
        handle_line(c, line);
      }
    }
  }
  for (auto& c : conns) {
    for (auto id : c.outstanding) finish(EvalResponse::failure(id, "timeout"));
    c.outstanding.clear();
  }
  return done;
}

// ----------------------------------------------------------------- server --

WireServer::WireServer(LineHandler handler, int port, std::string bind_host)
    : handler_(std::move(handler)), host_(std::move(bind_host)) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listen_fd_ < 0) throw IoError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
    ::close(listen_fd_);
    throw ConfigError("bind host must be an IPv4 address, got '" + host_ + "'");
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 16) < 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw IoError("bind " + host_ + ":" + std::to_string(port) + ": " + err);
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  acceptor_ = std::thread([this] { accept_loop(); });
}

WireServer::~WireServer() { stop(); }

void WireServer::stop() {
  if (stopping_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::scoped_lock lock(clients_mutex_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
  ::close(listen_fd_);
}

void WireServer::accept_loop() {
  while (!stopping_) {
    pollfd p{listen_fd_, POLLIN, 0};
    if (::poll(&p, 1, 50) <= 0) continue;
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) continue;
    std::scoped_lock lock(clients_mutex_);
    client_fds_.push_back(fd);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

void WireServer::serve(int fd) {
  std::string buffer;
  char buf[4096];
  while (!stopping_) {
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, 50);
    if (rc == 0) continue;
    if (rc < 0 && errno == EINTR) continue;
    const auto n = rc < 0 ? -1 : ::recv(fd, buf, sizeof buf, 0);
    if (n <= 0) break;
    buffer.append(buf, static_cast<std::size_t>(n));
    std::size_t nl;
    while ((nl = buffer.find('\n')) != std::string::npos) {
      const std::string line = buffer.substr(0, nl);
      buffer.erase(0, nl + 1);
      if (auto reply = handler_(line)) {
        *reply += '\n';
        if (!send_all(fd, *reply, Clock::now() + std::chrono::seconds(10))) break;
      }
    }
  }
  std::scoped_lock lock(clients_mutex_);
  ::close(fd);
  client_fds_.erase(std::remove(client_fds_.begin(), client_fds_.end(), fd), client_fds_.end());
}

WireServer::LineHandler WireServer::protocol_handler(std::function<EvalResponse(const EvalRequest&)> evaluate,
                                                     int max_depth) {
  return [evaluate = std::move(evaluate), max_depth](std::string_view line) -> std::optional<std::string> {
    if (detail::trim(line).empty()) return std::nullopt;
    EvalRequest req;
    try {
      req = decode_request(line, max_depth);
    } catch (const Error& e) {
      // echo the id when it can still be recovered
      std::uint64_t id = 0;
      try {
        const auto j = json::parse(line);
        if (j.is_object() && j.contains("id") && j["id"].is_number_unsigned()) id = j["id"].get<std::uint64_t>();
      } catch (const json::exception&) {
      }
      return encode_response(EvalResponse::failure(id, std::string("parse: ") + e.what()));
    }
    return encode_response(evaluate(req));
  };
}

}  // namespace blockq
