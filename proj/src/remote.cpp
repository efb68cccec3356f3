#include "todkit/remote.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <cstring>

#include <json.hpp>

#include "todkit/error.hpp"

namespace tod {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == text.size()) {
    throw ArgumentError("endpoint must look like host:port, got '" + std::string(text) + "'");
  }
  unsigned value = 0;
  const auto digits = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || value == 0 || value > 65535) {
    throw ArgumentError("invalid endpoint port '" + std::string(digits) + "'");
  }
  return Endpoint{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(value)};
}

std::optional<Endpoint> endpoint_from_env() {
  const char* v = std::getenv(kEndpointEnv);
  if (v == nullptr || *v == '\0') return std::nullopt;
  return Endpoint::parse(v);
}

std::string encode_request(const GenerationRequest& request) {
  return json{{"version", kProtocolVersion}, {"input", request.input}, {"max_tokens", request.max_tokens}}.dump();
}

namespace {

json parse_payload(std::string_view payload) {
  json j;
  try {
    j = json::parse(payload);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed payload: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("payload is not an object");
  if (!j.contains("version") || !j["version"].is_number_integer()) throw ProtocolError("payload has no version");
  if (j["version"].get<int>() != kProtocolVersion) {
    throw ProtocolError("protocol version " + j["version"].dump() + " is not supported");
  }
  return j;
}

std::string error_payload(const std::string& message) {
  return json{{"version", kProtocolVersion}, {"error", message}}.dump();
}

}  // namespace

GenerationRequest decode_request(std::string_view payload) {
  auto j = parse_payload(payload);
  GenerationRequest r;
  if (!j.contains("input") || !j["input"].is_string()) throw ProtocolError("request has no input text");
  r.input = j["input"].get<std::string>();
  if (j.contains("max_tokens")) {
    if (!j["max_tokens"].is_number_unsigned()) throw ProtocolError("max_tokens must be a non-negative integer");
    r.max_tokens = j["max_tokens"].get<std::size_t>();
  }
  return r;
}

std::string encode_response(const GenerationResult& result) {
  return json{{"version", kProtocolVersion}, {"output", result.output}, {"token_count", result.token_count}}.dump();
}

GenerationResult decode_response(std::string_view payload) {
  auto j = parse_payload(payload);
  if (j.contains("error")) throw ProtocolError("remote error: " + j["error"].get<std::string>());
  if (!j.contains("output") || !j["output"].is_string()) throw ProtocolError("response has no output text");
  GenerationResult r;
  r.output = j["output"].get<std::string>();
  if (j.contains("token_count") && j["token_count"].is_number_unsigned()) {
    r.token_count = j["token_count"].get<std::size_t>();
  }
  return r;
}

// ---------------------------------------------------------------------------

namespace {

class Socket {
 public:
  explicit Socket(int fd = -1) : fd_(fd) {}
  ~Socket() {
    if (fd_ >= 0) ::close(fd_);
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  int get() const { return fd_; }

 private:
  int fd_;
};

int remaining_ms(Clock::time_point deadline) {
  auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  if (left < 0) return 0;
  return left > 1'000'000'000 ? 1'000'000'000 : static_cast<int>(left);
}

// false on timeout
bool wait_for(int fd, short events, Clock::time_point deadline, const std::atomic<bool>* stop = nullptr) {
  for (;;) {
    int ms = remaining_ms(deadline);
    if (stop != nullptr) ms = std::min(ms, 100);
    pollfd p{fd, events, 0};
    int rc = ::poll(&p, 1, ms);
    if (rc > 0) return true;
    if (rc < 0 && errno != EINTR) throw TransportError(std::string("poll failed: ") + std::strerror(errno));
    if (stop != nullptr && stop->load()) return false;
    if (Clock::now() >= deadline) return false;
  }
}

void write_all(int fd, const char* data, std::size_t n, Clock::time_point deadline) {
  while (n > 0) {
    if (!wait_for(fd, POLLOUT, deadline)) throw TimeoutError("timed out sending frame");
    ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError(std::string("send failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

// false on clean EOF before any byte
bool read_all(int fd, char* data, std::size_t n, Clock::time_point deadline, const std::atomic<bool>* stop = nullptr) {
  std::size_t got = 0;
  while (got < n) {
    if (!wait_for(fd, POLLIN, deadline, stop)) {
      if (stop != nullptr && stop->load()) return false;
      throw TimeoutError("timed out waiting for frame");
    }
    ssize_t r = ::recv(fd, data + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw TransportError(std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void write_frame(int fd, std::string_view payload, Clock::time_point deadline) {
  if (payload.size() > kMaxFrameBytes) throw ProtocolError("frame too large");
  const auto n = static_cast<std::uint32_t>(payload.size());
  const char header[4] = {static_cast<char>(n >> 24), static_cast<char>(n >> 16), static_cast<char>(n >> 8),
                          static_cast<char>(n)};
  write_all(fd, header, 4, deadline);
  write_all(fd, payload.data(), payload.size(), deadline);
}

std::optional<std::string> read_frame(int fd, Clock::time_point deadline, const std::atomic<bool>* stop = nullptr) {
  unsigned char header[4];
  if (!read_all(fd, reinterpret_cast<char*>(header), 4, deadline, stop)) return std::nullopt;
  const std::uint32_t n = (std::uint32_t{header[0]} << 24) | (std::uint32_t{header[1]} << 16) |
                          (std::uint32_t{header[2]} << 8) | std::uint32_t{header[3]};
  if (n > kMaxFrameBytes) throw ProtocolError("frame of " + std::to_string(n) + " bytes exceeds the limit");
  std::string payload(n, '\0');
  if (n > 0 && !read_all(fd, payload.data(), n, deadline, stop)) throw TransportError("connection closed mid-frame");
  return payload;
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL, 0) | O_NONBLOCK); }

int connect_to(const Endpoint& endpoint, Clock::time_point deadline) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto port = std::to_string(endpoint.port);
  if (int rc = ::getaddrinfo(endpoint.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw TransportError("cannot resolve " + endpoint.str() + ": " + ::gai_strerror(rc));
  }
  std::string last = "no addresses";
  for (auto* ai = res; ai != nullptr; ai = ai->ai_next) {
    int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    set_nonblocking(fd);
    int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
    if (rc < 0 && errno == EINPROGRESS) {
      if (!wait_for(fd, POLLOUT, deadline)) {
        ::close(fd);
        ::freeaddrinfo(res);
        throw TimeoutError("timed out connecting to " + endpoint.str());
      }
      int err = 0;
      socklen_t len = sizeof(err);
      ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
      rc = err == 0 ? 0 : -1;
      errno = err;
    }
    if (rc == 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      ::freeaddrinfo(res);
      return fd;
    }
    last = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  throw TransportError("cannot connect to " + endpoint.str() + ": " + last);
}

}  // namespace

GenerationResult remote_generate(const Endpoint& endpoint, const GenerationRequest& request,
                                 std::chrono::milliseconds timeout) {
  const auto start = Clock::now();
  const auto deadline = start + timeout;
  Socket sock(connect_to(endpoint, deadline));
  write_frame(sock.get(), encode_request(request), deadline);
  auto payload = read_frame(sock.get(), deadline);
  if (!payload) throw TransportError("server closed the connection without replying");
  auto result = decode_response(*payload);
  result.duration = Clock::now() - start;
  return result;
}

GenerationResult RemoteBackend::generate(const GenerationRequest& request) const {
  return remote_generate(endpoint_, request, timeout_);
}

// ---------------------------------------------------------------------------

FrameServer::FrameServer(Handler handler, std::uint16_t port, const std::string& host)
    : handler_(std::move(handler)), host_(host) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const auto service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw TransportError(std::string("socket failed: ") + std::strerror(errno));
  }
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd, res->ai_addr, res->ai_addrlen) < 0 || ::listen(fd, 64) < 0) {
    const std::string msg = std::strerror(errno);
    ::close(fd);
    ::freeaddrinfo(res);
    throw TransportError("cannot listen on " + host + ":" + service + ": " + msg);
  }
  ::freeaddrinfo(res);
  sockaddr_storage addr{};
  socklen_t len = sizeof(addr);
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = addr.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                     : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  set_nonblocking(fd);
  listen_fd_ = fd;
  acceptor_ = std::thread([this] { accept_loop(); });
}

FrameServer::~FrameServer() { stop(); }

void FrameServer::stop() {
  if (stopping_.exchange(true)) return;
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    workers.swap(workers_);
  }
  for (auto& t : workers) t.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  listen_fd_ = -1;
}

void FrameServer::accept_loop() {
  while (!stopping_.load()) {
    pollfd p{listen_fd_, POLLIN, 0};
    int rc = ::poll(&p, 1, 100);
    if (rc <= 0) continue;
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    set_nonblocking(fd);
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    std::lock_guard lock(mu_);
    workers_.emplace_back([this, fd] { serve(fd); });
  }
}

void FrameServer::serve(int fd) {
  Socket sock(fd);
  const auto forever = Clock::time_point::max();
  try {
    while (!stopping_.load()) {
      auto payload = read_frame(fd, forever, &stopping_);
      if (!payload) return;
      std::string reply;
      try {
        reply = handler_(*payload);
      } catch (const std::exception& e) {
        reply = error_payload(e.what());
      }
      write_frame(fd, reply, Clock::now() + std::chrono::seconds(30));
    }
  } catch (const std::exception&) {
    // connection-level failure: drop the client
  }
}

FrameServer::Handler generation_handler(const GenerationBackend& backend) {
  return [&backend](std::string_view payload) { return encode_response(backend.generate(decode_request(payload))); };
}

}  // namespace tod
